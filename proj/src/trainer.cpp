#include "udc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "udc/errors.hpp"
#include "udc/rng.hpp"

namespace udc {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

template <class Params>
std::vector<Tensor*> param_ptrs(Params& p) {
  std::vector<Tensor*> out;
  for_each_param(p, [&out](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<Tensor> zeros_like(const std::vector<Tensor*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* t : params) out.emplace_back(t->shape(), 0.0);
  return out;
}

void accumulate(std::vector<Tensor>& acc, const std::vector<Var>& leaves) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const Tensor& g = leaves[i].grad();
    double* a = acc[i].ptr();
    for (std::size_t j = 0; j < g.numel(); ++j) a[j] += g[j];
  }
}

Tensor grad_tensor(const FieldGrid& g) {
  return to_tensor(g.values(), g.height(), g.width());
}

void require_nonempty(const Dataset& data, const char* what) {
  if (data.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
}

/// One frame of stage one: returns the weighted loss, adds gradients into
/// `acc`. Scales whose GT has no valid pixel are left out of the sum.
std::optional<double> stage1_frame(const TrainConfig& cfg,
                                   const JointModelParams& params,
                                   const Frame& frame, std::vector<Tensor>& acc) {
  const int ns = params.config.ns;
  const ScalePyramid pyramid = build_pyramid(frame.guide, frame.sparse, ns);
  const std::vector<double> weights =
      cfg.scale_weights.empty() ? default_scale_weights(ns) : cfg.scale_weights;

  Tape tape;
  const auto blocks = bind(tape, params, true);
  const auto outputs = forward_joint(blocks, pyramid);

  LossConfig lc;
  lc.jeffrey = cfg.jeffrey;
  lc.scale_weights.clear();
  std::vector<MaskedLossValue> per_scale;
  std::vector<int> used;
  for (int i = 0; i < ns; ++i) {
    const int k = ns - 1 - i;
    const SparseDepthGrid gt = downsample_sparse_max(frame.gt_semi, 1 << k);
    if (count_valid(gt) == 0) continue;
    const DepthGrid pred = to_depth_grid(outputs[i].depth.value());
    if (cfg.loss == "ud") {
      const LogVarGrid s = to_logvar_grid(outputs[i].s.value());
      per_scale.push_back(loss_ud(pred, gt.depth(), s, gt.mask(), lc));
    } else {
      per_scale.push_back(loss_mse(pred, gt.depth(), gt.mask()));
    }
    lc.scale_weights.push_back(weights[static_cast<std::size_t>(i)]);
    used.push_back(i);
  }
  if (per_scale.empty()) return std::nullopt;
  const MultiscaleLoss total = loss_multiscale(per_scale, lc);

  Var root;
  for (std::size_t j = 0; j < used.size(); ++j) {
    const BlockVars& out = outputs[static_cast<std::size_t>(used[j])];
    const MaskedLossValue& w = total.weighted[j];
    Var term = ad::dot_constant(out.depth, grad_tensor(w.grad_pred));
    if (w.grad_s) term = ad::add(term, ad::dot_constant(out.s, grad_tensor(*w.grad_s)));
    root = root.valid() ? ad::add(root, term) : term;
  }
  tape.backward(root);
  accumulate(acc, leaves(blocks));
  return total.value;
}

struct Stage1Cache {
  std::vector<ScaleOutput> outputs;
};

Stage1Cache cache_stage1(const JointModelParams& params, const Dataset& data) {
  Stage1Cache c;
  c.outputs.reserve(data.size());
  for (const Frame& f : data) c.outputs.push_back(predict_stage1(params, f.guide, f.sparse));
  return c;
}

std::string stage2_family(const std::string& loss, int epoch) {
  if (loss == "ur") return "ur";
  return epoch % 2 == 0 ? "urb-l1" : "urb-balanced";
}

std::optional<double> stage2_frame(const TrainConfig& cfg, int epoch,
                                   const ResidualNetParams& params,
                                   const ScaleOutput& stage1, const Frame& frame,
                                   std::vector<Tensor>& acc) {
  if (count_valid(frame.gt_semi) == 0) return std::nullopt;
  Tape tape;
  const BoundResidual net = bind(tape, params, true);
  const Var s1 = tape.constant(
      to_tensor(stage1.depth.values(), stage1.depth.height(), stage1.depth.width()));
  const Var r = forward_residual(net, s1, frame.guide, frame.sparse);
  const FieldGrid residual = to_field_grid(r.value());
  const MaskedLossValue loss =
      cfg.loss == "ur"
          ? loss_ur(residual, stage1.depth, frame.gt_semi.depth(), stage1.s,
                    frame.gt_semi.mask())
          : loss_urb(epoch, residual, stage1.depth, frame.gt_semi.depth(), stage1.s,
                     frame.gt_semi.mask());
  tape.backward(ad::dot_constant(r, grad_tensor(loss.grad_pred)));
  accumulate(acc, leaves(net));
  return loss.value;
}

/// Shared epoch/batch loop. `frame_step(epoch, index, acc)` returns the
/// frame loss or nothing when the frame has no supervision.
template <class Params, class FrameStep, class Evaluate>
TrainLog run_epochs(const TrainConfig& cfg, Params& params, std::size_t n_frames,
                    const std::string& family_tag, FrameStep frame_step,
                    Evaluate evaluate, const EpochCallback& on_epoch) {
  TrainLog log;
  OptimState opt;
  std::vector<Tensor*> ptrs = param_ptrs(params);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = cfg.lr_at(epoch);
    const auto order = epoch_order(n_frames, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<Tensor> acc = zeros_like(ptrs);
      std::size_t used = 0;
      for (std::size_t b = start; b < end; ++b) {
        if (const auto l = frame_step(epoch, order[b], acc)) {
          loss_sum += *l;
          ++loss_count;
          ++used;
        }
      }
      if (used == 0) continue;
      for (Tensor& g : acc) {
        for (double& v : g.data()) v /= static_cast<double>(used);
      }
      adam_step(opt, ptrs, acc);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.loss_family = family_tag.empty() ? stage2_family(cfg.loss, epoch) : family_tag;
    rec.lr = opt.lr;
    evaluate(rec);
    log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void adam_step(OptimState& state, const std::vector<Tensor*>& params,
               const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape()) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " +
                                  std::to_string(i));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->ptr();
    double* m = state.m[i].ptr();
    double* v = state.v[i].ptr();
    const double* g = grads[i].ptr();
    for (std::size_t j = 0; j < grads[i].numel(); ++j) {
      const double gj = g[j] + state.weight_decay * p[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, static_cast<std::uint64_t>(epoch), RngOp::kShuffle);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

void write_log_csv(std::ostream& out, const TrainLog& log) {
  out << "epoch,loss,mae_clean_mm,rmse_clean_mm,imae,irmse,mae_semi_mm,loss_family,lr\n";
  for (const EpochRecord& r : log.records) {
    out << r.epoch << ',' << csv_number(r.loss) << ',' << csv_number(r.clean.mae_mm)
        << ',' << csv_number(r.clean.rmse_mm) << ',' << csv_number(r.clean.imae_per_km)
        << ',' << csv_number(r.clean.irmse_per_km) << ',' << csv_number(r.semi.mae_mm)
        << ',' << r.loss_family << ',' << csv_number(r.lr) << '\n';
  }
}

void write_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_log_csv(out, log);
  if (!out) throw IoError("write failed for " + path.string());
}

Stage1Result train_stage1(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, JointModelParams params,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.stage != Stage::kOne) throw std::invalid_argument("train_stage1 needs stage 1");
  require_nonempty(train, "train_stage1");
  require_nonempty(eval, "train_stage1 eval");
  params.config.validate();
  if (!cfg.scale_weights.empty() &&
      static_cast<int>(cfg.scale_weights.size()) != params.config.ns) {
    throw std::invalid_argument("scale_weights needs one entry per scale");
  }

  auto step = [&](int, std::size_t i, std::vector<Tensor>& acc) {
    return stage1_frame(cfg, params, train[i], acc);
  };
  auto evaluate = [&](EpochRecord& rec) {
    std::vector<DepthGrid> finals;
    finals.reserve(eval.size());
    for (const Frame& f : eval) {
      finals.push_back(predict_stage1(params, f.guide, f.sparse).depth);
    }
    rec.clean = eval_predictions(finals, eval, Against::kClean).mean;
    rec.semi = eval_predictions(finals, eval, Against::kSemi).mean;
  };
  TrainLog log = run_epochs(cfg, params, train.size(), cfg.loss, step, evaluate, on_epoch);
  return {std::move(params), std::move(log)};
}

Stage1Result train_stage1(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, const EpochCallback& on_epoch) {
  return train_stage1(cfg, train, eval, init_joint(cfg.model, cfg.seed), on_epoch);
}

Stage2Result train_stage2(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, const JointModelParams& stage1,
                          ResidualNetParams params, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.stage != Stage::kTwo) throw std::invalid_argument("train_stage2 needs stage 2");
  require_nonempty(train, "train_stage2");
  require_nonempty(eval, "train_stage2 eval");
  params.config.validate();

  // The stage-one model is fixed, so its outputs are computed once.
  const Stage1Cache train_cache = cache_stage1(stage1, train);
  const Stage1Cache eval_cache = cache_stage1(stage1, eval);

  auto step = [&](int epoch, std::size_t i, std::vector<Tensor>& acc) {
    return stage2_frame(cfg, epoch, params, train_cache.outputs[i], train[i], acc);
  };
  auto evaluate = [&](EpochRecord& rec) {
    std::vector<DepthGrid> finals;
    finals.reserve(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const DepthGrid& s1 = eval_cache.outputs[i].depth;
      finals.push_back(compose_final(
          s1, forward_residual(params, s1, eval[i].guide, eval[i].sparse)));
    }
    rec.clean = eval_predictions(finals, eval, Against::kClean).mean;
    rec.semi = eval_predictions(finals, eval, Against::kSemi).mean;
  };
  TrainLog log = run_epochs(cfg, params, train.size(), "", step, evaluate, on_epoch);
  return {std::move(params), std::move(log)};
}

Stage2Result train_stage2(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, const JointModelParams& stage1,
                          const EpochCallback& on_epoch) {
  return train_stage2(cfg, train, eval, stage1, init_residual(cfg.model, cfg.seed),
                      on_epoch);
}

FramePrediction predict(const JointModelParams& stage1,
                        const ResidualNetParams* residual, const Frame& frame) {
  FramePrediction p;
  p.stage1 = predict_stage1(stage1, frame.guide, frame.sparse);
  if (residual) {
    p.residual = forward_residual(*residual, p.stage1.depth, frame.guide, frame.sparse);
    p.final_depth = compose_final(p.stage1.depth, p.residual);
  } else {
    p.residual = FieldGrid(frame.sparse.height(), frame.sparse.width());
    p.final_depth = p.stage1.depth;
  }
  return p;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const MetricReport& r : reports) {
    m.rmse_mm += r.rmse_mm;
    m.mae_mm += r.mae_mm;
    m.irmse_per_km += r.irmse_per_km;
    m.imae_per_km += r.imae_per_km;
    m.n_valid += r.n_valid;
  }
  const double n = static_cast<double>(reports.size());
  m.rmse_mm /= n;
  m.mae_mm /= n;
  m.irmse_per_km /= n;
  m.imae_per_km /= n;
  return m;
}

EvalResult eval_predictions(const std::vector<DepthGrid>& finals, const Dataset& data,
                            Against against) {
  if (finals.size() != data.size()) {
    throw std::invalid_argument("eval_predictions: one prediction per frame needed");
  }
  require_nonempty(data, "eval");
  EvalResult out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SparseDepthGrid& gt =
        against == Against::kClean ? data[i].gt_clean : data[i].gt_semi;
    if (count_valid(gt) == 0) continue;
    out.per_frame.push_back(evaluate(finals[i], gt));
  }
  if (out.per_frame.empty()) throw UndefinedLossError("eval: no frame has valid GT");
  out.mean = mean_report(out.per_frame);
  return out;
}

EvalResult eval_run(const JointModelParams& stage1, const ResidualNetParams* residual,
                    const Dataset& data, Against against) {
  require_nonempty(data, "eval_run");
  std::vector<DepthGrid> finals;
  finals.reserve(data.size());
  for (const Frame& f : data) finals.push_back(predict(stage1, residual, f).final_depth);
  return eval_predictions(finals, data, against);
}

}  // namespace udc
