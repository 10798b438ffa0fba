#include "udc/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "udc/errors.hpp"
#include "udc/rng.hpp"

namespace udc {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

constexpr int kCoarseKernel = 5;
constexpr int kKernel = 3;

ConvParams make_conv(int in, int out, int k) {
  return {Tensor({out, in, k, k}), Tensor({out})};
}

/// Channel count of every encoder stage input, then the bottleneck.
std::vector<int> stage_inputs(int in_channels, const std::vector<int>& enc) {
  std::vector<int> c{in_channels};
  c.insert(c.end(), enc.begin(), enc.end());
  return c;
}

std::vector<ConvParams> make_decoder(const std::vector<int>& enc_inputs,
                                     const std::vector<int>& dec) {
  // enc_inputs has one entry per encoder stage plus the bottleneck.
  const int n = static_cast<int>(dec.size());
  std::vector<ConvParams> out;
  int prev = enc_inputs.back();
  for (int j = 0; j < n; ++j) {
    const int skip = enc_inputs[static_cast<std::size_t>(n - 1 - j)];
    out.push_back(make_conv(prev + skip, dec[static_cast<std::size_t>(j)], kKernel));
    prev = dec[static_cast<std::size_t>(j)];
  }
  return out;
}

CompletionBlockParams make_block(const ModelConfig& cfg, bool coarsest) {
  CompletionBlockParams b;
  const auto inputs = stage_inputs(cfg.guide_channels + 3, cfg.encoder);
  for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
    b.encoder.push_back(make_conv(inputs[i], cfg.encoder[i],
                                  coarsest ? kCoarseKernel : kKernel));
  }
  b.decoder = make_decoder(inputs, cfg.decoder);
  b.depth_head = make_conv(cfg.decoder.back(), 1, 1);
  b.s_head = make_conv(cfg.decoder.back(), 1, 1);
  return b;
}

ResidualNetParams make_residual(const ModelConfig& cfg) {
  ResidualNetParams r;
  r.config = cfg;
  // guide, stage-one depth, sparse depth, validity
  const auto inputs = stage_inputs(cfg.guide_channels + 3, cfg.residual_encoder);
  for (std::size_t i = 0; i < cfg.residual_encoder.size(); ++i) {
    r.encoder.push_back(make_conv(inputs[i], cfg.residual_encoder[i], kKernel));
  }
  r.decoder = make_decoder(inputs, cfg.residual_decoder);
  r.head = make_conv(cfg.residual_decoder.back(), 1, 1);
  return r;
}

template <class Conv, class Fn>
void visit_conv(const std::string& prefix, Conv& c, Fn& fn) {
  fn(prefix + ".weight", c.weight);
  fn(prefix + ".bias", c.bias);
}

template <class Block, class Fn>
void visit_block(const std::string& prefix, Block& b, Fn& fn) {
  for (std::size_t i = 0; i < b.encoder.size(); ++i) {
    visit_conv(prefix + "enc" + std::to_string(i), b.encoder[i], fn);
  }
  for (std::size_t i = 0; i < b.decoder.size(); ++i) {
    visit_conv(prefix + "dec" + std::to_string(i), b.decoder[i], fn);
  }
}

template <class Joint, class Fn>
void visit_joint(Joint& p, Fn& fn) {
  for (std::size_t k = 0; k < p.blocks.size(); ++k) {
    const std::string prefix = "block" + std::to_string(k) + ".";
    visit_block(prefix, p.blocks[k], fn);
    visit_conv(prefix + "depth_head", p.blocks[k].depth_head, fn);
    visit_conv(prefix + "s_head", p.blocks[k].s_head, fn);
  }
}

template <class Residual, class Fn>
void visit_residual(Residual& p, Fn& fn) {
  visit_block("residual.", p, fn);
  visit_conv("residual.head", p.head, fn);
}

void xavier_fill(Tensor& w, CounterRng& rng) {
  const double bound = xavier_bound(w.shape());
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
}

ConvVars bind_conv(Tape& tape, const ConvParams& c, bool trainable) {
  if (trainable) return {tape.leaf(c.weight), tape.leaf(c.bias)};
  return {tape.constant(c.weight), tape.constant(c.bias)};
}

Var conv_same(const Var& x, const ConvVars& c) {
  const int k = c.weight.shape()[2];
  return ad::conv2d(x, c.weight, c.bias, 1, k / 2);
}

/// Shared U-net trunk: returns the last decoder activation.
Var unet(const Var& input, const std::vector<ConvVars>& encoder,
         const std::vector<ConvVars>& decoder) {
  std::vector<Var> skips;
  Var h = input;
  for (const ConvVars& c : encoder) {
    skips.push_back(h);
    h = ad::maxpool2(ad::relu(conv_same(h, c)));
  }
  for (std::size_t j = 0; j < decoder.size(); ++j) {
    h = ad::upsample_nearest2(h);
    h = ad::concat_channels(h, skips[skips.size() - 1 - j]);
    h = ad::relu(conv_same(h, decoder[j]));
  }
  return h;
}

void require_divisible(int height, int width, int divisor, const char* what) {
  if (height % divisor != 0 || width % divisor != 0) {
    throw std::invalid_argument(std::string(what) + ": input " +
                                std::to_string(height) + "x" +
                                std::to_string(width) +
                                " not divisible by " + std::to_string(divisor));
  }
}

void require_dims(const Shape& s, int height, int width, const char* what) {
  if (s.size() != 4 || s[0] != 1 || s[1] != 1 || s[2] != height ||
      s[3] != width) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::pair<std::string, ModelConfig> decode_model_config(const std::string& meta) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(meta);
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint metadata");
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  const auto get = [&kv](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw IoError(std::string("checkpoint metadata lacks ") + key);
    }
    return it->second;
  };
  ModelConfig c;
  try {
    c.ns = std::stoi(get("ns"));
    c.guide_channels = std::stoi(get("guide_channels"));
    c.encoder = split_ints(get("encoder"));
    c.decoder = split_ints(get("decoder"));
    c.residual_encoder = split_ints(get("residual_encoder"));
    c.residual_decoder = split_ints(get("residual_decoder"));
    if (std::stod(get("depth_unit")) != kDepthUnit) {
      throw IoError("checkpoint depth unit differs from this build");
    }
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("bad checkpoint architecture: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw IoError(std::string("bad checkpoint architecture: ") + e.what());
  }
  return {get("kind"), c};
}

template <class Params>
void fill_from_file(Params& p, const ParameterFile& file) {
  std::size_t i = 0;
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    if (i >= file.entries.size()) {
      throw IoError("checkpoint is missing parameter " + name);
    }
    const NamedTensor& e = file.entries[i++];
    if (e.name != name) {
      throw IoError("checkpoint parameter " + e.name + " where " + name +
                    " was expected");
    }
    if (e.value.shape() != t.shape()) {
      throw IoError("checkpoint parameter " + name + " has the wrong shape");
    }
    t = e.value;
  });
  if (i != file.entries.size()) {
    throw IoError("checkpoint has unexpected extra parameters");
  }
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](const std::vector<int>& v) {
    return !v.empty() &&
           std::all_of(v.begin(), v.end(), [](int c) { return c > 0; });
  };
  if (ns < 1 || ns > 4) throw std::invalid_argument("ns must be in [1, 4]");
  if (guide_channels != 1 && guide_channels != 3) {
    throw std::invalid_argument("guide_channels must be 1 or 3");
  }
  if (!positive(encoder) || !positive(decoder) || encoder.size() != decoder.size()) {
    throw std::invalid_argument("block encoder/decoder widths must be positive and paired");
  }
  if (!positive(residual_encoder) || !positive(residual_decoder) ||
      residual_encoder.size() != residual_decoder.size()) {
    throw std::invalid_argument(
        "residual encoder/decoder widths must be positive and paired");
  }
}

double xavier_bound(const ad::Shape& s) {
  const double receptive = static_cast<double>(s[2]) * s[3];
  return std::sqrt(6.0 / (s[1] * receptive + s[0] * receptive));
}

JointModelParams init_joint(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  JointModelParams p;
  p.config = config;
  for (int k = 0; k < config.ns; ++k) p.blocks.push_back(make_block(config, k == 0));
  std::uint64_t index = 0;
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    CounterRng rng(seed, index++, RngOp::kInit);
    if (name.ends_with(".weight")) xavier_fill(t, rng);
  });
  return p;
}

ResidualNetParams init_residual(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ResidualNetParams p = make_residual(config);
  // Offset keeps the streams disjoint from init_joint under the same seed.
  std::uint64_t index = 1u << 20;
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    CounterRng rng(seed, index++, RngOp::kInit);
    if (name.ends_with(".weight") && !name.starts_with("residual.head")) {
      xavier_fill(t, rng);
    }
  });
  return p;
}

void for_each_param(JointModelParams& p, const ParamVisitor& fn) { visit_joint(p, fn); }
void for_each_param(const JointModelParams& p, const ConstParamVisitor& fn) {
  visit_joint(p, fn);
}
void for_each_param(ResidualNetParams& p, const ParamVisitor& fn) {
  visit_residual(p, fn);
}
void for_each_param(const ResidualNetParams& p, const ConstParamVisitor& fn) {
  visit_residual(p, fn);
}

BoundBlock bind(Tape& tape, const CompletionBlockParams& p, bool trainable) {
  BoundBlock b;
  for (const auto& c : p.encoder) b.encoder.push_back(bind_conv(tape, c, trainable));
  for (const auto& c : p.decoder) b.decoder.push_back(bind_conv(tape, c, trainable));
  b.depth_head = bind_conv(tape, p.depth_head, trainable);
  b.s_head = bind_conv(tape, p.s_head, trainable);
  return b;
}

std::vector<BoundBlock> bind(Tape& tape, const JointModelParams& p, bool trainable) {
  std::vector<BoundBlock> out;
  for (const auto& b : p.blocks) out.push_back(bind(tape, b, trainable));
  return out;
}

BoundResidual bind(Tape& tape, const ResidualNetParams& p, bool trainable) {
  BoundResidual r;
  for (const auto& c : p.encoder) r.encoder.push_back(bind_conv(tape, c, trainable));
  for (const auto& c : p.decoder) r.decoder.push_back(bind_conv(tape, c, trainable));
  r.head = bind_conv(tape, p.head, trainable);
  return r;
}

std::vector<Var> leaves(const std::vector<BoundBlock>& blocks) {
  std::vector<Var> out;
  for (const BoundBlock& b : blocks) {
    for (const auto* group : {&b.encoder, &b.decoder}) {
      for (const ConvVars& c : *group) out.insert(out.end(), {c.weight, c.bias});
    }
    out.insert(out.end(), {b.depth_head.weight, b.depth_head.bias, b.s_head.weight,
                           b.s_head.bias});
  }
  return out;
}

std::vector<Var> leaves(const BoundResidual& net) {
  std::vector<Var> out;
  for (const auto* group : {&net.encoder, &net.decoder}) {
    for (const ConvVars& c : *group) out.insert(out.end(), {c.weight, c.bias});
  }
  out.insert(out.end(), {net.head.weight, net.head.bias});
  return out;
}

Tensor observation_tensor(const GuideImage& guide, const SparseDepthGrid& sparse) {
  if (!guide.same_shape(sparse)) {
    throw std::invalid_argument("guide and sparse depth dims differ");
  }
  const int c = guide.channels();
  const std::size_t plane = sparse.size();
  Tensor t({1, c + 2, guide.height(), guide.width()});
  std::copy(guide.values().begin(), guide.values().end(), t.ptr());
  double* depth = t.ptr() + c * plane;
  double* valid = depth + plane;
  for (std::size_t i = 0; i < plane; ++i) {
    depth[i] = sparse.depth(i) / kDepthUnit;
    valid[i] = sparse.valid(i) ? 1.0 : 0.0;
  }
  return t;
}

BlockVars forward_block(const BoundBlock& block, const GuideImage& guide,
                        const SparseDepthGrid& sparse, const Var& prior) {
  Tape& tape = block.depth_head.weight.tape();
  const int h = sparse.height(), w = sparse.width();
  require_divisible(h, w, 1 << block.encoder.size(), "forward_block");
  const Var obs = tape.constant(observation_tensor(guide, sparse));
  Var prior_in;
  if (prior.valid()) {
    require_dims(prior.shape(), h, w, "forward_block prior");
    prior_in = ad::scale(prior, 1.0 / kDepthUnit);
  } else {
    prior_in = tape.constant(Tensor({1, 1, h, w}));
  }
  const Var trunk = unet(ad::concat_channels(obs, prior_in), block.encoder,
                         block.decoder);
  const Var depth = ad::add_scalar(
      ad::scale(ad::softplus(conv_same(trunk, block.depth_head)), kDepthUnit),
      kDepthFloor);
  const Var s = ad::clamp(conv_same(trunk, block.s_head), -kLogVarBound, kLogVarBound);
  return {depth, s};
}

std::vector<BlockVars> forward_joint(const std::vector<BoundBlock>& blocks,
                                     const ScalePyramid& pyramid) {
  if (static_cast<int>(blocks.size()) != pyramid.size()) {
    throw std::invalid_argument("forward_joint: pyramid has " +
                                std::to_string(pyramid.size()) +
                                " levels, model has " +
                                std::to_string(blocks.size()) + " blocks");
  }
  std::vector<BlockVars> out;
  Var prior;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const PyramidLevel& level = pyramid.levels[k];
    out.push_back(forward_block(blocks[k], level.guide, level.sparse, prior));
    prior = ad::upsample_bilinear(out.back().depth, 2);
  }
  return out;
}

Var forward_residual(const BoundResidual& net, const Var& stage1,
                     const GuideImage& guide, const SparseDepthGrid& sparse) {
  Tape& tape = net.head.weight.tape();
  const int h = sparse.height(), w = sparse.width();
  require_dims(stage1.shape(), h, w, "forward_residual");
  require_divisible(h, w, 1 << net.encoder.size(), "forward_residual");
  const Var obs = tape.constant(observation_tensor(guide, sparse));
  const Var input = ad::concat_channels(obs, ad::scale(stage1, 1.0 / kDepthUnit));
  const Var trunk = unet(input, net.encoder, net.decoder);
  return ad::scale(conv_same(trunk, net.head), kDepthUnit);
}

Tensor to_tensor(std::span<const double> values, int height, int width) {
  return Tensor({1, 1, height, width},
                std::vector<double>(values.begin(), values.end()));
}

DepthGrid to_depth_grid(const Tensor& t) {
  return DepthGrid(t.dim(2), t.dim(3), {t.data().begin(), t.data().end()});
}
LogVarGrid to_logvar_grid(const Tensor& t) {
  return LogVarGrid(t.dim(2), t.dim(3), {t.data().begin(), t.data().end()});
}
FieldGrid to_field_grid(const Tensor& t) {
  return FieldGrid(t.dim(2), t.dim(3), {t.data().begin(), t.data().end()});
}

ScaleOutput forward_block(const CompletionBlockParams& params,
                          const GuideImage& guide, const SparseDepthGrid& sparse,
                          const DepthGrid* prior) {
  Tape tape;
  const BoundBlock b = bind(tape, params, false);
  Var prior_var;
  if (prior) {
    if (!prior->same_shape(sparse)) {
      throw std::invalid_argument("forward_block: prior dims differ");
    }
    prior_var = tape.constant(to_tensor(prior->values(), prior->height(), prior->width()));
  }
  const BlockVars out = forward_block(b, guide, sparse, prior_var);
  return {to_depth_grid(out.depth.value()), to_logvar_grid(out.s.value())};
}

std::vector<ScaleOutput> forward_joint(const JointModelParams& params,
                                       const ScalePyramid& pyramid) {
  Tape tape;
  const auto blocks = bind(tape, params, false);
  std::vector<ScaleOutput> out;
  for (const BlockVars& v : forward_joint(blocks, pyramid)) {
    out.push_back({to_depth_grid(v.depth.value()), to_logvar_grid(v.s.value())});
  }
  return out;
}

ScaleOutput predict_stage1(const JointModelParams& params, const GuideImage& guide,
                           const SparseDepthGrid& sparse) {
  const ScalePyramid pyramid = build_pyramid(guide, sparse, params.config.ns);
  return forward_joint(params, pyramid).back();
}

FieldGrid forward_residual(const ResidualNetParams& params, const DepthGrid& stage1,
                           const GuideImage& guide, const SparseDepthGrid& sparse) {
  if (!stage1.same_shape(sparse)) {
    throw std::invalid_argument("forward_residual: dimension mismatch");
  }
  Tape tape;
  const BoundResidual net = bind(tape, params, false);
  const Var s1 = tape.constant(to_tensor(stage1.values(), stage1.height(), stage1.width()));
  return to_field_grid(forward_residual(net, s1, guide, sparse).value());
}

DepthGrid compose_final(const DepthGrid& stage1, const FieldGrid& residual) {
  if (!stage1.same_shape(residual)) {
    throw std::invalid_argument("compose_final: dimension mismatch");
  }
  DepthGrid out(stage1.height(), stage1.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(stage1[i] + residual[i], kDepthFloor);
  }
  return out;
}

std::string encode_model_config(const std::string& kind, const ModelConfig& c) {
  std::ostringstream os;
  os << "kind=" << kind << " ns=" << c.ns << " guide_channels=" << c.guide_channels
     << " encoder=" << join(c.encoder) << " decoder=" << join(c.decoder)
     << " residual_encoder=" << join(c.residual_encoder)
     << " residual_decoder=" << join(c.residual_decoder)
     << " depth_unit=" << kDepthUnit;
  return os.str();
}

ParameterFile to_parameter_file(const JointModelParams& p) {
  ParameterFile f;
  f.metadata = encode_model_config("joint", p.config);
  for_each_param(p, [&f](const std::string& name, const Tensor& t) {
    f.entries.push_back({name, t});
  });
  return f;
}

ParameterFile to_parameter_file(const ResidualNetParams& p) {
  ParameterFile f;
  f.metadata = encode_model_config("residual", p.config);
  for_each_param(p, [&f](const std::string& name, const Tensor& t) {
    f.entries.push_back({name, t});
  });
  return f;
}

JointModelParams joint_from_file(const ParameterFile& file) {
  const auto [kind, config] = decode_model_config(file.metadata);
  if (kind != "joint") {
    throw IoError("expected a stage-one (joint) checkpoint, got kind=" + kind);
  }
  JointModelParams p;
  p.config = config;
  for (int k = 0; k < config.ns; ++k) p.blocks.push_back(make_block(config, k == 0));
  fill_from_file(p, file);
  return p;
}

ResidualNetParams residual_from_file(const ParameterFile& file) {
  const auto [kind, config] = decode_model_config(file.metadata);
  if (kind != "residual") {
    throw IoError("expected a stage-two (residual) checkpoint, got kind=" + kind);
  }
  ResidualNetParams p = make_residual(config);
  fill_from_file(p, file);
  return p;
}

void save_joint(const std::filesystem::path& path, const JointModelParams& p) {
  write_parameter_file(path, to_parameter_file(p));
}
void save_residual(const std::filesystem::path& path, const ResidualNetParams& p) {
  write_parameter_file(path, to_parameter_file(p));
}
JointModelParams load_joint(const std::filesystem::path& path) {
  const ParameterFile file = read_parameter_file(path);
  try {
    return joint_from_file(file);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}
ResidualNetParams load_residual(const std::filesystem::path& path) {
  const ParameterFile file = read_parameter_file(path);
  try {
    return residual_from_file(file);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace udc
