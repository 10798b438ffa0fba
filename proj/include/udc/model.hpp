#pragma once

// Multiscale joint depth/uncertainty network and the residual refinement
// network, as plain parameter structs plus tape-level and grid-level
// forward passes.
//
// Depth enters and leaves the networks in units of kDepthUnit meters:
// depth input channels are divided by it and the softplus depth head is
// multiplied by it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "udc/autodiff.hpp"
#include "udc/checkpoint.hpp"
#include "udc/grid.hpp"

namespace udc {

inline constexpr double kDepthUnit = 10.0;
inline constexpr double kDepthFloor = 1e-3;
inline constexpr double kLogVarBound = 10.0;

struct ModelConfig {
  int ns = 4;
  int guide_channels = 1;
  std::vector<int> encoder{16, 32, 64};
  std::vector<int> decoder{32, 16, 16};
  std::vector<int> residual_encoder{16, 32};
  std::vector<int> residual_decoder{16, 16};

  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  /// Side length that every block input must be divisible by.
  int block_divisor() const { return 1 << encoder.size(); }
  /// Input dims must be divisible by this for the whole model.
  int input_divisor() const { return block_divisor() << (ns - 1); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvParams {
  ad::Tensor weight;  // (out, in, k, k)
  ad::Tensor bias;    // (out)

  int kernel() const { return weight.dim(2); }
};

/// U-net completion block: conv→relu→maxpool encoder stages, then
/// upsample→concat(skip)→conv→relu decoder stages, then 1×1 heads.
struct CompletionBlockParams {
  std::vector<ConvParams> encoder;
  std::vector<ConvParams> decoder;
  ConvParams depth_head;
  ConvParams s_head;
};

/// Blocks ordered coarse→fine like ScalePyramid.
struct JointModelParams {
  ModelConfig config;
  std::vector<CompletionBlockParams> blocks;
};

struct ResidualNetParams {
  ModelConfig config;
  std::vector<ConvParams> encoder;
  std::vector<ConvParams> decoder;
  ConvParams head;
};

/// Xavier-uniform conv weights with zero biases. The residual head is
/// zero so refinement starts as the identity.
JointModelParams init_joint(const ModelConfig& config, std::uint64_t seed);
ResidualNetParams init_residual(const ModelConfig& config, std::uint64_t seed);

/// Bound of the Xavier-uniform draw for a conv weight of this shape.
double xavier_bound(const ad::Shape& weight_shape);

using ParamVisitor = std::function<void(const std::string& name, ad::Tensor& t)>;
using ConstParamVisitor =
    std::function<void(const std::string& name, const ad::Tensor& t)>;

/// Visits every tensor in a fixed order with a stable name.
void for_each_param(JointModelParams& p, const ParamVisitor& fn);
void for_each_param(const JointModelParams& p, const ConstParamVisitor& fn);
void for_each_param(ResidualNetParams& p, const ParamVisitor& fn);
void for_each_param(const ResidualNetParams& p, const ConstParamVisitor& fn);

// ---- tape level ----

struct ConvVars {
  ad::Var weight;
  ad::Var bias;
};

struct BoundBlock {
  std::vector<ConvVars> encoder;
  std::vector<ConvVars> decoder;
  ConvVars depth_head;
  ConvVars s_head;
};

struct BoundResidual {
  std::vector<ConvVars> encoder;
  std::vector<ConvVars> decoder;
  ConvVars head;
};

/// Places parameters on the tape as leaves, or as constants when frozen.
BoundBlock bind(ad::Tape& tape, const CompletionBlockParams& p, bool trainable);
std::vector<BoundBlock> bind(ad::Tape& tape, const JointModelParams& p,
                             bool trainable);
BoundResidual bind(ad::Tape& tape, const ResidualNetParams& p, bool trainable);

/// Bound tensors in for_each_param order.
std::vector<ad::Var> leaves(const std::vector<BoundBlock>& blocks);
std::vector<ad::Var> leaves(const BoundResidual& net);

struct BlockVars {
  ad::Var depth;  // (1,1,H,W) meters, > 0
  ad::Var s;      // (1,1,H,W) in [−kLogVarBound, kLogVarBound]
};

/// Guide, scaled sparse depth and validity channels, shape (1,C+2,H,W).
ad::Tensor observation_tensor(const GuideImage& guide,
                              const SparseDepthGrid& sparse);

/// `prior` is a (1,1,H,W) depth in meters or an invalid Var for zeros.
BlockVars forward_block(const BoundBlock& block, const GuideImage& guide,
                        const SparseDepthGrid& sparse, const ad::Var& prior);

/// One output per level, coarse→fine.
std::vector<BlockVars> forward_joint(const std::vector<BoundBlock>& blocks,
                                     const ScalePyramid& pyramid);

/// Residual in meters, shape (1,1,H,W). `stage1` is a (1,1,H,W) depth.
ad::Var forward_residual(const BoundResidual& net, const ad::Var& stage1,
                         const GuideImage& guide,
                         const SparseDepthGrid& sparse);

// ---- grid level ----

struct ScaleOutput {
  DepthGrid depth;
  LogVarGrid s;
};

ScaleOutput forward_block(const CompletionBlockParams& params,
                          const GuideImage& guide,
                          const SparseDepthGrid& sparse,
                          const DepthGrid* prior);

std::vector<ScaleOutput> forward_joint(const JointModelParams& params,
                                       const ScalePyramid& pyramid);

/// Builds the pyramid for the model's ns and returns the finest output.
ScaleOutput predict_stage1(const JointModelParams& params,
                           const GuideImage& guide,
                           const SparseDepthGrid& sparse);

FieldGrid forward_residual(const ResidualNetParams& params,
                           const DepthGrid& stage1, const GuideImage& guide,
                           const SparseDepthGrid& sparse);

/// stage1 + residual, clamped below at kDepthFloor.
DepthGrid compose_final(const DepthGrid& stage1, const FieldGrid& residual);

DepthGrid to_depth_grid(const ad::Tensor& t);
LogVarGrid to_logvar_grid(const ad::Tensor& t);
FieldGrid to_field_grid(const ad::Tensor& t);
ad::Tensor to_tensor(std::span<const double> values, int height, int width);

// ---- checkpoints ----

/// The architecture is stored in the metadata header and checked on load;
/// any mismatch in kind, names or shapes throws IoError.
ParameterFile to_parameter_file(const JointModelParams& p);
ParameterFile to_parameter_file(const ResidualNetParams& p);
JointModelParams joint_from_file(const ParameterFile& file);
ResidualNetParams residual_from_file(const ParameterFile& file);

void save_joint(const std::filesystem::path& path, const JointModelParams& p);
void save_residual(const std::filesystem::path& path,
                   const ResidualNetParams& p);
JointModelParams load_joint(const std::filesystem::path& path);
ResidualNetParams load_residual(const std::filesystem::path& path);

std::string encode_model_config(const std::string& kind, const ModelConfig& c);

}  // namespace udc
