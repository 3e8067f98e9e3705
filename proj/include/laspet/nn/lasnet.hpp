#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "laspet/nn/graph.hpp"
#include "laspet/nn/tensor.hpp"

namespace laspet::nn {

// Dual-branch windowed-attention segmentation net. All convolution, attention
// and gating weights are shared between the baseline and interim branches; the
// interim branch alone adds per-stage windowed cross-attention (queries from
// interim, keys/values from baseline) and a gate-refinement kernel. Baseline
// outputs are a function of baseline inputs only.
struct LasNetConfig {
  int in_channels = 2;  // PET + CT
  int base_dim = 12;
  std::vector<int> depths = {2, 2, 2};
  std::vector<int> num_heads = {2, 4, 8};
  int window_size = 3;
  int patch_size = 24;
  int mlp_ratio = 2;
  double leaky_slope = 0.01;

  int stages() const { return static_cast<int>(depths.size()); }
  int dim_at(int s) const { return base_dim << s; }
  int res_at(int s) const { return patch_size >> (s + 1); }
  // skip index 0 is the stem output at full resolution
  int skip_dim(int i) const { return i == 0 ? base_dim : dim_at(i - 1); }
  int skip_res(int i) const { return i == 0 ? patch_size : res_at(i - 1); }

  void validate() const;
  bool operator==(const LasNetConfig&) const = default;
};

enum class InitKind { Weight, Bias, Gamma, RelPos, ZeroKernel };

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  bool cross = false;  // used only by the interim branch
  InitKind init = InitKind::Weight;
};

struct LasNetParams {
  LasNetConfig cfg;
  std::vector<ParamSpec> specs;
  std::vector<Tensor> values;  // parallel to specs
  std::map<std::string, int, std::less<>> index;

  int find(std::string_view name) const;  // throws on unknown name
  Tensor& value_of(std::string_view name) { return values[static_cast<size_t>(find(name))]; }
  const Tensor& value_of(std::string_view name) const {
    return values[static_cast<size_t>(find(name))];
  }
  int64_t count_total() const;
  int64_t count_cross() const;
  int64_t count_shared() const { return count_total() - count_cross(); }
};

// architectural enumeration of every parameter block, in checkpoint order
std::vector<ParamSpec> param_specs(const LasNetConfig& cfg);

// closed-form parameter count of one branch without any cross-attention,
// written as explicit per-layer arithmetic; audit oracle for weight sharing
int64_t single_branch_param_count(const LasNetConfig& cfg);

// deterministic per-name init: weights truncated normal (0.02, clamped 2 sigma),
// norm gains 1, biases 0, gate-refinement kernel 0
LasNetParams init_params(const LasNetConfig& cfg, uint64_t seed);

void save_params(const LasNetParams& params, const std::string& path);
LasNetParams load_params(const std::string& path);

// window partition to token matrices [nW*T, C] from feature maps [C,R,R,R];
// shift > 0 rolls the map cyclically before windowing (and back on reverse)
Graph::Indices window_partition_indices(int channels, int res, int ws, int shift);
Graph::Indices window_reverse_indices(int channels, int res, int ws, int shift);
Tensor window_partition(const Tensor& x, int ws, int shift = 0);
Tensor window_reverse(const Tensor& tokens, int ws, int shift,
                      const std::vector<int>& shape);

// additive attention mask separating genuine neighbours from wrapped tokens
// in shifted windows; zero elsewhere
std::shared_ptr<const std::vector<double>> shifted_window_mask(int res, int ws,
                                                               int shift);

using ParamNodeFn = std::function<int(const std::string&)>;

// two conv units (3x3x3 conv, instance norm, leaky relu) plus a residual
// shortcut added outside the activations; 1x1x1 projection when widths differ
int conv_block(Graph& g, int x, int in_ch, int out_ch, double slope,
               const std::string& prefix, const ParamNodeFn& pnode);

// pre-norm windowed self-attention block with MLP; alternate blocks shift
int swin_block(Graph& g, int x_map, const LasNetConfig& cfg, int stage, int block,
               const ParamNodeFn& pnode);

// cross-attention step: queries from x2_map, keys/values from x1_map, then a
// pre-norm MLP; the residual target is x2 throughout
int cross_block(Graph& g, int x2_map, int x1_map, const LasNetConfig& cfg, int stage,
                const ParamNodeFn& pnode);

// full stage: shared self-attention blocks on both branches, cross step on
// the interim branch only; first = baseline out, second = interim out
std::pair<int, int> lawa_stage(Graph& g, int z1_map, int z2_map,
                               const LasNetConfig& cfg, int stage,
                               const ParamNodeFn& pnode);

struct GateNodes {
  int alpha1 = -1;          // baseline coefficients, sigmoid of its gate logit
  int alpha2 = -1;          // interim coefficients after 7^3 refinement
  int gated1 = -1;          // skip1 * alpha1
  int gated2 = -1;          // skip2 * alpha2
};

// shared attention gate on each branch; the interim logit is refined by a
// convolution over both coefficient maps before its sigmoid
GateNodes laag_gate(Graph& g, int u1, int skip1, int u2, int skip2, int channels,
                    const std::string& prefix, const ParamNodeFn& pnode);

struct ForwardNodes {
  int logits1 = -1;
  int logits2 = -1;
  std::vector<int> params;  // node ids parallel to LasNetParams::specs
};

// inputs are [in_channels, patch, patch, patch] nodes already in the graph
ForwardNodes lasnet_forward(Graph& g, int pet1ct, int pet2ct,
                            const LasNetParams& params,
                            bool params_need_grad = false);

// value-level convenience: returns (logits1, logits2)
std::pair<Tensor, Tensor> lasnet_eval(const Tensor& pet1ct, const Tensor& pet2ct,
                                      const LasNetParams& params);

struct LossNodes {
  int total = -1;
  int bce1 = -1, dice1 = -1;
  int bce2 = -1, dice2 = -1;
};

// unweighted sum of cross-entropy and soft Dice over both branches
LossNodes joint_loss(Graph& g, int logits1, int logits2,
                     std::shared_ptr<const Tensor> y1,
                     std::shared_ptr<const Tensor> y2);

}  // namespace laspet::nn
