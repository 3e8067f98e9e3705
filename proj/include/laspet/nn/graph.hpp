#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "laspet/nn/tensor.hpp"

namespace laspet::nn {

// Tape-based reverse-mode autodiff. Nodes are appended in evaluation order
// (a valid topological order), values are computed eagerly, and backward()
// walks the tape in reverse accumulating gradients into every node that
// requires them. The graph is rebuilt per forward pass.
class Graph {
 public:
  using Indices = std::shared_ptr<const std::vector<int64_t>>;

  int input(Tensor t, bool needs_grad);
  int constant(Tensor t) { return input(std::move(t), false); }

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  // valid after backward() for nodes that need gradients
  const std::vector<double>& grad(int id) const {
    return nodes_[static_cast<size_t>(id)].grad;
  }

  // seeds d(loss)/d(loss) = 1 and accumulates; loss must be a scalar node
  void backward(int loss);

  // elementwise and shape plumbing
  int add(int a, int b);
  int scale(int x, double s);
  int mul(int a, int b);
  int reshape(int x, std::vector<int> shape);
  int concat0(int a, int b);  // along axis 0, trailing shapes equal
  int gather(int x, Indices idx, std::vector<int> out_shape);
  int upsample_nearest2(int x);  // [C,Z,Y,X] -> [C,2Z,2Y,2X]

  // activations and normalizations
  int leaky_relu(int x, double slope);
  int sigmoid(int x);
  int gelu(int x);
  int softmax_lastdim(int x);
  int instance_norm(int x, int gamma, int beta, double eps = 1e-5);  // x [C,...]
  int layer_norm(int x, int gamma, int beta, double eps = 1e-5);     // over last dim

  // linear algebra
  int conv3d(int x, int w, int b, int stride, int pad);  // x [Ci,Z,Y,X], w [Co,Ci,k,k,k]
  int matmul2d(int a, int w);                            // [M,K]x[K,N]
  int bmm(int a, int b, bool ta, bool tb);               // [B,M,K]x[B,K,N]
  int add_rowvec(int x, int b);                          // x [...,C] + b [C]
  int mul_bcast0(int x, int m);  // x [C,...] * m [1,...] broadcast over axis 0

  // attention helpers; batch axis is windows*heads with heads fastest
  int add_relpos(int scores, int table, Indices pair_index, int num_heads);
  int add_winmask(int scores, std::shared_ptr<const std::vector<double>> mask,
                  int num_heads);

  // losses (targets are constants)
  int bce_with_logits_mean(int logits, std::shared_ptr<const Tensor> target);
  int soft_dice_loss(int logits, std::shared_ptr<const Tensor> target,
                     double eps = 1e-5);

 private:
  struct Node {
    Tensor val;
    std::vector<double> grad;
    std::function<void(Graph&)> back;
    bool needs_grad = false;
  };

  int push(Tensor val, bool needs_grad);
  // no-op when the node does not need gradients
  void set_back(int id, std::function<void(Graph&)> back);
  bool ng(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  std::vector<double>& g(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const std::vector<double>& cv(int id) const {
    return nodes_[static_cast<size_t>(id)].val.v;
  }

  std::vector<Node> nodes_;
};

}  // namespace laspet::nn
