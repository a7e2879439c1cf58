#pragma once

#include <string>
#include <vector>

#include "rediffuse/eq_ops.hpp"
#include "rediffuse/tensor.hpp"

namespace rediffuse {

// Named parameter registry. Values and gradients live here; the tape only
// references parameters by id, so one store can back many tapes.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::vector<Tensor<T>> grads;

  int add(const std::string& name, Tensor<T> init);
  int find(const std::string& name) const;  // -1 if absent
  int count() const { return static_cast<int>(values.size()); }
  size_t total_params() const;
  void zero_grad();
};

// Adam with bias correction. State arrays are lazily sized to the store.
template <typename T>
struct AdamOptimizer {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t steps = 0;
  std::vector<Tensor<T>> m, v;

  void step(ParamStore<T>& ps, double lr);
};

// Reverse-mode tape over the equivariant ops. Build the graph forwards with
// the node-returning methods, then call backward(loss) once; gradients of
// Param nodes accumulate into the ParamStore.
template <typename T>
class Tape {
 public:
  explicit Tape(ParamStore<T>* params) : params_(params) {}

  int input(Tensor<T> v);        // leaf without gradient
  int param(int pid);            // leaf backed by the store

  int eq_conv(const EqConvDesc& d, int x, int w);
  int maxpool(int x);
  int upsample(int x);
  int group_norm(int x, int groups, T eps, int gamma, int beta);
  int silu(int x);
  int concat_c(int a, int b);    // concatenate along the channel axis
  int add(int a, int b);
  int add_bias_c(int x, int b);  // broadcast a length-C vector over a field
  int dense(int x, int w, int b);  // x:(K), w:(K,N), b:(N)
  int group_mean(int x);
  int l2_loss(int pred, int target);  // Euclidean norm of the difference

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  const Tensor<T>& grad(int id) const { return nodes_[id].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(int loss);

 private:
  enum class Op {
    Input, Param, EqConv, MaxPool, Upsample, GroupNorm, SiLU,
    ConcatC, Add, AddBiasC, Dense, GroupMean, L2Loss,
  };
  struct Node {
    Op op;
    int in[3] = {-1, -1, -1};
    Tensor<T> value;
    Tensor<T> grad;
    // op-specific saved context
    EqConvDesc desc;
    Tensor<int32_t> argmax;
    GroupNormStats stats;
    int groups = 0;
    T eps = T(0);
    int pid = -1;
  };

  int push(Node n);
  void accum(int id, Tensor<T>&& g);
  void ensure_grad(Node& n);

  ParamStore<T>* params_;
  std::vector<Node> nodes_;
};

}  // namespace rediffuse
