#include "rediffuse/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "rediffuse/kernels.hpp"

namespace rediffuse {

// --- ParamStore -------------------------------------------------------------

template <typename T>
int ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
  names.push_back(name);
  grads.push_back(zeros_like(init));
  values.push_back(std::move(init));
  return static_cast<int>(values.size()) - 1;
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

template <typename T>
size_t ParamStore<T>::total_params() const {
  size_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), T(0));
}

// --- Adam -------------------------------------------------------------------

template <typename T>
void AdamOptimizer<T>::step(ParamStore<T>& ps, double lr) {
  if (m.size() != ps.values.size()) {
    m.clear();
    v.clear();
    for (const auto& p : ps.values) {
      m.push_back(zeros_like(p));
      v.push_back(zeros_like(p));
    }
  }
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (size_t p = 0; p < ps.values.size(); ++p) {
    auto& w = ps.values[p].data;
    const auto& g = ps.grads[p].data;
    auto& mp = m[p].data;
    auto& vp = v[p].data;
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = beta1 * static_cast<double>(mp[i]) + (1.0 - beta1) * gi;
      const double vi = beta2 * static_cast<double>(vp[i]) + (1.0 - beta2) * gi * gi;
      mp[i] = static_cast<T>(mi);
      vp[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) -
                            lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
}

// --- Tape -------------------------------------------------------------------

template <typename T>
int Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void Tape<T>::accum(int id, Tensor<T>&& g) {
  auto& dst = nodes_[id].grad;
  if (dst.empty()) {
    dst = std::move(g);
    return;
  }
  if (!dst.same_shape(g)) throw std::logic_error("gradient shape mismatch");
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
int Tape<T>::input(Tensor<T> v) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(v);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::param(int pid) {
  Node n;
  n.op = Op::Param;
  n.pid = pid;
  n.value = params_->values[pid];
  return push(std::move(n));
}

template <typename T>
int Tape<T>::eq_conv(const EqConvDesc& d, int x, int w) {
  Node n;
  n.op = Op::EqConv;
  n.desc = d;
  n.in[0] = x;
  n.in[1] = w;
  n.value = eq_conv_fwd(d, nodes_[x].value, nodes_[w].value);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::maxpool(int x) {
  Node n;
  n.op = Op::MaxPool;
  n.in[0] = x;
  n.value = eq_maxpool(nodes_[x].value, &n.argmax);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::upsample(int x) {
  Node n;
  n.op = Op::Upsample;
  n.in[0] = x;
  n.value = eq_upsample(nodes_[x].value);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::group_norm(int x, int groups, T eps, int gamma, int beta) {
  Node n;
  n.op = Op::GroupNorm;
  n.in[0] = x;
  n.in[1] = gamma;
  n.in[2] = beta;
  n.groups = groups;
  n.eps = eps;
  n.value = rediffuse::group_norm(nodes_[x].value, groups, eps, nodes_[gamma].value,
                                  nodes_[beta].value, &n.stats);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::silu(int x) {
  Node n;
  n.op = Op::SiLU;
  n.in[0] = x;
  n.value = rediffuse::silu(nodes_[x].value);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::concat_c(int a, int b) {
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  if (va.ndim != vb.ndim) throw std::invalid_argument("concat: rank mismatch");
  for (int i = 0; i + 1 < va.ndim; ++i)
    if (va.dims[i] != vb.dims[i]) throw std::invalid_argument("concat: shape mismatch");
  const int ca = va.dims[va.ndim - 1], cb = vb.dims[vb.ndim - 1];
  Node n;
  n.op = Op::ConcatC;
  n.in[0] = a;
  n.in[1] = b;
  n.value.dims = va.dims;
  n.value.ndim = va.ndim;
  n.value.dims[va.ndim - 1] = ca + cb;
  size_t rows = va.size() / ca;
  n.value.data.resize(rows * (ca + cb));
  for (size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < ca; ++c) n.value.data[r * (ca + cb) + c] = va.data[r * ca + c];
    for (int c = 0; c < cb; ++c) n.value.data[r * (ca + cb) + ca + c] = vb.data[r * cb + c];
  }
  return push(std::move(n));
}

template <typename T>
int Tape<T>::add(int a, int b) {
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.in[0] = a;
  n.in[1] = b;
  n.value = va;
  for (size_t i = 0; i < vb.size(); ++i) n.value.data[i] += vb.data[i];
  return push(std::move(n));
}

template <typename T>
int Tape<T>::add_bias_c(int x, int b) {
  const auto& vx = nodes_[x].value;
  const auto& vb = nodes_[b].value;
  const int C = vx.dims[vx.ndim - 1];
  if (vb.ndim != 1 || vb.dims[0] != C)
    throw std::invalid_argument("add_bias_c: bias must have one entry per channel");
  Node n;
  n.op = Op::AddBiasC;
  n.in[0] = x;
  n.in[1] = b;
  n.value = vx;
  const size_t rows = vx.size() / C;
  for (size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) n.value.data[r * C + c] += vb.data[c];
  return push(std::move(n));
}

template <typename T>
int Tape<T>::dense(int x, int w, int b) {
  const auto& vx = nodes_[x].value;
  const auto& vw = nodes_[w].value;
  const auto& vb = nodes_[b].value;
  const int K = vx.dims[0], N = vw.dims[1];
  if (vx.ndim != 1 || vw.ndim != 2 || vw.dims[0] != K || vb.ndim != 1 || vb.dims[0] != N)
    throw std::invalid_argument("dense: shape mismatch");
  Node n;
  n.op = Op::Dense;
  n.in[0] = x;
  n.in[1] = w;
  n.in[2] = b;
  n.value.resize({N});
  for (int j = 0; j < N; ++j) {
    double acc = static_cast<double>(vb.data[j]);
    for (int k = 0; k < K; ++k)
      acc += static_cast<double>(vx.data[k]) * static_cast<double>(vw.data[k * N + j]);
    n.value.data[j] = static_cast<T>(acc);
  }
  return push(std::move(n));
}

template <typename T>
int Tape<T>::group_mean(int x) {
  Node n;
  n.op = Op::GroupMean;
  n.in[0] = x;
  n.value = rediffuse::group_mean(nodes_[x].value);
  return push(std::move(n));
}

template <typename T>
int Tape<T>::l2_loss(int pred, int target) {
  const auto& vp = nodes_[pred].value;
  const auto& vt = nodes_[target].value;
  if (!vp.same_shape(vt)) throw std::invalid_argument("l2_loss: shape mismatch");
  double s = 0;
  for (size_t i = 0; i < vp.size(); ++i) {
    const double d = static_cast<double>(vp.data[i]) - static_cast<double>(vt.data[i]);
    s += d * d;
  }
  Node n;
  n.op = Op::L2Loss;
  n.in[0] = pred;
  n.in[1] = target;
  n.value.resize({1});
  n.value.data[0] = static_cast<T>(std::sqrt(s));
  return push(std::move(n));
}

template <typename T>
void Tape<T>::backward(int loss) {
  if (nodes_[loss].value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  nodes_[loss].grad.resize({1});
  nodes_[loss].grad.data[0] = T(1);

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    const Tensor<T>& g = n.grad;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Param: {
        auto& dst = params_->grads[n.pid];
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
        break;
      }
      case Op::EqConv: {
        Tensor<T> gin, gw;
        eq_conv_bwd(n.desc, nodes_[n.in[0]].value, nodes_[n.in[1]].value, g, &gin, &gw);
        accum(n.in[0], std::move(gin));
        accum(n.in[1], std::move(gw));
        break;
      }
      case Op::MaxPool: {
        const auto& vin = nodes_[n.in[0]].value;
        Tensor<T> gin = zeros_like(vin);
        kernels::maxpool_bwd(g.data.data(), n.argmax.data.data(), vin.dims[0], vin.dims[1],
                             vin.dims[2] * vin.dims[3], gin.data.data());
        accum(n.in[0], std::move(gin));
        break;
      }
      case Op::Upsample: {
        const auto& vin = nodes_[n.in[0]].value;
        Tensor<T> gin = zeros_like(vin);
        kernels::upsample_bwd(g.data.data(), vin.dims[0], vin.dims[1],
                              vin.dims[2] * vin.dims[3], gin.data.data());
        accum(n.in[0], std::move(gin));
        break;
      }
      case Op::GroupNorm: {
        const auto& vin = nodes_[n.in[0]].value;
        const int H = vin.dims[0], W = vin.dims[1];
        const int M = vin.ndim == 4 ? vin.dims[2] : 1;
        const int C = vin.ndim == 4 ? vin.dims[3] : vin.dims[2];
        Tensor<T> gin = zeros_like(vin);
        Tensor<T> ggamma = zeros_like(nodes_[n.in[1]].value);
        Tensor<T> gbeta = zeros_like(nodes_[n.in[2]].value);
        kernels::group_norm_bwd(vin.data.data(), g.data.data(), H, W, M, C, n.groups,
                                nodes_[n.in[1]].value.data.data(), n.stats.mean.data(),
                                n.stats.invstd.data(), gin.data.data(), ggamma.data.data(),
                                gbeta.data.data());
        accum(n.in[0], std::move(gin));
        accum(n.in[1], std::move(ggamma));
        accum(n.in[2], std::move(gbeta));
        break;
      }
      case Op::SiLU: {
        const auto& vin = nodes_[n.in[0]].value;
        Tensor<T> gin = zeros_like(vin);
        kernels::silu_bwd(vin.data.data(), g.data.data(), vin.size(), gin.data.data());
        accum(n.in[0], std::move(gin));
        break;
      }
      case Op::ConcatC: {
        const auto& va = nodes_[n.in[0]].value;
        const auto& vb = nodes_[n.in[1]].value;
        const int ca = va.dims[va.ndim - 1], cb = vb.dims[vb.ndim - 1];
        Tensor<T> ga = zeros_like(va), gb = zeros_like(vb);
        const size_t rows = va.size() / ca;
        for (size_t r = 0; r < rows; ++r) {
          for (int c = 0; c < ca; ++c) ga.data[r * ca + c] = g.data[r * (ca + cb) + c];
          for (int c = 0; c < cb; ++c) gb.data[r * cb + c] = g.data[r * (ca + cb) + ca + c];
        }
        accum(n.in[0], std::move(ga));
        accum(n.in[1], std::move(gb));
        break;
      }
      case Op::Add: {
        Tensor<T> ga = g, gb = g;
        accum(n.in[0], std::move(ga));
        accum(n.in[1], std::move(gb));
        break;
      }
      case Op::AddBiasC: {
        const auto& vb = nodes_[n.in[1]].value;
        const int C = vb.dims[0];
        Tensor<T> gx = g;
        Tensor<T> gb = zeros_like(vb);
        const size_t rows = g.size() / C;
        for (int c = 0; c < C; ++c) {
          double acc = 0;
          for (size_t r = 0; r < rows; ++r) acc += static_cast<double>(g.data[r * C + c]);
          gb.data[c] = static_cast<T>(acc);
        }
        accum(n.in[0], std::move(gx));
        accum(n.in[1], std::move(gb));
        break;
      }
      case Op::Dense: {
        const auto& vx = nodes_[n.in[0]].value;
        const auto& vw = nodes_[n.in[1]].value;
        const int K = vx.dims[0], N = vw.dims[1];
        Tensor<T> gx = zeros_like(vx), gw = zeros_like(vw), gb = zeros_like(nodes_[n.in[2]].value);
        for (int k = 0; k < K; ++k) {
          double acc = 0;
          for (int j = 0; j < N; ++j) {
            acc += static_cast<double>(vw.data[k * N + j]) * static_cast<double>(g.data[j]);
            gw.data[k * N + j] = static_cast<T>(static_cast<double>(vx.data[k]) *
                                                static_cast<double>(g.data[j]));
          }
          gx.data[k] = static_cast<T>(acc);
        }
        for (int j = 0; j < N; ++j) gb.data[j] = g.data[j];
        accum(n.in[0], std::move(gx));
        accum(n.in[1], std::move(gw));
        accum(n.in[2], std::move(gb));
        break;
      }
      case Op::GroupMean: {
        const auto& vin = nodes_[n.in[0]].value;
        const int M = vin.dims[2], C = vin.dims[3];
        Tensor<T> gin = zeros_like(vin);
        const T inv = T(1) / static_cast<T>(M);
        const size_t cells = vin.size() / (static_cast<size_t>(M) * C);
        for (size_t s = 0; s < cells; ++s)
          for (int gax = 0; gax < M; ++gax)
            for (int c = 0; c < C; ++c)
              gin.data[(s * M + gax) * C + c] = g.data[s * C + c] * inv;
        accum(n.in[0], std::move(gin));
        break;
      }
      case Op::L2Loss: {
        const auto& vp = nodes_[n.in[0]].value;
        const auto& vt = nodes_[n.in[1]].value;
        const double norm = static_cast<double>(n.value.data[0]);
        Tensor<T> gp = zeros_like(vp), gt = zeros_like(vt);
        if (norm > 0) {
          const double s = static_cast<double>(g.data[0]) / norm;
          for (size_t i = 0; i < vp.size(); ++i) {
            const double d = static_cast<double>(vp.data[i]) - static_cast<double>(vt.data[i]);
            gp.data[i] = static_cast<T>(s * d);
            gt.data[i] = static_cast<T>(-s * d);
          }
        }
        accum(n.in[0], std::move(gp));
        accum(n.in[1], std::move(gt));
        break;
      }
    }
  }
}

#define REDIFFUSE_INSTANTIATE_AUTODIFF(T) \
  template struct ParamStore<T>;          \
  template struct AdamOptimizer<T>;       \
  template class Tape<T>;

REDIFFUSE_INSTANTIATE_AUTODIFF(float)
REDIFFUSE_INSTANTIATE_AUTODIFF(double)

}  // namespace rediffuse
