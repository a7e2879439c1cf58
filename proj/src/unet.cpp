#include "rediffuse/unet.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rediffuse {

template <typename T>
Tensor<T> time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2) throw std::invalid_argument("time embedding width must be even");
  const int half = dim / 2;
  Tensor<T> e({dim});
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    e.data[i] = static_cast<T>(std::sin(t * f));
    e.data[half + i] = static_cast<T>(std::cos(t * f));
  }
  return e;
}

template Tensor<float> time_embedding<float>(int, int);
template Tensor<double> time_embedding<double>(int, int);

namespace {

void validate_config(const UNetConfig& c) {
  if (c.size < 4 || c.size % (1 << c.depth))
    throw std::invalid_argument("input size must be divisible by 2^depth");
  if (c.depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (c.base < 1 || c.m < 1) throw std::invalid_argument("bad channel/group configuration");
  if (c.p < 1 || c.p % 2 == 0) throw std::invalid_argument("tap grid must be odd");
  if (c.time_dim < 4 || c.time_dim % 2) throw std::invalid_argument("time_dim must be even >= 4");
}

}  // namespace

template <typename T>
int UNet<T>::gn_groups_for(int channels) const {
  return std::gcd(channels, cfg_.gn_groups);
}

template <typename T>
int UNet<T>::register_tensor(const std::string& name, std::initializer_list<int> shape,
                             double scale, Rng* rng, bool is_conv) {
  int pid = ps_->find(name);
  if (pid < 0) {
    Tensor<T> init(shape);
    if (scale < 0)
      for (auto& v : init.data) v = T(1);  // scale -1 marks ones (norm gains)
    else if (scale > 0 && rng)
      for (auto& v : init.data) v = static_cast<T>(rng->uniform(-scale, scale));
    pid = ps_->add(name, std::move(init));
  } else {
    Tensor<T> want(shape);
    if (!ps_->values[pid].same_shape(want))
      throw std::invalid_argument("parameter " + name + " has shape " +
                                  ps_->values[pid].shape_str() + ", expected " + want.shape_str());
  }
  all_pids_.push_back(pid);
  if (is_conv) conv_pids_.push_back(pid);
  return pid;
}

template <typename T>
typename UNet<T>::ResBlockParams UNet<T>::register_res_block(const std::string& prefix, int c_in,
                                                             int c_out, Rng* rng) {
  ResBlockParams rb;
  rb.c_in = c_in;
  rb.c_out = c_out;
  const int m = cfg_.m, p = cfg_.p;
  const double s3 = std::sqrt(6.0 / (c_in * m * p * p));
  const double s3b = std::sqrt(6.0 / (c_out * m * p * p));
  rb.gn1_gamma = register_tensor(prefix + "gn1.gamma", {c_in}, -1, rng, false);
  rb.gn1_beta = register_tensor(prefix + "gn1.beta", {c_in}, 0, rng, false);
  rb.conv1 = register_tensor(prefix + "conv1.w", {c_out, c_in, m, p * p}, s3, rng, true);
  rb.tproj_w = register_tensor(prefix + "tproj.w", {cfg_.time_dim, c_out},
                               std::sqrt(6.0 / cfg_.time_dim), rng, false);
  rb.tproj_b = register_tensor(prefix + "tproj.b", {c_out}, 0, rng, false);
  rb.gn2_gamma = register_tensor(prefix + "gn2.gamma", {c_out}, -1, rng, false);
  rb.gn2_beta = register_tensor(prefix + "gn2.beta", {c_out}, 0, rng, false);
  rb.conv2 = register_tensor(prefix + "conv2.w", {c_out, c_out, m, p * p}, s3b, rng, true);
  if (c_in != c_out)
    rb.shortcut = register_tensor(prefix + "shortcut.w", {c_out, c_in, m, 1},
                                  std::sqrt(6.0 / (c_in * m)), rng, true);
  return rb;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, ParamStore<T>* ps, Rng* init_rng) : cfg_(cfg), ps_(ps) {
  validate_config(cfg);
  Rng* rng = init_rng;
  const int m = cfg.m, p = cfg.p, D = cfg.time_dim;

  lift_w_ = register_tensor("lift.w", {cfg.base, 3, 1, p * p}, std::sqrt(6.0 / (3 * p * p)), rng,
                            true);
  register_tensor("head_gn.gamma", {cfg.base}, -1, rng, false);
  register_tensor("head_gn.beta", {cfg.base}, 0, rng, false);

  tmlp1_w_ = register_tensor("time_mlp.1.w", {D, D}, std::sqrt(6.0 / D), rng, false);
  tmlp1_b_ = register_tensor("time_mlp.1.b", {D}, 0, rng, false);
  tmlp2_w_ = register_tensor("time_mlp.2.w", {D, D}, std::sqrt(6.0 / D), rng, false);
  tmlp2_b_ = register_tensor("time_mlp.2.b", {D}, 0, rng, false);

  int c = cfg.ch(0);
  for (int l = 0; l < cfg.depth; ++l) {
    const int target = cfg.ch(l);
    down_.push_back(register_res_block("down" + std::to_string(l) + ".block0.", c, target, rng));
    down_.push_back(
        register_res_block("down" + std::to_string(l) + ".block1.", target, target, rng));
    c = target;
  }
  const int cm = cfg.ch(cfg.depth);
  mid_.push_back(register_res_block("mid.block0.", c, cm, rng));
  mid_.push_back(register_res_block("mid.block1.", cm, cm, rng));
  c = cm;
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int target = cfg.ch(l);
    up_.push_back(register_res_block("up" + std::to_string(l) + ".block0.", c + cfg.ch(l), target,
                                     rng));
    up_.push_back(register_res_block("up" + std::to_string(l) + ".block1.", target, target, rng));
    c = target;
  }

  out_gn_gamma_ = register_tensor("out_gn.gamma", {cfg.ch(0)}, -1, rng, false);
  out_gn_beta_ = register_tensor("out_gn.beta", {cfg.ch(0)}, 0, rng, false);
  // Zero-initialized output taps: the untrained net predicts zero noise.
  out_w_ = register_tensor("out.w", {1, cfg.ch(0), m, p * p}, 0, rng, true);
}

template <typename T>
int UNet<T>::norm_act(Tape<T>& tape, int x, int gamma, int beta, int channels) const {
  const int groups = gn_groups_for(channels);
  if (cfg_.head_norm_first)
    return tape.silu(tape.group_norm(x, groups, T(1e-5), tape.param(gamma), tape.param(beta)));
  return tape.group_norm(tape.silu(x), groups, T(1e-5), tape.param(gamma), tape.param(beta));
}

template <typename T>
int UNet<T>::res_block(Tape<T>& tape, const ResBlockParams& rb, int x, int temb) const {
  const int m = cfg_.m, p = cfg_.p;
  EqConvDesc d1{ConvKind::Group, rb.c_in, rb.c_out, m, p};
  EqConvDesc d2{ConvKind::Group, rb.c_out, rb.c_out, m, p};
  // stage 1: conv(silu(norm(x))), then the per-channel time bias
  int h = tape.group_norm(x, gn_groups_for(rb.c_in), T(1e-5), tape.param(rb.gn1_gamma),
                          tape.param(rb.gn1_beta));
  h = tape.eq_conv(d1, tape.silu(h), tape.param(rb.conv1));
  int bias = tape.dense(temb, tape.param(rb.tproj_w), tape.param(rb.tproj_b));
  h = tape.add_bias_c(h, bias);
  // stage 2
  h = tape.group_norm(h, gn_groups_for(rb.c_out), T(1e-5), tape.param(rb.gn2_gamma),
                      tape.param(rb.gn2_beta));
  h = tape.eq_conv(d2, tape.silu(h), tape.param(rb.conv2));
  int sc = x;
  if (rb.shortcut >= 0) {
    EqConvDesc ds{ConvKind::Group, rb.c_in, rb.c_out, m, 1};
    sc = tape.eq_conv(ds, x, tape.param(rb.shortcut));
  }
  return tape.add(sc, h);
}

template <typename T>
int UNet<T>::build(Tape<T>& tape, const Tensor<T>& img_a, const Tensor<T>& img_b,
                   const Tensor<T>& f_t, int t) const {
  const int S = cfg_.size;
  for (const auto* im : {&img_a, &img_b, &f_t})
    if (im->ndim != 3 || im->dims[0] != S || im->dims[1] != S || im->dims[2] != 1)
      throw std::invalid_argument("conditioning/state images must be (" + std::to_string(S) +
                                  "," + std::to_string(S) + ",1), got " + im->shape_str());

  int x = tape.concat_c(tape.concat_c(tape.input(img_a), tape.input(img_b)), tape.input(f_t));

  // time branch
  int temb = tape.input(time_embedding<T>(t, cfg_.time_dim));
  temb = tape.silu(tape.dense(temb, tape.param(tmlp1_w_), tape.param(tmlp1_b_)));
  temb = tape.dense(temb, tape.param(tmlp2_w_), tape.param(tmlp2_b_));

  // lifting head
  EqConvDesc dl{ConvKind::Lift, 3, cfg_.base, cfg_.m, cfg_.p};
  int f = tape.eq_conv(dl, x, tape.param(lift_w_));
  f = norm_act(tape, f, ps_->find("head_gn.gamma"), ps_->find("head_gn.beta"), cfg_.base);

  // encoder; skip connections are the pooled level outputs
  std::vector<int> skips;
  for (int l = 0; l < cfg_.depth; ++l) {
    f = res_block(tape, down_[2 * l], f, temb);
    f = res_block(tape, down_[2 * l + 1], f, temb);
    f = tape.maxpool(f);
    skips.push_back(f);
  }

  f = res_block(tape, mid_[0], f, temb);
  f = res_block(tape, mid_[1], f, temb);

  // decoder
  for (int i = 0; i < cfg_.depth; ++i) {
    const int l = cfg_.depth - 1 - i;
    f = tape.concat_c(f, skips[l]);
    f = res_block(tape, up_[2 * i], f, temb);
    f = res_block(tape, up_[2 * i + 1], f, temb);
    f = tape.upsample(f);
  }

  // output head: norm/act, final shared-tap conv to one channel, group mean
  f = norm_act(tape, f, out_gn_gamma_, out_gn_beta_, cfg_.ch(0));
  EqConvDesc dout{ConvKind::Group, cfg_.ch(0), 1, cfg_.m, cfg_.p};
  f = tape.eq_conv(dout, f, tape.param(out_w_));
  return tape.group_mean(f);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& img_a, const Tensor<T>& img_b, const Tensor<T>& f_t,
                           int t) const {
  Tape<T> tape(ps_);
  return tape.value(build(tape, img_a, img_b, f_t, t));
}

template <typename T>
size_t UNet<T>::total_param_count() const {
  size_t n = 0;
  for (int pid : all_pids_) n += ps_->values[pid].size();
  return n;
}

template <typename T>
size_t UNet<T>::conv_param_count() const {
  size_t n = 0;
  for (int pid : conv_pids_) n += ps_->values[pid].size();
  return n;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace rediffuse
