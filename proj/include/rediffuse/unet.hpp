#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "rediffuse/autodiff.hpp"
#include "rediffuse/rng.hpp"

namespace rediffuse {

// Conditional denoiser configuration. The network takes the two source
// images and the current diffusion state as a 3-channel input, lifts it to
// rotation-equivariant feature fields, and returns a single-channel noise
// estimate that co-rotates with the inputs. m = 1 gives the non-equivariant
// ablation with ordinary convolutions.
struct UNetConfig {
  int size = 32;       // input height = width; must be divisible by 2^depth
  int depth = 2;       // number of pooling stages
  int base = 32;       // field multiplicity after the lifting head; the
                       // lifted tensor carries m * base scalar maps
  int m = 4;           // rotation-group order
  int p = 3;           // conv tap grid (odd)
  int gn_groups = 16;  // target statistics-group count (clamped per layer)
  int time_dim = 128;  // sinusoidal embedding width (even)
  bool head_norm_first = true;  // normalize before the activation in heads

  // Channel width at a given resolution level (capped at 4x base).
  int ch(int level) const { return base * std::min(1 << level, 4); }
};

// Sinusoidal embedding of an integer timestep: dim/2 sines followed by
// dim/2 cosines over geometrically spaced frequencies.
template <typename T>
Tensor<T> time_embedding(int t, int dim);

template <typename T>
class UNet {
 public:
  // Binds to (or creates in) the given store: parameters already present
  // under this net's names are reused, missing ones are initialized from
  // init_rng. This makes checkpoint-resume a plain store load.
  UNet(const UNetConfig& cfg, ParamStore<T>* ps, Rng* init_rng);

  // Appends the whole network to the tape; returns the node id of the
  // predicted noise image (H, W, 1).
  int build(Tape<T>& tape, const Tensor<T>& img_a, const Tensor<T>& img_b,
            const Tensor<T>& f_t, int t) const;

  // Convenience inference entry point on a throwaway tape.
  Tensor<T> forward(const Tensor<T>& img_a, const Tensor<T>& img_b, const Tensor<T>& f_t,
                    int t) const;

  const UNetConfig& config() const { return cfg_; }
  ParamStore<T>* store() const { return ps_; }
  size_t total_param_count() const;
  size_t conv_param_count() const;  // shared-tap (and 1x1) conv weights only

 private:
  struct ResBlockParams {
    int gn1_gamma, gn1_beta, conv1;
    int tproj_w, tproj_b;
    int gn2_gamma, gn2_beta, conv2;
    int shortcut = -1;  // 1x1 conv when channel counts differ
    int c_in, c_out;
  };

  int register_tensor(const std::string& name, std::initializer_list<int> shape, double scale,
                      Rng* rng, bool is_conv);
  ResBlockParams register_res_block(const std::string& prefix, int c_in, int c_out, Rng* rng);
  int res_block(Tape<T>& tape, const ResBlockParams& rb, int x, int temb) const;
  int norm_act(Tape<T>& tape, int x, int gamma, int beta, int channels) const;
  int gn_groups_for(int channels) const;

  UNetConfig cfg_;
  ParamStore<T>* ps_;
  std::vector<int> conv_pids_;
  std::vector<int> all_pids_;

  int lift_w_;
  int tmlp1_w_, tmlp1_b_, tmlp2_w_, tmlp2_b_;
  std::vector<ResBlockParams> down_, mid_, up_;
  int out_gn_gamma_, out_gn_beta_, out_w_;
};

}  // namespace rediffuse
