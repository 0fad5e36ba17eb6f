#pragma once

// Progressive generator/discriminator pyramid.
//
// G_n works at base/2^(S−n) with 3+n stride-2 encoder stages and a mirrored
// decoder; each decoder stage is conv → modulation → LeakyReLU → ×2 nearest
// upsample, with U-Net skips from the matching encoder stage. D_n is a stack
// of 3+n spectrally normalized 5×5 stride-2 convs on [image, layout].

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spm/modulation.hpp"

namespace spm {

enum class Variant { Spm, Spade, SpadeL, WNorm, NoProg, SpmS };

std::string_view variant_name(Variant v);
// Accepts the CLI spellings: spm, spade, spade-l, wnorm, noprog, spm-s.
Variant parse_variant(std::string_view s);
// Row labels used by the ablation report.
std::string_view variant_label(Variant v);

struct PyramidConfig {
  std::size_t n_scales = 3;
  std::size_t base_h = 64;
  std::size_t base_w = 64;
  std::size_t base_channels = 16;
  std::size_t max_channels = 64;
  std::size_t disc_base_channels = 16;
  std::size_t disc_max_channels = 64;
  std::size_t hidden_channels = 32;  // C^h
  std::size_t num_classes = 8;       // C_s
  std::size_t image_channels = 3;
  BlockType block_type = BlockType::Spm;
  bool progressive = true;
  bool context_from_normalized = false;
  bool extra_spade = false;

  // Spatial size at scale n ∈ [1, n_scales].
  std::size_t scale_h(std::size_t n) const { return base_h >> (n_scales - n); }
  std::size_t scale_w(std::size_t n) const { return base_w >> (n_scales - n); }
  std::size_t encoder_depth(std::size_t n) const { return 3 + n; }
  std::size_t disc_layers(std::size_t n) const { return 3 + n; }
  // Base resolution must be a multiple of this.
  std::size_t required_divisor() const;

  // Throws with the offending field named.
  void validate() const;

  // Applies an ablation variant to this (default SPM) config.
  PyramidConfig with_variant(Variant v) const;
};

// r ← r + (k−1)·j, j ← j·s from r = j = 1.
std::size_t receptive_field(std::size_t layers, std::size_t kernel, std::size_t stride);

template <typename T>
class Generator {
 public:
  Generator(const PyramidConfig& cfg, std::size_t scale, std::uint64_t seed);

  std::size_t scale() const { return scale_; }
  std::size_t depth() const { return down_.size(); }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  // image: (N,3,H,W) composed input; mask: (N,1,H,W); layout at this scale.
  // Returns O_n in [−1, 1].
  Var<T> forward(const Var<T>& image, const Tensor<T>& mask, const SemanticLayout<T>& layout) const;

  void collect(const std::string& prefix, ParamList<T>& out) const;
  const std::vector<std::unique_ptr<ModulationBlock<T>>>& blocks() const { return mods_; }

 private:
  std::size_t scale_, h_, w_;
  Conv2d<T> stem_;
  std::vector<Conv2d<T>> down_;
  std::vector<Conv2d<T>> dec_;                              // index k−1 for stage k
  std::vector<std::unique_ptr<ModulationBlock<T>>> mods_;   // index k−1
  std::vector<Conv2d<T>> extra_dec_;                        // SPADE-L only
  std::vector<std::unique_ptr<ModulationBlock<T>>> extra_mods_;
  Conv2d<T> head_;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const PyramidConfig& cfg, std::size_t scale, std::uint64_t seed);

  std::size_t scale() const { return scale_; }
  std::size_t layers() const { return convs_.size(); }

  // Raw score map. In training mode every layer first advances its
  // power-iteration state by exactly one step.
  Var<T> forward(const Var<T>& image, const SemanticLayout<T>& layout, bool training);

  // Kernels divided by their current spectral estimate.
  std::vector<Tensor<T>> normalized_kernels() const;

  void collect(const std::string& prefix, ParamList<T>& out) const;
  std::vector<SpectralState<T>>& spectral_states() { return sn_; }
  const std::vector<SpectralState<T>>& spectral_states() const { return sn_; }

 private:
  std::size_t scale_, h_, w_;
  std::vector<Conv2d<T>> convs_;
  std::vector<SpectralState<T>> sn_;
};

// Inputs after pyramid construction at one scale.
template <typename T>
struct ScaleInputs {
  Tensor<T> image;  // masked image I_n (edited region zero)
  Tensor<T> mask;   // M_n (N,1,h,w)
  SemanticLayout<T> layout;
};

template <typename T>
struct PyramidOutputs {
  std::vector<std::optional<Var<T>>> raw;        // O_n, index n−1; empty for skipped scales
  std::vector<std::optional<Var<T>>> composite;  // O_n ⊙ M_n + I_n ⊙ (1 − M_n)
};

template <typename T>
class Pyramid {
 public:
  Pyramid(const PyramidConfig& cfg, std::uint64_t seed);

  const PyramidConfig& config() const { return cfg_; }
  std::vector<Generator<T>>& generators() { return gens_; }
  const std::vector<Generator<T>>& generators() const { return gens_; }
  std::vector<Discriminator<T>>& discriminators() { return discs_; }
  const std::vector<Discriminator<T>>& discriminators() const { return discs_; }

  // Scales that have a generator (all, or only the finest for w/o prog).
  std::vector<std::size_t> active_scales() const;

  // image: masked (N,3,H,W); layout full resolution; mask (N,1,H,W).
  std::vector<ScaleInputs<T>> build_inputs(const Tensor<T>& image, const SemanticLayout<T>& layout,
                                           const Tensor<T>& mask) const;

  PyramidOutputs<T> forward(const std::vector<ScaleInputs<T>>& inputs) const;
  PyramidOutputs<T> forward(const Tensor<T>& image, const SemanticLayout<T>& layout, const Tensor<T>& mask) const {
    return forward(build_inputs(image, layout, mask));
  }

  ParamList<T> generator_params() const;
  ParamList<T> discriminator_params() const;

 private:
  PyramidConfig cfg_;
  std::vector<Generator<T>> gens_;
  std::vector<Discriminator<T>> discs_;
};

// I_G = O_prev ⊙ M + I ⊙ (1 − M). Throws on a non-binary mask.
template <typename T>
Var<T> compose_input(const Var<T>& o_prev, const Var<T>& image, const Tensor<T>& mask);

// Binary (N,1,H,W) mask tensor from grids.
template <typename T>
Tensor<T> mask_tensor(const std::vector<Mask>& masks);

}  // namespace spm
