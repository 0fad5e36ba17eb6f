#pragma once

// Channel-wise normalization, SPADE modulation and the two-stage
// style-preserved modulation (SPM).
//
//   SPADE:  F̃ = (1 + γ) ⊙ F̄ + β,             (γ, β) from the layout S
//   SPM:    γ_f = (1 + γ_s2) ⊙ γ_c + β_s2
//           β_f = (1 + γ_s1) ⊙ β_c + β_s1
//           F̃ = (1 + γ_f) ⊙ F̄ + β_f,         (γ_c, β_c) from the raw F
//
// F̄ = (F − μ) / (σ + ε) with per-sample, per-channel statistics.

#include <memory>
#include <random>

#include "spm/layers.hpp"

namespace spm {

// One-hot layout (N, C_s+1, H, W). Channel C_s is the reserved "unknown"
// class used for every known (mask = 0) pixel.
template <typename T>
struct SemanticLayout {
  Tensor<T> onehot;

  std::size_t num_classes() const { return onehot.shape().c - 1; }
  std::size_t unknown_channel() const { return onehot.shape().c - 1; }

  // Builds a single-sample layout: class `seg(y,x)` inside the mask,
  // the unknown channel outside. Labels inside the mask must be < num_classes.
  static SemanticLayout from_labels(const LabelGrid& seg, const Mask& mask, std::size_t num_classes);

  // Nearest resize; preserves the one-hot invariant.
  SemanticLayout resized(std::size_t h, std::size_t w) const;

  // Throws unless exactly one channel is hot per pixel, and (when a mask is
  // given) the unknown channel is hot exactly where the mask is 0.
  void validate(const Mask* mask = nullptr, std::size_t sample = 0) const;
};

template <typename T>
struct NormStats {
  Tensor<T> mu;     // (N, C, 1, 1)
  Tensor<T> sigma;  // (N, C, 1, 1), population standard deviation
};

template <typename T>
NormStats<T> channel_stats(const Tensor<T>& f);

// F̄ = (F − μ)/(σ + ε); a constant slice maps to 0.
template <typename T>
Var<T> channel_normalize(const Var<T>& f);

template <typename T>
struct ModulationPair {
  Var<T> gamma;
  Var<T> beta;
};

template <typename T>
struct SemanticParamQuad {
  Var<T> gs1, bs1, gs2, bs2;
};

struct ModulationConfig {
  std::size_t feature_channels = 0;
  std::size_t semantic_channels = 0;  // C_s + 1
  std::size_t hidden_channels = 128;  // C^h of the shared layers
  std::size_t kernel_size = 3;
  // "w norm" ablation: feed the context head F̄ instead of F.
  bool context_from_normalized = false;
};

// Shared k×k conv to C^h + ReLU, then one k×k head per parameter map.
// Heads start at zero so a fresh block is the identity modulation.
template <typename T>
struct HeadStack {
  Conv2d<T> shared;
  std::vector<Conv2d<T>> heads;

  static HeadStack make(std::size_t in_channels, const ModulationConfig& cfg, std::size_t n_heads,
                        std::mt19937_64& rng);
  std::vector<Var<T>> operator()(const Var<T>& input) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Parameter maps from the layout: one pair (SPADE) or the SPM quad.
template <typename T>
ModulationPair<T> semantic_pair(const HeadStack<T>& heads, const SemanticLayout<T>& s);
template <typename T>
SemanticParamQuad<T> semantic_quad(const HeadStack<T>& heads, const SemanticLayout<T>& s);

// (γ_c, β_c) from the un-normalized feature map.
template <typename T>
ModulationPair<T> context_pair(const HeadStack<T>& heads, const Var<T>& f);

template <typename T>
ModulationPair<T> spm_fuse(const SemanticParamQuad<T>& quad, const ModulationPair<T>& ctx);

enum class BlockType { Spm, Spade };

template <typename T>
class ModulationBlock {
 public:
  virtual ~ModulationBlock() = default;
  virtual BlockType type() const = 0;
  // Final (γ, β) applied to F̄; for SPM these are (γ_f, β_f).
  virtual ModulationPair<T> parameters(const Var<T>& f, const Var<T>& f_bar,
                                       const SemanticLayout<T>& s) const = 0;
  virtual void collect(const std::string& prefix, ParamList<T>& out) const = 0;
  const ModulationConfig& config() const { return cfg_; }

  Var<T> forward(const Var<T>& f, const SemanticLayout<T>& s) const;

 protected:
  explicit ModulationBlock(ModulationConfig cfg) : cfg_(cfg) {}
  void check_inputs(const Var<T>& f, const SemanticLayout<T>& s) const;
  ModulationConfig cfg_;
};

template <typename T>
class SpadeBlock final : public ModulationBlock<T> {
 public:
  SpadeBlock(const ModulationConfig& cfg, std::mt19937_64& rng);
  BlockType type() const override { return BlockType::Spade; }
  ModulationPair<T> parameters(const Var<T>& f, const Var<T>& f_bar,
                               const SemanticLayout<T>& s) const override;
  void collect(const std::string& prefix, ParamList<T>& out) const override;

  HeadStack<T> semantic;
};

template <typename T>
class SpmBlock final : public ModulationBlock<T> {
 public:
  SpmBlock(const ModulationConfig& cfg, std::mt19937_64& rng);
  BlockType type() const override { return BlockType::Spm; }
  ModulationPair<T> parameters(const Var<T>& f, const Var<T>& f_bar,
                               const SemanticLayout<T>& s) const override;
  void collect(const std::string& prefix, ParamList<T>& out) const override;

  HeadStack<T> semantic;  // heads: γ_s1, β_s1, γ_s2, β_s2
  HeadStack<T> context;   // heads: γ_c, β_c
};

template <typename T>
std::unique_ptr<ModulationBlock<T>> make_block(BlockType type, const ModulationConfig& cfg,
                                               std::mt19937_64& rng);

}  // namespace spm
