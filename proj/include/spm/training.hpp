#pragma once

// Reconstruction, perceptual and hinge losses, Adam, the per-step
// D-then-G update over the whole pyramid, and checkpoint persistence.

#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>

#include "spm/config.hpp"
#include "spm/networks.hpp"

namespace spm {

// Weight of the perceptual term in the generator objective.
inline constexpr double kPerceptualWeight = 10.0;

struct LossBreakdown {
  double l1 = 0, perceptual = 0, adv_g = 0, adv_d = 0, total_g = 0;
};

// l1 + kPerceptualWeight·perceptual + adv_g.
double generator_objective(double l1, double perceptual, double adv_g);

// Sums per-scale parts with equal weights and fills total_g.
LossBreakdown total_g_loss(const std::vector<LossBreakdown>& per_scale);

struct OptimConfig {
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;

  void validate() const;
};

void store_optim_config(const OptimConfig& cfg, KeyValues& kv, const std::string& prefix = "optim.");
OptimConfig read_optim_config(const KeyValues& kv, OptimConfig cfg = {}, const std::string& prefix = "optim.");

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);

// Frozen multi-stage feature extractor shared by the perceptual loss and
// the metrics.
template <typename T>
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<Var<T>> stages(const Var<T>& image) const = 0;
  // Spatially pooled final-stage features, (N, D, 1, 1).
  Tensor<T> pooled(const Tensor<T>& images) const;
};

// Fixed-seed random conv embedder: four stride-2 3×3 stages with
// 16/32/64/64 channels and LeakyReLU(0.2). Weights never train.
template <typename T>
class RandomConvEmbedder final : public Embedder<T> {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EED0001;
  explicit RandomConvEmbedder(std::size_t in_channels = 3, std::uint64_t seed = kDefaultSeed);
  std::vector<Var<T>> stages(const Var<T>& image) const override;
  const std::vector<Conv2d<T>>& convs() const { return convs_; }

 private:
  std::vector<Conv2d<T>> convs_;
};

// Σ_stages mean |φ_k(pred) − φ_k(target)|.
template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& target, const Embedder<T>* embedder);

// mean(max(0, 1 − real)) + mean(max(0, 1 + fake))
template <typename T>
Var<T> hinge_d_loss(const Var<T>& real, const Var<T>& fake);
// −mean(fake)
template <typename T>
Var<T> hinge_g_loss(const Var<T>& fake);

template <typename T>
struct AdamSlot {
  Tensor<T> m, v;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update from the gradients currently held by `params`; a parameter
  // that received no gradient is updated with g = 0.
  void step(const ParamList<T>& params);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::map<std::string, AdamSlot<T>>& slots() { return slots_; }
  const std::map<std::string, AdamSlot<T>>& slots() const { return slots_; }

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamSlot<T>> slots_;
};

// One training example set at full resolution.
template <typename T>
struct Batch {
  Tensor<T> target;  // original images (N,3,H,W) in [−1, 1]
  Tensor<T> masked;  // target with the edited region zeroed
  Tensor<T> mask;    // (N,1,H,W), 1 = edited
  SemanticLayout<T> layout;
};

// Real image at each scale: the resized target inside the edit and the
// pyramid input I_n outside, so real and composited fakes share the known
// region exactly.
template <typename T>
std::vector<Tensor<T>> scale_targets(const Tensor<T>& target, const std::vector<ScaleInputs<T>>& inputs);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generator/discriminator pyramid plus optimizer and sampling state.
struct TrainingState {
  PyramidConfig model;
  OptimConfig optim;
  std::string variant = "spm";
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::unique_ptr<Pyramid<float>> pyramid;
  Adam<float> adam_g, adam_d;
  std::mt19937_64 rng;

  static TrainingState create(const PyramidConfig& model, const OptimConfig& optim, std::uint64_t seed,
                              const std::string& variant = "spm");
};

// One discriminator update (all D_n) followed by one generator update
// (all G_n jointly). Returns losses summed over scales; per-scale parts go
// to `per_scale` when given. Throws TrainingError on a non-finite loss.
LossBreakdown train_step(TrainingState& state, const Batch<float>& batch, const Embedder<float>& embedder,
                         std::vector<LossBreakdown>* per_scale = nullptr);

// `step, l1, lp, adv_g, adv_d, total_g`
std::string format_log_line(std::uint64_t step, const LossBreakdown& l);

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const TrainingState& state, std::ostream& out);
void save_checkpoint(const TrainingState& state, const std::string& path);
TrainingState load_checkpoint(std::istream& in);
TrainingState load_checkpoint(const std::string& path);

}  // namespace spm
