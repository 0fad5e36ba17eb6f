#pragma once

// Synthetic scenes with exact semantics, directory datasets in the
// images/ + annotations/ layout, and batch assembly.

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spm/masks.hpp"
#include "spm/training.hpp"

namespace spm {

struct Scene {
  Tensor<float> image;  // (1,3,H,W) in [−1, 1]
  LabelGrid seg;
  std::vector<Instance> instances;
  std::string name;
};

struct ClassInfo {
  std::string name;
  std::array<std::uint8_t, 3> color;  // display color
};

// Classes 0–5 are background bands, 6–7 foreground shapes.
inline constexpr std::size_t kSyntheticClasses = 8;
const std::vector<ClassInfo>& synthetic_classes();
inline constexpr std::array<std::int32_t, 2> kSyntheticForeground = {6, 7};

// Layered scene: 4–7 wavy background bands, each class with its own
// procedural texture, plus 0–3 foreground shapes. Colors, texture periods
// and phases are drawn per scene. H, W ≥ 16.
Scene synthetic_scene(std::mt19937_64& rng, std::size_t h, std::size_t w);

// Scene i is drawn from its own stream, so datasets of different sizes
// share their prefix.
std::vector<Scene> synthetic_dataset(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w);

enum class ResizePolicy {
  None,
  Longer384,    // longer side to 384, shorter side at least 256
  Fixed512x256  // 512 wide, 256 high
};

ResizePolicy parse_resize_policy(std::string_view s);

// Target (h, w) for an image of (h, w) under `policy`.
std::pair<std::size_t, std::size_t> policy_size(ResizePolicy policy, std::size_t h, std::size_t w);

struct DatasetSpec {
  std::string root;
  std::size_t num_classes = kSyntheticClasses;
  std::size_t crop_h = 64, crop_w = 64;
  ResizePolicy policy = ResizePolicy::None;
  // Connected components of these classes become instances.
  std::vector<std::int32_t> foreground_classes;
};

// `root/images/*.png` matched by filename with `root/annotations/*.png`.
class DirectoryDataset {
 public:
  explicit DirectoryDataset(DatasetSpec spec);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  // Random crop when rng is given, center crop otherwise.
  Scene load(std::size_t index, std::mt19937_64* rng = nullptr) const;

 private:
  DatasetSpec spec_;
  std::vector<std::string> names_;
};

std::vector<Scene> load_directory(const DatasetSpec& spec, std::mt19937_64* rng = nullptr);

// Materializes scenes in the directory layout (names scene_0000.png, ...).
void write_directory(const std::vector<Scene>& scenes, const std::string& root);

// 4-connected components of the given classes.
std::vector<Instance> connected_instances(const LabelGrid& seg, const std::vector<std::int32_t>& classes);

using MaskSampler = std::function<SampledMask(const MaskContext&, std::mt19937_64&)>;

// Sampler drawing the given type, or uniformly over all five when empty.
MaskSampler mask_sampler(std::optional<MaskType> type = std::nullopt);

// Stacks scenes with their masks: masked = image with the edit zeroed,
// layout one-hot inside the edit and "unknown" outside.
Batch<float> make_batch(const std::vector<const Scene*>& scenes, const std::vector<Mask>& masks,
                        std::size_t num_classes);
Batch<float> make_batch(const std::vector<const Scene*>& scenes, const MaskSampler& sampler,
                        std::size_t num_classes, std::mt19937_64& rng, std::vector<Mask>* masks_out = nullptr);

}  // namespace spm
