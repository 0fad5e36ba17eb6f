#pragma once

// Training and evaluation masks. 1 marks the edited region.

#include <random>
#include <string_view>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

enum class MaskType { FreeForm, Extension, Outpainting, Instance, Class };

inline constexpr std::size_t kMaskTypeCount = 5;

std::string_view mask_type_name(MaskType t);
// freeform, extension, outpainting, instance, class
MaskType parse_mask_type(std::string_view s);

// One foreground object; pixels are row-major indices y·W + x.
struct Instance {
  std::int32_t label = 0;
  std::vector<std::uint32_t> pixels;
};

double coverage(const Mask& m);
// Throws unless binary with both regions present.
void validate_training_mask(const Mask& m);

// Union of 1–8 random-walk thick strokes covering 5–50% of the image.
// H, W ≥ 16.
Mask free_form_mask(std::size_t h, std::size_t w, std::mt19937_64& rng);

// Right half; the right ⌈W/2⌉ columns when W is odd.
Mask extension_mask(std::size_t h, std::size_t w);

// Everything except one ⌊H/2⌋×⌊W/2⌋ known patch at a uniform random offset.
Mask outpainting_mask(std::size_t h, std::size_t w, std::mt19937_64& rng);

inline constexpr std::size_t kInstanceDilation = 4;

// Bounding box of one random instance grown by 4 px (clamped). Falls back
// to free_form_mask, with a warning, when no instance leaves a known region.
Mask instance_mask(const LabelGrid& seg, const std::vector<Instance>& instances, std::mt19937_64& rng,
                   bool* fell_back = nullptr);

// Exact pixel set of one random class present in seg (classes covering the
// whole image are skipped). Falls back to free_form_mask like instance_mask.
Mask class_mask(const LabelGrid& seg, std::mt19937_64& rng, bool* fell_back = nullptr);

// Bounding box [y0, y1) × [x0, x1) grown by `margin` and clamped.
Mask box_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1,
              std::size_t margin);

struct MaskContext {
  std::size_t h = 0, w = 0;
  const LabelGrid* seg = nullptr;
  const std::vector<Instance>* instances = nullptr;
};

struct SampledMask {
  MaskType type;
  Mask mask;
  bool fell_back = false;
};

// Uniform choice among the five generators.
SampledMask sample_mask(const MaskContext& ctx, std::mt19937_64& rng);

// Mask of the requested type.
SampledMask make_mask(MaskType type, const MaskContext& ctx, std::mt19937_64& rng);

}  // namespace spm
