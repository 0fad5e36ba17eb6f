#include "spm/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace spm {

std::string_view mask_type_name(MaskType t) {
  switch (t) {
    case MaskType::FreeForm: return "freeform";
    case MaskType::Extension: return "extension";
    case MaskType::Outpainting: return "outpainting";
    case MaskType::Instance: return "instance";
    case MaskType::Class: return "class";
  }
  return "?";
}

MaskType parse_mask_type(std::string_view s) {
  for (MaskType t : {MaskType::FreeForm, MaskType::Extension, MaskType::Outpainting, MaskType::Instance,
                     MaskType::Class}) {
    if (mask_type_name(t) == s) return t;
  }
  throw std::invalid_argument("unknown mask type '" + std::string(s) +
                              "' (expected freeform, extension, outpainting, instance, class)");
}

double coverage(const Mask& m) {
  if (m.size() == 0) return 0.0;
  std::size_t on = 0;
  for (auto v : m.data) on += v != 0;
  return static_cast<double>(on) / static_cast<double>(m.size());
}

void validate_training_mask(const Mask& m) {
  std::size_t on = 0;
  for (auto v : m.data) {
    if (v > 1) throw std::invalid_argument("mask is not binary");
    on += v;
  }
  if (on == 0) throw std::invalid_argument("mask has no edited pixels");
  if (on == m.size()) throw std::invalid_argument("mask has no known pixels");
}

namespace {

void stamp_disc(Mask& m, double cy, double cx, double r) {
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - r)));
  const long y1 = std::min(static_cast<long>(m.h) - 1, static_cast<long>(std::ceil(cy + r)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - r)));
  const long x1 = std::min(static_cast<long>(m.w) - 1, static_cast<long>(std::ceil(cx + r)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= r * r) m(y, x) = 1;
    }
  }
}

Mask strokes(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Mask m(h, w, 0);
  const double side = static_cast<double>(std::min(h, w));
  std::uniform_int_distribution<int> n_strokes(1, 8), n_vertices(2, 6);
  std::uniform_real_distribution<double> uy(0, static_cast<double>(h)), ux(0, static_cast<double>(w));
  std::uniform_real_distribution<double> angle(0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> length(side / 10, side / 3), radius(side / 32, side / 12);
  const int ns = n_strokes(rng);
  for (int s = 0; s < ns; ++s) {
    double y = uy(rng), x = ux(rng);
    const double r = std::max(1.0, radius(rng));
    const int nv = n_vertices(rng);
    for (int v = 0; v < nv; ++v) {
      const double a = angle(rng), len = length(rng);
      const double ny = std::clamp(y + len * std::sin(a), 0.0, static_cast<double>(h - 1));
      const double nx = std::clamp(x + len * std::cos(a), 0.0, static_cast<double>(w - 1));
      const int steps = std::max(1, static_cast<int>(std::ceil(std::hypot(ny - y, nx - x) / std::max(0.5, r / 2))));
      for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        stamp_disc(m, y + t * (ny - y), x + t * (nx - x), r);
      }
      y = ny;
      x = nx;
    }
  }
  return m;
}

}  // namespace

Mask free_form_mask(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  if (h < 16 || w < 16) throw std::invalid_argument("free_form_mask needs H, W >= 16");
  // Rejection keeps coverage inside [5%, 50%]; a draw is accepted within a
  // handful of tries for any aspect ratio.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Mask m = strokes(h, w, rng);
    const double c = coverage(m);
    if (c >= 0.05 && c <= 0.5) return m;
  }
  throw std::logic_error("free_form_mask: no stroke set met the coverage bounds");
}

Mask extension_mask(std::size_t h, std::size_t w) {
  Mask m(h, w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = w / 2; x < w; ++x) m(y, x) = 1;
  }
  return m;
}

Mask outpainting_mask(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  const std::size_t ph = h / 2, pw = w / 2;
  if (ph == 0 || pw == 0) throw std::invalid_argument("outpainting_mask needs H, W >= 2");
  std::uniform_int_distribution<std::size_t> oy(0, h - ph), ox(0, w - pw);
  const std::size_t y0 = oy(rng), x0 = ox(rng);
  Mask m(h, w, 1);
  for (std::size_t y = y0; y < y0 + ph; ++y) {
    for (std::size_t x = x0; x < x0 + pw; ++x) m(y, x) = 0;
  }
  return m;
}

Mask box_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1,
              std::size_t margin) {
  if (y0 >= y1 || x0 >= x1 || y1 > h || x1 > w) throw std::invalid_argument("box outside the image");
  Mask m(h, w, 0);
  const std::size_t by0 = y0 > margin ? y0 - margin : 0, bx0 = x0 > margin ? x0 - margin : 0;
  const std::size_t by1 = std::min(h, y1 + margin), bx1 = std::min(w, x1 + margin);
  for (std::size_t y = by0; y < by1; ++y) {
    for (std::size_t x = bx0; x < bx1; ++x) m(y, x) = 1;
  }
  return m;
}

Mask instance_mask(const LabelGrid& seg, const std::vector<Instance>& instances, std::mt19937_64& rng,
                   bool* fell_back) {
  std::vector<Mask> candidates;
  for (const auto& inst : instances) {
    if (inst.pixels.empty()) continue;
    std::size_t y0 = seg.h, x0 = seg.w, y1 = 0, x1 = 0;
    for (auto p : inst.pixels) {
      const std::size_t y = p / seg.w, x = p % seg.w;
      y0 = std::min(y0, y);
      x0 = std::min(x0, x);
      y1 = std::max(y1, y + 1);
      x1 = std::max(x1, x + 1);
    }
    Mask m = box_mask(seg.h, seg.w, y0, x0, y1, x1, kInstanceDilation);
    if (coverage(m) < 1.0) candidates.push_back(std::move(m));
  }
  if (fell_back) *fell_back = candidates.empty();
  if (candidates.empty()) {
    spdlog::debug("instance mask: no usable foreground instance, using a free-form mask");
    return free_form_mask(seg.h, seg.w, rng);
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return candidates[pick(rng)];
}

Mask class_mask(const LabelGrid& seg, std::mt19937_64& rng, bool* fell_back) {
  std::map<std::int32_t, std::size_t> counts;
  for (auto v : seg.data) ++counts[v];
  std::vector<std::int32_t> classes;
  for (const auto& [label, n] : counts) {
    if (n < seg.size()) classes.push_back(label);
  }
  if (fell_back) *fell_back = classes.empty();
  if (classes.empty()) {
    spdlog::debug("class mask: label map has a single class, using a free-form mask");
    return free_form_mask(seg.h, seg.w, rng);
  }
  std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
  const std::int32_t label = classes[pick(rng)];
  Mask m(seg.h, seg.w, 0);
  for (std::size_t i = 0; i < seg.size(); ++i) m.data[i] = seg.data[i] == label;
  return m;
}

SampledMask make_mask(MaskType type, const MaskContext& ctx, std::mt19937_64& rng) {
  SampledMask out{type, {}, false};
  switch (type) {
    case MaskType::FreeForm: out.mask = free_form_mask(ctx.h, ctx.w, rng); break;
    case MaskType::Extension: out.mask = extension_mask(ctx.h, ctx.w); break;
    case MaskType::Outpainting: out.mask = outpainting_mask(ctx.h, ctx.w, rng); break;
    case MaskType::Instance: {
      if (!ctx.seg || !ctx.instances) throw std::invalid_argument("instance masks need a label map and instances");
      out.mask = instance_mask(*ctx.seg, *ctx.instances, rng, &out.fell_back);
      break;
    }
    case MaskType::Class: {
      if (!ctx.seg) throw std::invalid_argument("class masks need a label map");
      out.mask = class_mask(*ctx.seg, rng, &out.fell_back);
      break;
    }
  }
  return out;
}

SampledMask sample_mask(const MaskContext& ctx, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kMaskTypeCount) - 1);
  return make_mask(static_cast<MaskType>(pick(rng)), ctx, rng);
}

}  // namespace spm
