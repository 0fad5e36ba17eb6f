#include "spm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "spm/image_io.hpp"
#include "spm/rng.hpp"

namespace spm {

namespace fs = std::filesystem;

const std::vector<ClassInfo>& synthetic_classes() {
  static const std::vector<ClassInfo> classes = {
      {"sky", {90, 150, 230}},    {"wall", {205, 180, 130}}, {"fence", {150, 80, 30}},
      {"water", {30, 80, 160}},   {"floor", {128, 128, 128}}, {"field", {80, 180, 60}},
      {"block", {220, 50, 50}},   {"ball", {230, 220, 40}},
  };
  return classes;
}

namespace {

enum class Texture { Gradient, Solid, VStripes, HStripes, Checker, Diagonal };

struct ClassStyle {
  std::array<float, 3> color;
  float amplitude;
  float period;
  float phase_x, phase_y;
  float direction;
};

float square(float t) { return std::sin(t) >= 0 ? 1.0f : -1.0f; }

float pattern(Texture tex, const ClassStyle& s, float y, float x, float h) {
  const float k = 2 * std::numbers::pi_v<float> / s.period;
  switch (tex) {
    case Texture::Gradient: return s.direction * (2 * y / h - 1);
    case Texture::Solid: return 0;
    case Texture::VStripes: return square(k * x + s.phase_x);
    case Texture::HStripes: return square(k * y + s.phase_y);
    case Texture::Checker: return square(k * x + s.phase_x) * square(k * y + s.phase_y);
    case Texture::Diagonal: return square(k * (x + s.direction * y) + s.phase_x);
  }
  return 0;
}

}  // namespace

Scene synthetic_scene(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  if (h < 16 || w < 16) throw std::invalid_argument("synthetic_scene needs H, W >= 16");
  std::uniform_real_distribution<float> u01(0, 1);
  auto uni = [&](float lo, float hi) { return lo + (hi - lo) * u01(rng); };
  const float side = static_cast<float>(std::min(h, w));

  // Per-scene colors: a jittered canonical color for every class.
  std::array<ClassStyle, kSyntheticClasses> style{};
  const auto& classes = synthetic_classes();
  for (std::size_t k = 0; k < kSyntheticClasses; ++k) {
    ClassStyle& s = style[k];
    for (std::size_t c = 0; c < 3; ++c) {
      const float canonical = classes[k].color[c] / 127.5f - 1.0f;
      s.color[c] = std::clamp(0.4f * canonical + uni(-0.6f, 0.6f), -0.85f, 0.85f);
    }
    s.amplitude = uni(0.12f, 0.3f);
    s.period = uni(4.0f, 10.0f) * side / 64.0f;
    s.phase_x = uni(0, 2 * std::numbers::pi_v<float>);
    s.phase_y = uni(0, 2 * std::numbers::pi_v<float>);
    s.direction = u01(rng) < 0.5f ? -1.0f : 1.0f;
  }

  // Background bands with wavy boundaries.
  std::uniform_int_distribution<int> n_bands(4, 7);
  const int bands = n_bands(rng);
  std::vector<std::int32_t> order = {0, 1, 2, 3, 4, 5};
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::int32_t> band_class(order.begin(), order.begin() + std::min(bands, 6));
  if (bands == 7) {
    std::int32_t extra;
    do {
      extra = order[std::uniform_int_distribution<int>(0, 5)(rng)];
    } while (extra == band_class.back());
    band_class.push_back(extra);
  }
  // Cuts with a minimum band thickness of H/(2·bands).
  const float min_gap = static_cast<float>(h) / (2.0f * bands);
  std::vector<float> cuts;
  {
    std::vector<float> raw;
    for (int i = 0; i < bands - 1; ++i) raw.push_back(u01(rng));
    std::sort(raw.begin(), raw.end());
    const float free = static_cast<float>(h) - min_gap * bands;
    for (int i = 0; i < bands - 1; ++i) cuts.push_back(min_gap * (i + 1) + free * raw[i]);
  }
  struct Wave {
    float amp, period, phase;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < bands - 1; ++i) {
    waves.push_back({uni(0.0f, min_gap / 3), uni(0.5f, 1.5f) * static_cast<float>(w), uni(0, 6.2832f)});
  }

  Scene sc;
  sc.seg = LabelGrid(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      int b = 0;
      for (int i = 0; i < bands - 1; ++i) {
        const float edge = cuts[i] + waves[i].amp * std::sin(2 * std::numbers::pi_v<float> * x / waves[i].period + waves[i].phase);
        if (static_cast<float>(y) + 0.5f >= edge) b = i + 1;
      }
      sc.seg(y, x) = band_class[b];
    }
  }

  // Foreground shapes; later shapes occlude earlier ones.
  Grid<std::int32_t> owner(h, w, -1);
  std::uniform_int_distribution<int> n_shapes(0, 3);
  const int shapes = n_shapes(rng);
  std::vector<std::int32_t> shape_class;
  for (int s = 0; s < shapes; ++s) {
    const bool ball = u01(rng) < 0.5f;
    const std::int32_t label = ball ? kSyntheticForeground[1] : kSyntheticForeground[0];
    const float sh = uni(side / 8, side / 3), sw = uni(side / 8, side / 3);
    const float cy = uni(sh / 2, static_cast<float>(h) - sh / 2), cx = uni(sw / 2, static_cast<float>(w) - sw / 2);
    const bool triangle = !ball && u01(rng) < 0.4f;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const float dy = (static_cast<float>(y) + 0.5f - cy) / (sh / 2);
        const float dx = (static_cast<float>(x) + 0.5f - cx) / (sw / 2);
        bool inside;
        if (ball) {
          inside = dx * dx + dy * dy <= 1.0f;
        } else if (triangle) {
          inside = dy >= -1 && dy <= 1 && std::abs(dx) <= (dy + 1) / 2;
        } else {
          inside = std::abs(dx) <= 1 && std::abs(dy) <= 1;
        }
        if (inside) {
          owner(y, x) = s;
          sc.seg(y, x) = label;
        }
      }
    }
    shape_class.push_back(label);
  }
  for (int s = 0; s < shapes; ++s) {
    Instance inst{shape_class[s], {}};
    for (std::size_t i = 0; i < owner.size(); ++i) {
      if (owner.data[i] == s) inst.pixels.push_back(static_cast<std::uint32_t>(i));
    }
    if (!inst.pixels.empty()) sc.instances.push_back(std::move(inst));
  }

  // Render.
  static constexpr std::array<Texture, 6> kBandTexture = {Texture::Gradient, Texture::Solid,   Texture::VStripes,
                                                          Texture::HStripes, Texture::Checker, Texture::Diagonal};
  sc.image = Tensor<float>(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::int32_t k = sc.seg(y, x);
      const ClassStyle& s = style[k];
      float p;
      if (k < 6) {
        p = pattern(kBandTexture[k], s, static_cast<float>(y), static_cast<float>(x), static_cast<float>(h));
      } else {
        // Foreground shading: a vertical ramp.
        p = s.direction * 0.5f * (2.0f * static_cast<float>(y) / static_cast<float>(h) - 1.0f);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        sc.image.at(0, c, y, x) = std::clamp(s.color[c] + s.amplitude * p, -1.0f, 1.0f);
      }
    }
  }
  return sc;
}

std::vector<Scene> synthetic_dataset(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = derive_rng(seed, {static_cast<std::uint64_t>('S'), i});
    out.push_back(synthetic_scene(rng, h, w));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    out.back().name = name;
  }
  return out;
}

ResizePolicy parse_resize_policy(std::string_view s) {
  if (s == "none") return ResizePolicy::None;
  if (s == "longer384") return ResizePolicy::Longer384;
  if (s == "512x256") return ResizePolicy::Fixed512x256;
  throw std::invalid_argument("unknown resize policy '" + std::string(s) + "' (expected none, longer384, 512x256)");
}

std::pair<std::size_t, std::size_t> policy_size(ResizePolicy policy, std::size_t h, std::size_t w) {
  switch (policy) {
    case ResizePolicy::None: return {h, w};
    case ResizePolicy::Fixed512x256: return {256, 512};
    case ResizePolicy::Longer384: {
      const std::size_t longer = std::max(h, w), shorter = std::min(h, w);
      if (longer <= 384) return {h, w};
      const double s = 384.0 / static_cast<double>(longer);
      const std::size_t short_new =
          std::max<std::size_t>(std::min<std::size_t>(256, shorter), static_cast<std::size_t>(std::lround(shorter * s)));
      return h >= w ? std::pair{std::size_t{384}, short_new} : std::pair{short_new, std::size_t{384}};
    }
  }
  return {h, w};
}

std::vector<Instance> connected_instances(const LabelGrid& seg, const std::vector<std::int32_t>& classes) {
  std::vector<Instance> out;
  std::vector<std::uint8_t> seen(seg.size(), 0);
  std::vector<std::uint32_t> stack;
  for (std::size_t start = 0; start < seg.size(); ++start) {
    const std::int32_t label = seg.data[start];
    if (seen[start] || std::find(classes.begin(), classes.end(), label) == classes.end()) continue;
    Instance inst{label, {}};
    stack.push_back(static_cast<std::uint32_t>(start));
    seen[start] = 1;
    while (!stack.empty()) {
      const std::uint32_t p = stack.back();
      stack.pop_back();
      inst.pixels.push_back(p);
      const std::size_t y = p / seg.w, x = p % seg.w;
      auto visit = [&](std::size_t q) {
        if (!seen[q] && seg.data[q] == label) {
          seen[q] = 1;
          stack.push_back(static_cast<std::uint32_t>(q));
        }
      };
      if (y > 0) visit(p - seg.w);
      if (y + 1 < seg.h) visit(p + seg.w);
      if (x > 0) visit(p - 1);
      if (x + 1 < seg.w) visit(p + 1);
    }
    std::sort(inst.pixels.begin(), inst.pixels.end());
    out.push_back(std::move(inst));
  }
  return out;
}

DirectoryDataset::DirectoryDataset(DatasetSpec spec) : spec_(std::move(spec)) {
  const fs::path images = fs::path(spec_.root) / "images";
  const fs::path annotations = fs::path(spec_.root) / "annotations";
  if (!fs::is_directory(images) || !fs::is_directory(annotations)) {
    throw std::invalid_argument("dataset root " + spec_.root + " must contain images/ and annotations/");
  }
  std::vector<std::string> img_names, ann_names;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".png") img_names.push_back(e.path().filename().string());
  }
  for (const auto& e : fs::directory_iterator(annotations)) {
    if (e.path().extension() == ".png") ann_names.push_back(e.path().filename().string());
  }
  std::sort(img_names.begin(), img_names.end());
  std::sort(ann_names.begin(), ann_names.end());
  for (const auto& n : img_names) {
    if (!std::binary_search(ann_names.begin(), ann_names.end(), n)) {
      throw std::invalid_argument("image " + (images / n).string() + " has no matching annotation");
    }
  }
  for (const auto& n : ann_names) {
    if (!std::binary_search(img_names.begin(), img_names.end(), n)) {
      throw std::invalid_argument("annotation " + (annotations / n).string() + " has no matching image");
    }
  }
  if (img_names.empty()) throw std::invalid_argument("dataset " + spec_.root + " has no images");
  names_ = std::move(img_names);
}

Scene DirectoryDataset::load(std::size_t index, std::mt19937_64* rng) const {
  const std::string& name = names_.at(index);
  const fs::path img_path = fs::path(spec_.root) / "images" / name;
  const fs::path ann_path = fs::path(spec_.root) / "annotations" / name;
  const Image8 rgb = read_png(img_path.string(), 3);
  const Image8 ann = read_png(ann_path.string(), 1);
  if (rgb.h != ann.h || rgb.w != ann.w) {
    throw std::invalid_argument(ann_path.string() + " is " + std::to_string(ann.w) + "x" + std::to_string(ann.h) +
                                ", image is " + std::to_string(rgb.w) + "x" + std::to_string(rgb.h));
  }
  LabelGrid seg = to_labels(ann);
  for (auto v : seg.data) {
    if (v < 0 || static_cast<std::size_t>(v) >= spec_.num_classes) {
      throw std::invalid_argument(ann_path.string() + ": label " + std::to_string(v) + " is outside [0, " +
                                  std::to_string(spec_.num_classes) + ")");
    }
  }
  Tensor<float> image = to_tensor(rgb);
  const auto [rh, rw] = policy_size(spec_.policy, rgb.h, rgb.w);
  if (rh != rgb.h || rw != rgb.w) {
    image = resize(image, rh, rw, ResizeMode::Bilinear);
    seg = resize_nearest(seg, rh, rw);
  }
  if (rh < spec_.crop_h || rw < spec_.crop_w) {
    throw std::invalid_argument(img_path.string() + ": " + std::to_string(rw) + "x" + std::to_string(rh) +
                                " is smaller than the crop " + std::to_string(spec_.crop_w) + "x" +
                                std::to_string(spec_.crop_h));
  }
  std::size_t y0 = (rh - spec_.crop_h) / 2, x0 = (rw - spec_.crop_w) / 2;
  if (rng) {
    y0 = std::uniform_int_distribution<std::size_t>(0, rh - spec_.crop_h)(*rng);
    x0 = std::uniform_int_distribution<std::size_t>(0, rw - spec_.crop_w)(*rng);
  }
  Scene sc;
  sc.name = fs::path(name).stem().string();
  sc.image = Tensor<float>(Shape{1, 3, spec_.crop_h, spec_.crop_w});
  sc.seg = LabelGrid(spec_.crop_h, spec_.crop_w);
  for (std::size_t y = 0; y < spec_.crop_h; ++y) {
    for (std::size_t x = 0; x < spec_.crop_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) sc.image.at(0, c, y, x) = image.at(0, c, y0 + y, x0 + x);
      sc.seg(y, x) = seg(y0 + y, x0 + x);
    }
  }
  sc.instances = connected_instances(sc.seg, spec_.foreground_classes);
  return sc;
}

std::vector<Scene> load_directory(const DatasetSpec& spec, std::mt19937_64* rng) {
  DirectoryDataset ds(spec);
  std::vector<Scene> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(ds.load(i, rng));
  return out;
}

void write_directory(const std::vector<Scene>& scenes, const std::string& root) {
  const fs::path images = fs::path(root) / "images";
  const fs::path annotations = fs::path(root) / "annotations";
  fs::create_directories(images);
  fs::create_directories(annotations);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::string name = scenes[i].name;
    if (name.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "scene_%04zu", i);
      name = buf;
    }
    write_png((images / (name + ".png")).string(), to_image(scenes[i].image));
    write_png((annotations / (name + ".png")).string(), from_labels(scenes[i].seg));
  }
}

MaskSampler mask_sampler(std::optional<MaskType> type) {
  if (type) {
    return [t = *type](const MaskContext& ctx, std::mt19937_64& rng) { return make_mask(t, ctx, rng); };
  }
  return [](const MaskContext& ctx, std::mt19937_64& rng) { return sample_mask(ctx, rng); };
}

Batch<float> make_batch(const std::vector<const Scene*>& scenes, const std::vector<Mask>& masks,
                        std::size_t num_classes) {
  if (scenes.empty() || scenes.size() != masks.size()) throw std::invalid_argument("make_batch: scenes/masks mismatch");
  std::vector<Tensor<float>> targets, masked, mask_t, layouts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& sc = *scenes[i];
    const Mask& m = masks[i];
    if (m.h != sc.seg.h || m.w != sc.seg.w) throw ShapeError("make_batch: mask size differs from scene");
    targets.push_back(sc.image);
    Tensor<float> mk = sc.image;
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = mk.plane(0, c);
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (m.data[j]) p[j] = 0.0f;
      }
    }
    masked.push_back(std::move(mk));
    mask_t.push_back(mask_tensor<float>({m}));
    layouts.push_back(SemanticLayout<float>::from_labels(sc.seg, m, num_classes).onehot);
  }
  Batch<float> b;
  b.target = concat_batch(targets);
  b.masked = concat_batch(masked);
  b.mask = concat_batch(mask_t);
  b.layout.onehot = concat_batch(layouts);
  return b;
}

Batch<float> make_batch(const std::vector<const Scene*>& scenes, const MaskSampler& sampler,
                        std::size_t num_classes, std::mt19937_64& rng, std::vector<Mask>* masks_out) {
  std::vector<Mask> masks;
  for (const Scene* sc : scenes) {
    MaskContext ctx{sc->seg.h, sc->seg.w, &sc->seg, &sc->instances};
    masks.push_back(sampler(ctx, rng).mask);
  }
  Batch<float> b = make_batch(scenes, masks, num_classes);
  if (masks_out) *masks_out = std::move(masks);
  return b;
}

}  // namespace spm
