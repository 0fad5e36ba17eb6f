#include "spm/app.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <iostream>

#include <spdlog/spdlog.h>

#include "spm/rng.hpp"

namespace spm {

void freeze(Pyramid<float>& pyramid) {
  set_trainable(pyramid.generator_params(), false);
  set_trainable(pyramid.discriminator_params(), false);
}

namespace {

// Finest raw output for a single masked sample at base resolution.
Tensor<float> infer(const Pyramid<float>& pyr, const Tensor<float>& masked, const Tensor<float>& mask,
                    const SemanticLayout<float>& layout) {
  const PyramidOutputs<float> out = pyr.forward(masked, layout, mask);
  return out.raw[pyr.config().n_scales - 1]->value();
}

void check_request(const EditRequest& req, std::size_t num_classes) {
  const Image8& im = req.image;
  if (im.channels != 3) throw EditError("image must be RGB");
  if (req.mask.h != im.h || req.mask.w != im.w || req.labels.h != im.h || req.labels.w != im.w) {
    throw EditError("image " + std::to_string(im.w) + "x" + std::to_string(im.h) + ", mask " +
                    std::to_string(req.mask.w) + "x" + std::to_string(req.mask.h) + " and labels " +
                    std::to_string(req.labels.w) + "x" + std::to_string(req.labels.h) + " must have the same size");
  }
  for (std::size_t i = 0; i < req.mask.size(); ++i) {
    if (req.mask.data[i] > 1) throw EditError("mask must be binary");
    if (!req.mask.data[i]) continue;
    const auto v = req.labels.data[i];
    if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
      throw EditError("unknown class index " + std::to_string(v) + " at (" + std::to_string(i / im.w) + "," +
                      std::to_string(i % im.w) + "); the model has " + std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace

Image8 edit(const EditRequest& req, const Pyramid<float>& pyr) {
  const PyramidConfig& cfg = pyr.config();
  check_request(req, cfg.num_classes);
  if (std::none_of(req.mask.data.begin(), req.mask.data.end(), [](auto v) { return v != 0; })) return req.image;

  const std::size_t h = req.image.h, w = req.image.w;
  Tensor<float> image = to_tensor(req.image);
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = image.plane(0, c);
    for (std::size_t i = 0; i < req.mask.size(); ++i) {
      if (req.mask.data[i]) p[i] = 0.0f;
    }
  }
  Mask mask = req.mask;
  LabelGrid labels = req.labels;
  const bool rescale = h != cfg.base_h || w != cfg.base_w;
  if (rescale) {
    spdlog::warn("edit: input {}x{} resized to the model resolution {}x{}", w, h, cfg.base_w, cfg.base_h);
    image = resize(image, cfg.base_h, cfg.base_w, ResizeMode::Bilinear);
    mask = resize_nearest(mask, cfg.base_h, cfg.base_w);
    labels = resize_nearest(labels, cfg.base_h, cfg.base_w);
  }
  const Tensor<float> mask_t = mask_tensor<float>({mask});
  Tensor<float> out = infer(pyr, image, mask_t, SemanticLayout<float>::from_labels(labels, mask, cfg.num_classes));
  if (rescale) out = resize(out, h, w, ResizeMode::Bilinear);

  Image8 result = req.image;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!req.mask(y, x)) continue;
      for (std::size_t c = 0; c < 3; ++c) result.at(y, x, c) = unit_to_byte(out.at(0, c, y, x));
    }
  }
  return result;
}

EditRequest add_object(const Image8& image, const LabelGrid& seg, std::int32_t label, std::size_t y0, std::size_t x0,
                       std::size_t y1, std::size_t x1) {
  if (seg.h != image.h || seg.w != image.w) throw EditError("label map and image differ in size");
  if (y0 >= y1 || x0 >= x1 || y1 > image.h || x1 > image.w) {
    throw EditError("bbox [" + std::to_string(y0) + "," + std::to_string(y1) + ")x[" + std::to_string(x0) + "," +
                    std::to_string(x1) + ") is outside the " + std::to_string(image.h) + "x" +
                    std::to_string(image.w) + " image");
  }
  EditRequest req{image, box_mask(image.h, image.w, y0, x0, y1, x1, kInstanceDilation), seg};
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) req.labels(y, x) = label;
  }
  return req;
}

EditRequest remove_object(const Image8& image, const LabelGrid& seg, const Instance& inst) {
  if (seg.h != image.h || seg.w != image.w) throw EditError("label map and image differ in size");
  if (inst.pixels.empty()) throw EditError("instance has no pixels");
  Mask own(seg.h, seg.w, 0);
  std::size_t y0 = seg.h, x0 = seg.w, y1 = 0, x1 = 0;
  for (auto p : inst.pixels) {
    if (p >= seg.size()) throw EditError("instance pixel outside the image");
    own.data[p] = 1;
    const std::size_t y = p / seg.w, x = p % seg.w;
    y0 = std::min(y0, y);
    x0 = std::min(x0, x);
    y1 = std::max(y1, y + 1);
    x1 = std::max(x1, x + 1);
  }
  // Most common label in the ring around the instance, other than its own.
  std::map<std::int32_t, std::size_t> votes;
  const long r = static_cast<long>(kRemovalRing);
  for (long y = static_cast<long>(y0) - r; y < static_cast<long>(y1) + r; ++y) {
    for (long x = static_cast<long>(x0) - r; x < static_cast<long>(x1) + r; ++x) {
      if (y < 0 || x < 0 || y >= static_cast<long>(seg.h) || x >= static_cast<long>(seg.w)) continue;
      if (own(y, x) || seg(y, x) == inst.label) continue;
      bool close = false;
      for (long dy = -r; dy <= r && !close; ++dy) {
        for (long dx = -r; dx <= r && !close; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(seg.h) || xx >= static_cast<long>(seg.w)) continue;
          close = own(yy, xx) != 0;
        }
      }
      if (close) ++votes[seg(y, x)];
    }
  }
  if (votes.empty()) throw EditError("no background pixels around the instance");
  const std::int32_t fill =
      std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) { return a.second < b.second; })
          ->first;
  EditRequest req{image, box_mask(seg.h, seg.w, y0, x0, y1, x1, kInstanceDilation), seg};
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (own.data[i]) req.labels.data[i] = fill;
  }
  return req;
}

LayoutProvider constant_layout(std::int32_t label) {
  return [label](std::size_t, const LabelGrid&, std::size_t h, std::size_t w) { return LabelGrid(h, w, label); };
}

LayoutProvider extend_rightmost_column() {
  return [](std::size_t, const LabelGrid& canvas, std::size_t h, std::size_t w) {
    if (canvas.h != h || canvas.w == 0) throw EditError("panorama: canvas labels do not match the window height");
    LabelGrid out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out(y, x) = canvas(y, canvas.w - 1);
    }
    return out;
  };
}

Canvas panorama_step(const Canvas& canvas, const LabelGrid& window_labels, const Pyramid<float>& pyr) {
  const PyramidConfig& cfg = pyr.config();
  const std::size_t h = cfg.base_h, win = cfg.base_w, half = cfg.base_w / 2;
  const Image8& im = canvas.image;
  if (im.h != h) throw EditError("panorama: canvas height " + std::to_string(im.h) + " must equal the model height " + std::to_string(h));
  if (im.w < half) throw EditError("panorama: canvas must be at least " + std::to_string(half) + " pixels wide");
  if (canvas.labels.h != im.h || canvas.labels.w != im.w) throw EditError("panorama: canvas labels do not match the image");
  if (window_labels.h != h || window_labels.w != win) {
    throw EditError("panorama: window labels must be " + std::to_string(win) + "x" + std::to_string(h));
  }
  const std::size_t new_w = im.w + half;
  // Window = last `half` committed columns + `half` new columns.
  const std::size_t wx0 = new_w - win;
  EditRequest req;
  req.image = Image8{h, win, 3, std::vector<std::uint8_t>(h * win * 3, 0)};
  req.mask = extension_mask(h, win);
  req.labels = window_labels;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < half; ++x) {
      const std::size_t cx = wx0 + x;
      for (std::size_t c = 0; c < 3; ++c) req.image.at(y, x, c) = im.at(y, cx, c);
      req.labels(y, x) = canvas.labels(y, cx);
    }
  }
  const Image8 filled = edit(req, pyr);

  Canvas out;
  out.image = Image8{h, new_w, 3, std::vector<std::uint8_t>(h * new_w * 3)};
  out.labels = LabelGrid(h, new_w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < im.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.image.at(y, x, c) = im.at(y, x, c);
      out.labels(y, x) = canvas.labels(y, x);
    }
    for (std::size_t x = im.w; x < new_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.image.at(y, x, c) = filled.at(y, x - wx0, c);
      out.labels(y, x) = window_labels(y, x - wx0);
    }
  }
  return out;
}

Canvas panorama(const Canvas& start, int steps, const LayoutProvider& provider, const Pyramid<float>& pyr) {
  if (steps < 0) throw EditError("panorama: steps must be non-negative");
  Canvas c = start;
  for (int s = 0; s < steps; ++s) {
    const LabelGrid window = provider(static_cast<std::size_t>(s), c.labels, pyr.config().base_h, pyr.config().base_w);
    c = panorama_step(c, window, pyr);
  }
  return c;
}

VariantReport evaluate(const Pyramid<float>& pyr, const std::vector<Scene>& scenes, const std::vector<Mask>& masks,
                       const Embedder<float>& embedder, const std::string& dataset, const std::string& mask_type) {
  if (scenes.size() < 2 || scenes.size() != masks.size()) throw std::invalid_argument("evaluate needs >= 2 scenes with masks");
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  const Batch<float> batch = make_batch(ptrs, masks, pyr.config().num_classes);
  const PyramidOutputs<float> out = pyr.forward(batch.masked, batch.layout, batch.mask);
  const Tensor<float> result = select(batch.mask, *out.raw[pyr.config().n_scales - 1], Var<float>(batch.target)).value();

  VariantReport rep{};
  double bsd = 0, l1 = 0;
  std::size_t bsd_n = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Tensor<float> img = result.batch_slice(i, 1);
    try {
      bsd += boundary_style_discrepancy(img, masks[i], scenes[i].seg);
      ++bsd_n;
    } catch (const std::invalid_argument&) {
      // No class region crosses this mask boundary.
    }
    double acc = 0;
    for (std::size_t j = 0; j < img.numel(); ++j) acc += std::abs(img[j] - scenes[i].image[j]);
    l1 += acc / static_cast<double>(img.numel());
  }
  rep.boundary_discrepancy = bsd_n ? bsd / static_cast<double>(bsd_n) : 0.0;
  rep.l1 = l1 / static_cast<double>(scenes.size());
  rep.frechet = frechet_distance(feature_stats(batch.target, embedder), feature_stats(result, embedder));
  rep.perceptual = perceptual_distance(result, batch.target, embedder);
  rep.rows = {{"boundary_style", dataset, mask_type, rep.boundary_discrepancy},
              {"fid", dataset, mask_type, rep.frechet},
              {"lpips", dataset, mask_type, rep.perceptual},
              {"l1", dataset, mask_type, rep.l1}};
  return rep;
}

LossBreakdown train(TrainingState& st, const std::vector<Scene>& scenes, const Embedder<float>& embedder,
                    const TrainOptions& opts) {
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  for (const auto& s : scenes) {
    if (s.image.shape().h != st.model.base_h || s.image.shape().w != st.model.base_w) {
      throw std::invalid_argument("train: scene " + s.name + " is " + std::to_string(s.image.shape().w) + "x" +
                                  std::to_string(s.image.shape().h) + " but the model expects " +
                                  std::to_string(st.model.base_w) + "x" + std::to_string(st.model.base_h));
    }
  }
  const MaskSampler base = mask_sampler(opts.mask_type);
  std::size_t drawn = 0, fell_back = 0;
  const MaskSampler sampler = [&](const MaskContext& ctx, std::mt19937_64& rng) {
    SampledMask m = base(ctx, rng);
    ++drawn;
    fell_back += m.fell_back;
    return m;
  };
  std::uniform_int_distribution<std::size_t> pick(0, scenes.size() - 1);
  LossBreakdown last;
  for (std::size_t s = 0; s < opts.steps; ++s) {
    std::vector<const Scene*> b;
    for (std::size_t i = 0; i < st.optim.batch_size; ++i) b.push_back(&scenes[pick(st.rng)]);
    last = train_step(st, make_batch(b, sampler, st.model.num_classes, st.rng), embedder);
    if (opts.log && opts.log_every && (st.step % opts.log_every == 0 || s + 1 == opts.steps)) {
      *opts.log << format_log_line(st.step, last) << '\n' << std::flush;
    }
    if (opts.checkpoint_every && !opts.checkpoint_path.empty() && st.step % opts.checkpoint_every == 0) {
      save_checkpoint(st, opts.checkpoint_path);
    }
  }
  if (fell_back) spdlog::info("train: {} of {} sampled masks fell back to free-form", fell_back, drawn);
  return last;
}

std::vector<VariantReport> run_ablation(const AblationConfig& cfg) {
  const std::size_t h = cfg.model.base_h, w = cfg.model.base_w;
  const auto train_set = synthetic_dataset(cfg.data_seed, cfg.train_scenes, h, w);
  const auto held = synthetic_dataset(splitmix64(cfg.data_seed ^ 0x48454C44ull), cfg.eval_scenes, h, w);
  std::vector<Mask> eval_masks;
  {
    auto mrng = derive_rng(cfg.data_seed, {static_cast<std::uint64_t>('V')});
    for (std::size_t i = 0; i < held.size(); ++i) eval_masks.push_back(free_form_mask(h, w, mrng));
  }
  const RandomConvEmbedder<float> embedder;

  std::vector<VariantReport> reports;
  for (Variant v : cfg.variants) {
    // Same seed ⇒ same batch sequence for every variant.
    TrainingState st = TrainingState::create(cfg.model.with_variant(v), cfg.optim, cfg.seed, std::string(variant_name(v)));
    TrainOptions opts;
    opts.steps = cfg.steps;
    opts.log_every = cfg.log_every;
    opts.log = cfg.log_every ? &std::clog : nullptr;
    if (opts.log) *opts.log << "# " << variant_name(v) << '\n';
    const LossBreakdown last = train(st, train_set, embedder, opts);
    freeze(*st.pyramid);
    VariantReport rep = evaluate(*st.pyramid, held, eval_masks, embedder, "synthetic", "freeform");
    rep.variant = v;
    rep.last_loss = last;
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::string format_ablation(const std::vector<VariantReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    out += "# " + std::string(variant_label(r.variant)) + "\n";
    out += format_metric_rows(r.rows);
  }
  return out;
}

}  // namespace spm
