// spm: command-line front end (train, edit, panorama, eval, ablate,
// gen-data, serve).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "spm/config.hpp"
#include "spm/rng.hpp"
#include "spm/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using namespace spm;

namespace {

struct Common {
  std::string config;
  std::string checkpoint;
  std::uint64_t seed = 1;
  std::string out;
  std::string mask_type;
  std::string variant = "spm";
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(what + " '" + path + "' does not exist");
}

void require_out(const std::string& path) {
  if (path.empty()) throw UsageError("--out is required");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw UsageError("--out directory '" + parent.string() + "' does not exist");
  }
}

std::optional<MaskType> mask_type_of(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_mask_type(s);
}

KeyValues config_of(const Common& c) {
  if (c.config.empty()) return {};
  require_file(c.config, "--config");
  return KeyValues::load(c.config);
}

// Scenes from train.data / eval.data (directory) or synthetic ones.
std::vector<Scene> scenes_of(const KeyValues& kv, const std::string& prefix, const PyramidConfig& model,
                             std::size_t default_count, std::uint64_t data_seed) {
  const std::string root = kv.get_or(prefix + "data", "synthetic");
  if (root == "synthetic") {
    const std::size_t n = kv.has(prefix + "scenes") ? kv.get_size(prefix + "scenes") : default_count;
    return synthetic_dataset(data_seed, n, model.base_h, model.base_w);
  }
  DatasetSpec spec;
  spec.root = root;
  spec.num_classes = model.num_classes;
  spec.crop_h = model.base_h;
  spec.crop_w = model.base_w;
  spec.policy = parse_resize_policy(kv.get_or(prefix + "resize", "none"));
  // Comma-separated class ids whose connected components are instances.
  std::stringstream fg(kv.get_or(prefix + "foreground", ""));
  for (std::string id; std::getline(fg, id, ',');) {
    if (!id.empty()) spec.foreground_classes.push_back(std::stoi(id));
  }
  return load_directory(spec);
}

Image8 read_input(const std::string& path, std::size_t channels, const std::string& what) {
  require_file(path, what);
  return read_png(path, channels);
}

int cmd_train(const Common& c, std::size_t steps, const std::string& log_path) {
  const KeyValues kv = config_of(c);
  kv.require_known({"model.n_scales", "model.base_h", "model.base_w", "model.base_channels", "model.max_channels",
                    "model.disc_base_channels", "model.disc_max_channels", "model.hidden_channels",
                    "model.num_classes", "model.image_channels", "model.block_type", "model.progressive",
                    "model.context_from_normalized", "model.extra_spade", "optim.lr_g", "optim.lr_d",
                    "optim.beta1", "optim.beta2", "optim.eps", "optim.batch_size", "train.steps", "train.data",
                    "train.scenes", "train.resize", "train.foreground", "train.data_seed", "train.log_every", "train.checkpoint_every"});
  require_out(c.out);
  const Variant variant = parse_variant(c.variant);
  const auto mask_type = mask_type_of(c.mask_type);
  if (!c.checkpoint.empty()) require_file(c.checkpoint, "--checkpoint");
  const PyramidConfig model = read_pyramid_config(kv).with_variant(variant);
  model.validate();
  const OptimConfig optim = read_optim_config(kv);
  optim.validate();
  if (!steps) steps = kv.has("train.steps") ? kv.get_size("train.steps") : 2000;

  const auto scenes = scenes_of(kv, "train.", model, 64, kv.has("train.data_seed") ? kv.get_size("train.data_seed") : c.seed);
  TrainingState st = c.checkpoint.empty() ? TrainingState::create(model, optim, c.seed, c.variant)
                                          : load_checkpoint(c.checkpoint);
  if (!c.checkpoint.empty()) spdlog::info("resuming {} at step {}", c.checkpoint, st.step);

  const std::string lp = log_path.empty() ? c.out + ".log" : log_path;
  std::ofstream log(lp, std::ios::app);
  if (!log) throw UsageError("cannot open training log '" + lp + "'");
  TrainOptions opts;
  opts.steps = steps;
  opts.mask_type = mask_type;
  opts.log = &log;
  opts.log_every = kv.has("train.log_every") ? kv.get_size("train.log_every") : 50;
  opts.checkpoint_every = kv.has("train.checkpoint_every") ? kv.get_size("train.checkpoint_every") : 500;
  opts.checkpoint_path = c.out;
  const RandomConvEmbedder<float> embedder;
  const LossBreakdown last = train(st, scenes, embedder, opts);
  save_checkpoint(st, c.out);
  std::cout << format_log_line(st.step, last) << "\n";
  return 0;
}

std::array<std::size_t, 4> parse_box(const std::string& s) {
  std::array<std::size_t, 4> b{};
  if (std::sscanf(s.c_str(), "%zu,%zu,%zu,%zu", &b[0], &b[1], &b[2], &b[3]) != 4) {
    throw UsageError("--bbox expects y0,x0,y1,x1");
  }
  return b;
}

int cmd_edit(const Common& c, const std::string& image_path, const std::string& mask_path,
             const std::string& labels_path, const std::string& seg_path, int add_class, const std::string& bbox,
             const std::string& remove_at) {
  require_out(c.out);
  require_file(c.checkpoint, "--checkpoint");
  const Image8 image = read_input(image_path, 3, "--image");
  EditRequest req;
  const int modes = !mask_path.empty() + (add_class >= 0) + !remove_at.empty();
  if (modes != 1) throw UsageError("give exactly one of --mask, --add-class or --remove-at");
  if (!mask_path.empty()) {
    req = {image, to_mask(read_input(mask_path, 1, "--mask")), to_labels(read_input(labels_path, 1, "--labels"))};
  } else {
    const LabelGrid seg = to_labels(read_input(seg_path, 1, "--seg"));
    if (add_class >= 0) {
      const auto b = parse_box(bbox);
      req = add_object(image, seg, add_class, b[0], b[1], b[2], b[3]);
    } else {
      std::size_t y = 0, x = 0;
      if (std::sscanf(remove_at.c_str(), "%zu,%zu", &y, &x) != 2) throw UsageError("--remove-at expects y,x");
      if (y >= seg.h || x >= seg.w) throw UsageError("--remove-at is outside the image");
      const auto inst = connected_instances(seg, {seg(y, x)});
      const std::size_t p = y * seg.w + x;
      const auto it = std::find_if(inst.begin(), inst.end(), [p](const Instance& i) {
        return std::find(i.pixels.begin(), i.pixels.end(), p) != i.pixels.end();
      });
      req = remove_object(image, seg, *it);
    }
  }
  if (req.mask.h != image.h || req.mask.w != image.w || req.labels.h != image.h || req.labels.w != image.w) {
    throw UsageError("image, mask and labels must have the same size");
  }
  const LoadedModel model = load_model(c.checkpoint);
  write_png(c.out, edit(req, *model.pyramid));
  return 0;
}

int cmd_panorama(const Common& c, const std::string& image_path, const std::string& labels_path, int steps,
                 int layout_class) {
  require_out(c.out);
  require_file(c.checkpoint, "--checkpoint");
  if (steps < 0) throw UsageError("--steps must be >= 0");
  Canvas canvas{read_input(image_path, 3, "--image"), to_labels(read_input(labels_path, 1, "--labels"))};
  if (canvas.labels.h != canvas.image.h || canvas.labels.w != canvas.image.w) {
    throw UsageError("--image and --labels must have the same size");
  }
  const LoadedModel model = load_model(c.checkpoint);
  const LayoutProvider provider = layout_class >= 0 ? constant_layout(layout_class) : extend_rightmost_column();
  write_png(c.out, panorama(canvas, steps, provider, *model.pyramid).image);
  return 0;
}

int cmd_eval(const Common& c) {
  const KeyValues kv = config_of(c);
  kv.require_known({"eval.data", "eval.scenes", "eval.resize", "eval.foreground", "eval.dataset"});
  require_out(c.out);
  require_file(c.checkpoint, "--checkpoint");
  const MaskType type = c.mask_type.empty() ? MaskType::FreeForm : parse_mask_type(c.mask_type);
  const LoadedModel model = load_model(c.checkpoint);
  const auto& cfg = model.pyramid->config();
  const auto scenes = scenes_of(kv, "eval.", cfg, 32, splitmix64(c.seed ^ 0x45564131ull));
  auto rng = derive_rng(c.seed, {static_cast<std::uint64_t>('V')});
  std::vector<Mask> masks;
  for (const auto& s : scenes) masks.push_back(make_mask(type, {cfg.base_h, cfg.base_w, &s.seg, &s.instances}, rng).mask);
  const RandomConvEmbedder<float> embedder;
  const VariantReport r = evaluate(*model.pyramid, scenes, masks, embedder, kv.get_or("eval.dataset", "synthetic"),
                                   std::string(mask_type_name(type)));
  std::ofstream(c.out) << format_metric_rows(r.rows);
  std::cout << format_metric_rows(r.rows);
  return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& variants, std::size_t steps) {
  const KeyValues kv = config_of(c);
  require_out(c.out);
  AblationConfig cfg;
  if (!variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : variants) cfg.variants.push_back(parse_variant(v));
  }
  cfg.model = read_pyramid_config(kv);
  cfg.model.validate();
  cfg.optim = read_optim_config(kv);
  cfg.optim.validate();
  cfg.seed = c.seed;
  if (kv.has("ablate.data_seed")) cfg.data_seed = kv.get_size("ablate.data_seed");
  if (kv.has("ablate.train_scenes")) cfg.train_scenes = kv.get_size("ablate.train_scenes");
  if (kv.has("ablate.eval_scenes")) cfg.eval_scenes = kv.get_size("ablate.eval_scenes");
  cfg.steps = steps ? steps : (kv.has("ablate.steps") ? kv.get_size("ablate.steps") : cfg.steps);
  cfg.log_every = kv.has("ablate.log_every") ? kv.get_size("ablate.log_every") : 100;
  const std::string report = format_ablation(run_ablation(cfg));
  std::ofstream(c.out) << report;
  std::cout << report;
  return 0;
}

int cmd_gen_data(const Common& c, std::size_t count, std::size_t h, std::size_t w) {
  if (c.out.empty()) throw UsageError("--out is required");
  if (count == 0) throw UsageError("--count must be >= 1");
  if (h < 16 || w < 16) throw UsageError("--height and --width must be >= 16");
  write_directory(synthetic_dataset(c.seed, count, h, w), c.out);
  std::cout << "wrote " << count << " scenes to " << c.out << "\n";
  return 0;
}

int cmd_serve(const Common& c, const std::string& checkpoint_dir, const std::string& host, int port) {
  require_file(c.checkpoint, "--checkpoint");
  if (port <= 0 || port > 65535) throw UsageError("--port must be in 1..65535");
  EditService service(load_model(c.checkpoint), checkpoint_dir);
  httplib::Server server;
  service.bind(server);
  spdlog::info("listening on {}:{}", host, port);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic image editing with style-preserved modulation"};
  app.require_subcommand(1);
  Common c;
  auto common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "key = value config file");
    sub->add_option("--checkpoint", c.checkpoint, "checkpoint path");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--out", c.out, "output path");
    sub->add_option("--mask-type", c.mask_type, "freeform|extension|outpainting|instance|class");
    sub->add_option("--variant", c.variant, "spm|spade|spade-l|wnorm|noprog|spm-s");
  };

  std::size_t steps = 0;
  std::string log_path;
  auto* train_cmd = app.add_subcommand("train", "train a pyramid (resumes from --checkpoint)");
  common(train_cmd);
  train_cmd->add_option("--steps", steps, "training steps (default train.steps or 2000)");
  train_cmd->add_option("--log", log_path, "append-only training log (default <out>.log)");

  std::string image, mask, labels, seg, bbox, remove_at;
  int add_class = -1;
  auto* edit_cmd = app.add_subcommand("edit", "edit one image");
  common(edit_cmd);
  edit_cmd->add_option("--image", image, "RGB PNG");
  edit_cmd->add_option("--mask", mask, "mask PNG (>= 128 is edited)");
  edit_cmd->add_option("--labels", labels, "class-index PNG");
  edit_cmd->add_option("--seg", seg, "full label map for --add-class / --remove-at");
  edit_cmd->add_option("--add-class", add_class, "add an object of this class in --bbox");
  edit_cmd->add_option("--bbox", bbox, "y0,x0,y1,x1 (exclusive end)");
  edit_cmd->add_option("--remove-at", remove_at, "y,x inside the region to remove (its 4-connected same-class component)");

  int pano_steps = 1, layout_class = -1;
  auto* pano_cmd = app.add_subcommand("panorama", "extend an image to the right");
  common(pano_cmd);
  pano_cmd->add_option("--image", image, "RGB PNG, model height");
  pano_cmd->add_option("--labels", labels, "class-index PNG for the image");
  pano_cmd->add_option("--steps", pano_steps, "number of half-window extensions");
  pano_cmd->add_option("--class", layout_class, "constant class for new columns (default: repeat the last column)");

  auto* eval_cmd = app.add_subcommand("eval", "held-out metrics for a checkpoint");
  common(eval_cmd);

  std::vector<std::string> variants;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare variants");
  common(ablate_cmd);
  ablate_cmd->add_option("--variants", variants, "variants to compare (default spm spade)");
  ablate_cmd->add_option("--steps", steps, "steps per variant");

  std::size_t count = 64, height = 64, width = 64;
  auto* gen_cmd = app.add_subcommand("gen-data", "write synthetic scenes in the directory layout");
  common(gen_cmd);
  gen_cmd->add_option("--count", count, "number of scenes");
  gen_cmd->add_option("--height", height, "scene height");
  gen_cmd->add_option("--width", width, "scene width");

  std::string checkpoint_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP editing service");
  common(serve_cmd);
  serve_cmd->add_option("--checkpoint-dir", checkpoint_dir, "directory of selectable *.ckpt files");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(c, steps, log_path);
    if (*edit_cmd) return cmd_edit(c, image, mask, labels, seg, add_class, bbox, remove_at);
    if (*pano_cmd) return cmd_panorama(c, image, labels, pano_steps, layout_class);
    if (*eval_cmd) return cmd_eval(c);
    if (*ablate_cmd) return cmd_ablate(c, variants, steps);
    if (*gen_cmd) return cmd_gen_data(c, count, height, width);
    if (*serve_cmd) return cmd_serve(c, checkpoint_dir, host, port);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
