#pragma once

// Editing entry points over a trained pyramid: single edits, object
// addition/removal, recursive panorama, and the ablation harness.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spm/eval.hpp"
#include "spm/image_io.hpp"

namespace spm {

class EditError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EditRequest {
  Image8 image;      // RGB
  Mask mask;         // 1 = edit
  LabelGrid labels;  // class indices; read only inside the mask
};

// Freezes the pyramid for inference (no graph is built afterwards).
void freeze(Pyramid<float>& pyramid);

// Result = O_finest inside the mask, input bytes outside. Inputs whose size
// differs from the model's base resolution are resized for inference (with a
// warning) and the output is resized back; known pixels are untouched either
// way. An empty mask returns the input unchanged.
Image8 edit(const EditRequest& req, const Pyramid<float>& pyramid);

// Mask is the bbox grown by the instance dilation; the layout is the scene's
// labels with `label` inside the bbox. bbox is [y0, y1) × [x0, x1).
EditRequest add_object(const Image8& image, const LabelGrid& seg, std::int32_t label, std::size_t y0, std::size_t x0,
                       std::size_t y1, std::size_t x1);

inline constexpr std::size_t kRemovalRing = 8;

// Mask is the instance's dilated bounding box; inside it, the instance's
// pixels take the most common other label within 8 px of the instance.
EditRequest remove_object(const Image8& image, const LabelGrid& seg, const Instance& instance);

// Label map (H × W of the window) for panorama step `step` (0-based), given
// the committed canvas labels so far.
using LayoutProvider = std::function<LabelGrid(std::size_t step, const LabelGrid& canvas_labels, std::size_t h,
                                               std::size_t w)>;

LayoutProvider constant_layout(std::int32_t label);
// Repeats the rightmost committed column of labels.
LayoutProvider extend_rightmost_column();

struct Canvas {
  Image8 image;
  LabelGrid labels;
};

// Widens the canvas by base_w/2: the rightmost base_w window is edited with
// the extension mask. Canvas height must equal the model's base height and
// width must be at least base_w/2.
Canvas panorama_step(const Canvas& canvas, const LabelGrid& window_labels, const Pyramid<float>& pyramid);

// `steps` successive panorama_step calls; 0 returns the input.
Canvas panorama(const Canvas& start, int steps, const LayoutProvider& provider, const Pyramid<float>& pyramid);

struct TrainOptions {
  std::size_t steps = 0;                  // additional steps from the current state
  std::optional<MaskType> mask_type;      // uniform over all five when empty
  std::size_t log_every = 50;             // 0 disables
  std::ostream* log = nullptr;            // receives format_log_line rows
  std::size_t checkpoint_every = 0;       // 0 disables periodic saves
  std::string checkpoint_path;
};

// Runs `steps` training steps drawing batches (scenes and masks) from the
// state's own rng, so a resumed run continues the same sequence. Returns the
// last step's losses.
LossBreakdown train(TrainingState& state, const std::vector<Scene>& scenes, const Embedder<float>& embedder,
                    const TrainOptions& opts);

struct AblationConfig {
  std::vector<Variant> variants = {Variant::Spm, Variant::Spade};
  PyramidConfig model;
  OptimConfig optim;
  std::size_t steps = 2000;
  std::size_t train_scenes = 64;
  std::size_t eval_scenes = 32;
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 11;
  std::size_t log_every = 0;  // 0 disables progress logging
};

struct VariantReport {
  Variant variant;
  double boundary_discrepancy = 0;  // mean over held-out scenes
  double frechet = 0;
  double perceptual = 0;
  double l1 = 0;
  LossBreakdown last_loss;
  std::vector<MetricRow> rows;
};

// Trains every variant with the same seed, data and budget and evaluates on
// held-out scenes with free-form masks.
std::vector<VariantReport> run_ablation(const AblationConfig& cfg);

// Held-out evaluation shared by the ablation and the `eval` subcommand.
VariantReport evaluate(const Pyramid<float>& pyramid, const std::vector<Scene>& scenes, const std::vector<Mask>& masks,
                       const Embedder<float>& embedder, const std::string& dataset, const std::string& mask_type);

// Report text: one `# <label>` section per variant with metric rows.
std::string format_ablation(const std::vector<VariantReport>& reports);

}  // namespace spm
