#pragma once

// Fréchet feature distance, pairwise perceptual distance, mIoU with a
// pluggable segmenter, and a boundary style-consistency probe.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spm/data.hpp"
#include "spm/training.hpp"

namespace spm {

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n − 1)
  std::size_t n_samples = 0;
};

// Rows are samples. Needs at least two rows.
FeatureStats feature_stats(const Eigen::MatrixXd& features);
// Pooled embedder features of each image in the (N,3,H,W) batch.
FeatureStats feature_stats(const Tensor<float>& images, const Embedder<float>& embedder);
Eigen::MatrixXd pooled_features(const Tensor<float>& images, const Embedder<float>& embedder);

inline constexpr double kFrechetTolerance = 1e-8;

// ‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^½). The trace of the square root is
// taken from the eigenvalues of Σa^½ Σb Σa^½, clipped at zero. Results
// within kFrechetTolerance (relative to the traces) of zero return 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Staged embedder distance averaged over the batch; same definition as the
// perceptual loss.
double perceptual_distance(const Tensor<float>& a, const Tensor<float>& b, const Embedder<float>& embedder);

// Mean over classes present in gt of |pred ∩ gt| / |pred ∪ gt|.
double miou(const LabelGrid& pred, const LabelGrid& gt, std::size_t num_classes);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  // image: (1,3,H,W)
  virtual LabelGrid segment(const Tensor<float>& image) const = 0;
};

// For synthetic scenes: labels each pixel with the class whose mean color
// and local contrast in the reference scene is nearest, using a 3×3
// neighbourhood. Only classes present in the reference are candidates.
class OracleSegmenter final : public Segmenter {
 public:
  explicit OracleSegmenter(const Scene& reference);
  LabelGrid segment(const Tensor<float>& image) const override;

 private:
  struct Prototype {
    std::int32_t label;
    std::array<double, 6> feature;
  };
  std::vector<Prototype> prototypes_;
};

inline constexpr std::size_t kDefaultBandWidth = 3;

// For each class straddling the mask boundary, compares the band of edited
// pixels within `band_width` of the known region against the band of known
// pixels within `band_width` of the edit: per-channel mean and standard
// deviation and mean gradient energy. Returns the average over regions of
// the mean absolute statistic difference. Throws when no region has both
// bands.
double boundary_style_discrepancy(const Tensor<float>& image, const Mask& mask, const LabelGrid& seg,
                                  std::size_t band_width = kDefaultBandWidth);

struct MetricRow {
  std::string metric, dataset, mask_type;
  double value = 0;
};

// `metric,dataset,mask_type,value` lines with a header.
std::string format_metric_rows(const std::vector<MetricRow>& rows);

}  // namespace spm
