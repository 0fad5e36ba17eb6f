#include "spm/eval.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace spm {

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw std::invalid_argument("feature_stats needs at least two samples");
  FeatureStats st;
  st.n_samples = static_cast<std::size_t>(n);
  st.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - st.mean.transpose();
  st.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  st.cov = 0.5 * (st.cov + st.cov.transpose());
  return st;
}

Eigen::MatrixXd pooled_features(const Tensor<float>& images, const Embedder<float>& embedder) {
  const std::size_t n = images.shape().n;
  Eigen::MatrixXd rows;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<float> f = embedder.pooled(images.batch_slice(i, 1));
    if (i == 0) rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f.numel()));
    for (std::size_t d = 0; d < f.numel(); ++d) rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = f[d];
  }
  return rows;
}

FeatureStats feature_stats(const Tensor<float>& images, const Embedder<float>& embedder) {
  return feature_stats(pooled_features(images, embedder));
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw std::invalid_argument("frechet_distance: feature dimensions " + std::to_string(a.mean.size()) + " and " +
                                std::to_string(b.mean.size()) + " differ");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Eigen::MatrixXd sa = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = sa * b.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double traces = a.cov.trace() + b.cov.trace();
  const double d = mean_term + traces - 2.0 * tr_sqrt;
  // Eigen roundoff on identical inputs is far below this; snap it to zero.
  return d <= kFrechetTolerance * std::max(1.0, traces) ? 0.0 : d;
}

double perceptual_distance(const Tensor<float>& a, const Tensor<float>& b, const Embedder<float>& embedder) {
  if (!(a.shape() == b.shape())) throw ShapeError("perceptual_distance: " + a.shape().str() + " vs " + b.shape().str());
  return scalar_value(perceptual_loss<float>(Var<float>(a), Var<float>(b), &embedder));
}

double miou(const LabelGrid& pred, const LabelGrid& gt, std::size_t num_classes) {
  if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("miou: label grids differ in size");
  std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0), present(num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt.data[i], p = pred.data[i];
    if (g < 0 || static_cast<std::size_t>(g) >= num_classes || p < 0 || static_cast<std::size_t>(p) >= num_classes) {
      throw std::invalid_argument("miou: label outside [0, " + std::to_string(num_classes) + ")");
    }
    ++present[g];
    if (g == p) {
      ++inter[g];
      ++uni[g];
    } else {
      ++uni[g];
      ++uni[p];
    }
  }
  double total = 0;
  std::size_t classes = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (!present[k]) continue;
    total += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
    ++classes;
  }
  if (classes == 0) throw std::invalid_argument("miou: empty ground truth");
  return total / static_cast<double>(classes);
}

namespace {

// Mean color and mean absolute deviation from the mean over a 3×3 window.
std::array<double, 6> local_feature(const Tensor<float>& img, std::size_t y, std::size_t x) {
  const Shape s = img.shape();
  std::array<double, 6> f{};
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0;
    int n = 0;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.h) || xx >= static_cast<long>(s.w)) continue;
        sum += img.at(0, c, yy, xx);
        ++n;
      }
    }
    const double mu = sum / n;
    double dev = 0;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.h) || xx >= static_cast<long>(s.w)) continue;
        dev += std::abs(img.at(0, c, yy, xx) - mu);
      }
    }
    f[c] = mu;
    f[3 + c] = dev / n;
  }
  return f;
}

}  // namespace

OracleSegmenter::OracleSegmenter(const Scene& reference) {
  std::map<std::int32_t, std::pair<std::array<double, 6>, std::size_t>> acc;
  for (std::size_t y = 0; y < reference.seg.h; ++y) {
    for (std::size_t x = 0; x < reference.seg.w; ++x) {
      auto& [sum, n] = acc[reference.seg(y, x)];
      const auto f = local_feature(reference.image, y, x);
      for (std::size_t i = 0; i < 6; ++i) sum[i] += f[i];
      ++n;
    }
  }
  for (const auto& [label, entry] : acc) {
    Prototype p{label, {}};
    for (std::size_t i = 0; i < 6; ++i) p.feature[i] = entry.first[i] / static_cast<double>(entry.second);
    prototypes_.push_back(p);
  }
}

LabelGrid OracleSegmenter::segment(const Tensor<float>& image) const {
  const Shape s = image.shape();
  LabelGrid out(s.h, s.w);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const auto f = local_feature(image, y, x);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : prototypes_) {
        double d = 0;
        for (std::size_t i = 0; i < 6; ++i) d += (f[i] - p.feature[i]) * (f[i] - p.feature[i]);
        if (d < best) {
          best = d;
          out(y, x) = p.label;
        }
      }
    }
  }
  return out;
}

namespace {

// Chebyshev distance ≤ r from any pixel where `from` is set.
Grid<std::uint8_t> near(const Grid<std::uint8_t>& from, std::size_t r) {
  Grid<std::uint8_t> cur = from;
  for (std::size_t step = 0; step < r; ++step) {
    Grid<std::uint8_t> next = cur;
    for (std::size_t y = 0; y < cur.h; ++y) {
      for (std::size_t x = 0; x < cur.w; ++x) {
        if (cur(y, x)) continue;
        bool hit = false;
        for (long dy = -1; dy <= 1 && !hit; ++dy) {
          for (long dx = -1; dx <= 1 && !hit; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(cur.h) || xx >= static_cast<long>(cur.w)) continue;
            hit = cur(yy, xx) != 0;
          }
        }
        if (hit) next(y, x) = 1;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

struct BandStats {
  std::array<double, 3> mean{}, stddev{};
  double gradient = 0;
  std::size_t count = 0;
};

BandStats band_stats(const Tensor<float>& img, const Mask& mask, const LabelGrid& seg, const Grid<std::uint8_t>& band) {
  BandStats st;
  const std::size_t h = band.h, w = band.w;
  std::array<double, 3> sum{}, sq{};
  double grad = 0;
  std::size_t grad_n = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!band(y, x)) continue;
      ++st.count;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = img.at(0, c, y, x);
        sum[c] += v;
        sq[c] += v * v;
      }
      // Differences to same-class, same-side neighbours.
      auto diff = [&](std::size_t yy, std::size_t xx) {
        if (seg(yy, xx) != seg(y, x) || mask(yy, xx) != mask(y, x)) return;
        double d = 0;
        for (std::size_t c = 0; c < 3; ++c) d += std::abs(img.at(0, c, yy, xx) - img.at(0, c, y, x));
        grad += d / 3.0;
        ++grad_n;
      };
      if (x + 1 < w) diff(y, x + 1);
      if (y + 1 < h) diff(y + 1, x);
    }
  }
  if (st.count == 0) return st;
  const double n = static_cast<double>(st.count);
  for (std::size_t c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / n;
    st.stddev[c] = std::sqrt(std::max(0.0, sq[c] / n - st.mean[c] * st.mean[c]));
  }
  st.gradient = grad_n ? grad / static_cast<double>(grad_n) : 0.0;
  return st;
}

}  // namespace

double boundary_style_discrepancy(const Tensor<float>& image, const Mask& mask, const LabelGrid& seg,
                                  std::size_t band_width) {
  const Shape s = image.shape();
  if (s.c != 3 || s.n != 1 || mask.h != s.h || mask.w != s.w || seg.h != s.h || seg.w != s.w) {
    throw ShapeError("boundary_style_discrepancy: image " + s.str() + ", mask and labels must align");
  }
  if (band_width == 0) throw std::invalid_argument("band width must be positive");
  Grid<std::uint8_t> edited(s.h, s.w), known(s.h, s.w);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    edited.data[i] = mask.data[i] != 0;
    known.data[i] = mask.data[i] == 0;
  }
  const auto near_known = near(known, band_width);
  const auto near_edited = near(edited, band_width);
  std::map<std::int32_t, bool> classes;
  for (auto v : seg.data) classes[v] = true;

  double total = 0;
  std::size_t regions = 0;
  for (const auto& [label, unused] : classes) {
    (void)unused;
    Grid<std::uint8_t> inner(s.h, s.w), outer(s.h, s.w);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (seg.data[i] != label) continue;
      inner.data[i] = edited.data[i] && near_known.data[i];
      outer.data[i] = known.data[i] && near_edited.data[i];
    }
    const BandStats a = band_stats(image, mask, seg, inner);
    const BandStats b = band_stats(image, mask, seg, outer);
    if (a.count == 0 || b.count == 0) continue;
    double d = std::abs(a.gradient - b.gradient);
    for (std::size_t c = 0; c < 3; ++c) d += std::abs(a.mean[c] - b.mean[c]) + std::abs(a.stddev[c] - b.stddev[c]);
    total += d / 7.0;
    ++regions;
  }
  if (regions == 0) throw std::invalid_argument("boundary_style_discrepancy: no class region straddles the mask boundary");
  return total / static_cast<double>(regions);
}

std::string format_metric_rows(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "metric,dataset,mask_type,value\n";
  for (const auto& r : rows) os << r.metric << ',' << r.dataset << ',' << r.mask_type << ',' << r.value << '\n';
  return os.str();
}

}  // namespace spm
