#include "spm/modulation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spm {

template <typename T>
SemanticLayout<T> SemanticLayout<T>::from_labels(const LabelGrid& seg, const Mask& mask,
                                                 std::size_t num_classes) {
  if (seg.h != mask.h || seg.w != mask.w) {
    throw ShapeError("layout: label grid " + std::to_string(seg.h) + "x" + std::to_string(seg.w) +
                     " vs mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w));
  }
  SemanticLayout out;
  out.onehot = Tensor<T>(Shape{1, num_classes + 1, seg.h, seg.w});
  for (std::size_t y = 0; y < seg.h; ++y) {
    for (std::size_t x = 0; x < seg.w; ++x) {
      std::size_t ch = num_classes;
      if (mask(y, x) != 0) {
        const auto label = seg(y, x);
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
          throw std::invalid_argument("layout: class index " + std::to_string(label) + " at (" +
                                      std::to_string(y) + "," + std::to_string(x) +
                                      ") is outside [0, " + std::to_string(num_classes) + ")");
        }
        ch = static_cast<std::size_t>(label);
      }
      out.onehot.at(0, ch, y, x) = T(1);
    }
  }
  return out;
}

template <typename T>
SemanticLayout<T> SemanticLayout<T>::resized(std::size_t h, std::size_t w) const {
  return SemanticLayout{resize(onehot, h, w, ResizeMode::Nearest)};
}

template <typename T>
void SemanticLayout<T>::validate(const Mask* mask, std::size_t sample) const {
  const Shape s = onehot.shape();
  if (mask && (mask->h != s.h || mask->w != s.w)) throw ShapeError("layout/mask size mismatch");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        std::size_t hot = 0;
        for (std::size_t c = 0; c < s.c; ++c) {
          const T v = onehot.at(n, c, y, x);
          if (v != T(0) && v != T(1)) throw std::invalid_argument("layout is not binary");
          hot += v == T(1);
        }
        if (hot != 1) throw std::invalid_argument("layout pixel has " + std::to_string(hot) + " hot channels");
        if (mask && n == sample) {
          const bool unknown = onehot.at(n, s.c - 1, y, x) == T(1);
          if (unknown != ((*mask)(y, x) == 0)) {
            throw std::invalid_argument("layout unknown channel disagrees with mask at (" + std::to_string(y) +
                                        "," + std::to_string(x) + ")");
          }
        }
      }
    }
  }
}

template <typename T>
NormStats<T> channel_stats(const Tensor<T>& f) {
  const Shape s = f.shape();
  NormStats<T> st{Tensor<T>(Shape{s.n, s.c, 1, 1}), Tensor<T>(Shape{s.n, s.c, 1, 1})};
  const std::size_t m = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = f.plane(n, c);
      double mu = 0;
      for (std::size_t i = 0; i < m; ++i) mu += p[i];
      mu /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= static_cast<double>(m);
      st.mu.at(n, c, 0, 0) = static_cast<T>(mu);
      st.sigma.at(n, c, 0, 0) = static_cast<T>(std::sqrt(var));
    }
  }
  return st;
}

template <typename T>
Var<T> channel_normalize(const Var<T>& f) {
  const Shape s = f.shape();
  const std::size_t m = s.plane();
  NormStats<T> st = channel_stats(f.value());
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double mu = st.mu.at(n, c, 0, 0);
      const double denom = static_cast<double>(st.sigma.at(n, c, 0, 0)) + kEps;
      const T* p = f.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < m; ++i) o[i] = static_cast<T>((p[i] - mu) / denom);
    }
  }
  return make_op<T>(std::move(out), {f}, [st = std::move(st), m](Node<T>& self) {
    auto& in = *self.inputs[0];
    const Shape s = in.value.shape();
    Tensor<T> g(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double mu = st.mu.at(n, c, 0, 0);
        const double sigma = st.sigma.at(n, c, 0, 0);
        const double denom = sigma + kEps;
        const T* x = in.value.plane(n, c);
        const T* gy = self.grad.plane(n, c);
        double gsum = 0, gd = 0;
        for (std::size_t i = 0; i < m; ++i) {
          gsum += gy[i];
          gd += gy[i] * (x[i] - mu);
        }
        const double gmean = gsum / static_cast<double>(m);
        // ∂σ/∂x_j = d_j / (m σ); vanishes with the deviations when σ = 0.
        const double k = sigma > 0 ? gd / (denom * denom * static_cast<double>(m) * sigma) : 0.0;
        T* gx = g.plane(n, c);
        for (std::size_t i = 0; i < m; ++i) {
          gx[i] = static_cast<T>((gy[i] - gmean) / denom - k * (x[i] - mu));
        }
      }
    }
    in.accumulate(g);
  });
}

template <typename T>
HeadStack<T> HeadStack<T>::make(std::size_t in_channels, const ModulationConfig& cfg, std::size_t n_heads,
                                std::mt19937_64& rng) {
  HeadStack hs;
  const std::size_t k = cfg.kernel_size;
  hs.shared = Conv2d<T>::make(in_channels, cfg.hidden_channels, k, 1, k / 2, Init::HeUniform, rng);
  for (std::size_t i = 0; i < n_heads; ++i) {
    hs.heads.push_back(Conv2d<T>::make(cfg.hidden_channels, cfg.feature_channels, k, 1, k / 2, Init::Zero, rng));
  }
  return hs;
}

template <typename T>
std::vector<Var<T>> HeadStack<T>::operator()(const Var<T>& input) const {
  const Var<T> hidden = relu(shared(input));
  std::vector<Var<T>> out;
  out.reserve(heads.size());
  for (const auto& h : heads) out.push_back(h(hidden));
  return out;
}

template <typename T>
void HeadStack<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  shared.collect(prefix + ".shared", out);
  for (std::size_t i = 0; i < heads.size(); ++i) heads[i].collect(prefix + ".head" + std::to_string(i), out);
}

namespace {

template <typename T>
void check_semantic_channels(const HeadStack<T>& heads, const SemanticLayout<T>& s) {
  if (heads.shared.in_channels() != s.onehot.shape().c) {
    throw ShapeError("semantic heads expect " + std::to_string(heads.shared.in_channels()) +
                     " layout channels, got " + std::to_string(s.onehot.shape().c));
  }
}

}  // namespace

template <typename T>
ModulationPair<T> semantic_pair(const HeadStack<T>& heads, const SemanticLayout<T>& s) {
  check_semantic_channels(heads, s);
  if (heads.heads.size() != 2) throw std::logic_error("semantic_pair needs 2 heads");
  auto maps = heads(Var<T>(s.onehot));
  return {maps[0], maps[1]};
}

template <typename T>
SemanticParamQuad<T> semantic_quad(const HeadStack<T>& heads, const SemanticLayout<T>& s) {
  check_semantic_channels(heads, s);
  if (heads.heads.size() != 4) throw std::logic_error("semantic_quad needs 4 heads");
  auto maps = heads(Var<T>(s.onehot));
  return {maps[0], maps[1], maps[2], maps[3]};
}

template <typename T>
ModulationPair<T> context_pair(const HeadStack<T>& heads, const Var<T>& f) {
  if (heads.heads.size() != 2) throw std::logic_error("context_pair needs 2 heads");
  auto maps = heads(f);
  return {maps[0], maps[1]};
}

template <typename T>
ModulationPair<T> spm_fuse(const SemanticParamQuad<T>& q, const ModulationPair<T>& ctx) {
  return {modulate(ctx.gamma, q.gs2, q.bs2), modulate(ctx.beta, q.gs1, q.bs1)};
}

template <typename T>
void ModulationBlock<T>::check_inputs(const Var<T>& f, const SemanticLayout<T>& s) const {
  const Shape fs = f.shape();
  const Shape ss = s.onehot.shape();
  if (fs.c != cfg_.feature_channels) {
    throw ShapeError("modulation block expects " + std::to_string(cfg_.feature_channels) +
                     " feature channels, got " + std::to_string(fs.c));
  }
  if (ss.n != fs.n || ss.h != fs.h || ss.w != fs.w) {
    throw ShapeError("layout " + ss.str() + " not aligned with features " + fs.str() +
                     "; resize the layout first");
  }
}

template <typename T>
Var<T> ModulationBlock<T>::forward(const Var<T>& f, const SemanticLayout<T>& s) const {
  check_inputs(f, s);
  const Var<T> f_bar = channel_normalize(f);
  const ModulationPair<T> p = parameters(f, f_bar, s);
  if (!(p.gamma.shape() == f.shape()) || !(p.beta.shape() == f.shape())) {
    throw ShapeError("modulation parameters " + p.gamma.shape().str() + " do not match features " +
                     f.shape().str());
  }
  return modulate(f_bar, p.gamma, p.beta);
}

template <typename T>
SpadeBlock<T>::SpadeBlock(const ModulationConfig& cfg, std::mt19937_64& rng)
    : ModulationBlock<T>(cfg), semantic(HeadStack<T>::make(cfg.semantic_channels, cfg, 2, rng)) {}

template <typename T>
ModulationPair<T> SpadeBlock<T>::parameters(const Var<T>&, const Var<T>&, const SemanticLayout<T>& s) const {
  return semantic_pair(semantic, s);
}

template <typename T>
void SpadeBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  semantic.collect(prefix + ".semantic", out);
}

template <typename T>
SpmBlock<T>::SpmBlock(const ModulationConfig& cfg, std::mt19937_64& rng)
    : ModulationBlock<T>(cfg),
      semantic(HeadStack<T>::make(cfg.semantic_channels, cfg, 4, rng)),
      context(HeadStack<T>::make(cfg.feature_channels, cfg, 2, rng)) {}

template <typename T>
ModulationPair<T> SpmBlock<T>::parameters(const Var<T>& f, const Var<T>& f_bar,
                                          const SemanticLayout<T>& s) const {
  const SemanticParamQuad<T> quad = semantic_quad(semantic, s);
  const ModulationPair<T> ctx = context_pair(context, this->cfg_.context_from_normalized ? f_bar : f);
  return spm_fuse(quad, ctx);
}

template <typename T>
void SpmBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  semantic.collect(prefix + ".semantic", out);
  context.collect(prefix + ".context", out);
}

template <typename T>
std::unique_ptr<ModulationBlock<T>> make_block(BlockType type, const ModulationConfig& cfg, std::mt19937_64& rng) {
  if (type == BlockType::Spm) return std::make_unique<SpmBlock<T>>(cfg, rng);
  return std::make_unique<SpadeBlock<T>>(cfg, rng);
}

#define SPM_INSTANTIATE(T)                                                                              \
  template struct SemanticLayout<T>;                                                                    \
  template NormStats<T> channel_stats<T>(const Tensor<T>&);                                             \
  template Var<T> channel_normalize<T>(const Var<T>&);                                                  \
  template struct HeadStack<T>;                                                                         \
  template ModulationPair<T> semantic_pair<T>(const HeadStack<T>&, const SemanticLayout<T>&);           \
  template SemanticParamQuad<T> semantic_quad<T>(const HeadStack<T>&, const SemanticLayout<T>&);        \
  template ModulationPair<T> context_pair<T>(const HeadStack<T>&, const Var<T>&);                       \
  template ModulationPair<T> spm_fuse<T>(const SemanticParamQuad<T>&, const ModulationPair<T>&);        \
  template class ModulationBlock<T>;                                                                    \
  template class SpadeBlock<T>;                                                                         \
  template class SpmBlock<T>;                                                                           \
  template std::unique_ptr<ModulationBlock<T>> make_block<T>(BlockType, const ModulationConfig&,        \
                                                             std::mt19937_64&);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
