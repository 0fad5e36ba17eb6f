#include "spm/networks.hpp"

#include <stdexcept>

#include "spm/rng.hpp"

namespace spm {

namespace {
constexpr double kLeak = 0.2;
constexpr std::size_t kDiscKernel = 5;
constexpr std::size_t kDiscStride = 2;
constexpr std::size_t kDiscPadding = 2;

std::uint64_t tag(char c) { return static_cast<std::uint64_t>(c); }
}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Spm: return "spm";
    case Variant::Spade: return "spade";
    case Variant::SpadeL: return "spade-l";
    case Variant::WNorm: return "wnorm";
    case Variant::NoProg: return "noprog";
    case Variant::SpmS: return "spm-s";
  }
  return "?";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::Spm: return "SPMPGAN";
    case Variant::Spade: return "w SPADE";
    case Variant::SpadeL: return "w SPADE-L";
    case Variant::WNorm: return "w norm";
    case Variant::NoProg: return "w/o prog";
    case Variant::SpmS: return "SPMPGAN-S";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Spm, Variant::Spade, Variant::SpadeL, Variant::WNorm, Variant::NoProg, Variant::SpmS}) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(s) +
                              "' (expected spm, spade, spade-l, wnorm, noprog, spm-s)");
}

std::size_t PyramidConfig::required_divisor() const {
  // G_n at base/2^(S−n) needs 3+n halvings: base must divide by 2^(S+3).
  return std::size_t{1} << (n_scales + 3);
}

void PyramidConfig::validate() const {
  if (n_scales < 1 || n_scales > 6) throw std::invalid_argument("n_scales must be in [1, 6]");
  const std::size_t div = required_divisor();
  if (base_h % div != 0 || base_w % div != 0) {
    throw std::invalid_argument("base resolution " + std::to_string(base_h) + "x" + std::to_string(base_w) +
                                " must be divisible by " + std::to_string(div));
  }
  if (base_channels == 0 || max_channels == 0 || disc_base_channels == 0 || disc_max_channels == 0 ||
      hidden_channels == 0) {
    throw std::invalid_argument("channel widths must be positive");
  }
  if (num_classes == 0) throw std::invalid_argument("num_classes must be positive");
}

PyramidConfig PyramidConfig::with_variant(Variant v) const {
  PyramidConfig c = *this;
  switch (v) {
    case Variant::Spm: break;
    case Variant::Spade: c.block_type = BlockType::Spade; break;
    case Variant::SpadeL:
      c.block_type = BlockType::Spade;
      c.extra_spade = true;
      break;
    case Variant::WNorm: c.context_from_normalized = true; break;
    case Variant::NoProg: c.progressive = false; break;
    case Variant::SpmS: c.hidden_channels = std::max<std::size_t>(1, hidden_channels / 2); break;
  }
  return c;
}

std::size_t receptive_field(std::size_t layers, std::size_t kernel, std::size_t stride) {
  if (layers < 1) throw std::invalid_argument("receptive_field needs layers >= 1");
  std::size_t r = 1, j = 1;
  for (std::size_t l = 0; l < layers; ++l) {
    r += (kernel - 1) * j;
    j *= stride;
  }
  return r;
}

namespace {

std::size_t width_at(std::size_t base, std::size_t cap, std::size_t level) {
  std::size_t c = base;
  for (std::size_t i = 0; i < level && c < cap; ++i) c *= 2;
  return std::min(c, cap);
}

ModulationConfig block_config(const PyramidConfig& cfg, std::size_t channels) {
  ModulationConfig m;
  m.feature_channels = channels;
  m.semantic_channels = cfg.num_classes + 1;
  m.hidden_channels = cfg.hidden_channels;
  m.context_from_normalized = cfg.context_from_normalized;
  return m;
}

}  // namespace

template <typename T>
Generator<T>::Generator(const PyramidConfig& cfg, std::size_t scale, std::uint64_t seed)
    : scale_(scale), h_(cfg.scale_h(scale)), w_(cfg.scale_w(scale)) {
  const std::size_t depth = cfg.encoder_depth(scale);
  auto ch = [&](std::size_t level) { return width_at(cfg.base_channels, cfg.max_channels, level); };
  auto rng = derive_rng(seed, {tag('G'), scale});
  stem_ = Conv2d<T>::make(cfg.image_channels + 1, ch(0), 3, 1, 1, Init::HeUniform, rng);
  for (std::size_t k = 1; k <= depth; ++k) {
    down_.push_back(Conv2d<T>::make(ch(k - 1), ch(k), 3, 2, 1, Init::HeUniform, rng));
  }
  for (std::size_t k = 1; k <= depth; ++k) {
    const std::size_t in = (k == depth) ? ch(depth) : ch(k + 1) + ch(k);
    dec_.push_back(Conv2d<T>::make(in, ch(k), 3, 1, 1, Init::HeUniform, rng));
  }
  head_ = Conv2d<T>::make(ch(1) + ch(0), cfg.image_channels, 3, 1, 1, Init::HeUniform, rng);
  for (std::size_t k = 1; k <= depth; ++k) {
    auto mrng = derive_rng(seed, {tag('M'), scale, k});
    mods_.push_back(make_block<T>(cfg.block_type, block_config(cfg, ch(k)), mrng));
    if (cfg.extra_spade) {
      auto erng = derive_rng(seed, {tag('E'), scale, k});
      extra_dec_.push_back(Conv2d<T>::make(ch(k), ch(k), 3, 1, 1, Init::HeUniform, erng));
      extra_mods_.push_back(make_block<T>(BlockType::Spade, block_config(cfg, ch(k)), erng));
    }
  }
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& image, const Tensor<T>& mask, const SemanticLayout<T>& layout) const {
  const Shape s = image.shape();
  if (s.h != h_ || s.w != w_ || mask.shape().h != h_ || mask.shape().w != w_ ||
      layout.onehot.shape().h != h_ || layout.onehot.shape().w != w_) {
    throw ShapeError("G" + std::to_string(scale_) + " expects " + std::to_string(h_) + "x" + std::to_string(w_) +
                     " inputs, got image " + s.str() + ", mask " + mask.shape().str() + ", layout " +
                     layout.onehot.shape().str());
  }
  const T leak = static_cast<T>(kLeak);
  std::vector<Var<T>> enc;
  enc.push_back(leaky_relu(stem_(concat_channels<T>({image, Var<T>(mask)})), leak));
  for (const auto& d : down_) enc.push_back(leaky_relu(d(enc.back()), leak));

  const std::size_t depth = down_.size();
  Var<T> h = enc[depth];
  for (std::size_t k = depth; k >= 1; --k) {
    Var<T> in = (k == depth) ? h
                             : concat_channels<T>({resize(h, enc[k].shape().h, enc[k].shape().w, ResizeMode::Nearest),
                                                   enc[k]});
    const SemanticLayout<T> s_k = layout.resized(enc[k].shape().h, enc[k].shape().w);
    h = leaky_relu(mods_[k - 1]->forward(dec_[k - 1](in), s_k), leak);
    if (!extra_mods_.empty()) h = leaky_relu(extra_mods_[k - 1]->forward(extra_dec_[k - 1](h), s_k), leak);
  }
  Var<T> up = resize(h, h_, w_, ResizeMode::Nearest);
  return tanh(head_(concat_channels<T>({up, enc[0]})));
}

template <typename T>
void Generator<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  stem_.collect(prefix + ".stem", out);
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i + 1), out);
  head_.collect(prefix + ".head", out);
  for (std::size_t i = 0; i < mods_.size(); ++i) mods_[i]->collect(prefix + ".mod" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < extra_mods_.size(); ++i) {
    extra_dec_[i].collect(prefix + ".xdec" + std::to_string(i + 1), out);
    extra_mods_[i]->collect(prefix + ".xmod" + std::to_string(i + 1), out);
  }
}

template <typename T>
Discriminator<T>::Discriminator(const PyramidConfig& cfg, std::size_t scale, std::uint64_t seed)
    : scale_(scale), h_(cfg.scale_h(scale)), w_(cfg.scale_w(scale)) {
  auto rng = derive_rng(seed, {tag('D'), scale});
  const std::size_t layers = cfg.disc_layers(scale);
  std::size_t in = cfg.image_channels + cfg.num_classes + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = (l + 1 == layers) ? 1 : width_at(cfg.disc_base_channels, cfg.disc_max_channels, l);
    convs_.push_back(Conv2d<T>::make(in, out, kDiscKernel, kDiscStride, kDiscPadding, Init::HeUniform, rng));
    sn_.push_back(SpectralState<T>::init(convs_.back().weight.shape(), rng));
    in = out;
  }
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& image, const SemanticLayout<T>& layout, bool training) {
  const Shape s = image.shape();
  if (s.h != h_ || s.w != w_) {
    throw ShapeError("D" + std::to_string(scale_) + " expects " + std::to_string(h_) + "x" + std::to_string(w_) +
                     " images, got " + s.str());
  }
  Var<T> x = concat_channels<T>({image, Var<T>(layout.onehot)});
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    if (training) power_iterate(convs_[l].weight.value(), sn_[l], 1);
    const Var<T> w = spectral_divide(convs_[l].weight, sn_[l]);
    x = conv2d(x, w, convs_[l].bias, convs_[l].geom);
    if (l + 1 < convs_.size()) x = leaky_relu(x, static_cast<T>(kLeak));
  }
  return x;
}

template <typename T>
std::vector<Tensor<T>> Discriminator<T>::normalized_kernels() const {
  std::vector<Tensor<T>> out;
  for (std::size_t l = 0; l < convs_.size(); ++l) out.push_back(spectral_divide(Var<T>(convs_[l].weight.value()), sn_[l]).value());
  return out;
}

template <typename T>
void Discriminator<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t l = 0; l < convs_.size(); ++l) convs_[l].collect(prefix + ".conv" + std::to_string(l), out);
}

template <typename T>
Pyramid<T>::Pyramid(const PyramidConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t n = 1; n <= cfg_.n_scales; ++n) {
    gens_.emplace_back(cfg_, n, seed);
    discs_.emplace_back(cfg_, n, seed);
  }
}

template <typename T>
std::vector<std::size_t> Pyramid<T>::active_scales() const {
  if (!cfg_.progressive) return {cfg_.n_scales};
  std::vector<std::size_t> s;
  for (std::size_t n = 1; n <= cfg_.n_scales; ++n) s.push_back(n);
  return s;
}

template <typename T>
std::vector<ScaleInputs<T>> Pyramid<T>::build_inputs(const Tensor<T>& image, const SemanticLayout<T>& layout,
                                                     const Tensor<T>& mask) const {
  if (image.shape().h != cfg_.base_h || image.shape().w != cfg_.base_w) {
    throw ShapeError("pyramid expects " + std::to_string(cfg_.base_h) + "x" + std::to_string(cfg_.base_w) +
                     " inputs, got " + image.shape().str());
  }
  std::vector<ScaleInputs<T>> out;
  for (std::size_t n = 1; n <= cfg_.n_scales; ++n) {
    const std::size_t h = cfg_.scale_h(n), w = cfg_.scale_w(n);
    ScaleInputs<T> si;
    si.mask = resize(mask, h, w, ResizeMode::Nearest);
    si.image = resize(image, h, w, ResizeMode::Bilinear);
    const Shape s = si.image.shape();
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t c = 0; c < s.c; ++c) {
        T* p = si.image.plane(b, c);
        const T* m = si.mask.plane(b, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          if (m[i] != T(0)) p[i] = T(0);
        }
      }
    }
    si.layout = layout.resized(h, w);
    out.push_back(std::move(si));
  }
  return out;
}

template <typename T>
PyramidOutputs<T> Pyramid<T>::forward(const std::vector<ScaleInputs<T>>& inputs) const {
  PyramidOutputs<T> out;
  out.raw.resize(cfg_.n_scales);
  out.composite.resize(cfg_.n_scales);
  std::optional<Var<T>> prev;
  for (std::size_t n : active_scales()) {
    const ScaleInputs<T>& in = inputs[n - 1];
    const Var<T> known(in.image);
    Var<T> g_in = known;
    if (prev) {
      g_in = compose_input(resize(*prev, in.image.shape().h, in.image.shape().w, ResizeMode::Bilinear), known, in.mask);
    }
    Var<T> o = gens_[n - 1].forward(g_in, in.mask, in.layout);
    out.composite[n - 1] = select(in.mask, o, known);
    out.raw[n - 1] = o;
    prev = o;
  }
  return out;
}

template <typename T>
ParamList<T> Pyramid<T>::generator_params() const {
  ParamList<T> out;
  for (const auto& g : gens_) g.collect("G" + std::to_string(g.scale()), out);
  return out;
}

template <typename T>
ParamList<T> Pyramid<T>::discriminator_params() const {
  ParamList<T> out;
  for (const auto& d : discs_) d.collect("D" + std::to_string(d.scale()), out);
  return out;
}

template <typename T>
Var<T> compose_input(const Var<T>& o_prev, const Var<T>& image, const Tensor<T>& mask) {
  for (T v : mask.vec()) {
    if (v != T(0) && v != T(1)) throw std::invalid_argument("compose_input: mask must be binary");
  }
  return select(mask, o_prev, image);
}

template <typename T>
Tensor<T> mask_tensor(const std::vector<Mask>& masks) {
  if (masks.empty()) throw ShapeError("mask_tensor of nothing");
  const std::size_t h = masks.front().h, w = masks.front().w;
  Tensor<T> out(Shape{masks.size(), 1, h, w});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].h != h || masks[n].w != w) throw ShapeError("mask_tensor: size mismatch");
    for (std::size_t i = 0; i < h * w; ++i) out.plane(n, 0)[i] = masks[n].data[i] ? T(1) : T(0);
  }
  return out;
}

#define SPM_INSTANTIATE(T)                                                              \
  template class Generator<T>;                                                          \
  template class Discriminator<T>;                                                      \
  template class Pyramid<T>;                                                            \
  template Var<T> compose_input<T>(const Var<T>&, const Var<T>&, const Tensor<T>&);     \
  template Tensor<T> mask_tensor<T>(const std::vector<Mask>&);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
