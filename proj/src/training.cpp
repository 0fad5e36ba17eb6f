#include "spm/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spm/rng.hpp"
#include "spm/simd/kernels.hpp"

namespace spm {

double generator_objective(double l1, double perceptual, double adv_g) {
  return l1 + kPerceptualWeight * perceptual + adv_g;
}

LossBreakdown total_g_loss(const std::vector<LossBreakdown>& per_scale) {
  LossBreakdown t;
  for (const auto& p : per_scale) {
    t.l1 += p.l1;
    t.perceptual += p.perceptual;
    t.adv_g += p.adv_g;
    t.adv_d += p.adv_d;
    t.total_g += generator_objective(p.l1, p.perceptual, p.adv_g);
  }
  return t;
}

void OptimConfig::validate() const {
  if (!(lr_g >= 0) || !(lr_d >= 0)) throw std::invalid_argument("learning rates must be non-negative");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
    throw std::invalid_argument("beta1 and beta2 must lie in (0, 1)");
  }
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void store_optim_config(const OptimConfig& c, KeyValues& kv, const std::string& p) {
  kv.set(p + "lr_g", fmt_double(c.lr_g));
  kv.set(p + "lr_d", fmt_double(c.lr_d));
  kv.set(p + "beta1", fmt_double(c.beta1));
  kv.set(p + "beta2", fmt_double(c.beta2));
  kv.set(p + "eps", fmt_double(c.eps));
  kv.set(p + "batch_size", std::to_string(c.batch_size));
}

OptimConfig read_optim_config(const KeyValues& kv, OptimConfig c, const std::string& p) {
  auto num = [&](const char* k, double& dst) {
    if (kv.has(p + k)) dst = kv.get_double(p + k);
  };
  num("lr_g", c.lr_g);
  num("lr_d", c.lr_d);
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("eps", c.eps);
  if (kv.has(p + "batch_size")) c.batch_size = kv.get_size(p + "batch_size");
  return c;
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  return mean(abs(sub(pred, target)));
}

template <typename T>
Tensor<T> Embedder<T>::pooled(const Tensor<T>& images) const {
  const auto feats = stages(Var<T>(images));
  const Tensor<T>& last = feats.back().value();
  const Shape s = last.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = last.plane(n, c);
      double acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(s.plane()));
    }
  }
  return out;
}

template <typename T>
RandomConvEmbedder<T>::RandomConvEmbedder(std::size_t in_channels, std::uint64_t seed) {
  auto rng = derive_rng(seed, {static_cast<std::uint64_t>('P')});
  std::size_t in = in_channels;
  for (std::size_t out : {16, 32, 64, 64}) {
    convs_.push_back(Conv2d<T>::make(in, out, 3, 2, 1, Init::HeUniform, rng));
    convs_.back().weight.set_requires_grad(false);
    convs_.back().bias.set_requires_grad(false);
    in = out;
  }
}

template <typename T>
std::vector<Var<T>> RandomConvEmbedder<T>::stages(const Var<T>& image) const {
  std::vector<Var<T>> out;
  Var<T> x = image;
  for (const auto& c : convs_) {
    x = leaky_relu(c(x), static_cast<T>(0.2));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& target, const Embedder<T>* embedder) {
  if (!embedder) throw std::invalid_argument("perceptual_loss needs an embedder");
  const auto a = embedder->stages(pred);
  const auto b = embedder->stages(target);
  Var<T> total;
  for (std::size_t k = 0; k < a.size(); ++k) {
    Var<T> term = mean(abs(sub(a[k], b[k])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Var<T> hinge_d_loss(const Var<T>& real, const Var<T>& fake) {
  return add(mean(relu(add_scalar(scale(real, T(-1)), T(1)))), mean(relu(add_scalar(fake, T(1)))));
}

template <typename T>
Var<T> hinge_g_loss(const Var<T>& fake) {
  return scale(mean(fake), T(-1));
}

template <typename T>
void Adam<T>::step(const ParamList<T>& params) {
  ++t_;
  const double b1t = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double b2t = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const simd::AdamArgs<T> args{static_cast<T>(lr_), static_cast<T>(beta1_), static_cast<T>(beta2_),
                               static_cast<T>(eps_), static_cast<T>(b1t), static_cast<T>(b2t)};
  const auto& kt = simd::kernels<T>();
  for (const auto& p : params) {
    auto& slot = slots_[p.name];
    Tensor<T>& value = p.var.node()->value;
    if (slot.m.empty()) {
      slot.m = Tensor<T>(value.shape());
      slot.v = Tensor<T>(value.shape());
    }
    const Tensor<T> zero = p.var.has_grad() ? Tensor<T>() : Tensor<T>(value.shape());
    const T* g = p.var.has_grad() ? p.var.node()->grad.data() : zero.data();
    kt.adam(value.numel(), args, g, slot.m.data(), slot.v.data(), value.data());
  }
}

template <typename T>
std::vector<Tensor<T>> scale_targets(const Tensor<T>& target, const std::vector<ScaleInputs<T>>& inputs) {
  std::vector<Tensor<T>> out;
  for (const auto& in : inputs) {
    const Shape s = in.image.shape();
    Tensor<T> t = resize(target, s.h, s.w, ResizeMode::Bilinear);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* m = in.mask.plane(n, 0);
      for (std::size_t c = 0; c < s.c; ++c) {
        T* p = t.plane(n, c);
        const T* known = in.image.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          if (m[i] == T(0)) p[i] = known[i];
        }
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

TrainingState TrainingState::create(const PyramidConfig& model, const OptimConfig& optim, std::uint64_t seed,
                                    const std::string& variant) {
  optim.validate();
  TrainingState st;
  st.model = model;
  st.optim = optim;
  st.variant = variant;
  st.seed = seed;
  st.pyramid = std::make_unique<Pyramid<float>>(model, seed);
  st.adam_g = Adam<float>(optim.lr_g, optim.beta1, optim.beta2, optim.eps);
  st.adam_d = Adam<float>(optim.lr_d, optim.beta1, optim.beta2, optim.eps);
  st.rng = derive_rng(seed, {static_cast<std::uint64_t>('T')});
  return st;
}

namespace {

void check_finite(double v, std::uint64_t step, std::size_t scale, const char* part) {
  if (!std::isfinite(v)) {
    throw TrainingError("non-finite " + std::string(part) + " loss at step " + std::to_string(step) + ", scale " +
                        std::to_string(scale));
  }
}

void zero_grads(const ParamList<float>& params) {
  for (auto p : params) p.var.zero_grad();
}

}  // namespace

LossBreakdown train_step(TrainingState& st, const Batch<float>& batch, const Embedder<float>& embedder,
                         std::vector<LossBreakdown>* per_scale) {
  Pyramid<float>& pyr = *st.pyramid;
  const ParamList<float> gp = pyr.generator_params();
  const ParamList<float> dp = pyr.discriminator_params();
  const std::size_t step = st.step + 1;
  const std::size_t n = batch.target.shape().n;

  set_trainable(gp, true);
  set_trainable(dp, false);
  const auto inputs = pyr.build_inputs(batch.masked, batch.layout, batch.mask);
  const auto targets = scale_targets(batch.target, inputs);
  const PyramidOutputs<float> out = pyr.forward(inputs);
  const auto scales = pyr.active_scales();
  std::vector<LossBreakdown> parts(scales.size());

  // Discriminators on real and detached composites in one pass.
  set_trainable(dp, true);
  Var<float> d_total;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::size_t s = scales[i];
    const Var<float> x(concat_batch<float>({targets[s - 1], out.composite[s - 1]->value()}));
    const SemanticLayout<float> lay{concat_batch<float>({inputs[s - 1].layout.onehot, inputs[s - 1].layout.onehot})};
    const Var<float> scores = pyr.discriminators()[s - 1].forward(x, lay, true);
    const Var<float> ld = hinge_d_loss(slice_batch(scores, 0, n), slice_batch(scores, n, n));
    parts[i].adv_d = scalar_value(ld);
    check_finite(parts[i].adv_d, step, s, "adv_d");
    d_total = d_total.defined() ? add(d_total, ld) : ld;
  }
  zero_grads(dp);
  d_total.backward();
  st.adam_d.step(dp);
  set_trainable(dp, false);

  // Generators against the updated, frozen discriminators.
  Var<float> g_total;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::size_t s = scales[i];
    const Var<float>& comp = *out.composite[s - 1];
    const Var<float> target(targets[s - 1]);
    const Var<float> l1 = l1_loss(comp, target);
    const Var<float> lp = perceptual_loss<float>(comp, target, &embedder);
    const Var<float> adv = hinge_g_loss(pyr.discriminators()[s - 1].forward(comp, inputs[s - 1].layout, false));
    parts[i].l1 = scalar_value(l1);
    parts[i].perceptual = scalar_value(lp);
    parts[i].adv_g = scalar_value(adv);
    check_finite(parts[i].l1, step, s, "l1");
    check_finite(parts[i].perceptual, step, s, "perceptual");
    check_finite(parts[i].adv_g, step, s, "adv_g");
    const Var<float> total = add(add(l1, scale(lp, static_cast<float>(kPerceptualWeight))), adv);
    g_total = g_total.defined() ? add(g_total, total) : total;
  }
  zero_grads(gp);
  g_total.backward();
  st.adam_g.step(gp);
  zero_grads(gp);
  zero_grads(dp);
  set_trainable(dp, true);

  st.step = step;
  if (per_scale) *per_scale = parts;
  return total_g_loss(parts);
}

std::string format_log_line(std::uint64_t step, const LossBreakdown& l) {
  std::ostringstream os;
  os.precision(9);
  os << step << ", " << l.l1 << ", " << l.perceptual << ", " << l.adv_g << ", " << l.adv_d << ", " << l.total_g;
  return os.str();
}

// Checkpoint layout, little-endian:
//   "SPMCKPT1" | u32 version | u64 manifest bytes | manifest text
//   | u32 array count | { u32 name bytes | name | u64 n,c,h,w | f32 data } ...
//   | "SPMEND\0\0"
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'P', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr char kEndMarker[8] = {'S', 'P', 'M', 'E', 'N', 'D', 0, 0};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

struct Reader {
  std::istream& in;
  std::string what;

  void bytes(void* dst, std::size_t n, const std::string& ctx) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw CheckpointError("truncated checkpoint: ran out of data reading " + ctx);
    }
  }
  template <typename V>
  V get(const std::string& ctx) {
    V v;
    bytes(&v, sizeof(V), ctx);
    return v;
  }
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void write_array(std::ostream& out, const std::string& name, const Shape& s, const float* data) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  for (std::uint64_t d : {s.n, s.c, s.h, s.w}) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(s.numel() * sizeof(float)));
}

Shape vector_shape(std::size_t n) { return Shape{1, 1, 1, n}; }

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

void save_checkpoint(const TrainingState& st, std::ostream& out) {
  KeyValues kv;
  store_pyramid_config(st.model, kv);
  store_optim_config(st.optim, kv);
  kv.set("variant", st.variant);
  kv.set("seed", std::to_string(st.seed));
  kv.set("step", std::to_string(st.step));
  kv.set("adam_g.t", std::to_string(st.adam_g.steps()));
  kv.set("adam_d.t", std::to_string(st.adam_d.steps()));
  kv.set("rng", rng_text(st.rng));
  const auto& discs = st.pyramid->discriminators();
  for (const auto& d : discs) {
    for (std::size_t l = 0; l < d.spectral_states().size(); ++l) {
      kv.set("sn.D" + std::to_string(d.scale()) + ".conv" + std::to_string(l) + ".iterations",
             std::to_string(d.spectral_states()[l].iterations));
    }
  }
  const std::string manifest = kv.serialize();

  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));

  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  ParamList<float> params = st.pyramid->generator_params();
  for (auto& p : st.pyramid->discriminator_params()) params.push_back(p);
  for (const auto& p : params) tensors.emplace_back("param/" + p.name, &p.var.value());
  for (const auto& [name, slot] : st.adam_g.slots()) {
    tensors.emplace_back("adam_g.m/" + name, &slot.m);
    tensors.emplace_back("adam_g.v/" + name, &slot.v);
  }
  for (const auto& [name, slot] : st.adam_d.slots()) {
    tensors.emplace_back("adam_d.m/" + name, &slot.m);
    tensors.emplace_back("adam_d.v/" + name, &slot.v);
  }
  std::size_t n_sn = 0;
  for (const auto& d : discs) n_sn += 2 * d.spectral_states().size();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size() + n_sn));
  for (const auto& [name, t] : tensors) write_array(out, name, t->shape(), t->data());
  for (const auto& d : discs) {
    for (std::size_t l = 0; l < d.spectral_states().size(); ++l) {
      const auto& sn = d.spectral_states()[l];
      const std::string base = "sn/D" + std::to_string(d.scale()) + ".conv" + std::to_string(l);
      write_array(out, base + ".u", vector_shape(sn.u.size()), sn.u.data());
      write_array(out, base + ".v", vector_shape(sn.v.size()), sn.v.data());
    }
  }
  out.write(kEndMarker, sizeof kEndMarker);
  if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const TrainingState& st, const std::string& path) {
  // Write to a sibling file and rename, so readers never see a partial file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp + " for writing");
    save_checkpoint(st, f);
    f.flush();
    if (!f) throw CheckpointError("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot rename " + tmp + " to " + path);
}

TrainingState load_checkpoint(std::istream& in) {
  Reader r{in, {}};
  char magic[8];
  r.bytes(magic, sizeof magic, "header");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto mlen = r.get<std::uint64_t>("manifest length");
  if (mlen > (1u << 24)) throw CheckpointError("corrupt checkpoint: manifest length " + std::to_string(mlen));
  std::string manifest(mlen, '\0');
  r.bytes(manifest.data(), mlen, "manifest");
  const KeyValues kv = KeyValues::parse(manifest, "checkpoint manifest");

  std::map<std::string, NamedArray> arrays;
  const auto count = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>("array name length");
    if (nlen > 4096) throw CheckpointError("corrupt checkpoint: array name length " + std::to_string(nlen));
    NamedArray a;
    a.name.resize(nlen);
    r.bytes(a.name.data(), nlen, "array name");
    std::uint64_t dims[4];
    for (auto& d : dims) d = r.get<std::uint64_t>("shape of " + a.name);
    a.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
    const std::uint64_t numel = dims[0] * dims[1] * dims[2] * dims[3];
    if (numel > (std::uint64_t{1} << 32)) throw CheckpointError("corrupt checkpoint: array " + a.name + " too large");
    a.data.resize(numel);
    r.bytes(a.data.data(), numel * sizeof(float), "array " + a.name);
    if (!arrays.emplace(a.name, std::move(a)).second) throw CheckpointError("duplicate array in checkpoint");
  }
  char end[8];
  r.bytes(end, sizeof end, "end marker");
  if (std::memcmp(end, kEndMarker, sizeof end) != 0) throw CheckpointError("corrupt checkpoint: bad end marker");

  const PyramidConfig model = read_pyramid_config(kv);
  const OptimConfig optim = read_optim_config(kv);
  TrainingState st = TrainingState::create(model, optim, std::stoull(kv.get("seed")), kv.get("variant"));
  st.step = std::stoull(kv.get("step"));
  st.adam_g.set_steps(std::stoull(kv.get("adam_g.t")));
  st.adam_d.set_steps(std::stoull(kv.get("adam_d.t")));
  {
    std::istringstream rs(kv.get("rng"));
    rs >> st.rng;
    if (!rs) throw CheckpointError("corrupt checkpoint: bad rng state");
  }

  auto take = [&](const std::string& name, const Shape& expect) -> std::vector<float> {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint is missing array " + name);
    if (!(it->second.shape == expect)) {
      throw CheckpointError("array " + name + " has shape " + it->second.shape.str() + ", model expects " + expect.str());
    }
    std::vector<float> d = std::move(it->second.data);
    arrays.erase(it);
    return d;
  };

  ParamList<float> params = st.pyramid->generator_params();
  for (auto& p : st.pyramid->discriminator_params()) params.push_back(p);
  for (auto& p : params) {
    const Shape s = p.var.shape();
    p.var.mutable_value() = Tensor<float>(s, take("param/" + p.name, s));
  }
  auto load_slots = [&](Adam<float>& adam, const std::string& prefix, const ParamList<float>& owned) {
    for (const auto& p : owned) {
      if (!arrays.count(prefix + ".m/" + p.name)) continue;
      const Shape s = p.var.shape();
      auto& slot = adam.slots()[p.name];
      slot.m = Tensor<float>(s, take(prefix + ".m/" + p.name, s));
      slot.v = Tensor<float>(s, take(prefix + ".v/" + p.name, s));
    }
  };
  load_slots(st.adam_g, "adam_g", st.pyramid->generator_params());
  load_slots(st.adam_d, "adam_d", st.pyramid->discriminator_params());
  for (auto& d : st.pyramid->discriminators()) {
    for (std::size_t l = 0; l < d.spectral_states().size(); ++l) {
      auto& sn = d.spectral_states()[l];
      const std::string base = "sn/D" + std::to_string(d.scale()) + ".conv" + std::to_string(l);
      sn.u = take(base + ".u", vector_shape(sn.u.size()));
      sn.v = take(base + ".v", vector_shape(sn.v.size()));
      sn.iterations = std::stoull(kv.get("sn.D" + std::to_string(d.scale()) + ".conv" + std::to_string(l) + ".iterations"));
    }
  }
  if (!arrays.empty()) throw CheckpointError("checkpoint has unexpected array " + arrays.begin()->first);
  return st;
}

TrainingState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  return load_checkpoint(f);
}

#define SPM_INSTANTIATE(T)                                                                            \
  template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);                                           \
  template class Embedder<T>;                                                                         \
  template class RandomConvEmbedder<T>;                                                               \
  template Var<T> perceptual_loss<T>(const Var<T>&, const Var<T>&, const Embedder<T>*);               \
  template Var<T> hinge_d_loss<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> hinge_g_loss<T>(const Var<T>&);                                                     \
  template class Adam<T>;                                                                             \
  template std::vector<Tensor<T>> scale_targets<T>(const Tensor<T>&, const std::vector<ScaleInputs<T>>&);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
