#include <gtest/gtest.h>

#include "spm/networks.hpp"
#include "test_util.hpp"

using namespace spm;
using spm::testing::randn;

namespace {

PyramidConfig small_config() {
  PyramidConfig c;
  c.base_channels = 4;
  c.max_channels = 8;
  c.disc_base_channels = 4;
  c.disc_max_channels = 8;
  c.hidden_channels = 4;
  c.num_classes = 3;
  return c;
}

struct Inputs {
  Tensor<float> image, mask;
  SemanticLayout<float> layout;
};

Inputs random_inputs(const PyramidConfig& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Mask> masks;
  std::vector<Tensor<float>> layouts;
  for (std::size_t i = 0; i < n; ++i) {
    Mask m(c.base_h, c.base_w);
    LabelGrid seg(c.base_h, c.base_w);
    const std::size_t x0 = rng() % (c.base_w / 2);
    for (std::size_t y = 0; y < c.base_h; ++y)
      for (std::size_t x = 0; x < c.base_w; ++x) {
        m(y, x) = x >= x0 && x < x0 + c.base_w / 2;
        seg(y, x) = static_cast<std::int32_t>((x / 8 + y / 16) % c.num_classes);
      }
    masks.push_back(m);
    layouts.push_back(SemanticLayout<float>::from_labels(seg, m, c.num_classes).onehot);
  }
  Tensor<float> img = random_uniform<float>(Shape{n, 3, c.base_h, c.base_w}, -1.f, 1.f, rng);
  const Tensor<float> mask = mask_tensor<float>(masks);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < c.base_h * c.base_w; ++p)
        if (mask.plane(b, 0)[p] != 0) img.plane(b, ch)[p] = 0;
  return {img, mask, {concat_batch(layouts)}};
}

}  // namespace

TEST(Architecture, DiscriminatorReceptiveFieldsCoverTheirInputs) {
  const std::size_t expected[3] = {61, 125, 253};
  for (std::size_t n = 1; n <= 3; ++n) {
    PyramidConfig c;
    const std::size_t rf = receptive_field(c.disc_layers(n), 5, 2);
    EXPECT_EQ(rf, expected[n - 1]);
    const std::size_t side = 256 >> (3 - n);
    EXPECT_GE(double(rf), 0.9 * double(side)) << "D" << n;
  }
  EXPECT_EQ(receptive_field(1, 3, 1), 3u);
  EXPECT_THROW(receptive_field(0, 3, 1), std::invalid_argument);
}

TEST(Architecture, DepthAndResolutionPerScale) {
  const PyramidConfig c = small_config();
  const Pyramid<float> p(c, 1);
  for (std::size_t n = 1; n <= 3; ++n) {
    const auto& g = p.generators()[n - 1];
    EXPECT_EQ(g.depth(), 3 + n);
    EXPECT_EQ(g.height(), c.base_h >> (3 - n));
    EXPECT_EQ(g.width(), c.base_w >> (3 - n));
    EXPECT_EQ(g.blocks().size(), g.depth());
    EXPECT_EQ(p.discriminators()[n - 1].layers(), 3 + n);
    if (n > 1) {
      EXPECT_EQ(g.depth(), p.generators()[n - 2].depth() + 1);
    }
  }
}

TEST(Architecture, BaseMustBeDivisible) {
  PyramidConfig c = small_config();
  EXPECT_EQ(c.required_divisor(), 64u);
  c.base_w = 96;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.base_w = 128;
  EXPECT_NO_THROW(c.validate());
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Pyramid, InputsFollowTheResolutionLadder) {
  const PyramidConfig c = small_config();
  const Pyramid<float> p(c, 2);
  const Inputs in = random_inputs(c, 2, 3);
  const auto si = p.build_inputs(in.image, in.layout, in.mask);
  ASSERT_EQ(si.size(), 3u);
  for (std::size_t n = 1; n <= 3; ++n) {
    const std::size_t h = c.base_h >> (3 - n);
    EXPECT_EQ(si[n - 1].image.shape(), (Shape{2, 3, h, h}));
    EXPECT_EQ(si[n - 1].mask.shape(), (Shape{2, 1, h, h}));
    EXPECT_EQ(si[n - 1].layout.onehot.shape(), (Shape{2, 4, h, h}));
    // Edited pixels are zero at every scale.
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < h * h; ++i)
        if (si[n - 1].mask.plane(b, 0)[i] != 0) {
          EXPECT_EQ(si[n - 1].image.plane(b, 1)[i], 0.f);
        }
  }
  EXPECT_EQ(si[2].image, in.image);
}

TEST(Pyramid, ForwardShapesRangeAndComposite) {
  const PyramidConfig c = small_config();
  const Pyramid<float> p(c, 4);
  const Inputs in = random_inputs(c, 2, 5);
  const auto si = p.build_inputs(in.image, in.layout, in.mask);
  const auto out = p.forward(si);
  for (std::size_t n = 1; n <= 3; ++n) {
    const Tensor<float>& o = out.raw[n - 1]->value();
    const Tensor<float>& comp = out.composite[n - 1]->value();
    EXPECT_EQ(o.shape(), si[n - 1].image.shape());
    for (std::size_t i = 0; i < o.numel(); ++i) {
      EXPECT_LE(std::abs(o[i]), 1.f);
    }
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < o.shape().plane(); ++i) {
          const bool edit = si[n - 1].mask.plane(b, 0)[i] != 0;
          EXPECT_EQ(comp.plane(b, ch)[i], edit ? o.plane(b, ch)[i] : si[n - 1].image.plane(b, ch)[i]);
        }
  }
}

TEST(Pyramid, NonProgressiveRunsOnlyTheFinestGenerator) {
  const PyramidConfig c = small_config().with_variant(Variant::NoProg);
  const Pyramid<float> p(c, 6);
  EXPECT_EQ(p.active_scales(), std::vector<std::size_t>{3});
  const Inputs in = random_inputs(c, 1, 7);
  const auto out = p.forward(in.image, in.layout, in.mask);
  EXPECT_FALSE(out.raw[0].has_value());
  EXPECT_FALSE(out.raw[1].has_value());
  EXPECT_TRUE(out.raw[2].has_value());
}

TEST(Pyramid, SameSeedSameWeightsAndOutputs) {
  const PyramidConfig c = small_config();
  const Pyramid<float> a(c, 9), b(c, 9), d(c, 10);
  const Inputs in = random_inputs(c, 1, 11);
  EXPECT_EQ(a.forward(in.image, in.layout, in.mask).raw[2]->value(),
            b.forward(in.image, in.layout, in.mask).raw[2]->value());
  EXPECT_NE(a.generator_params()[0].var.value(), d.generator_params()[0].var.value());
}

TEST(Pyramid, VariantsDifferOnlyInModulationWeightsAtInit) {
  const PyramidConfig c = small_config();
  const Pyramid<float> spm(c, 12), spade(c.with_variant(Variant::Spade), 12);
  auto non_mod = [](const ParamList<float>& ps) {
    std::map<std::string, Tensor<float>> m;
    for (const auto& p : ps)
      if (p.name.find(".mod") == std::string::npos) m[p.name] = p.var.value();
    return m;
  };
  const auto a = non_mod(spm.generator_params()), b = non_mod(spade.generator_params());
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_GT(parameter_count(spm.generator_params()), parameter_count(spade.generator_params()));
  std::map<std::string, Tensor<float>> da, db;
  for (const auto& p : spm.discriminator_params()) da[p.name] = p.var.value();
  for (const auto& p : spade.discriminator_params()) db[p.name] = p.var.value();
  EXPECT_EQ(da, db);
}

TEST(Variants, ConfigTransforms) {
  const PyramidConfig c;
  EXPECT_EQ(c.with_variant(Variant::Spade).block_type, BlockType::Spade);
  EXPECT_TRUE(c.with_variant(Variant::SpadeL).extra_spade);
  EXPECT_TRUE(c.with_variant(Variant::WNorm).context_from_normalized);
  EXPECT_FALSE(c.with_variant(Variant::NoProg).progressive);
  EXPECT_EQ(c.with_variant(Variant::SpmS).hidden_channels, c.hidden_channels / 2);
  for (auto name : {"spm", "spade", "spade-l", "wnorm", "noprog", "spm-s"}) {
    EXPECT_EQ(variant_name(parse_variant(name)), name);
  }
  EXPECT_THROW(parse_variant("bogus"), std::invalid_argument);
  // Report rows mirror the ablation table labels.
  EXPECT_EQ(variant_label(Variant::Spade), "w SPADE");
  EXPECT_EQ(variant_label(Variant::WNorm), "w norm");
  EXPECT_EQ(variant_label(Variant::NoProg), "w/o prog");
}

TEST(ComposeInput, SelectsPreviousOutputInsideMask) {
  const Tensor<float> prev = randn<float>(Shape{1, 3, 4, 4}, 13), img = randn<float>(Shape{1, 3, 4, 4}, 14);
  Tensor<float> mask(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; i += 3) mask[i] = 1;
  const auto out = compose_input(Var<float>(prev), Var<float>(img), mask).value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(out.plane(0, c)[i], mask[i] ? prev.plane(0, c)[i] : img.plane(0, c)[i]);
  mask[1] = 0.5f;
  EXPECT_THROW(compose_input(Var<float>(prev), Var<float>(img), mask), std::invalid_argument);
}

TEST(Discriminator, TrainingAdvancesPowerIterationOnce) {
  const PyramidConfig c = small_config();
  Pyramid<float> p(c, 15);
  const Inputs in = random_inputs(c, 1, 16);
  auto& d = p.discriminators()[2];
  const auto before = d.spectral_states()[0].iterations;
  const auto s = d.forward(Var<float>(in.image), in.layout, false);
  EXPECT_EQ(d.spectral_states()[0].iterations, before);
  d.forward(Var<float>(in.image), in.layout, true);
  for (const auto& st : d.spectral_states()) EXPECT_EQ(st.iterations, before + 1);
  // 64 → 32 → 16 → 8 → 4 → 2 → 1 after six stride-2 layers.
  EXPECT_EQ(s.shape(), (Shape{1, 1, 1, 1}));
}

TEST(Generator, RejectsWrongResolution) {
  const PyramidConfig c = small_config();
  const Pyramid<float> p(c, 17);
  const Inputs in = random_inputs(c, 1, 18);
  EXPECT_THROW(p.generators()[0].forward(Var<float>(in.image), in.mask, in.layout), ShapeError);
  EXPECT_THROW(p.build_inputs(Tensor<float>(Shape{1, 3, 32, 32}), in.layout, in.mask), ShapeError);
}
