// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dcd/losses.hpp"
#include "dcd/models.hpp"
#include "test_util.hpp"

namespace dcd {
namespace {

using testing::random_tensor;

ModelSpec small_mlp() { return ModelSpec{Family::mlp, {6, 5}, 3, 1, 1, 4}; }
ModelSpec small_convnet() { return ModelSpec{Family::convnet, {3, 4}, 3, 2, 6, 6}; }

TEST(ModelSpec, Validation) {
  EXPECT_NO_THROW(small_mlp().validate());
  EXPECT_THROW((ModelSpec{Family::mlp, {}, 3, 1, 1, 4}.validate()), ConfigError);
  EXPECT_THROW((ModelSpec{Family::mlp, {4, 0}, 3, 1, 1, 4}.validate()), ConfigError);
  EXPECT_THROW((ModelSpec{Family::mlp, {4}, 1, 1, 1, 4}.validate()), ConfigError);
  EXPECT_EQ(parse_widths("32,64,128"), (std::vector<std::size_t>{32, 64, 128}));
  EXPECT_THROW(parse_widths("32,x"), ConfigError);
  EXPECT_THROW(parse_widths("0"), ConfigError);
  EXPECT_EQ(parse_family("convnet"), Family::convnet);
  EXPECT_THROW(parse_family("resnet"), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroLogitsAndLogCCrossEntropy) {
  for (const ModelSpec& spec : {small_mlp(), small_convnet()}) {
    Model m(spec);
    Rng rng(1);
    Tape t;
    const auto out = m.forward(t, t.constant(random_tensor(rng, {4, spec.in_channels, spec.in_height, spec.in_width})));
    EXPECT_EQ(out.logits.value(), Tensor({4, 3}));
    EXPECT_NEAR(cross_entropy_loss(out.logits, std::vector<int>{0, 1, 2, 0}).item(), std::log(3.0), 1e-15);
    EXPECT_EQ(out.features.shape(), (Shape{4, spec.feature_dim()}));
  }
}

TEST(Forward, DuplicateRowsGiveDuplicateOutputsAndCallsArePure) {
  for (const ModelSpec& spec : {small_mlp(), small_convnet()}) {
    const Model m = init_weights(spec, 3);
    Rng rng(2);
    const Tensor one = random_tensor(rng, {1, spec.in_channels, spec.in_height, spec.in_width});
    Tensor two({2, spec.in_channels, spec.in_height, spec.in_width});
    for (std::size_t i = 0; i < one.size(); ++i) two[i] = two[one.size() + i] = one[i];
    Tape t;
    const Tensor a = m.forward_frozen(t, t.constant(two)).logits.value();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.at(0, j), a.at(1, j));
    EXPECT_EQ(m.forward_frozen(t, t.constant(two)).logits.value(), a);
  }
}

TEST(Forward, ShapeMismatchThrows) {
  Model m = init_weights(small_convnet(), 0);
  Tape t;
  EXPECT_THROW(m.forward(t, t.constant(Tensor({2, 3, 6, 6}))), DimensionError);
  EXPECT_THROW(m.forward(t, t.constant(Tensor({2, 2, 6}))), DimensionError);
}

TEST(Forward, FrozenPassLeavesParametersWithoutGradient) {
  const Model m = init_weights(small_mlp(), 4);
  Model trainable = m;
  Rng rng(5);
  const Tensor x = random_tensor(rng, {3, 1, 1, 4});
  Tape t;
  t.backward(sum(m.forward_frozen(t, t.constant(x)).logits));
  for (const auto& p : m.params()) EXPECT_FALSE(p.grad.has_value());
  Tape t2;
  t2.backward(sum(trainable.forward(t2, t2.constant(x)).logits));
  for (const auto& p : trainable.params()) EXPECT_TRUE(p.grad.has_value()) << p.name;
}

// Total objective through a full ConvNet with both projection heads, checked
// on 8 randomly chosen weights.
TEST(Forward, ConvNetTotalLossGradientSpotCheck) {
  const ModelSpec spec = small_convnet();
  Model student = init_weights(spec, 6);
  for (auto& p : student.params())
    if (p.name.ends_with(".bias")) p.value.fill(0.05);
  const Model teacher = init_weights(ModelSpec{Family::convnet, {5, 6}, 3, 2, 6, 6}, 7);
  ProjectionHead sh = init_projection_head(spec.feature_dim(), 8, Owner::student, 8);
  ProjectionHead th = init_projection_head(6, 8, Owner::teacher, 8);
  Rng rng(9);
  const Tensor x = random_tensor(rng, {4, 2, 6, 6}, 0.0, 1.0);
  const std::vector<int> y{0, 1, 2, 1};
  const DistillConfig cfg;

  auto loss = [&](Model& s) {
    Tape t;
    const Var input = t.constant(x);
    const auto so = s.forward(t, input);
    const auto to = teacher.forward_frozen(t, input);
    const EmbeddingPair pair{project(sh, so.features), project(th, to.features)};
    const LogitScale scale{t.constant(Tensor::scalar(cfg.tau_init)), t.constant(Tensor::scalar(cfg.b_init))};
    return total_loss(so.logits, to.logits, y, pair, scale, cfg).total.item();
  };

  for (auto& p : student.params()) p.zero_grad();
  {
    Tape t;
    const Var input = t.constant(x);
    const auto so = student.forward(t, input);
    const auto to = teacher.forward_frozen(t, input);
    const EmbeddingPair pair{project(sh, so.features), project(th, to.features)};
    const LogitScale scale{t.constant(Tensor::scalar(cfg.tau_init)), t.constant(Tensor::scalar(cfg.b_init))};
    t.backward(total_loss(so.logits, to.logits, y, pair, scale, cfg).total);
  }
  Rng pick(10);
  for (int k = 0; k < 8; ++k) {
    Parameter& p = student.params()[pick.below(student.params().size())];
    const std::size_t i = pick.below(p.value.size());
    const double analytic = (*p.grad)[i];
    const double orig = p.value[i];
    const double h = 1e-5;
    p.value[i] = orig + h;
    const double up = loss(student);
    p.value[i] = orig - h;
    const double down = loss(student);
    p.value[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(rel, 1e-3) << p.name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
  }
}

TEST(Project, IdentityWeightNormalizesFeatures) {
  ProjectionHead h{Parameter("student_proj.weight", Tensor::eye(3)), Owner::student};
  Tape t;
  const Tensor z = project(h, t.constant(Tensor::matrix({{3, 0, 4}, {0, 2, 0}}))).value();
  EXPECT_LT(max_abs_diff(z, Tensor::matrix({{0.6, 0, 0.8}, {0, 1, 0}})), 1e-15);
}

TEST(Project, ScaleInvariantAndUnitNorm) {
  ProjectionHead h = init_projection_head(7, 5, Owner::teacher, 11);
  EXPECT_EQ(h.weight.name, "teacher_proj.weight");
  Rng rng(12);
  const Tensor f = random_tensor(rng, {6, 7});
  Tensor f5 = f;
  for (double& v : f5.data()) v *= 5.0;
  Tape t;
  const Tensor a = project(h, t.constant(f)).value();
  EXPECT_LT(max_abs_diff(a, project_frozen(h, t.constant(f5)).value()), 1e-14);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += a.at(i, j) * a.at(i, j);
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
  }
}

TEST(Project, ZeroRowIsDegenerateAndWidthChecked) {
  ProjectionHead h = init_projection_head(3, 2, Owner::student, 0);
  Tape t;
  EXPECT_THROW(project(h, t.constant(Tensor({2, 3}))), DegenerateInputError);
  EXPECT_THROW(project(h, t.constant(Tensor({2, 4}, 1.0))), DimensionError);
}

TEST(InitWeights, ReproduciblePerSeed) {
  const ModelSpec spec = small_convnet();
  const Model a = init_weights(spec, 42), b = init_weights(spec, 42), c = init_weights(spec, 43);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    if (!a.params()[i].name.ends_with(".bias")) differs |= !(a.params()[i].value == c.params()[i].value);
  }
  EXPECT_TRUE(differs);
}

// Kaiming-uniform with bound sqrt(6 / fan_in) has standard deviation sqrt(2 / fan_in).
TEST(InitWeights, EmpiricalStdMatchesKaiming) {
  const Model m = init_weights(ModelSpec{Family::mlp, {256}, 2, 1, 1, 256}, 5);
  const Tensor& w = m.params()[0].value;
  ASSERT_EQ(w.shape(), (Shape{256, 256}));
  double s = 0.0, sq = 0.0;
  for (double v : w.data()) {
    s += v;
    sq += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double stddev = std::sqrt(sq / n - (s / n) * (s / n));
  const double expected = std::sqrt(2.0 / 256.0);
  EXPECT_LT(std::abs(stddev - expected) / expected, 0.2);
}

TEST(Recipes, StudentsHaveFewerParameters) {
  for (const Recipe& r : {convnet_recipe(3, 32, 32, 10), convnet_recipe(3, 32, 32, 100), mlp_recipe(32, 10), mlp_recipe(784, 10)}) {
    EXPECT_LT(Model(r.student).parameter_count(), Model(r.teacher).parameter_count());
  }
  const Recipe r = convnet_recipe(3, 32, 32, 10);
  EXPECT_EQ(r.teacher.widths, (std::vector<std::size_t>{32, 64, 128}));
  EXPECT_EQ(r.student.widths, (std::vector<std::size_t>{16, 32, 64}));
}

TEST(Model, NamedParameters) {
  Model m(small_mlp());
  EXPECT_EQ(m.param("layer0.weight").value.shape(), (Shape{4, 6}));
  EXPECT_EQ(m.param("fc.bias").value.shape(), (Shape{3}));
  EXPECT_THROW(m.param("nope"), ConfigError);
  EXPECT_EQ(m.parameter_count(), 4u * 6 + 6 + 6 * 5 + 5 + 5 * 3 + 3);
}

}  // namespace
}  // namespace dcd
