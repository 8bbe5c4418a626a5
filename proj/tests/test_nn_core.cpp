#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "flsim/cost.hpp"
#include "flsim/losses.hpp"
#include "flsim/network.hpp"
#include "flsim/optimizer.hpp"

using namespace flsim;

namespace {

// Central finite differences over the flattened parameter vector.
std::vector<double> fd_gradient(const ModelState& model, const DenseArray& batch,
                                const std::vector<int>& labels, const LossSpec& spec,
                                double h = 1e-5) {
  std::vector<double> flat = model.flatten();
  std::vector<double> grad(flat.size(), 0.0);
  ModelState probe = model;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + h;
    probe.unflatten(flat);
    const double up = backward(probe, batch, labels, spec).loss;
    flat[i] = keep - h;
    probe.unflatten(flat);
    const double down = backward(probe, batch, labels, spec).loss;
    flat[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  probe.unflatten(flat);
  return grad;
}

bool grad_close(const std::vector<double>& analytic, const std::vector<double>& numeric,
                double tol = 1e-4) {
  REQUIRE(analytic.size() == numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-3});
    if (std::fabs(analytic[i] - numeric[i]) > tol * denom) return false;
  }
  return true;
}

DenseArray random_batch(std::size_t n, std::size_t channels, std::size_t window, RandomEngine& rng) {
  DenseArray batch({n, channels, window});
  for (auto& v : batch.raw()) v = rng.normal();
  return batch;
}

ArchSpec tiny_arch(std::size_t channels, std::size_t window) {
  ArchOptions opts;
  opts.conv_channels = {3};
  opts.kernel = 3;
  opts.pool = 2;
  opts.d_enc = 6;
  opts.d_proj = 4;
  return default_arch(channels, window, 3, opts);
}

}  // namespace

TEST_CASE("dense array invariants") {
  DenseArray a({2, 3});
  CHECK(a.size() == 6);
  CHECK_THROWS_AS(DenseArray({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  DenseArray bad({2}, {1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(bad.require_finite("test"), NumericError);
}

TEST_CASE("arch validation chains layer dims") {
  ArchSpec arch = tiny_arch(2, 12);
  CHECK_NOTHROW(arch.validate(2, 12));
  CHECK_THROWS_AS(arch.validate(3, 12), DimensionError);  // channel mismatch
  ArchSpec broken = arch;
  broken.encoder_output_dim += 1;
  CHECK_THROWS_AS(broken.validate(2, 12), DimensionError);
  ArchSpec short_window = arch;
  CHECK_THROWS_AS(short_window.validate(2, 2), DimensionError);  // shorter than kernel
}

TEST_CASE("flatten round-trip is identity") {
  RandomEngine rng(11);
  ArchSpec arch = tiny_arch(2, 12);
  ModelState model = init_model(arch, rng);
  model.version_tag = 5;
  const std::vector<double> flat = model.flatten();
  ModelState copy = zeros_model(arch);
  copy.unflatten(flat);
  CHECK(copy.flatten() == flat);
  // and perturbed vectors survive the cycle bit-for-bit
  std::vector<double> jittered = flat;
  for (std::size_t i = 0; i < jittered.size(); i += 7) jittered[i] += 0.125;
  copy.unflatten(jittered);
  CHECK(copy.flatten() == jittered);
}

TEST_CASE("zero batch through zero model") {
  ArchSpec arch = tiny_arch(2, 12);
  ModelState model = zeros_model(arch);
  DenseArray batch({2, 2, 12});
  const ForwardResult out = forward(model, batch);
  for (double v : out.logits.raw()) CHECK(v == 0.0);
  // zero projection rows normalize to zero, not NaN
  for (double v : out.projections.raw()) CHECK(v == 0.0);
}

TEST_CASE("identity dense arch reproduces its input") {
  // Single Flatten+Dense trunk with identity weights: logits == input.
  ArchSpec arch;
  arch.layers = {FlattenSpec{}, DenseSpec{4, 4}};
  arch.encoder_output_dim = 4;
  arch.projection_dim = 2;
  arch.num_classes = 4;
  ModelState model = zeros_model(arch);
  auto& dense = model.params.encoder[1];
  for (std::size_t i = 0; i < 4; ++i) dense.weight.at2(i, i) = 1.0;
  for (std::size_t i = 0; i < 4; ++i) model.params.classifier.weight.at2(i, i) = 1.0;

  DenseArray batch({1, 4, 1}, {0.5, -1.25, 2.0, 3.5});
  const ForwardResult out = forward(model, batch);
  CHECK(out.logits.at2(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.logits.at2(0, 1) == doctest::Approx(-1.25).epsilon(1e-12));
  CHECK(out.logits.at2(0, 2) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.logits.at2(0, 3) == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("seed-42 conv net matches straight-line oracle") {
  // Conv1D(2->3,k3,s1) -> ReLU -> MaxPool1D(2) -> Flatten -> Dense(->5),
  // classifier on top; oracle below is written as plain nested loops.
  ArchSpec arch;
  arch.layers = {Conv1DSpec{2, 3, 3, 1}, ReluSpec{}, MaxPool1DSpec{2}, FlattenSpec{},
                 DenseSpec{3 * 5, 5}};
  arch.encoder_output_dim = 5;
  arch.projection_dim = 3;
  arch.num_classes = 4;
  RandomEngine rng(42);
  ModelState model = init_model(arch, rng);
  DenseArray batch = random_batch(2, 2, 12, rng);

  const ForwardResult out = forward(model, batch);

  const auto& conv_w = model.params.encoder[0].weight;
  const auto& conv_b = model.params.encoder[0].bias;
  const auto& fc_w = model.params.encoder[4].weight;
  const auto& fc_b = model.params.encoder[4].bias;
  const auto& clf_w = model.params.classifier.weight;
  const auto& clf_b = model.params.classifier.bias;

  for (std::size_t b = 0; b < 2; ++b) {
    double conv[3][10];
    for (int o = 0; o < 3; ++o) {
      for (int t = 0; t < 10; ++t) {
        double acc = conv_b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 2; ++c) {
          for (int k = 0; k < 3; ++k) {
            acc += conv_w.at3(static_cast<std::size_t>(o), static_cast<std::size_t>(c),
                              static_cast<std::size_t>(k)) *
                   batch.at3(b, static_cast<std::size_t>(c), static_cast<std::size_t>(t + k));
          }
        }
        conv[o][t] = acc > 0.0 ? acc : 0.0;  // fused ReLU
      }
    }
    double pooled[3][5];
    for (int o = 0; o < 3; ++o) {
      for (int t = 0; t < 5; ++t) {
        pooled[o][t] = std::max(conv[o][2 * t], conv[o][2 * t + 1]);
      }
    }
    double flat[15];
    for (int o = 0; o < 3; ++o) {
      for (int t = 0; t < 5; ++t) flat[o * 5 + t] = pooled[o][t];
    }
    double enc[5];
    for (int o = 0; o < 5; ++o) {
      double acc = fc_b[static_cast<std::size_t>(o)];
      for (int i = 0; i < 15; ++i) {
        acc += fc_w.at2(static_cast<std::size_t>(o), static_cast<std::size_t>(i)) * flat[i];
      }
      enc[o] = acc;
    }
    for (int j = 0; j < 4; ++j) {
      double acc = clf_b[static_cast<std::size_t>(j)];
      for (int i = 0; i < 5; ++i) {
        acc += clf_w.at2(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) * enc[i];
      }
      CHECK(std::fabs(out.logits.at2(b, static_cast<std::size_t>(j)) - acc) < 1e-10);
    }
  }
}

TEST_CASE("single dense softmax-CE gradient matches closed form") {
  // One Dense layer straight into CE; for softmax-CE the logit gradient is
  // (p - onehot)/B, so dW = (p - y) x^T and db = (p - y).
  ArchSpec arch;
  arch.layers = {FlattenSpec{}, DenseSpec{3, 3}};
  arch.encoder_output_dim = 3;
  arch.projection_dim = 2;
  arch.num_classes = 2;
  RandomEngine rng(7);
  ModelState model = init_model(arch, rng);

  DenseArray batch({1, 3, 1}, {0.3, -0.7, 1.1});
  const std::vector<int> labels = {1};
  LossSpec spec;
  spec.ce_weight = 1.0;

  const BackwardResult out = backward(model, batch, labels, spec);
  const ForwardResult fwd = forward(model, batch);
  const DenseArray probs = softmax_rows(fwd.logits);

  const auto& clf_grad = out.grad.params.classifier;
  for (std::size_t j = 0; j < 2; ++j) {
    const double delta = probs.at2(0, j) - (j == 1 ? 1.0 : 0.0);
    CHECK(clf_grad.bias[j] == doctest::Approx(delta).epsilon(1e-10));
    // x passes through identityless Dense trunk first; use its output
    const double x0 = fwd.embeddings.at2(0, 0);
    CHECK(clf_grad.weight.at2(j, 0) == doctest::Approx(delta * x0).epsilon(1e-10));
  }
}

TEST_CASE("all-zero loss weights give a zero gradient") {
  RandomEngine rng(3);
  ArchSpec arch = tiny_arch(2, 12);
  ModelState model = init_model(arch, rng);
  DenseArray batch = random_batch(2, 2, 12, rng);
  LossSpec spec;
  spec.ce_weight = 0.0;
  const BackwardResult out = backward(model, batch, {0, 1}, spec);
  CHECK(out.loss == 0.0);
  for (double v : out.grad.flatten()) CHECK(v == 0.0);
}

TEST_CASE("gradients match finite differences across layer types and losses") {
  RandomEngine rng(12345);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t channels = 1 + trial % 3;
    const std::size_t window = 10 + 2 * (trial % 4);
    ArchSpec arch;
    const std::size_t conv_out = 2 + trial % 2;
    const std::size_t stride = 1 + trial % 2;
    const std::size_t kernel = 3;
    arch.layers.push_back(Conv1DSpec{channels, conv_out, kernel, stride});
    arch.layers.push_back(ReluSpec{});
    arch.layers.push_back(MaxPool1DSpec{2});
    arch.layers.push_back(FlattenSpec{});
    LayerShape shape;
    shape.channels = channels;
    shape.length = window;
    for (const auto& l : arch.layers) shape = propagate_shape(l, shape);
    arch.layers.push_back(DenseSpec{shape.features, 5});
    arch.encoder_output_dim = 5;
    arch.projection_dim = 4;
    arch.num_classes = 3;

    ModelState model = init_model(arch, rng);
    ModelState anchor = init_model(arch, rng);
    const std::size_t n = 2 + trial % 2;
    DenseArray batch = random_batch(2 * n, channels, window, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 2 * n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(3)));

    DenseArray primary({n, channels, window});
    std::copy(batch.data(), batch.data() + primary.size(), primary.data());
    const DenseArray teacher = forward(anchor, primary).logits;
    const DenseArray global_emb = forward(anchor, primary).embeddings;
    DenseArray prev_emb = global_emb;
    for (auto& v : prev_emb.raw()) v += 0.3;

    std::vector<LossSpec> specs(5);
    specs[0].ce_weight = 1.0;
    specs[1] = LossSpec{};
    specs[1].ce_weight = 0.0;
    specs[1].supcon_weight = 1.0;
    specs[1].tau_sc = 0.2;
    specs[2] = LossSpec{};
    specs[2].ce_weight = 0.0;
    specs[2].kd_weight = 1.0;
    specs[2].teacher_logits = &teacher;
    specs[2].primary_rows = n;
    specs[3] = LossSpec{};
    specs[3].ce_weight = 1.0;
    specs[3].prox_mu = 0.5;
    specs[3].prox_reference = &anchor;
    specs[4] = LossSpec{};
    specs[4].ce_weight = 0.0;
    specs[4].moon_weight = 1.0;
    specs[4].tau_moon = 0.5;
    specs[4].moon_global_emb = &global_emb;
    specs[4].moon_prev_emb = &prev_emb;
    specs[4].primary_rows = n;

    for (const auto& spec : specs) {
      const BackwardResult out = backward(model, batch, labels, spec);
      const std::vector<double> numeric = fd_gradient(model, batch, labels, spec);
      CHECK(grad_close(out.grad.flatten(), numeric));
      ++checked;
    }
  }
  CHECK(checked == 50);
}

TEST_CASE("sgd step arithmetic") {
  ArchSpec arch;
  arch.layers = {FlattenSpec{}, DenseSpec{1, 1}};
  arch.encoder_output_dim = 1;
  arch.projection_dim = 1;
  arch.num_classes = 2;
  ModelState model = zeros_model(arch);
  model.version_tag = 9;
  model.params.encoder[1].weight[0] = 1.0;
  Gradient grad;
  grad.params = make_param_set(arch);

  SUBCASE("zero gradient, zero decay: unchanged") {
    OptimizerConfig cfg{0.1, 0.0, 1};
    const ModelState next = sgd_step(model, grad, cfg);
    CHECK(next.flatten() == model.flatten());
    CHECK(next.version_tag == 9);
  }
  SUBCASE("w=1, g=0.5, lr=0.1 -> 0.95") {
    grad.params.encoder[1].weight[0] = 0.5;
    OptimizerConfig cfg{0.1, 0.0, 1};
    const ModelState next = sgd_step(model, grad, cfg);
    CHECK(next.params.encoder[1].weight[0] == doctest::Approx(0.95).epsilon(1e-15));
  }
  SUBCASE("w=1, g=0, wd=0.001, lr=0.1 -> 0.9999") {
    OptimizerConfig cfg{0.1, 0.001, 1};
    const ModelState next = sgd_step(model, grad, cfg);
    CHECK(next.params.encoder[1].weight[0] == doctest::Approx(0.9999).epsilon(1e-15));
  }
}

TEST_CASE("forward is deterministic for identical inputs") {
  RandomEngine rng_a(99), rng_b(99);
  ArchSpec arch = tiny_arch(2, 12);
  ModelState a = init_model(arch, rng_a);
  ModelState b = init_model(arch, rng_b);
  CHECK(a.flatten() == b.flatten());
  DenseArray batch = random_batch(3, 2, 12, rng_a);
  DenseArray batch_b = batch;
  const ForwardResult ra = forward(a, batch);
  const ForwardResult rb = forward(b, batch_b);
  CHECK(ra.logits.raw() == rb.logits.raw());

  LossSpec spec;
  spec.ce_weight = 1.0;
  const double la = backward(a, batch, {0, 1, 2}, spec).loss;
  const double lb = backward(b, batch_b, {0, 1, 2}, spec).loss;
  CHECK(la == lb);
}

TEST_CASE("non-finite input is rejected") {
  ArchSpec arch = tiny_arch(2, 12);
  ModelState model = zeros_model(arch);
  DenseArray batch({1, 2, 12});
  batch[5] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward(model, batch), NumericError);
  DenseArray wrong({1, 3, 12});
  CHECK_THROWS_AS(forward(model, wrong), DimensionError);
}
