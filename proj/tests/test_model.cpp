// Encoder building blocks and the full manual backward pass: embedding,
// layer norm, attention blocks, heads, parameter accounting, and the
// finite-difference gradient verification.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "maskspec/gradcheck.hpp"
#include "maskspec/model.hpp"

using namespace maskspec;

namespace {

model::ModelConfig tiny_cfg() { return model::gradcheck_tiny_model(); }

MatD random_patches(const model::ModelConfig& mc, uint64_t seed) {
  Rng rng(seed);
  MatD p(mc.n_max * mc.r_s, mc.patch_dim);
  for (int i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("config validation catches inconsistent dimensions") {
  model::ModelConfig mc = tiny_cfg();
  mc.validate();
  mc.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_cfg();
  mc.dropout_rate = 1.0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_cfg();
  mc.k_s = 0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("initialization is deterministic and seed-sensitive") {
  auto mc = tiny_cfg();
  auto a = model::init_model_state<float>(mc, 5);
  auto b = model::init_model_state<float>(mc, 5);
  auto c = model::init_model_state<float>(mc, 6);
  CHECK(model::state_hash(a) == model::state_hash(b));
  CHECK(model::state_hash(a) != model::state_hash(c));
}

TEST_CASE("init: weights ~ N(0, 0.02), gains one, biases zero") {
  model::ModelConfig mc = tiny_cfg();
  mc.d_model = 64;
  mc.n_heads = 4;  // more elements for stable statistics
  auto s = model::init_model_state<double>(mc, 11);
  for (auto& ref : model::collect_tensor_refs(s)) {
    if (ref.name.find(".norm") != std::string::npos && ref.name.ends_with(".g")) {
      for (Eigen::Index i = 0; i < ref.size(); ++i) CHECK(ref.data[i] == 1.0);
    } else if (ref.name.ends_with(".b")) {
      for (Eigen::Index i = 0; i < ref.size(); ++i) CHECK(ref.data[i] == 0.0);
    }
  }
  // Pooled standard deviation of one large weight matrix.
  double sq = 0.0;
  for (int i = 0; i < s.layers[0].wq.size(); ++i) sq += s.layers[0].wq.data()[i] * s.layers[0].wq.data()[i];
  const double std_est = std::sqrt(sq / s.layers[0].wq.size());
  CHECK(std_est == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("init: positional table factors into segment plus band codes") {
  model::ModelConfig mc = tiny_cfg();
  mc.d_model = 16;
  mc.n_heads = 2;
  auto s = model::init_model_state<double>(mc, 17);
  // row(n, r) = seg[n] + band[r]: the difference between two segments at a
  // fixed band block must not depend on which band block is used, and the
  // difference between two band blocks must not depend on the segment.
  for (int n = 1; n < mc.n_max; ++n) {
    const auto ref0 = (s.pos_table.row(n * mc.r_s) - s.pos_table.row(0)).eval();
    for (int r = 1; r < mc.r_s; ++r) {
      const auto d = (s.pos_table.row(n * mc.r_s + r) - s.pos_table.row(r)).eval();
      CHECK((d - ref0).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  for (int r = 1; r < mc.r_s; ++r) {
    const auto ref0 = (s.pos_table.row(r) - s.pos_table.row(0)).eval();
    for (int n = 1; n < mc.n_max; ++n) {
      const auto d =
          (s.pos_table.row(n * mc.r_s + r) - s.pos_table.row(n * mc.r_s)).eval();
      CHECK((d - ref0).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("parameter count equals the sum of tensor sizes") {
  for (auto mc : {tiny_cfg(), model::ModelConfig{}}) {
    auto s = model::zeros_like_state<float>(mc);
    long long total = 0;
    for (auto& ref : model::collect_tensor_refs(s)) total += ref.size();
    CHECK(total == model::parameter_count(mc));
  }
}

TEST_CASE("full-scale encoder lands within 5% of 89M parameters") {
  model::ModelConfig mc;  // defaults are the full-scale geometry
  auto b = model::parameter_breakdown(mc);
  // The quoted figure counts transformer blocks only, not embeddings/heads.
  CHECK(std::abs(static_cast<double>(b.encoder) - 89e6) / 89e6 < 0.05);
  CHECK(b.total == b.embedding + b.positional + b.encoder + b.heads);
}

TEST_CASE("gelu matches the error-function form") {
  auto phi = [](double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
  CHECK(model::gelu(0.0) == 0.0);
  for (double x : {-3.0, -1.0, -0.1, 0.3, 1.0, 2.5}) {
    CHECK(model::gelu(x) == doctest::Approx(x * phi(x)).epsilon(1e-14));
    // Derivative against central differences.
    const double h = 1e-6;
    const double fd = (model::gelu(x + h) - model::gelu(x - h)) / (2 * h);
    CHECK(model::gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-8));
  }
  CHECK(model::gelu_derivative(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  // Fixed point: Phi(1) = 0.8413447460685429.
  CHECK(model::gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("layer norm normalizes each row against a naive oracle") {
  Rng rng(7);
  MatD x(5, 8);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = 3.0 * rng.normal() + 1.0;
  VecD gain(8), bias(8);
  for (int i = 0; i < 8; ++i) {
    gain[i] = 0.5 + 0.1 * i;
    bias[i] = -0.3 + 0.05 * i;
  }
  MatD out;
  VecD mu, istd;
  model::detail::layernorm_forward(x, gain, bias, out, mu, istd);
  for (int r = 0; r < 5; ++r) {
    const double mean = x.row(r).mean();
    double var = 0.0;
    for (int c = 0; c < 8; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= 8.0;  // population variance
    for (int c = 0; c < 8; ++c) {
      const double xhat = (x(r, c) - mean) / std::sqrt(var + model::detail::kLayerNormEps);
      CHECK(out(r, c) == doctest::Approx(gain[c] * xhat + bias[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("layer norm backward matches finite differences") {
  Rng rng(19);
  MatD x(3, 6);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  VecD gain(6), bias(6);
  for (int i = 0; i < 6; ++i) {
    gain[i] = 1.0 + 0.2 * rng.normal();
    bias[i] = 0.1 * rng.normal();
  }
  MatD dy(3, 6);
  for (int i = 0; i < dy.size(); ++i) dy.data()[i] = rng.normal();

  MatD out;
  VecD mu, istd;
  model::detail::layernorm_forward(x, gain, bias, out, mu, istd);
  VecD dgain = VecD::Zero(6), dbias = VecD::Zero(6);
  MatD dx = model::detail::layernorm_backward(dy, x, mu, istd, gain, dgain, dbias);

  auto scalar_loss = [&](const MatD& xx, const VecD& g, const VecD& b) {
    MatD o;
    VecD m, is;
    model::detail::layernorm_forward(xx, g, b, o, m, is);
    return (o.array() * dy.array()).sum();
  };
  const double h = 1e-6;
  for (int i = 0; i < x.size(); ++i) {
    MatD xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (scalar_loss(xp, gain, bias) - scalar_loss(xm, gain, bias)) / (2 * h);
    CHECK(dx.data()[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  for (int i = 0; i < 6; ++i) {
    VecD gp = gain, gm = gain;
    gp[i] += h;
    gm[i] -= h;
    CHECK(dgain[i] ==
          doctest::Approx((scalar_loss(x, gp, bias) - scalar_loss(x, gm, bias)) / (2 * h))
              .epsilon(1e-6));
    VecD bp = bias, bm = bias;
    bp[i] += h;
    bm[i] -= h;
    CHECK(dbias[i] ==
          doctest::Approx((scalar_loss(x, gain, bp) - scalar_loss(x, gain, bm)) / (2 * h))
              .epsilon(1e-6));
  }
}

TEST_CASE("embedding substitutes the mask token before adding positions") {
  auto mc = tiny_cfg();
  auto s = model::init_model_state<double>(mc, 23);
  MatD patches = random_patches(mc, 31);
  std::vector<int> masked = {1, 3};
  MatD tokens = model::embed(mc, s, patches, masked);
  REQUIRE(tokens.rows() == patches.rows());
  REQUIRE(tokens.cols() == mc.d_model);
  for (int g = 0; g < tokens.rows(); ++g) {
    VecD expect;
    if (g == 1 || g == 3) {
      expect = s.mask_token + s.pos_table.row(g).transpose();
    } else {
      expect = s.patch_proj_w * patches.row(g).transpose() + s.patch_proj_b +
               s.pos_table.row(g).transpose();
    }
    for (int d = 0; d < mc.d_model; ++d)
      CHECK(tokens(g, d) == doctest::Approx(expect[d]).epsilon(1e-12));
  }
  // Oversized inputs and wrong patch dims are rejected.
  MatD wide(patches.rows(), mc.patch_dim + 1);
  wide.setZero();
  CHECK_THROWS_AS(model::embed(mc, s, wide, masked), GeometryError);
}

TEST_CASE("encode emits per-layer tokens and segment-mean pooling") {
  auto mc = tiny_cfg();
  auto s = model::init_model_state<double>(mc, 3);
  MatD tokens = random_patches(mc, 41).leftCols(mc.d_model).eval();
  // tokens must be G x d_model; reuse random matrix of the right shape
  REQUIRE(tokens.cols() == mc.d_model);
  auto out = model::encode(mc, s, tokens);
  REQUIRE(out.per_layer_tokens.size() == 1);
  CHECK(out.per_layer_tokens[0].rows() == tokens.rows());
  CHECK(out.final_tokens == out.per_layer_tokens.back());
  REQUIRE(out.pooled.rows() == mc.n_max);
  for (int n = 0; n < mc.n_max; ++n) {
    VecD mean = VecD::Zero(mc.d_model);
    for (int k = 0; k < mc.r_s; ++k) mean += out.final_tokens.row(n * mc.r_s + k).transpose();
    mean /= mc.r_s;
    for (int d = 0; d < mc.d_model; ++d)
      CHECK(out.pooled(n, d) == doctest::Approx(mean[d]).epsilon(1e-12));
  }
}

TEST_CASE("a zero-layer encoder passes tokens through") {
  auto mc = tiny_cfg();
  mc.n_layers = 0;
  auto s = model::init_model_state<double>(mc, 3);
  MatD tokens = random_patches(mc, 43).leftCols(mc.d_model).eval();
  auto out = model::encode(mc, s, tokens);
  CHECK(out.per_layer_tokens.empty());
  CHECK(out.final_tokens == tokens);
}

TEST_CASE("non-finite activations raise a numeric error") {
  auto mc = tiny_cfg();
  auto s = model::init_model_state<double>(mc, 3);
  MatD tokens = random_patches(mc, 47).leftCols(mc.d_model).eval();
  tokens(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model::encode(mc, s, tokens), NumericError);
}

TEST_CASE("head forward is a two-layer MLP with smooth-gated activation") {
  auto mc = tiny_cfg();
  auto s = model::init_model_state<double>(mc, 29);
  MatD input = random_patches(mc, 53).leftCols(mc.d_model).eval();
  MatD logits = model::head_forward(s.spectral_head, input);
  REQUIRE(logits.rows() == input.rows());
  REQUIRE(logits.cols() == mc.k_s);
  // Oracle for one row.
  VecD h1 = s.spectral_head.fc1_w * input.row(0).transpose() + s.spectral_head.fc1_b;
  for (int i = 0; i < h1.size(); ++i) h1[i] = model::gelu(h1[i]);
  VecD expect = s.spectral_head.fc2_w * h1 + s.spectral_head.fc2_b;
  for (int c = 0; c < mc.k_s; ++c)
    CHECK(logits(0, c) == doctest::Approx(expect[c]).epsilon(1e-12));
}

TEST_CASE("state hash reacts to any single element") {
  auto mc = tiny_cfg();
  auto s = model::init_model_state<float>(mc, 2);
  const uint64_t h0 = model::state_hash(s);
  s.layers[0].fc1_w(0, 0) += 1e-6f;
  CHECK(model::state_hash(s) != h0);
}

TEST_CASE("dropout masks are deterministic per stream and scale by 1/keep") {
  Rng r1 = Rng::derive(9, "dropout", 0, 0);
  Rng r2 = Rng::derive(9, "dropout", 0, 0);
  MatD m1 = model::detail::dropout_mask<double>(10, 10, 0.4, r1);
  MatD m2 = model::detail::dropout_mask<double>(10, 10, 0.4, r2);
  CHECK(m1 == m2);
  int zeros = 0;
  for (int i = 0; i < m1.size(); ++i) {
    const double v = m1.data()[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6).epsilon(1e-12)));
    if (v == 0.0) zeros++;
  }
  CHECK(zeros > 10);
  CHECK(zeros < 90);
}

TEST_CASE("joint-objective gradients match finite differences under 1e-4") {
  auto report = model::run_gradcheck(model::gradcheck_tiny_model(), model::gradcheck_tiny_grid(),
                                     12345, 0.75, /*joint=*/true);
  CHECK(report.n_checked > 0);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("spectral-only gradients match finite differences under 1e-4") {
  auto report = model::run_gradcheck(model::gradcheck_tiny_model(), model::gradcheck_tiny_grid(),
                                     777, 0.75, /*joint=*/false);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("clip_loss without temporal head reports spectral-only totals") {
  auto mc = tiny_cfg();
  auto gc = model::gradcheck_tiny_grid();
  auto s = model::init_model_state<double>(mc, 71);
  MatD patches = random_patches(mc, 73);
  MatF patches_f = patches.cast<float>();

  masking::MaskPlan plan;
  plan.mode = masking::MaskMode::kPatch;
  plan.masked = {0, 2};
  plan.n_total = mc.n_max * mc.r_s;
  quant::TargetSet targets;
  targets.spectral = MatI::Zero(mc.n_max, mc.r_s);
  targets.temporal = MatI::Zero(mc.n_max, mc.r_t);

  model::ClipExample<double> ex{patches, plan, targets};
  auto breakdown = model::clip_loss(mc, s, gc, ex, 0.75, /*temporal_enabled=*/false,
                                    static_cast<model::ModelState<double>*>(nullptr));
  CHECK(breakdown.temporal == 0.0);
  CHECK(breakdown.total == breakdown.spectral);
  CHECK(breakdown.spectral > 0.0);
}
