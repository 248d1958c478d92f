#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cissl/errors.hpp"
#include "cissl/gradcheck.hpp"
#include "cissl/model.hpp"
#include "cissl/ops.hpp"
#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"
#include "test_support.hpp"

using namespace cissl;

TEST_CASE("tensor basics") {
  const auto a = Tensor2D::from_rows({{1, 2, 3}, {4, 5, 6}});
  const auto b = Tensor2D::from_rows({{1, 0}, {0, 1}, {1, 1}});
  CHECK(matmul(a, b) == Tensor2D::from_rows({{4, 5}, {10, 11}}));
  CHECK(transpose(a) == Tensor2D::from_rows({{1, 4}, {2, 5}, {3, 6}}));

  Tensor2D acc(3, 2, 1.0);
  matmul_at_b_accumulate(a, Tensor2D::from_rows({{1, 0}, {0, 1}}), acc);
  CHECK(acc == Tensor2D::from_rows({{2, 5}, {3, 6}, {4, 7}}));

  CHECK(vstack(a, Tensor2D()) == a);
  CHECK(vstack(a, a).rows() == 4);
  CHECK(a.gather_rows(std::vector<std::size_t>{1, 1, 0}) ==
        Tensor2D::from_rows({{4, 5, 6}, {4, 5, 6}, {1, 2, 3}}));
  CHECK_THROWS(matmul(a, a));
}

TEST_CASE("rng streams are reproducible and splits are independent of parent draws") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng p(7);
  const Rng s1 = p.split(3);
  p.next_u64();
  CHECK(p.split(3) != s1);  // split depends on the parent's current state
  CHECK(Rng(7).split(3) == s1);
  CHECK(Rng(7).split(3) != Rng(7).split(4));

  // splitmix64 reference values for seed 0 (published test vector).
  Rng z(0);
  CHECK(z.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(z.next_u64() == 0x6E789E6AA1B965F4ULL);

  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    REQUIRE(u.below(7) < 7);
  }
}

TEST_CASE("softmax") {
  const auto half = softmax(std::vector<double>{0.0, 0.0});
  CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));

  const auto two_thirds = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(std::abs(two_thirds[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(two_thirds[1] - 1.0 / 3.0) < 1e-15);

  const auto big = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] >= 0.0);
  CHECK(big[1] < 1e-300);

  CHECK_THROWS_AS(softmax(std::vector<double>{NAN, 0.0}), NumericError);
  CHECK_THROWS_AS(softmax(std::vector<double>{INFINITY, 0.0}), NumericError);
}

TEST_CASE("softmax rows sum to one, including magnitude 1e3 entries") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> logits(2 + rng.below(9));
    const double scale = trial % 2 == 0 ? 1.0 : 1e3;
    for (auto& v : logits) v = rng.uniform(-scale, scale);
    const auto p = softmax(logits);
    double sum = 0.0;
    for (double x : p) {
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      sum += x;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(std::vector<double>{1.0, 0.0}, 0) == 0.0);
  CHECK(cross_entropy(std::vector<double>{0.5, 0.5}, 1) == doctest::Approx(std::numbers::ln2));
  CHECK(cross_entropy(std::vector<double>{2.0 / 3.0, 1.0 / 3.0}, 1) == doctest::Approx(std::log(3.0)));

  const auto hits = cross_entropy_floor_hits();
  CHECK(cross_entropy(std::vector<double>{1.0, 0.0}, 1) == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK(cross_entropy_floor_hits() == hits + 1);

  // Soft target equal to a one-hot reduces to the hard form.
  CHECK(cross_entropy(std::vector<double>{0.25, 0.75}, std::vector<double>{0.0, 1.0}) ==
        doctest::Approx(-std::log(0.75)));
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(std::vector<double>{3, 4}, std::vector<double>{3, 4}) == doctest::Approx(1.0));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 2}) == 0.0);
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}) ==
        doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}));
  // Clamped even when rounding pushes the raw ratio past 1.
  const std::vector<double> v{0.1, 0.2, 0.3};
  CHECK(cosine_similarity(v, v) <= 1.0);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(std::vector<double>{0.1, 0.9}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
}

TEST_CASE("forward with zero parameters gives uniform heads") {
  Rng rng(1);
  ModelShape shape;
  shape.input_dim = 5;
  shape.hidden = {4};
  shape.repr_dim = 3;
  shape.num_classes = 4;
  CisslModel model(shape, rng);
  for (auto& p : model.parameters()) p.param->value.fill(0.0);
  const auto pass = forward(model, test_support::random_matrix(3, 5, rng));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(pass.backbone_probs(i, c) == doctest::Approx(0.25));
  }
}

TEST_CASE("identity extractor and identity projector reproduce the input") {
  Rng rng(2);
  ModelShape shape;
  shape.input_dim = 4;
  shape.hidden = {};
  shape.repr_dim = 4;
  shape.num_classes = 3;
  shape.projection = ProjectionMode::identity;
  CisslModel model(shape, rng);
  model.extractor()[0].weight.value = Tensor2D::identity(4);
  // Non-negative input passes the rectifier unchanged.
  Tensor2D x(3, 4);
  for (auto& v : x.values()) v = rng.uniform(0.0, 2.0);
  const auto pass = forward(model, x);
  CHECK(pass.features == x);
  CHECK_FALSE(model.projector().has_value());
}

TEST_CASE("forward matches hand-written matrix products for seed 1337") {
  Rng rng(1337);
  ModelShape shape;
  shape.input_dim = 3;
  shape.hidden = {5};
  shape.repr_dim = 4;
  shape.num_classes = 3;
  shape.proj_dim = 2;
  CisslModel model(shape, rng);
  for (auto& p : model.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (auto& v : p.param->value.values()) v = rng.uniform(-0.5, 0.5);
    }
  }
  const Tensor2D x = test_support::random_matrix(2, 3, rng);
  const auto pass = forward(model, x);

  auto affine = [](const Affine& l, const std::vector<double>& in) {
    std::vector<double> out(l.out_dim());
    for (std::size_t j = 0; j < l.out_dim(); ++j) {
      double s = l.bias.value(0, j);
      for (std::size_t i = 0; i < l.in_dim(); ++i) s += in[i] * l.weight.value(i, j);
      out[j] = s;
    }
    return out;
  };
  auto relu = [](std::vector<double> v) {
    for (auto& e : v) e = std::max(e, 0.0);
    return v;
  };
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> in(x.row(r).begin(), x.row(r).end());
    const auto h = relu(affine(model.extractor()[0], in));
    const auto rep = relu(affine(model.extractor()[1], h));
    const auto logits = affine(model.backbone_head(), rep);
    const auto aux = affine(model.aux_head(), rep);
    const auto f = affine(*model.projector(), rep);
    for (std::size_t j = 0; j < 4; ++j) CHECK(pass.repr(r, j) == doctest::Approx(rep[j]).epsilon(1e-14));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(pass.backbone_logits(r, j) == doctest::Approx(logits[j]).epsilon(1e-14));
      CHECK(pass.aux_logits(r, j) == doctest::Approx(aux[j]).epsilon(1e-14));
    }
    for (std::size_t j = 0; j < 2; ++j) CHECK(pass.features(r, j) == doctest::Approx(f[j]).epsilon(1e-14));
  }
}

TEST_CASE("forward is deterministic and rejects bad widths") {
  Rng rng(3);
  ModelShape shape;
  CisslModel model(shape, rng);
  const Tensor2D x = test_support::random_matrix(4, shape.input_dim, rng);
  const auto a = forward(model, x);
  const auto b = forward(model, x);
  CHECK(a.features == b.features);
  CHECK(a.aux_logits == b.aux_logits);
  CHECK_THROWS_AS(forward(model, Tensor2D(2, shape.input_dim + 1)), std::invalid_argument);
}

TEST_CASE("backward contracts") {
  Rng rng(4);
  ModelShape shape;
  shape.input_dim = 3;
  shape.hidden = {4};
  shape.repr_dim = 3;
  shape.num_classes = 2;
  shape.proj_dim = 2;
  CisslModel model(shape, rng);
  const Tensor2D x = test_support::random_matrix(5, 3, rng);

  SUBCASE("without a forward pass") {
    CHECK_THROWS_AS(backward(model, ForwardPass{}, HeadGrads{}), std::logic_error);
  }
  SUBCASE("zero upstream gradient leaves zero parameter gradients") {
    const auto pass = forward(model, x);
    HeadGrads g{Tensor2D(5, 2), Tensor2D(5, 2), Tensor2D(5, 2)};
    backward(model, pass, g);
    for (const auto& p : model.parameters()) {
      for (double v : p.param->grad.values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("single affine layer: sum of outputs gives column sums of the input") {
    ModelShape s1;
    s1.input_dim = 3;
    s1.hidden = {};
    s1.repr_dim = 2;
    s1.num_classes = 2;
    s1.projection = ProjectionMode::identity;
    CisslModel m1(s1, rng);
    Tensor2D pos(4, 3);
    for (auto& v : pos.values()) v = rng.uniform(0.1, 1.0);
    // Keep every pre-activation positive so the rectifier is the identity.
    m1.extractor()[0].bias.value.fill(10.0);
    const auto pass = forward(m1, pos, kProjection);
    backward(m1, pass, HeadGrads{{}, {}, Tensor2D(4, 2, 1.0)});
    for (std::size_t i = 0; i < 3; ++i) {
      double col = 0.0;
      for (std::size_t r = 0; r < 4; ++r) col += pos(r, i);
      for (std::size_t j = 0; j < 2; ++j) CHECK(m1.extractor()[0].weight.grad(i, j) == doctest::Approx(col));
    }
  }
  SUBCASE("repeated backward accumulates") {
    const auto pass = forward(model, x);
    HeadGrads g{test_support::random_matrix(5, 2, rng), {}, {}};
    backward(model, pass, g);
    const Tensor2D once = model.backbone_head().weight.grad;
    backward(model, pass, g);
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(model.backbone_head().weight.grad.values()[i] == doctest::Approx(2.0 * once.values()[i]));
    }
  }
  SUBCASE("frozen groups receive nothing") {
    model.set_frozen(ParamGroup::extractor, true);
    const auto pass = forward(model, x);
    backward(model, pass, HeadGrads{test_support::random_matrix(5, 2, rng), {}, {}});
    for (const auto& p : model.parameters()) {
      if (p.group != ParamGroup::extractor) continue;
      for (double v : p.param->grad.values()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("grad_check on a quadratic") {
  std::vector<double> theta{0.3, -1.2, 2.5, 0.0};
  std::vector<double> analytic(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) analytic[i] = 2.0 * theta[i];
  const auto before = theta;
  const auto res = grad_check(
      [&] {
        double s = 0.0;
        for (double t : theta) s += t * t;
        return s;
      },
      theta, analytic);
  CHECK(res.max_rel_error < 1e-9);
  CHECK(theta == before);  // restored bit-exactly
  CHECK(res.coordinates == 4);
}

TEST_CASE("grad_check of cross entropy after softmax on random logits") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(3 + rng.below(5));
    for (auto& v : logits) v = rng.normal(0.0, 2.0);
    const std::size_t target = rng.below(logits.size());
    const auto p = softmax(logits);
    std::vector<double> analytic(p);
    analytic[target] -= 1.0;
    const auto res = grad_check([&] { return cross_entropy(softmax(logits), target); }, logits, analytic);
    REQUIRE(res.max_rel_error < 1e-7);
  }
}

TEST_CASE("backward matches finite differences for every projection mode") {
  for (auto mode : {ProjectionMode::identity, ProjectionMode::linear, ProjectionMode::nonlinear}) {
    Rng rng(100 + static_cast<int>(mode));
    ModelShape shape;
    shape.input_dim = 4;
    shape.hidden = {6, 5};
    shape.repr_dim = 4;
    shape.num_classes = 3;
    shape.proj_dim = 3;
    shape.projection = mode;
    CisslModel model(shape, rng);
    test_support::randomize_biases(model, rng);
    const Tensor2D x = test_support::random_matrix(6, 4, rng);
    const HeadGrads w{test_support::random_matrix(6, 3, rng), test_support::random_matrix(6, 3, rng),
                      test_support::random_matrix(6, shape.feature_dim(), rng)};
    // L = <w_b, logits_b> + <w_a, logits_a> + <w_f, f>, whose upstream gradients are the weights.
    auto loss = [&] {
      const auto pass = forward(model, x);
      double s = 0.0;
      for (std::size_t i = 0; i < w.backbone_logits.size(); ++i) {
        s += w.backbone_logits.values()[i] * pass.backbone_logits.values()[i];
        s += w.aux_logits.values()[i] * pass.aux_logits.values()[i];
      }
      for (std::size_t i = 0; i < w.features.size(); ++i) s += w.features.values()[i] * pass.features.values()[i];
      return s;
    };
    model.zero_grad();
    backward(model, forward(model, x), w);
    const auto res = grad_check_model(model, loss);
    CHECK(res.worst.max_rel_error < 1e-7);
  }
}

TEST_CASE("backward is linear in the upstream gradient") {
  Rng rng(6);
  ModelShape shape;
  shape.input_dim = 4;
  shape.hidden = {5};
  shape.repr_dim = 3;
  shape.num_classes = 3;
  shape.proj_dim = 2;
  CisslModel model(shape, rng);
  const Tensor2D x = test_support::random_matrix(4, 4, rng);
  const auto pass = forward(model, x);
  const HeadGrads g1{test_support::random_matrix(4, 3, rng), test_support::random_matrix(4, 3, rng),
                     test_support::random_matrix(4, 2, rng)};
  const HeadGrads g2{test_support::random_matrix(4, 3, rng), test_support::random_matrix(4, 3, rng),
                     test_support::random_matrix(4, 2, rng)};
  const double a = 0.7, b = -1.3;
  auto combine = [&](const Tensor2D& p, const Tensor2D& q) {
    Tensor2D out = p;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a * p.values()[i] + b * q.values()[i];
    return out;
  };
  auto grads_of = [&](const HeadGrads& g) {
    model.zero_grad();
    backward(model, pass, g);
    std::vector<double> flat;
    for (const auto& p : model.parameters()) flat.insert(flat.end(), p.param->grad.values().begin(), p.param->grad.values().end());
    return flat;
  };
  const auto r1 = grads_of(g1);
  const auto r2 = grads_of(g2);
  const auto r12 = grads_of(HeadGrads{combine(g1.backbone_logits, g2.backbone_logits),
                                      combine(g1.aux_logits, g2.aux_logits), combine(g1.features, g2.features)});
  for (std::size_t i = 0; i < r12.size(); ++i) REQUIRE(std::abs(r12[i] - (a * r1[i] + b * r2[i])) < 1e-10);
}

TEST_CASE("sgd_step") {
  Rng rng(7);
  ModelShape shape;
  shape.input_dim = 2;
  shape.hidden = {};
  shape.repr_dim = 2;
  shape.num_classes = 2;
  shape.proj_dim = 2;
  CisslModel model(shape, rng);

  SUBCASE("lr 0 leaves parameters unchanged and clears gradients") {
    const CisslModel before = model;
    for (auto& p : model.parameters()) p.param->grad.fill(1.0);
    sgd_step(model, 0.0);
    CHECK(model.same_parameters(before));
    for (const auto& p : model.parameters()) {
      for (double v : p.param->grad.values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("theta 1, grad 2, lr 0.5 gives 0") {
    auto& w = model.backbone_head().weight;
    w.value.fill(1.0);
    w.grad.fill(2.0);
    sgd_step(model, 0.5);
    for (double v : w.value.values()) CHECK(v == 0.0);
  }
  SUBCASE("non-finite gradient names the parameter and applies nothing") {
    const CisslModel before = model;
    for (auto& p : model.parameters()) p.param->grad.fill(0.1);
    model.aux_head().bias.grad(0, 1) = NAN;
    try {
      sgd_step(model, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("aux_head.bias") != std::string::npos);
    }
    CHECK(model.same_parameters(before));
  }
  SUBCASE("frozen groups do not move") {
    const CisslModel before = model;
    model.set_frozen(ParamGroup::backbone_head, true);
    for (auto& p : model.parameters()) p.param->grad.fill(1.0);
    sgd_step(model, 0.1);
    CHECK(model.backbone_head().weight.value == before.backbone_head().weight.value);
    CHECK_FALSE(model.aux_head().weight.value == before.aux_head().weight.value);
  }
}

TEST_CASE("sgd on a quadratic bowl shrinks the norm monotonically") {
  Rng rng(8);
  ModelShape shape;
  shape.input_dim = 3;
  shape.hidden = {};
  shape.repr_dim = 2;
  shape.num_classes = 2;
  shape.projection = ProjectionMode::identity;
  CisslModel model(shape, rng);
  auto norm = [&] {
    double s = 0.0;
    for (const auto& p : model.parameters()) {
      for (double v : p.param->value.values()) s += v * v;
    }
    return std::sqrt(s);
  };
  for (auto& p : model.parameters()) {
    for (auto& v : p.param->value.values()) v = rng.uniform(-2.0, 2.0);
  }
  double prev = norm();
  for (int step = 0; step < 100; ++step) {
    for (auto& p : model.parameters()) {
      for (std::size_t i = 0; i < p.param->value.size(); ++i) p.param->grad.values()[i] = 2.0 * p.param->value.values()[i];
    }
    sgd_step(model, 0.1);
    const double now = norm();
    REQUIRE(now < prev);
    prev = now;
  }
}

TEST_CASE("parameter snapshot round trip") {
  Rng rng(9);
  ModelShape shape;
  CisslModel model(shape, rng);
  test_support::TempDir dir;
  save_parameters(model, dir.path() / "params.bin");
  Rng other(10);
  CisslModel restored(shape, other);
  CHECK_FALSE(restored.same_parameters(model));
  load_parameters(restored, dir.path() / "params.bin");
  CHECK(restored.same_parameters(model));

  ModelShape wider = shape;
  wider.repr_dim = 16;
  CisslModel mismatch(wider, other);
  CHECK_THROWS(load_parameters(mismatch, dir.path() / "params.bin"));

  // Header layout: magic, version, then rows/cols of the first tensor.
  std::ifstream is(dir.path() / "params.bin", std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  CHECK(std::string(magic, 4) == "CSSL");
}
