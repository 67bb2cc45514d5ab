#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "raven/tensor.hpp"
#include "testutil.hpp"

using namespace raven;
using testutil::check_grads;
using testutil::naive_mm;
using testutil::project;
using Catch::Matchers::ContainsSubstring;

namespace {

template <typename F>
ErrorKind thrown_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected raven::Error");
  return ErrorKind::Contract;  // unreachable
}

}  // namespace

TEST_CASE("matmul matches a naive triple-loop oracle", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed);
    int64_t m = uniform_int(rng, 1, 6), k = uniform_int(rng, 1, 6),
            n = uniform_int(rng, 1, 6);
    Tensor a = Tensor::randn({m, k}, rng);
    Tensor b = Tensor::randn({k, n}, rng);
    if (seed % 3 == 0) {
      // exercise the kernel's zero-skip path
      for (int64_t i = 0; i < a.numel(); i += 2) a.mutable_data()[i] = 0.0;
    }
    Tensor c = matmul(a, b);
    std::vector<double> want = naive_mm(a.data(), b.data(), m, k, n);
    REQUIRE(c.shape() == Shape{m, n});
    for (int64_t i = 0; i < c.numel(); ++i)
      REQUIRE(testutil::rel_err(c.data()[i], want[i]) < 1e-12);
  }
}

TEST_CASE("batched matmul matches the oracle per slice", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 1));
    int64_t bsz = uniform_int(rng, 1, 4), m = uniform_int(rng, 1, 5),
            k = uniform_int(rng, 1, 5), n = uniform_int(rng, 1, 5);
    Tensor a = Tensor::randn({bsz, m, k}, rng);
    Tensor b = Tensor::randn({bsz, k, n}, rng);
    Tensor shared = Tensor::randn({k, n}, rng);
    Tensor c = matmul(a, b);
    Tensor cs = matmul(a, shared);
    REQUIRE(c.shape() == Shape{bsz, m, n});
    REQUIRE(cs.shape() == Shape{bsz, m, n});
    for (int64_t bi = 0; bi < bsz; ++bi) {
      std::vector<double> as(a.data().begin() + bi * m * k,
                             a.data().begin() + (bi + 1) * m * k);
      std::vector<double> bs(b.data().begin() + bi * k * n,
                             b.data().begin() + (bi + 1) * k * n);
      std::vector<double> want = naive_mm(as, bs, m, k, n);
      std::vector<double> want_shared = naive_mm(as, shared.data(), m, k, n);
      for (int64_t i = 0; i < m * n; ++i) {
        REQUIRE(testutil::rel_err(c.data()[bi * m * n + i], want[i]) < 1e-12);
        REQUIRE(testutil::rel_err(cs.data()[bi * m * n + i], want_shared[i]) <
                1e-12);
      }
    }
  }
}

TEST_CASE("matmul reports both operand shapes on mismatch", "[tensor]") {
  REQUIRE_THROWS_WITH(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5})),
                      ContainsSubstring("[2,3]") &&
                          ContainsSubstring("[4,5]"));
  REQUIRE(thrown_kind([] {
            matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
          }) == ErrorKind::Dimension);
  // batch dims must match exactly unless b is unbatched
  REQUIRE(thrown_kind([] {
            matmul(Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 4, 5}));
          }) == ErrorKind::Dimension);
  REQUIRE(thrown_kind([] {
            matmul(Tensor::zeros({3}), Tensor::zeros({3, 2}));
          }) == ErrorKind::Dimension);
}

TEST_CASE("elementwise ops match closed forms", "[tensor]") {
  Tensor a = Tensor::from_data({2, 2}, {1.0, -2.0, 3.0, 0.5});
  Tensor b = Tensor::from_data({2, 2}, {4.0, 0.25, -1.0, 2.0});
  REQUIRE(add(a, b).data() == std::vector<double>{5.0, -1.75, 2.0, 2.5});
  REQUIRE(sub(a, b).data() == std::vector<double>{-3.0, -2.25, 4.0, -1.5});
  REQUIRE(mul(a, b).data() == std::vector<double>{4.0, -0.5, -3.0, 1.0});
  REQUIRE(scale(a, 2.0).data() == std::vector<double>{2.0, -4.0, 6.0, 1.0});
  Tensor bias = Tensor::from_data({2}, {10.0, 20.0});
  REQUIRE(add_bias(a, bias).data() ==
          std::vector<double>{11.0, 18.0, 13.0, 20.5});
  REQUIRE(thrown_kind([&] { add(a, Tensor::zeros({3})); }) ==
          ErrorKind::Dimension);
  REQUIRE(thrown_kind([&] { add_bias(a, Tensor::zeros({3})); }) ==
          ErrorKind::Dimension);
}

TEST_CASE("structural ops preserve and relocate values", "[tensor]") {
  Rng rng = make_rng(7);
  Tensor x = Tensor::randn({4, 6}, rng);

  Tensor r = reshape(x, {2, 12});
  REQUIRE(r.data() == x.data());
  REQUIRE(thrown_kind([&] { reshape(x, {5, 5}); }) == ErrorKind::Dimension);

  Tensor heads = split_heads(x, 3);
  REQUIRE(heads.shape() == Shape{3, 4, 2});
  // head h, row r holds x[r, h*2 .. h*2+1]
  REQUIRE(heads.data()[(1 * 4 + 2) * 2 + 0] == x.data()[2 * 6 + 2]);
  Tensor merged = merge_heads(heads);
  REQUIRE(merged.shape() == x.shape());
  REQUIRE(merged.data() == x.data());
  REQUIRE(thrown_kind([&] { split_heads(x, 4); }) == ErrorKind::Dimension);

  Tensor t = transpose_last2(x);
  REQUIRE(t.shape() == Shape{6, 4});
  REQUIRE(t.data()[3 * 4 + 1] == x.data()[1 * 6 + 3]);
  REQUIRE(transpose_last2(t).data() == x.data());
  Tensor batched = Tensor::randn({2, 3, 5}, rng);
  Tensor bt = transpose_last2(batched);
  REQUIRE(bt.shape() == Shape{2, 5, 3});
  REQUIRE(transpose_last2(bt).data() == batched.data());

  Tensor p1 = Tensor::randn({2, 3}, rng), p2 = Tensor::randn({1, 3}, rng);
  Tensor cat = concat_rows({p1, p2});
  REQUIRE(cat.shape() == Shape{3, 3});
  for (int64_t i = 0; i < 6; ++i) REQUIRE(cat.data()[i] == p1.data()[i]);
  for (int64_t i = 0; i < 3; ++i) REQUIRE(cat.data()[6 + i] == p2.data()[i]);
  REQUIRE(thrown_kind([&] {
            concat_rows({p1, Tensor::zeros({2, 4})});
          }) == ErrorKind::Dimension);
  REQUIRE(thrown_kind([] { concat_rows({}); }) == ErrorKind::Contract);
}

TEST_CASE("gradient check: elementwise and structural ops", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 2));
    int64_t r = uniform_int(rng, 1, 4), c = uniform_int(rng, 1, 5);
    Tensor a = Tensor::randn({r, c}, rng);
    Tensor b = Tensor::randn({r, c}, rng);
    Tensor bias = Tensor::randn({c}, rng);

    check_grads([&] { return project(add(a, b), seed); }, {a, b});
    check_grads([&] { return project(sub(a, b), seed); }, {a, b});
    check_grads([&] { return project(mul(a, b), seed); }, {a, b});
    check_grads([&] { return project(scale(a, -1.7), seed); }, {a});
    check_grads([&] { return project(add_bias(a, bias), seed); }, {a, bias});
    check_grads([&] { return project(reshape(a, {c, r}), seed); }, {a});
    check_grads([&] { return project(transpose_last2(a), seed); }, {a});
    check_grads([&] { return project(concat_rows({a, b}), seed); }, {a, b});

    Tensor h = Tensor::randn({r, 6}, rng);
    check_grads([&] { return project(split_heads(h, 3), seed); }, {h});
    Tensor h3 = Tensor::randn({2, r, 3}, rng);
    check_grads([&] { return project(merge_heads(h3), seed); }, {h3});
    check_grads([&] { return project(transpose_last2(h3), seed); }, {h3});
  }
}

TEST_CASE("gradient check: matmul variants", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 3));
    int64_t m = uniform_int(rng, 1, 4), k = uniform_int(rng, 1, 4),
            n = uniform_int(rng, 1, 4), bsz = uniform_int(rng, 1, 3);
    Tensor a = Tensor::randn({m, k}, rng);
    Tensor b = Tensor::randn({k, n}, rng);
    check_grads([&] { return project(matmul(a, b), seed); }, {a, b});

    Tensor ab = Tensor::randn({bsz, m, k}, rng);
    Tensor bb = Tensor::randn({bsz, k, n}, rng);
    check_grads([&] { return project(matmul(ab, bb), seed); }, {ab, bb});
    // unbatched b shared across batches accumulates grad from every slice
    check_grads([&] { return project(matmul(ab, b), seed); }, {ab, b});
  }
}

TEST_CASE("gradient check: activations and normalization", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 4));
    int64_t r = uniform_int(rng, 1, 4), d = uniform_int(rng, 2, 6);
    Tensor x = Tensor::randn({r, d}, rng);
    Tensor gain = Tensor::randn({d}, rng, 0.3);
    Tensor bias = Tensor::randn({d}, rng);
    for (int64_t i = 0; i < d; ++i) gain.mutable_data()[i] += 1.0;

    check_grads([&] { return project(gelu(x), seed); }, {x});
    check_grads([&] { return project(softmax_rows(x), seed); }, {x});
    check_grads([&] { return project(layer_norm(x, gain, bias), seed); },
                {x, gain, bias});
  }
}

TEST_CASE("gradient check: embedding, reductions, dropout", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 5));
    Tensor table = Tensor::randn({5, 3}, rng);
    std::vector<int> ids{0, 2, 2, 4};  // duplicate ids must accumulate
    check_grads([&] { return project(embedding(table, ids), seed); }, {table});

    Tensor x = Tensor::randn({3, 4}, rng);
    check_grads([&] { return sum(x); }, {x});
    check_grads([&] { return mean(x); }, {x});
    // a fresh generator per call keeps the dropout mask fixed under
    // finite-difference re-evaluation
    check_grads(
        [&] {
          Rng drng = make_rng(mix_seed(seed, 6));
          return project(dropout(x, 0.3, drng, true), seed);
        },
        {x});
  }
}

TEST_CASE("gradient check: losses", "[tensor]") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(mix_seed(seed, 7));
    int64_t t = uniform_int(rng, 2, 5), v = uniform_int(rng, 3, 7);
    Tensor logits = Tensor::randn({t, v}, rng);
    std::vector<int> targets(t);
    for (auto& tgt : targets) tgt = static_cast<int>(uniform_int(rng, 0, v - 1));
    targets[0] = -1;  // one ignored position
    check_grads([&] { return cross_entropy_nll(logits, targets, -1); },
                {logits});

    int64_t k = uniform_int(rng, 2, 6);
    auto random_dist = [&] {
      std::vector<double> d(k);
      double s = 0.0;
      for (auto& x : d) {
        x = std::exp(normal(rng));
        s += x;
      }
      for (auto& x : d) x /= s;
      return d;
    };
    Tensor p = Tensor::from_data({k}, random_dist());
    Tensor q = Tensor::from_data({k}, random_dist());
    // small step keeps the perturbed vectors inside the sum-to-one tolerance
    check_grads([&] { return kl_divergence(p, q); }, {p, q}, 4e-7);
  }
}

TEST_CASE("softmax rows: normalization, uniformity, stability", "[tensor]") {
  Rng rng = make_rng(11);
  Tensor x = Tensor::randn({5, 7}, rng);
  Tensor y = softmax_rows(x);
  for (int64_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 7; ++j) {
      double p = y.data()[r * 7 + j];
      REQUIRE(p > 0.0);
      s += p;
    }
    REQUIRE(std::abs(s - 1.0) < 1e-12);
  }

  Tensor flat = softmax_rows(Tensor::full({2, 8}, 3.25));
  for (double p : flat.data()) REQUIRE(p == 1.0 / 8.0);

  // large magnitudes must not overflow thanks to max subtraction
  Tensor big = softmax_rows(Tensor::from_data({1, 3}, {1e9, 1e9 + 1, 1e9 - 2}));
  for (double p : big.data()) {
    REQUIRE(std::isfinite(p));
    REQUIRE(p > 0.0);
  }

  Tensor bad = Tensor::from_data({1, 2}, {0.0, std::nan("")});
  REQUIRE(thrown_kind([&] { softmax_rows(bad); }) == ErrorKind::Numeric);
}

TEST_CASE("layer_norm normalizes each row", "[tensor]") {
  Rng rng = make_rng(12);
  int64_t d = 16;
  Tensor x = Tensor::randn({4, d}, rng, 3.0);
  Tensor y = layer_norm(x, Tensor::full({d}, 1.0), Tensor::zeros({d}));
  for (int64_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (int64_t j = 0; j < d; ++j) m += y.data()[r * d + j];
    m /= d;
    for (int64_t j = 0; j < d; ++j) {
      double c = y.data()[r * d + j] - m;
      v += c * c;
    }
    v /= d;
    REQUIRE(std::abs(m) < 1e-12);
    REQUIRE(std::abs(v - 1.0) < 1e-4);
  }
  // constant rows stay finite because of eps
  Tensor flat = layer_norm(Tensor::full({1, d}, 5.0), Tensor::full({d}, 1.0),
                           Tensor::zeros({d}));
  for (double val : flat.data()) {
    REQUIRE(std::isfinite(val));
    REQUIRE(std::abs(val) < 1e-9);
  }
  REQUIRE(thrown_kind([&] {
            layer_norm(x, Tensor::zeros({d + 1}), Tensor::zeros({d}));
          }) == ErrorKind::Dimension);
}

TEST_CASE("cross_entropy_nll matches a log-softmax oracle", "[tensor]") {
  Rng rng = make_rng(13);
  int64_t t = 4, v = 6;
  Tensor logits = Tensor::randn({t, v}, rng);
  std::vector<int> targets{2, -1, 0, 5};
  Tensor loss = cross_entropy_nll(logits, targets, -1);

  // independent oracle: direct -log(exp(z_t)/sum exp(z_j)) without the
  // max-subtraction trick (safe at these magnitudes)
  double want = 0.0;
  int counted = 0;
  for (int64_t i = 0; i < t; ++i) {
    if (targets[i] == -1) continue;
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(logits.data()[i * v + j]);
    want -= std::log(std::exp(logits.data()[i * v + targets[i]]) / denom);
    counted++;
  }
  want /= counted;
  REQUIRE(testutil::rel_err(loss.item(), want) < 1e-10);

  // uniform logits give exactly log(v)
  Tensor flat = cross_entropy_nll(Tensor::zeros({2, 8}), {3, 5});
  REQUIRE(std::abs(flat.item() - std::log(8.0)) < 1e-12);

  REQUIRE(thrown_kind([&] {
            cross_entropy_nll(logits, {-1, -1, -1, -1}, -1);
          }) == ErrorKind::Numeric);
  REQUIRE(thrown_kind([&] {
            cross_entropy_nll(logits, {0, 1, 2, 9}, -1);
          }) == ErrorKind::Contract);
  REQUIRE(thrown_kind([&] {
            cross_entropy_nll(logits, {0, 1}, -1);
          }) == ErrorKind::Contract);
  REQUIRE(thrown_kind([&] {
            cross_entropy_nll(Tensor::zeros({4}), {0, 1, 2, 3}, -1);
          }) == ErrorKind::Dimension);
}

TEST_CASE("kl_divergence values and preconditions", "[tensor]") {
  Tensor p = Tensor::from_data({3}, {0.5, 0.3, 0.2});
  Tensor q = Tensor::from_data({3}, {0.25, 0.25, 0.5});

  REQUIRE(kl_divergence(p, p).item() == 0.0);
  double want = 0.5 * std::log(0.5 / 0.25) + 0.3 * std::log(0.3 / 0.25) +
                0.2 * std::log(0.2 / 0.5);
  REQUIRE(testutil::rel_err(kl_divergence(p, q).item(), want) < 1e-12);
  REQUIRE(kl_divergence(p, q).item() > 0.0);
  // asymmetric in general
  REQUIRE(kl_divergence(p, q).item() != kl_divergence(q, p).item());

  // p may have zeros (0 log 0 = 0), q may not where p > 0
  Tensor pz = Tensor::from_data({3}, {0.0, 0.5, 0.5});
  REQUIRE(std::isfinite(kl_divergence(pz, q).item()));
  Tensor qz = Tensor::from_data({3}, {0.0, 0.5, 0.5});
  REQUIRE(thrown_kind([&] { kl_divergence(p, qz); }) == ErrorKind::Numeric);

  REQUIRE(thrown_kind([&] {
            kl_divergence(Tensor::from_data({2}, {0.9, 0.2}), q);
          }) == ErrorKind::Contract);  // shape first
  REQUIRE(thrown_kind([&] {
            kl_divergence(Tensor::from_data({3}, {0.9, 0.2, 0.2}), q);
          }) == ErrorKind::Numeric);
  REQUIRE(thrown_kind([&] {
            kl_divergence(Tensor::from_data({3}, {1.2, 0.3, -0.5}), q);
          }) == ErrorKind::Numeric);
}

TEST_CASE("backward accumulates and repeated calls double gradients",
          "[tensor]") {
  Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}).set_requires_grad(true);
  Tensor loss = sum(mul(w, w));
  backward(loss);
  REQUIRE(w.grad() == std::vector<double>{2.0, 4.0, 6.0});
  backward(loss);  // same graph, still alive: accumulates a second pass
  REQUIRE(w.grad() == std::vector<double>{4.0, 8.0, 12.0});
  w.zero_grad();
  backward(loss);
  REQUIRE(w.grad() == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward demands a scalar root", "[tensor]") {
  Tensor w = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  REQUIRE(thrown_kind([&] { backward(mul(w, w)); }) == ErrorKind::Contract);
}

TEST_CASE("fan-out gradients sum across uses", "[tensor]") {
  Tensor w = Tensor::from_data({2}, {2.0, -1.0}).set_requires_grad(true);
  Tensor u = mul(w, w);
  Tensor loss = sum(add(u, u));
  backward(loss);
  REQUIRE(w.grad() == std::vector<double>{8.0, -4.0});
}

TEST_CASE("detach cuts the graph and copies data", "[tensor]") {
  Tensor x = Tensor::from_data({2}, {3.0, 4.0}).set_requires_grad(true);
  Tensor y = mul(x, x).detach();
  REQUIRE_FALSE(y.requires_grad());
  Tensor loss = sum(scale(y, 2.0));
  backward(loss);
  REQUIRE_FALSE(x.has_grad());

  Tensor d = x.detach();
  d.mutable_data()[0] = 99.0;
  REQUIRE(x.data()[0] == 3.0);
}

TEST_CASE("no-grad mode records nothing", "[tensor]") {
  Tensor x = Tensor::from_data({1}, {2.0}).set_requires_grad(true);
  Tensor y;
  {
    NoGradGuard ng;
    y = mul(x, x);
  }
  REQUIRE(y.impl()->node == nullptr);
  backward(y);  // graphless scalar: a no-op
  REQUIRE_FALSE(x.has_grad());
}

TEST_CASE("only marked tensors hold gradients", "[tensor]") {
  Tensor a = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor b = Tensor::from_data({2}, {5.0, 7.0});
  Tensor mid = gelu(mul(a, b));
  Tensor loss = sum(mid);
  backward(loss);
  REQUIRE(a.has_grad());
  REQUIRE_FALSE(b.has_grad());
  REQUIRE_FALSE(mid.has_grad());
}

TEST_CASE("embedding selects rows and checks ids", "[tensor]") {
  Tensor table = Tensor::from_data({3, 2}, {0.0, 1.0, 10.0, 11.0, 20.0, 21.0});
  Tensor out = embedding(table, {2, 0, 2});
  REQUIRE(out.shape() == Shape{3, 2});
  REQUIRE(out.data() == std::vector<double>{20.0, 21.0, 0.0, 1.0, 20.0, 21.0});

  table.set_requires_grad(true);
  backward(sum(embedding(table, {1, 1})));
  REQUIRE(table.grad() == std::vector<double>{0, 0, 2, 2, 0, 0});

  REQUIRE(thrown_kind([&] { embedding(table, {3}); }) == ErrorKind::Contract);
  REQUIRE(thrown_kind([&] { embedding(table, {-1}); }) == ErrorKind::Contract);
  REQUIRE(thrown_kind([&] {
            embedding(Tensor::zeros({4}), {0});
          }) == ErrorKind::Dimension);
}

TEST_CASE("dropout masks, rescales and reproduces under a seed", "[tensor]") {
  Tensor x = Tensor::full({100, 100}, 2.0);
  Rng r1 = make_rng(21), r2 = make_rng(21);
  Tensor y1 = dropout(x, 0.5, r1, true);
  Tensor y2 = dropout(x, 0.5, r2, true);
  REQUIRE(y1.data() == y2.data());

  int64_t zeros = 0;
  for (double v : y1.data()) {
    if (v == 0.0)
      zeros++;
    else
      REQUIRE(v == 4.0);  // 2.0 / keep
  }
  REQUIRE(zeros > 4600);
  REQUIRE(zeros < 5400);

  Rng r3 = make_rng(22);
  REQUIRE(dropout(x, 0.0, r3, true).data() == x.data());
  REQUIRE(dropout(x, 0.5, r3, false).data() == x.data());
  REQUIRE(thrown_kind([&] { dropout(x, 1.0, r3, true); }) ==
          ErrorKind::Config);
}

TEST_CASE("ParameterSet bookkeeping", "[tensor]") {
  ParameterSet params;
  params.add("b.w", Tensor::zeros({2, 2}));
  params.add("a.w", Tensor::zeros({3}));
  params.add("a.b", Tensor::zeros({3}));
  REQUIRE(params.size() == 3);
  REQUIRE(params.total_elements() == 10);
  REQUIRE(params.has("a.w"));
  REQUIRE_FALSE(params.has("zz"));
  REQUIRE(params.get("a.w").requires_grad());

  std::vector<std::string> names;
  for (auto& [name, t] : params) names.push_back(name);
  REQUIRE(names == std::vector<std::string>{"a.b", "a.w", "b.w"});

  REQUIRE(thrown_kind([&] { params.add("a.w", Tensor::zeros({1})); }) ==
          ErrorKind::Contract);
  REQUIRE(thrown_kind([&] { params.get("zz"); }) == ErrorKind::Contract);

  Tensor& w = params.get("a.w");
  backward(sum(mul(w, w)));
  REQUIRE(w.has_grad());
  params.zero_grad();
  REQUIRE_FALSE(w.has_grad());
}

TEST_CASE("tensor construction validates shape against data", "[tensor]") {
  REQUIRE(Tensor::scalar(5.0).item() == 5.0);
  REQUIRE(Tensor::scalar(5.0).rank() == 0);
  REQUIRE(Tensor::full({2, 3}, 1.5).numel() == 6);
  REQUIRE(thrown_kind([] {
            Tensor::from_data({2, 2}, {1.0, 2.0, 3.0});
          }) == ErrorKind::Dimension);
  REQUIRE(thrown_kind([] { Tensor::zeros({2}).item(); }) ==
          ErrorKind::Contract);
  REQUIRE(shape_str(Shape{2, 3}) == "[2,3]");
  REQUIRE(shape_str(Shape{}) == "[]");
}
