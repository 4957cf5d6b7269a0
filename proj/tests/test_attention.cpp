#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "refdrop/attention.hpp"
#include "refdrop/diagnostics.hpp"
#include "refdrop/oracle.hpp"
#include "test_support.hpp"

using namespace refdrop;
using testing::rel_error;

namespace {

template <typename T>
struct Inputs {
  Matrix<T> q, kr, vr, ks, vs;
};

template <typename T>
Inputs<T> draw(std::uint64_t seed, std::size_t L = 8, std::size_t d = 4, std::size_t dv = 4,
               double logit_scale = 1.0) {
  Xoshiro256 rng(seed);
  auto q = random_matrix<T>(rng, L, d, -logit_scale, logit_scale);
  auto kr = random_matrix<T>(rng, L, d);
  auto vr = random_matrix<T>(rng, L, dv);
  auto ks = random_matrix<T>(rng, L, d);
  auto vs = random_matrix<T>(rng, L, dv);
  return {q, kr, vr, ks, vs};
}

// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningHandler previous;
  WarningCapture() {
    previous = set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_handler(previous); }
};

// Independent softmax-attention in long double for a single query row.
std::vector<long double> attend_row(const Matrix<double>& q, std::size_t row,
                                    const Matrix<double>& k, const Matrix<double>& v) {
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.cols()));
  std::vector<long double> logits(k.rows());
  long double top = -INFINITY;
  for (std::size_t j = 0; j < k.rows(); ++j) {
    long double dot = 0;
    for (std::size_t t = 0; t < q.cols(); ++t) dot += static_cast<long double>(q(row, t)) * k(j, t);
    logits[j] = dot * scale;
    top = std::max(top, logits[j]);
  }
  long double total = 0;
  for (auto& l : logits) total += (l = std::exp(l - top));
  std::vector<long double> out(v.cols(), 0.0L);
  for (std::size_t j = 0; j < k.rows(); ++j)
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += logits[j] / total * v(j, c);
  return out;
}

}  // namespace

TEST_CASE("project") {
  const auto x = testing::random<double>(1, 4, 4);
  CHECK(project(x, Matrix<double>::identity(4)) == x);
  CHECK(project(Matrix<double>(4, 3), testing::random<double>(2, 3, 5)) == Matrix<double>(4, 5));
  CHECK_THROWS_AS(project(x, Matrix<double>(3, 3)), ShapeError);
}

TEST_CASE("project regression digest, seed 42, L = d_model = d = 4") {
  Xoshiro256 rng(42);
  const auto x = random_matrix<double>(rng, 4, 4);
  const auto w = random_matrix<double>(rng, 4, 4);
  const auto out = project(x, w);
  // Independent long double product agrees to the last bits.
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      long double acc = 0;
      for (std::size_t t = 0; t < 4; ++t) acc += static_cast<long double>(x(r, t)) * w(t, c);
      CHECK(out(r, c) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-14));
    }
  }
  // Recorded at bring-up.
  CHECK(digest(out) == 0xa5bf55649f7d9493ULL);
}

TEST_CASE("attention with a single key returns that value row") {
  const auto q = testing::random<double>(3, 5, 4);
  const auto k = testing::random<double>(4, 1, 4);
  const auto v = testing::random<double>(5, 1, 3);
  const auto out = attention(q, k, v);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(out(r, c) == v(0, c));
}

TEST_CASE("attention over identical value rows returns that row") {
  const auto q = testing::random<double>(6, 7, 4);
  const auto k = testing::random<double>(7, 9, 4);
  Matrix<double> v(9, 3);
  for (std::size_t r = 0; r < 9; ++r) {
    v(r, 0) = 0.25;
    v(r, 1) = -1.5;
    v(r, 2) = 3.0;
  }
  const auto out = attention(q, k, v);
  for (std::size_t r = 0; r < 7; ++r) {
    CHECK(out(r, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(out(r, 1) == doctest::Approx(-1.5).epsilon(1e-15));
    CHECK(out(r, 2) == doctest::Approx(3.0).epsilon(1e-15));
  }
}

TEST_CASE("attention with Q = K = V = I2") {
  const auto eye = Matrix<double>::identity(2);
  const auto out = attention(eye, eye, eye);
  // softmax([1/sqrt(2), 0])
  const long double w = std::exp(1.0L / std::sqrt(2.0L));
  CHECK(out(0, 0) == doctest::Approx(static_cast<double>(w / (w + 1))).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(static_cast<double>(1 / (w + 1))).epsilon(1e-15));
  CHECK(out(1, 0) == out(0, 1));
  CHECK(out(1, 1) == out(0, 0));
}

TEST_CASE("attention matches an independent row oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = draw<double>(seed, 6, 5, 3);
    const auto out = attention(in.q, in.ks, in.vs);
    for (std::size_t r = 0; r < 6; ++r) {
      const auto ref = attend_row(in.q, r, in.ks, in.vs);
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(out(r, c) == doctest::Approx(static_cast<double>(ref[c])).epsilon(1e-13));
    }
  }
}

TEST_CASE("attention shape errors") {
  CHECK_THROWS_AS(attention(Matrix<double>(2, 3), Matrix<double>(2, 4), Matrix<double>(2, 2)),
                  ShapeError);
  CHECK_THROWS_AS(attention(Matrix<double>(2, 3), Matrix<double>(2, 3), Matrix<double>(3, 2)),
                  ShapeError);
  CHECK_THROWS_AS(concat_attention(Matrix<double>(2, 3), Matrix<double>(2, 3),
                                   Matrix<double>(2, 2), Matrix<double>(2, 3),
                                   Matrix<double>(2, 4)),
                  ShapeError);
}

TEST_CASE("concat_attention with duplicated keys equals plain attention") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = draw<float>(seed);
    CHECK(rel_error(concat_attention(in.q, in.ks, in.vs, in.ks, in.vs),
                    attention(in.q, in.ks, in.vs)) <= 1e-6);
  }
}

TEST_CASE("concat_attention closed form for one key on each side") {
  const Matrix<double> q(1, 1, {1.0});
  const Matrix<double> kr(1, 1, {0.7});
  const Matrix<double> ks(1, 1, {-0.4});
  const Matrix<double> vr(1, 2, {2.0, -1.0});
  const Matrix<double> vs(1, 2, {0.5, 3.0});
  const long double a = 0.7L, b = -0.4L;
  const long double sigma = std::exp(a) / (std::exp(a) + std::exp(b));
  const auto out = concat_attention(q, kr, vr, ks, vs);
  CHECK(out(0, 0) == doctest::Approx(static_cast<double>(sigma * 2.0L + (1 - sigma) * 0.5L))
                         .epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(static_cast<double>(sigma * -1.0L + (1 - sigma) * 3.0L))
                         .epsilon(1e-15));
}

TEST_CASE("concat_attention, seed 7, L=8, d=4, d_v=4 matches the naive oracle") {
  const auto in = draw<float>(7);
  const auto fast = concat_attention(in.q, in.kr, in.vr, in.ks, in.vs);
  const auto slow = oracle::naive_concat_attention(cast<double>(in.q), cast<double>(in.kr),
                                                   cast<double>(in.vr), cast<double>(in.ks),
                                                   cast<double>(in.vs));
  CHECK(rel_error(fast, slow) <= 1e-5);
}

TEST_CASE("rfg_attention boundary coefficients are exact") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = draw<float>(seed);
    CHECK(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.0) == attention(in.q, in.ks, in.vs));
    CHECK(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 1.0) == attention(in.q, in.kr, in.vr));
    const auto d = draw<double>(seed);
    CHECK(rfg_attention(d.q, d.kr, d.vr, d.ks, d.vs, 0.0) == attention(d.q, d.ks, d.vs));
    CHECK(rfg_attention(d.q, d.kr, d.vr, d.ks, d.vs, 1.0) == attention(d.q, d.kr, d.vr));
  }
}

TEST_CASE("rfg_attention at c = 0.5 is the branch midpoint") {
  const auto in = draw<float>(3);
  const auto a_ref = attention(in.q, in.kr, in.vr);
  const auto a_self = attention(in.q, in.ks, in.vs);
  const auto out = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.5);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      CHECK(std::fabs(out(r, c) - 0.5 * (double(a_ref(r, c)) + a_self(r, c))) <= 1e-6);
}

TEST_CASE("rfg_attention warns outside [-1, 1] but still evaluates") {
  const auto in = draw<double>(4);
  WarningCapture capture;
  const auto inside = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, -0.3);
  CHECK(capture.messages.empty());
  const auto outside = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 1.5);
  REQUIRE(capture.messages.size() == 1);
  CHECK(capture.messages[0].find("1.5") != std::string::npos);
  CHECK(outside.rows() == inside.rows());
}

TEST_CASE("affine in c (64-bit, elementwise)") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto in = draw<double>(1000 + seed);
    const auto r0 = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.0);
    const auto r1 = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 1.0);
    for (double c : {-0.3, 0.2, 0.35, 0.7}) {
      const auto rc = rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, c);
      Matrix<double> line(rc.rows(), rc.cols());
      for (std::size_t i = 0; i < rc.rows(); ++i)
        for (std::size_t j = 0; j < rc.cols(); ++j)
          line(i, j) = static_cast<double>(r0(i, j) + static_cast<long double>(c) *
                                                          (static_cast<long double>(r1(i, j)) -
                                                           r0(i, j)));
      CHECK(rel_error(rc, line) <= 1e-6);
    }
  }
}

TEST_CASE("affine in c (32-bit, relative to the output norm)") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto in = draw<float>(2000 + seed);
    const auto r0 = cast<double>(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.0));
    const auto r1 = cast<double>(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 1.0));
    for (double c : {-0.3, 0.2, 0.35, 0.7}) {
      const auto rc = cast<double>(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, c));
      const auto line = add(r0, scale(subtract(r1, r0), c));
      CHECK(frobenius_norm(subtract(rc, line)) <= 1e-6 * frobenius_norm(rc));
    }
  }
}

TEST_CASE("self-reference neutrality") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = draw<float>(seed);
    const auto plain = attention(in.q, in.ks, in.vs);
    for (double c : {-1.0, -0.3, 0.0, 0.2, 0.35, 0.7, 1.0}) {
      CHECK(rel_error(rfg_attention(in.q, in.ks, in.vs, in.ks, in.vs, c), plain) <= 1e-6);
    }
  }
}

TEST_CASE("convexity norm bound for c in [0, 1]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto in = draw<float>(seed, 8, 4, 6);
    const double n_ref = frobenius_norm(attention(in.q, in.kr, in.vr));
    const double n_self = frobenius_norm(attention(in.q, in.ks, in.vs));
    for (double c : {0.0, 0.2, 0.35, 0.5, 0.7, 1.0}) {
      const double n = frobenius_norm(rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, c));
      CHECK(n <= c * n_ref + (1 - c) * n_self + 1e-6);
    }
  }
}

TEST_CASE("rfg_multi reductions") {
  const auto in = draw<float>(21);
  const auto extra = draw<float>(22);
  using Ref = WeightedReference<float>;

  std::vector<Ref> one{{in.kr, in.vr, 0.35}};
  CHECK(rel_error(rfg_multi<float>(in.q, one, in.ks, in.vs),
                  rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.35)) <= 1e-6);

  std::vector<Ref> zeros{{in.kr, in.vr, 0.0}, {extra.kr, extra.vr, 0.0}};
  CHECK(rel_error(rfg_multi<float>(in.q, zeros, in.ks, in.vs), attention(in.q, in.ks, in.vs)) <=
        1e-6);

  std::vector<Ref> twins{{in.kr, in.vr, 0.2}, {in.kr, in.vr, 0.2}};
  CHECK(rel_error(rfg_multi<float>(in.q, twins, in.ks, in.vs),
                  rfg_attention(in.q, in.kr, in.vr, in.ks, in.vs, 0.4)) <= 1e-6);

  CHECK_THROWS_AS(rfg_multi<float>(in.q, std::vector<Ref>{}, in.ks, in.vs), std::invalid_argument);
}

TEST_CASE("rfg_multi is invariant to reference order") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = draw<float>(3 * seed);
    const auto b = draw<float>(3 * seed + 1);
    const auto c = draw<float>(3 * seed + 2);
    using Ref = WeightedReference<float>;
    std::vector<Ref> order{{a.kr, a.vr, 0.3}, {b.kr, b.vr, -0.2}, {c.kr, c.vr, 0.25}};
    std::vector<Ref> reversed{order[2], order[1], order[0]};
    std::vector<Ref> rotated{order[1], order[2], order[0]};
    const auto base = rfg_multi<float>(a.q, order, a.ks, a.vs);
    CHECK(rel_error(base, rfg_multi<float>(a.q, reversed, a.ks, a.vs)) <= 1e-6);
    CHECK(rel_error(base, rfg_multi<float>(a.q, rotated, a.ks, a.vs)) <= 1e-6);
  }
}

TEST_CASE("rfg_multi warns when the coefficient mass exceeds one") {
  const auto in = draw<double>(5);
  using Ref = WeightedReference<double>;
  WarningCapture capture;
  std::vector<Ref> ok{{in.kr, in.vr, 0.3}, {in.kr, in.vr, 0.3}};
  rfg_multi<double>(in.q, ok, in.ks, in.vs);
  CHECK(capture.messages.empty());
  std::vector<Ref> heavy{{in.kr, in.vr, 0.6}, {in.kr, in.vr, -0.6}};
  rfg_multi<double>(in.q, heavy, in.ks, in.vs);
  CHECK(capture.messages.size() == 1);
}

TEST_CASE("concat_coefficient_vector with equal keys is one half") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = draw<double>(seed, 16, 4, 4, 10.0);
    const auto c = concat_coefficient_vector(in.q, in.ks, in.ks);
    REQUIRE(c.values.size() == 16);
    for (auto v : c.values) CHECK(std::fabs(static_cast<double>(v) - 0.5) <= 1e-12);
  }
}

TEST_CASE("concat_coefficient_vector closed form ln 3 vs 0") {
  const Matrix<double> q(1, 1, {1.0});
  const auto c = concat_coefficient_vector(q, Matrix<double>(1, 1, {std::log(3.0)}),
                                           Matrix<double>(1, 1, {0.0}));
  REQUIRE(c.values.size() == 1);
  CHECK(static_cast<double>(c.values[0]) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("concat_coefficient_vector, seed 11, L=8") {
  const auto in = draw<double>(11);
  const auto c = concat_coefficient_vector(in.q, in.kr, in.ks);
  for (auto v : c.values) {
    CHECK(v > 0);
    CHECK(v < 1);
  }
  const auto blended = rfg_matrix(in.q, in.kr, in.vr, in.ks, in.vs,
                                  build_rank1_coefficient(c, in.vr.cols()));
  const auto slow = oracle::naive_concat_attention(in.q, in.kr, in.vr, in.ks, in.vs);
  CHECK(rel_error(blended, slow) <= 1e-10);
}

TEST_CASE("concat_coefficient_vector stays strictly inside (0, 1) under huge logits") {
  for (double scale : {100.0, 1e4}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto f = draw<float>(seed, 8, 4, 4, scale);
      for (auto v : concat_coefficient_vector(f.q, f.kr, f.ks).values) {
        CHECK(v > 0);
        CHECK(v < 1);
      }
      const auto d = draw<double>(seed, 8, 4, 4, scale);
      for (auto v : concat_coefficient_vector(d.q, d.kr, d.ks).values) {
        CHECK(v > 0);
        CHECK(v < 1);
      }
    }
  }
}

TEST_CASE("build_rank1_coefficient") {
  CHECK(build_rank1_coefficient(CoefficientVector<double>{{0.5, 0.5}}, 2) ==
        Matrix<double>::filled(2, 2, 0.5));
  CHECK(build_rank1_coefficient(CoefficientVector<double>{{1.0}}, 3) ==
        Matrix<double>(1, 3, {1, 1, 1}));
  const auto in = draw<float>(9, 16, 4, 7);
  const auto c = concat_coefficient_vector(in.q, in.kr, in.ks);
  const auto m = build_rank1_coefficient(c, 7);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t k = 0; k < 7; ++k) CHECK(m(r, k) == c.values[r]);
}

TEST_CASE("rfg_matrix with constant coefficients") {
  const auto in = draw<float>(12);
  const auto zeros = Matrix<double>::filled(8, 4, 0.0);
  const auto ones = Matrix<double>::filled(8, 4, 1.0);
  CHECK(rfg_matrix(in.q, in.kr, in.vr, in.ks, in.vs, zeros) == attention(in.q, in.ks, in.vs));
  CHECK(rfg_matrix(in.q, in.kr, in.vr, in.ks, in.vs, ones) == attention(in.q, in.kr, in.vr));
  CHECK_THROWS_AS(rfg_matrix(in.q, in.kr, in.vr, in.ks, in.vs, Matrix<double>(8, 3)), ShapeError);
}

TEST_CASE("rank-1 rfg_matrix reproduces concat attention, seed 7, L=8, d=4, d_v=4") {
  const auto f = draw<float>(7);
  const auto cf = build_rank1_coefficient(concat_coefficient_vector(f.q, f.kr, f.ks), 4);
  const auto concat_f = concat_attention(f.q, f.kr, f.vr, f.ks, f.vs);
  CHECK(rel_error(rfg_matrix(f.q, f.kr, f.vr, f.ks, f.vs, cf), concat_f) <= 1e-5);

  const auto d = draw<double>(7);
  const auto cd = build_rank1_coefficient(concat_coefficient_vector(d.q, d.kr, d.ks), 4);
  const auto concat_d = concat_attention(d.q, d.kr, d.vr, d.ks, d.vs);
  CHECK(rel_error(rfg_matrix(d.q, d.kr, d.vr, d.ks, d.vs, cd), concat_d) <= 1e-10);
}

TEST_CASE("guidance_form") {
  const auto in = draw<float>(13);
  const auto zeros = Matrix<double>::filled(8, 4, 0.0);
  const auto ones = Matrix<double>::filled(8, 4, 1.0);
  CHECK(guidance_form(in.q, in.kr, in.vr, in.ks, in.vs, zeros) == attention(in.q, in.ks, in.vs));
  CHECK(rel_error(guidance_form(in.q, in.kr, in.vr, in.ks, in.vs, ones),
                  attention(in.q, in.kr, in.vr)) <= 1e-6);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = draw<float>(100 + seed);
    const auto c = testing::random<double>(900 + seed, 8, 4, 0.0, 1.0);
    CHECK(rel_error(guidance_form(s.q, s.kr, s.vr, s.ks, s.vs, c),
                    rfg_matrix(s.q, s.kr, s.vr, s.ks, s.vs, c)) <= 1e-6);
  }
}

TEST_CASE("apply_policy dispatch") {
  const auto self = draw<float>(30);
  ReferenceKV<float> cache;
  cache.layers.push_back({self.kr, self.vr});
  cache.layers.push_back({self.kr, self.vr});
  const std::vector<ReferenceKV<float>> refs{cache};
  const auto& q = self.q;
  const auto& k = self.ks;
  const auto& v = self.vs;

  CHECK(apply_policy<float>(q, k, v, policy::Plain{}, {}, 0) == attention(q, k, v));
  CHECK(apply_policy<float>(q, k, v, policy::CrossFrame{}, refs, 1) ==
        apply_policy<float>(q, k, v, policy::Rfg{1.0}, refs, 1));
  CHECK(rel_error(apply_policy<float>(q, k, v, policy::RfgRank1{}, refs, 0),
                  apply_policy<float>(q, k, v, policy::Concat{}, refs, 0)) <= 1e-5);
  CHECK(apply_policy<float>(q, k, v, policy::Rfg{0.35}, refs, 0, 0.0) == attention(q, k, v));
  CHECK(cache.bytes() == 2 * (8 * 4 + 8 * 4) * sizeof(float));

  CHECK_THROWS_AS(apply_policy<float>(q, k, v, policy::Concat{}, {}, 0), std::out_of_range);
  CHECK_THROWS_AS(apply_policy<float>(q, k, v, policy::Rfg{0.3}, refs, 2), std::out_of_range);
  CHECK_THROWS_AS(apply_policy<float>(q, k, v, policy::RfgMulti{{0.2, 0.2}}, refs, 0),
                  std::out_of_range);
}

TEST_CASE("policy helpers") {
  CHECK(policy_name(policy::Plain{}) == "plain");
  CHECK(policy_name(policy::RfgRank1{}) == "rfg_rank1");
  CHECK(reference_count(policy::Plain{}) == 0);
  CHECK(reference_count(policy::CrossFrame{}) == 1);
  CHECK(reference_count(policy::RfgMulti{{0.3, 0.3, 0.3}}) == 3);
  WarningCapture capture;
  check_coefficients(policy::Rfg{-0.3});
  check_coefficients(policy::RfgMulti{{0.3, 0.3}});
  CHECK(capture.messages.empty());
  check_coefficients(policy::Rfg{-1.2});
  check_coefficients(policy::RfgMulti{{0.7, 0.7}});
  CHECK(capture.messages.size() == 2);
}
