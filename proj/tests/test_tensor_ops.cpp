#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rstt/ops.hpp"

using namespace rstt;

namespace {

// Brute-force batched matmul: plain triple loop, double accumulation.
Tensord matmul_oracle(const Tensord& a, const Tensord& b) {
  const Index p = a.dim(-2), q = a.dim(-1), r = b.dim(-1);
  const Index batch = a.size() / (p * q);
  Shape os = a.shape();
  os.back() = r;
  Tensord out(os);
  const Index bstride = (b.rank() == 2) ? 0 : q * r;
  for (Index n = 0; n < batch; ++n)
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < r; ++j) {
        double acc = 0.0;
        for (Index k = 0; k < q; ++k)
          acc += a[n * p * q + i * q + k] * b[n * bstride + k * r + j];
        out[n * p * r + i * r + j] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and annihilation") {
  Rng rng(1);
  Tensord a = Tensord::uniform({3, 3}, rng, -1.0, 1.0);
  Tensord i3 = Tensord::eye(3);
  Tensord prod = matmul(i3, a);
  for (Index k = 0; k < a.size(); ++k) CHECK(prod[k] == doctest::Approx(a[k]).epsilon(1e-12));

  Tensord z = Tensord::zeros({2, 3});
  Tensord b = Tensord::uniform({3, 4}, rng, -1.0, 1.0);
  Tensord zb = matmul(z, b);
  CHECK(zb.shape() == Shape{2, 4});
  for (Index k = 0; k < zb.size(); ++k) CHECK(zb[k] == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(2);
  Tensord a = Tensord::uniform({4, 5}, rng, -1.0, 1.0);
  Tensord b = Tensord::uniform({5, 2}, rng, -1.0, 1.0);
  Tensord got = matmul(a, b);
  Tensord want = matmul_oracle(a, b);
  for (Index k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-6));
}

TEST_CASE("matmul batched with broadcast weight") {
  Rng rng(3);
  Tensord a = Tensord::uniform({3, 4, 5}, rng, -1.0, 1.0);
  Tensord b = Tensord::uniform({5, 6}, rng, -1.0, 1.0);
  Tensord got = matmul(a, b);
  Tensord want = matmul_oracle(a, b);
  CHECK(got.shape() == Shape{3, 4, 6});
  for (Index k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-9));

  Tensord b3 = Tensord::uniform({3, 5, 2}, rng, -1.0, 1.0);
  Tensord got3 = matmul(a, b3);
  Tensord want3 = matmul_oracle(a, b3);
  for (Index k = 0; k < got3.size(); ++k)
    CHECK(got3[k] == doctest::Approx(want3[k]).epsilon(1e-9));
}

TEST_CASE("matmul dimension errors name both shapes") {
  Tensord a({2, 3});
  Tensord b({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), dim_error);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4,2]"), dim_error);
}

TEST_CASE("softmax symmetry, shift invariance and closed form") {
  Tensord z({4}, {0.0, 0.0, 0.0, 0.0});
  Tensord s = softmax(z.reshape({1, 4}), -1);
  for (Index k = 0; k < 4; ++k) CHECK(s[k] == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(4);
  Tensord x = Tensord::uniform({3, 5}, rng, -2.0, 2.0);
  Tensord xc = add_scalar(x, 7.5);
  Tensord a = softmax(x, -1), b = softmax(xc, -1);
  for (Index k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));

  // closed-form exp-normalize at 64-bit, computed independently
  Tensord v({1, 3}, {1.0, 2.0, 3.0});
  Tensord sv = softmax(v, -1);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const double denom = e1 + e2 + e3;
  CHECK(sv[0] == doctest::Approx(e1 / denom).epsilon(1e-12));
  CHECK(sv[1] == doctest::Approx(e2 / denom).epsilon(1e-12));
  CHECK(sv[2] == doctest::Approx(e3 / denom).epsilon(1e-12));
}

TEST_CASE("softmax slices sum to one on every axis") {
  Rng rng(5);
  Tensord x = Tensord::uniform({3, 4, 5}, rng, -3.0, 3.0);
  for (int axis = 0; axis < 3; ++axis) {
    Tensord s = softmax(x, axis);
    // sum along the softmax axis must be 1 everywhere
    const Index n = x.dim(axis);
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < 3; ++i) inner *= x.dim(i);
    for (Index o = 0; o < outer; ++o)
      for (Index in = 0; in < inner; ++in) {
        double total = 0.0;
        for (Index k = 0; k < n; ++k) total += s[o * n * inner + k * inner + in];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("layer_norm handles constant tokens and affine dominance") {
  Tensord gamma = Tensord::ones({6});
  Tensord beta = Tensord::zeros({6});
  Tensord x = Tensord::full({2, 6}, 3.25);
  Tensord out = layer_norm(x, gamma, beta);
  for (Index k = 0; k < out.size(); ++k) CHECK(out[k] == doctest::Approx(0.0).epsilon(1e-12));

  Tensord g0 = Tensord::zeros({6});
  Tensord bb = Tensord::full({6}, -1.5);
  Rng rng(6);
  Tensord y = Tensord::uniform({3, 6}, rng, -2.0, 2.0);
  Tensord out2 = layer_norm(y, g0, bb);
  for (Index k = 0; k < out2.size(); ++k) CHECK(out2[k] == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("layer_norm pre-affine statistics") {
  Rng rng(7);
  const Index c = 32;
  Tensord x = Tensord::uniform({1, c}, rng, -5.0, 5.0);
  Tensord out = layer_norm(x, Tensord::ones({c}), Tensord::zeros({c}), 1e-10);
  double mean = 0.0, var = 0.0;
  for (Index k = 0; k < c; ++k) mean += out[k];
  mean /= c;
  for (Index k = 0; k < c; ++k) var += (out[k] - mean) * (out[k] - mean);
  var /= c;
  CHECK(std::fabs(mean) < 1e-6);
  CHECK(std::fabs(var - 1.0) < 1e-4);
}

TEST_CASE("gelu values") {
  Tensord x({3}, {0.0, 10.0, 1.0});
  Tensord y = gelu(x);
  CHECK(y[0] == 0.0);
  CHECK(std::fabs(y[1] - 10.0) < 1e-6);  // asymptote
  const double want = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));  // 64-bit oracle
  CHECK(y[2] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("mlp composes two linears with gelu") {
  Rng rng(8);
  const Index c = 4, hidden = 8;
  Tensord x = Tensord::uniform({3, c}, rng, -1.0, 1.0);
  Tensord w1 = Tensord::uniform({c, hidden}, rng, -0.5, 0.5);
  Tensord b1 = Tensord::uniform({hidden}, rng, -0.1, 0.1);
  Tensord w2 = Tensord::uniform({hidden, c}, rng, -0.5, 0.5);
  Tensord b2 = Tensord::uniform({c}, rng, -0.1, 0.1);
  Tensord got = mlp(x, w1, b1, w2, b2);
  // direct loop reference
  for (Index t = 0; t < 3; ++t)
    for (Index j = 0; j < c; ++j) {
      double acc = b2[j];
      for (Index h = 0; h < hidden; ++h) {
        double pre = b1[h];
        for (Index k = 0; k < c; ++k) pre += x[t * c + k] * w1[k * hidden + h];
        double g = 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0)));
        acc += g * w2[h * c + j];
      }
      CHECK(got[t * c + j] == doctest::Approx(acc).epsilon(1e-9));
    }
}

TEST_CASE("shape ops round-trip") {
  Rng rng(9);
  Tensord x = Tensord::uniform({2, 3, 4}, rng, -1.0, 1.0);
  Tensord p = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  REQUIRE(p.shape() == x.shape());
  for (Index k = 0; k < x.size(); ++k) CHECK(p[k] == x[k]);

  Tensord a = slice(x, 1, 0, 2), b = slice(x, 1, 2, 1);
  Tensord c = concat<double>({a, b}, 1);
  for (Index k = 0; k < x.size(); ++k) CHECK(c[k] == x[k]);

  Tensord v = x.reshape({6, 4});
  CHECK(v.shares_data(x));
}

TEST_CASE("embedding_rows gathers and repeat_axis0 tiles") {
  Tensord table({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensord rows = embedding_rows(table, {2, 0, 2});
  CHECK(rows.shape() == Shape{3, 2});
  CHECK(rows[0] == 5.0);
  CHECK(rows[1] == 6.0);
  CHECK(rows[2] == 1.0);
  CHECK(rows[4] == 5.0);

  Tensord t = repeat_axis0(Tensord({2}, {7.0, 8.0}), 3);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t[4] == 7.0);
}
