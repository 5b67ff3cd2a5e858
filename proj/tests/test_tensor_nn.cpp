#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "signkit/nn.hpp"
#include "signkit/rng.hpp"
#include "signkit/tensor.hpp"

using namespace signkit;
using oracles::GradCheck;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                     double spread = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values) v = rng.uniform(-spread, spread);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

struct LstmParams {
  Tensor w_ih, w_hh, b_ih, b_hh;
  LstmParams(std::size_t in, std::size_t hidden, Rng& rng)
      : w_ih(random_tensor({4 * hidden, in}, rng)),
        w_hh(random_tensor({4 * hidden, hidden}, rng)),
        b_ih(random_tensor({4 * hidden}, rng, 0.2)),
        b_hh(random_tensor({4 * hidden}, rng, 0.2)) {}
  nn::LstmWeightRefs refs() const { return {&w_ih, &w_hh, &b_ih, &b_hh}; }
};

}  // namespace

TEST_CASE("rng streams are reproducible and dropout masks deterministic") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng ra(9), rb(9);
  Tensor x = Tensor::from({8, 8}, std::vector<double>(64, 1.0));
  const Tensor da = nn::dropout_forward(x, 0.5, ra, nn::Mode::Train);
  const Tensor db = nn::dropout_forward(x, 0.5, rb, nn::Mode::Train);
  CHECK(da.values == db.values);
}

TEST_CASE("linear layer worked examples") {
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(nn::linear_forward(x, w, b).values == x.values);

  Tensor w2 = Tensor::from({1, 2}, {3, 4});
  Tensor b2 = Tensor::from({1}, {5});
  Tensor x2 = Tensor::from({1, 2}, {1, 2});
  CHECK(nn::linear_forward(x2, w2, b2).values == std::vector<double>{16});

  SUBCASE("gradient of the output sum w.r.t. the bias is all ones") {
    nn::LinearCache cache;
    Tensor y = nn::linear_forward(x, w, b, &cache);
    Tensor dw = Tensor::zeros(w.shape), db = Tensor::zeros(b.shape);
    Tensor ones = Tensor::from({3, 2}, std::vector<double>(6, 1.0));
    nn::linear_backward(ones, cache, w, dw, db);
    CHECK(db.values == std::vector<double>{3, 3});
  }

  SUBCASE("shape mismatches are rejected") {
    Tensor bad = Tensor::from({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(nn::linear_forward(bad, w, b), ShapeMismatch);
  }
}

TEST_CASE("linear gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor b = random_tensor({5}, rng);
    Tensor r = random_tensor({4, 5}, rng);
    auto eval = [&] { return dot(nn::linear_forward(x, w, b), r); };
    nn::LinearCache cache;
    nn::linear_forward(x, w, b, &cache);
    Tensor dw = Tensor::zeros(w.shape), db = Tensor::zeros(b.shape);
    Tensor dx = nn::linear_backward(r, cache, w, dw, db);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
    CHECK(gc.check(w, dw, eval, "w"));
    CHECK(gc.check(b, db, eval, "b"));
    INFO(gc.first_failure);
  }
}

TEST_CASE("batch norm worked examples") {
  Tensor gamma = Tensor::from({1}, {1.0});
  Tensor beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1});
  Tensor rv = Tensor::from({1}, {1.0});

  SUBCASE("two-point column with eps") {
    Tensor x = Tensor::from({2, 1}, {1, 3});
    Tensor y = nn::batchnorm1d_forward(x, gamma, beta, rm, rv, nn::Mode::Train);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.at(0, 0) == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(0.999995).epsilon(1e-6));

    SUBCASE("running stats were updated with momentum 0.1") {
      CHECK(rm.values[0] == doctest::Approx(0.2));           // 0.9*0 + 0.1*2
      CHECK(rv.values[0] == doctest::Approx(0.9 + 0.1 * 2)); // unbiased var 2
    }
  }

  SUBCASE("a constant column maps to zeros") {
    Tensor x = Tensor::from({3, 1}, {4, 4, 4});
    Tensor y = nn::batchnorm1d_forward(x, gamma, beta, rm, rv, nn::Mode::Train);
    for (double v : y.values) CHECK(v == 0.0);
  }

  SUBCASE("eval with running mean 0, var 1 is the identity") {
    Tensor x = Tensor::from({2, 1}, {0.5, -2.0});
    Tensor y = nn::batchnorm1d_forward(x, gamma, beta, rm, rv, nn::Mode::Eval);
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(y.at(1, 0) == doctest::Approx(-2.0).epsilon(1e-5));
  }

  SUBCASE("train mode needs at least two rows") {
    Tensor x = Tensor::from({1, 1}, {1.0});
    CHECK_THROWS_AS(
        nn::batchnorm1d_forward(x, gamma, beta, rm, rv, nn::Mode::Train),
        BatchTooSmall);
  }
}

TEST_CASE("batch norm gradients match finite differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor gamma = random_tensor({4}, rng);
    Tensor beta = random_tensor({4}, rng);
    Tensor rm = Tensor::zeros({4});
    Tensor rv = Tensor::from({4}, std::vector<double>(4, 1.0));
    Tensor r = random_tensor({6, 4}, rng);
    auto eval = [&] {
      return dot(nn::batchnorm1d_forward(x, gamma, beta, rm, rv,
                                         nn::Mode::Train, nullptr, 1e-5, 0.1,
                                         false),
                 r);
    };
    nn::BatchNormCache cache;
    nn::batchnorm1d_forward(x, gamma, beta, rm, rv, nn::Mode::Train, &cache,
                            1e-5, 0.1, false);
    Tensor dgamma = Tensor::zeros({4}), dbeta = Tensor::zeros({4});
    Tensor dx = nn::batchnorm1d_backward(r, cache, gamma, dgamma, dbeta);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
    CHECK(gc.check(gamma, dgamma, eval, "gamma"));
    CHECK(gc.check(beta, dbeta, eval, "beta"));
    INFO(gc.first_failure);
  }
}

TEST_CASE("dropout examples") {
  Rng rng(5);
  Tensor x = random_tensor({4, 4}, rng);

  SUBCASE("rate 0 is the identity") {
    CHECK(nn::dropout_forward(x, 0.0, rng, nn::Mode::Train).values == x.values);
  }
  SUBCASE("eval mode is the identity regardless of rate") {
    CHECK(nn::dropout_forward(x, 0.7, rng, nn::Mode::Eval).values == x.values);
  }
  SUBCASE("empirical zero fraction at rate 0.2 over 1e6 entries") {
    Tensor big = Tensor::from({1000, 1000},
                              std::vector<double>(1000000, 1.0));
    Rng drng(20240213);
    const Tensor dropped =
        nn::dropout_forward(big, 0.2, drng, nn::Mode::Train);
    std::size_t zeros = 0;
    for (double v : dropped.values) zeros += v == 0.0 ? 1 : 0;
    const double fraction = static_cast<double>(zeros) / 1e6;
    CHECK(fraction >= 0.198);
    CHECK(fraction <= 0.202);
    // Survivors are scaled by 1/(1-rate).
    for (double v : dropped.values)
      CHECK((v == 0.0 || v == doctest::Approx(1.25)));
  }
  SUBCASE("invalid rate") {
    CHECK_THROWS_AS(nn::dropout_forward(x, 1.0, rng, nn::Mode::Train), Error);
  }
}

TEST_CASE("dropout with a fixed mask matches finite differences") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    Rng rng(seed);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor r = random_tensor({5, 3}, rng);
    nn::DropoutCache cache;
    Rng mask_rng(seed + 100);
    nn::dropout_forward(x, 0.4, mask_rng, nn::Mode::Train, &cache);
    auto eval = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        s += x.values[i] * cache.keep[i] * r.values[i];
      return s;
    };
    const Tensor dx = nn::dropout_backward(r, cache);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
  }
}

TEST_CASE("softmax worked examples") {
  SUBCASE("uniform logits give 1/C") {
    Tensor x = Tensor::from({1, 4}, {2, 2, 2, 2});
    for (double v : nn::softmax_rows(x).values)
      CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("extreme logits do not overflow") {
    Tensor x = Tensor::from({1, 2}, {1000, 0});
    const Tensor y = nn::softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(1.0));
    CHECK(y.at(0, 1) == doctest::Approx(0.0));
    CHECK(std::isfinite(y.at(0, 0)));
  }
  SUBCASE("[0, ln 3] maps to [0.25, 0.75]") {
    Tensor x = Tensor::from({1, 2}, {0.0, std::log(3.0)});
    const Tensor y = nn::softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("rows sum to one") {
    Rng rng(3);
    Tensor x = random_tensor({6, 5}, rng, 4.0);
    const Tensor y = nn::softmax_rows(x);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += y.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax and log-softmax backward match finite differences") {
  for (std::uint64_t seed : {31u, 32u}) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 4}, rng, 2.0);
    Tensor r = random_tensor({3, 4}, rng);
    {
      auto eval = [&] { return dot(nn::softmax_rows(x), r); };
      const Tensor y = nn::softmax_rows(x);
      const Tensor dx = nn::softmax_backward_rows(r, y);
      GradCheck gc;
      CHECK(gc.check(x, dx, eval, "softmax x"));
    }
    {
      auto eval = [&] { return dot(nn::log_softmax_rows(x), r); };
      const Tensor z = nn::log_softmax_rows(x);
      const Tensor dx = nn::log_softmax_backward_rows(r, z);
      GradCheck gc;
      CHECK(gc.check(x, dx, eval, "log_softmax x"));
    }
  }
}

TEST_CASE("max pool over time") {
  SUBCASE("single row is the identity") {
    Tensor x = Tensor::from({1, 3}, {7, -1, 2});
    CHECK(nn::max_pool_time(x).values == std::vector<double>{7, -1, 2});
  }
  SUBCASE("column-wise max") {
    Tensor x = Tensor::from({2, 2}, {1, 5, 3, 2});
    CHECK(nn::max_pool_time(x).values == std::vector<double>{3, 5});
  }
  SUBCASE("ties route gradient to the earliest row") {
    Tensor x = Tensor::from({3, 1}, {4, 4, 4});
    std::vector<std::size_t> argmax;
    nn::max_pool_time(x, &argmax);
    CHECK(argmax == std::vector<std::size_t>{0});
    Tensor dy = Tensor::from({1}, {1.0});
    const Tensor dx = nn::max_pool_time_backward(dy, argmax, 3);
    CHECK(dx.values == std::vector<double>{1, 0, 0});
  }
  SUBCASE("gradient check without ties") {
    Rng rng(77);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor r = random_tensor({4}, rng);
    auto eval = [&] { return dot(nn::max_pool_time(x), r); };
    std::vector<std::size_t> argmax;
    nn::max_pool_time(x, &argmax);
    const Tensor dx = nn::max_pool_time_backward(r, argmax, 5);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
  }
}

TEST_CASE("positional encoding") {
  const Tensor pe = nn::positional_encoding(4, 6);
  SUBCASE("row zero alternates sin 0 / cos 0") {
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(pe.at(0, 2 * i) == 0.0);
      CHECK(pe.at(0, 2 * i + 1) == 1.0);
    }
  }
  SUBCASE("PE(1, 0) is sin(1)") {
    CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848078965).epsilon(1e-12));
  }
  SUBCASE("entries stay in [-1, 1]") {
    for (double v : pe.values) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("odd model dimension is rejected") {
    CHECK_THROWS_AS(nn::positional_encoding(4, 5), OddDimension);
  }
}

TEST_CASE("lstm cell with all-zero weights produces zero state") {
  Rng rng(1);
  const std::size_t hidden = 4, in = 3;
  LstmParams p(in, hidden, rng);
  p.w_ih.fill(0.0);
  p.w_hh.fill(0.0);
  p.b_ih.fill(0.0);
  p.b_hh.fill(0.0);
  Tensor x = random_tensor({2, in}, rng);
  const Tensor h = nn::lstm_forward(x, p.refs(), hidden, false);
  for (double v : h.values) CHECK(v == 0.0);
}

TEST_CASE("a bidirectional pair of 256-unit LSTMs yields 512 features") {
  Rng rng(2);
  const std::size_t hidden = 256, in = 8, t_count = 3;
  LstmParams fwd(in, hidden, rng), bwd(in, hidden, rng);
  Tensor x = random_tensor({t_count, in}, rng);
  const Tensor hf = nn::lstm_forward(x, fwd.refs(), hidden, false);
  const Tensor hb = nn::lstm_forward(x, bwd.refs(), hidden, true);
  CHECK(hf.dim(1) + hb.dim(1) == 512);
}

TEST_CASE("lstm BPTT gradients match finite differences (T=5, F=3, H=4)") {
  for (std::uint64_t seed : {41u, 42u, 43u}) {
    Rng rng(seed);
    const std::size_t hidden = 4, in = 3, t_count = 5;
    LstmParams p(in, hidden, rng);
    Tensor x = random_tensor({t_count, in}, rng);
    Tensor r = random_tensor({t_count, hidden}, rng);
    const bool reverse = seed % 2 == 0;
    auto eval = [&] {
      return dot(nn::lstm_forward(x, p.refs(), hidden, reverse), r);
    };
    nn::LstmSeqCache cache;
    nn::lstm_forward(x, p.refs(), hidden, reverse, &cache);
    Tensor dw_ih = Tensor::zeros(p.w_ih.shape);
    Tensor dw_hh = Tensor::zeros(p.w_hh.shape);
    Tensor db_ih = Tensor::zeros(p.b_ih.shape);
    Tensor db_hh = Tensor::zeros(p.b_hh.shape);
    nn::LstmGradRefs grads{&dw_ih, &dw_hh, &db_ih, &db_hh};
    const Tensor dx = nn::lstm_backward(r, cache, p.refs(), grads);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
    CHECK(gc.check(p.w_ih, dw_ih, eval, "w_ih"));
    CHECK(gc.check(p.w_hh, dw_hh, eval, "w_hh"));
    CHECK(gc.check(p.b_ih, db_ih, eval, "b_ih"));
    CHECK(gc.check(p.b_hh, db_hh, eval, "b_hh"));
    INFO(gc.first_failure);
    CHECK(gc.worst_rel < 1e-4);
  }
}

namespace {

struct MhsaParams {
  Tensor wq, wk, wv, wo, bq, bk, bv, bo;
  MhsaParams(std::size_t d, Rng& rng)
      : wq(random_tensor({d, d}, rng, 0.5)),
        wk(random_tensor({d, d}, rng, 0.5)),
        wv(random_tensor({d, d}, rng, 0.5)),
        wo(random_tensor({d, d}, rng, 0.5)),
        bq(random_tensor({d}, rng, 0.1)),
        bk(random_tensor({d}, rng, 0.1)),
        bv(random_tensor({d}, rng, 0.1)),
        bo(random_tensor({d}, rng, 0.1)) {}
  nn::MhsaWeightRefs refs() const {
    return {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo};
  }
};

MhsaParams identity_mhsa(std::size_t d, Rng& rng) {
  MhsaParams p(d, rng);
  for (Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    w->fill(0.0);
    for (std::size_t i = 0; i < d; ++i) w->at(i, i) = 1.0;
  }
  for (Tensor* b : {&p.bq, &p.bk, &p.bv, &p.bo}) b->fill(0.0);
  return p;
}

}  // namespace

TEST_CASE("single-query attention with identity projections is the identity") {
  Rng rng(6);
  MhsaParams p = identity_mhsa(4, rng);
  Tensor x = random_tensor({1, 4}, rng);
  const Tensor y = nn::mhsa_forward(x, p.refs(), 2);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(y.values[i] == doctest::Approx(x.values[i]).epsilon(1e-12));
}

TEST_CASE("attention weights per query row sum to one") {
  Rng rng(7);
  MhsaParams p(8, rng);
  Tensor x = random_tensor({5, 8}, rng);
  nn::MhsaCache cache;
  nn::mhsa_forward(x, p.refs(), 2, &cache);
  for (const Tensor& attn : cache.attn)
    for (std::size_t i = 0; i < attn.dim(0); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < attn.dim(1); ++j) s += attn.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("self-attention is permutation-equivariant without positions") {
  Rng rng(8);
  MhsaParams p(8, rng);
  Tensor x = random_tensor({4, 8}, rng);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor xp = Tensor::zeros({4, 8});
  for (std::size_t i = 0; i < 4; ++i)
    std::copy(x.row(perm[i]), x.row(perm[i]) + 8, xp.row(i));
  const Tensor y = nn::mhsa_forward(x, p.refs(), 2);
  const Tensor yp = nn::mhsa_forward(xp, p.refs(), 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(yp.at(i, j) == doctest::Approx(y.at(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("attention head count must divide the model dimension") {
  Rng rng(9);
  MhsaParams p(8, rng);
  Tensor x = random_tensor({3, 8}, rng);
  CHECK_THROWS_AS(nn::mhsa_forward(x, p.refs(), 3), IndivisibleHeads);
}

TEST_CASE("mhsa gradients match finite differences") {
  for (std::uint64_t seed : {51u, 52u, 53u}) {
    Rng rng(seed);
    const std::size_t d = 8, t_count = 4;
    MhsaParams p(d, rng);
    Tensor x = random_tensor({t_count, d}, rng);
    Tensor r = random_tensor({t_count, d}, rng);
    auto eval = [&] { return dot(nn::mhsa_forward(x, p.refs(), 2), r); };
    nn::MhsaCache cache;
    nn::mhsa_forward(x, p.refs(), 2, &cache);
    MhsaParams g(d, rng);
    for (Tensor* t : {&g.wq, &g.wk, &g.wv, &g.wo, &g.bq, &g.bk, &g.bv, &g.bo})
      t->fill(0.0);
    nn::MhsaGradRefs grefs{&g.wq, &g.wk, &g.wv, &g.wo,
                           &g.bq, &g.bk, &g.bv, &g.bo};
    const Tensor dx = nn::mhsa_backward(r, cache, p.refs(), grefs);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
    CHECK(gc.check(p.wq, g.wq, eval, "wq"));
    CHECK(gc.check(p.wk, g.wk, eval, "wk"));
    CHECK(gc.check(p.wv, g.wv, eval, "wv"));
    CHECK(gc.check(p.wo, g.wo, eval, "wo"));
    CHECK(gc.check(p.bq, g.bq, eval, "bq"));
    CHECK(gc.check(p.bo, g.bo, eval, "bo"));
    INFO(gc.first_failure);
  }
}

TEST_CASE("layer norm statistics before the affine") {
  Rng rng(10);
  Tensor x = random_tensor({6, 16}, rng, 3.0);
  Tensor gamma = Tensor::from({16}, std::vector<double>(16, 1.0));
  Tensor beta = Tensor::zeros({16});
  const Tensor y = nn::layer_norm_forward(x, gamma, beta);
  for (std::size_t i = 0; i < 6; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at(i, j);
    mean /= 16.0;
    double var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) {
      const double d = y.at(i, j) - mean;
      var += d * d;
    }
    var /= 16.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
}

namespace {

struct BlockParams {
  MhsaParams attn;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  BlockParams(std::size_t d, std::size_t ff, Rng& rng)
      : attn(d, rng),
        ln1_g(Tensor::from({d}, std::vector<double>(d, 1.0))),
        ln1_b(Tensor::zeros({d})),
        ln2_g(Tensor::from({d}, std::vector<double>(d, 1.0))),
        ln2_b(Tensor::zeros({d})),
        ff_w1(random_tensor({ff, d}, rng, 0.5)),
        ff_b1(random_tensor({ff}, rng, 0.1)),
        ff_w2(random_tensor({d, ff}, rng, 0.5)),
        ff_b2(random_tensor({d}, rng, 0.1)) {}
  nn::TransformerBlockWeightRefs refs() const {
    return {attn.refs(), &ln1_g, &ln1_b, &ln2_g, &ln2_b,
            &ff_w1,      &ff_b1, &ff_w2, &ff_b2};
  }
};

}  // namespace

TEST_CASE("zero second feed-forward layer leaves the second residual alone") {
  Rng rng(11);
  BlockParams p(8, 16, rng);
  p.ff_w2.fill(0.0);
  p.ff_b2.fill(0.0);
  Tensor x = random_tensor({3, 8}, rng);
  Rng drop_rng(0);
  const Tensor y = nn::transformer_block_forward(x, p.refs(), 2, 0.0, drop_rng,
                                                 nn::Mode::Train, nullptr);
  // With FF == 0 the block is LN(n1 + 0) where n1 is already normalized
  // (gamma 1, beta 0), so the second layer norm is the identity up to eps.
  nn::MhsaCache ac;
  Tensor a = nn::mhsa_forward(x, p.attn.refs(), 2, &ac);
  a.add_scaled(x, 1.0);
  const Tensor n1 = nn::layer_norm_forward(a, p.ln1_g, p.ln1_b);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(y.values[i] == doctest::Approx(n1.values[i]).epsilon(1e-9));
}

TEST_CASE("transformer block gradients match finite differences") {
  for (std::uint64_t seed : {61u, 62u, 63u}) {
    Rng rng(seed);
    const std::size_t d = 8, ff = 16, t_count = 3;
    BlockParams p(d, ff, rng);
    Tensor x = random_tensor({t_count, d}, rng);
    Tensor r = random_tensor({t_count, d}, rng);
    Rng drop_rng(0);
    auto eval = [&] {
      Rng dr(0);
      return dot(nn::transformer_block_forward(x, p.refs(), 2, 0.0, dr,
                                               nn::Mode::Train, nullptr),
                 r);
    };
    nn::TransformerBlockCache cache;
    nn::transformer_block_forward(x, p.refs(), 2, 0.0, drop_rng,
                                  nn::Mode::Train, &cache);
    BlockParams g(d, ff, rng);
    for (Tensor* t : {&g.attn.wq, &g.attn.wk, &g.attn.wv, &g.attn.wo,
                      &g.attn.bq, &g.attn.bk, &g.attn.bv, &g.attn.bo, &g.ln1_g,
                      &g.ln1_b, &g.ln2_g, &g.ln2_b, &g.ff_w1, &g.ff_b1,
                      &g.ff_w2, &g.ff_b2})
      t->fill(0.0);
    nn::TransformerBlockGradRefs grefs{
        {&g.attn.wq, &g.attn.wk, &g.attn.wv, &g.attn.wo, &g.attn.bq,
         &g.attn.bk, &g.attn.bv, &g.attn.bo},
        &g.ln1_g,
        &g.ln1_b,
        &g.ln2_g,
        &g.ln2_b,
        &g.ff_w1,
        &g.ff_b1,
        &g.ff_w2,
        &g.ff_b2};
    const Tensor dx = nn::transformer_block_backward(r, cache, p.refs(), grefs);
    GradCheck gc;
    CHECK(gc.check(x, dx, eval, "x"));
    CHECK(gc.check(p.attn.wq, g.attn.wq, eval, "wq"));
    CHECK(gc.check(p.ln1_g, g.ln1_g, eval, "ln1_g"));
    CHECK(gc.check(p.ff_w1, g.ff_w1, eval, "ff_w1"));
    CHECK(gc.check(p.ff_w2, g.ff_w2, eval, "ff_w2"));
    CHECK(gc.check(p.ff_b1, g.ff_b1, eval, "ff_b1"));
    CHECK(gc.check(p.ln2_b, g.ln2_b, eval, "ln2_b"));
    INFO(gc.first_failure);
  }
}

TEST_CASE("tensor shape algebra raises typed errors, never broadcasts") {
  Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), ShapeMismatch);
  Tensor c = Tensor::from({3, 2}, std::vector<double>(6, 1.0));
  CHECK(matmul(a, c).shape == std::vector<std::size_t>{2, 2});
  CHECK_THROWS_AS(a.add_scaled(c, 1.0), ShapeMismatch);
}
