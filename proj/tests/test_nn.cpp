#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>

#include "fanav/error.hpp"
#include "fanav/nn.hpp"
#include "fanav/sim.hpp"

using namespace fanav;

namespace {

Matrix<double> random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = g(rng);
  return m;
}

// Straight-line recomputation of an MLP forward pass from the flat layout.
std::vector<double> loop_forward(const MlpLayout& L, std::span<const double> p,
                                 std::vector<double> x) {
  for (int l = 0; l < L.layer_count(); ++l) {
    const int in = L.widths()[l];
    const int out = L.widths()[l + 1];
    std::vector<double> y(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = p[L.bias_offset(l) + static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) {
        acc += p[L.weight_offset(l) + static_cast<std::size_t>(i * out + o)] * x[static_cast<std::size_t>(i)];
      }
      if (l + 1 < L.layer_count()) {
        acc = L.activations()[static_cast<std::size_t>(l)] == Activation::relu ? std::max(0.0, acc)
                                                                               : std::tanh(acc);
      }
      y[static_cast<std::size_t>(o)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

// Scalar loss 0.5 * sum(out^2) over a batch, for gradient checks.
double half_sq(const Network<double>& n, const Matrix<double>& x) {
  return 0.5 * n.forward(x).squaredNorm();
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("layout parameter count") {
    const auto L = MlpLayout::make(112, {256, 256}, 1, Activation::relu);
    CHECK(L.param_count() == 112u * 256 + 256 + 256 * 256 + 256 + 256 + 1);
    CHECK(L.layer_count() == 3);
    CHECK_THROWS(MlpLayout({3, 0, 1}, {Activation::relu}));
  }

  TEST_CASE("identity single linear layer returns its input") {
    const MlpLayout L({3, 3}, {});
    std::vector<double> p(L.param_count(), 0.0);
    for (int i = 0; i < 3; ++i) p[L.weight_offset(0) + static_cast<std::size_t>(i * 3 + i)] = 1.0;
    std::mt19937_64 rng(1);
    const auto x = random_matrix(3, 5, rng);
    CHECK((mlp_forward<double>(L, p, x) - x).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("zero weights return the bias") {
    const auto L = MlpLayout::make(4, {6}, 2, Activation::tanh);
    std::vector<double> p(L.param_count(), 0.0);
    p[L.bias_offset(1)] = 0.25;
    p[L.bias_offset(1) + 1] = -3.0;
    std::mt19937_64 rng(2);
    const auto y = mlp_forward<double>(L, p, random_matrix(4, 7, rng));
    for (int j = 0; j < 7; ++j) {
      CHECK(y(0, j) == 0.25);
      CHECK(y(1, j) == -3.0);
    }
  }

  TEST_CASE("112-256-256-1 forward matches a loop oracle") {
    std::mt19937_64 rng(3);
    const auto L = MlpLayout::make(112, {256, 256}, 1, Activation::relu);
    const auto net = make_network<double>(L, rng);
    const auto x = random_matrix(112, 4, rng);
    const auto y = net.forward(x);
    for (int j = 0; j < 4; ++j) {
      std::vector<double> col(x.col(j).data(), x.col(j).data() + 112);
      CHECK(std::abs(y(0, j) - loop_forward(L, net.params, col)[0]) < 1e-6);
    }
    // float build agrees with the double oracle to single precision
    Network<float> nf{L, ParamVec<float>(net.params.begin(), net.params.end())};
    const Matrix<float> yf = nf.forward(x.cast<float>());
    CHECK(std::abs(yf(0, 0) - y(0, 0)) < 1e-3 * (1.0 + std::abs(y(0, 0))));
  }

  TEST_CASE("input width mismatch and non-finite values") {
    const auto L = MlpLayout::make(4, {8}, 1, Activation::relu);
    std::mt19937_64 rng(4);
    const auto net = make_network<double>(L, rng);
    CHECK_THROWS_AS(net.forward(Matrix<double>::Zero(5, 1)), ShapeError);
    Matrix<double> bad = Matrix<double>::Zero(4, 1);
    bad(0, 0) = std::nan("");
    try {
      net.forward(bad);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
  }

  TEST_CASE("reverse-mode gradient matches central differences") {
    for (Activation act : {Activation::relu, Activation::tanh}) {
      std::mt19937_64 rng(5);
      const auto L = MlpLayout::make(6, {16, 16}, 3, act);
      auto net = make_network<double>(L, rng);
      const auto x = random_matrix(6, 9, rng);
      ForwardCache<double> cache;
      const auto y = net.forward(x, &cache);
      std::vector<double> g(L.param_count(), 0.0);
      net.backward(cache, y, g);  // d(0.5|y|^2)/dy = y
      std::uniform_int_distribution<std::size_t> pick(0, L.param_count() - 1);
      for (int k = 0; k < 20; ++k) {
        const auto i = pick(rng);
        const double h = 1e-4;
        const double keep = net.params[i];
        net.params[i] = keep + h;
        const double up = half_sq(net, x);
        net.params[i] = keep - h;
        const double dn = half_sq(net, x);
        net.params[i] = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }

  TEST_CASE("linear model squared loss gradient matches 2 X^T (Xw - y) / n") {
    std::mt19937_64 rng(6);
    const int d = 5, n = 12;
    const MlpLayout L({d, 1}, {});
    Network<double> net{L, ParamVec<double>(L.param_count())};
    for (auto& p : net.params) p = std::normal_distribution<double>(0, 1)(rng);
    const auto X = random_matrix(d, n, rng);
    const auto y = random_matrix(n, 1, rng);

    ForwardCache<double> cache;
    const Matrix<double> pred = net.forward(X, &cache);
    const Vector<double> resid = pred.row(0).transpose() - y.col(0);
    std::vector<double> g(L.param_count(), 0.0);
    net.backward(cache, (2.0 / n) * resid.transpose(), g);

    // closed form with a ones column for the bias
    Matrix<double> Xa(n, d + 1);
    Xa.leftCols(d) = X.transpose();
    Xa.col(d).setOnes();
    Vector<double> w(d + 1);
    for (int i = 0; i < d; ++i) w(i) = net.params[static_cast<std::size_t>(i)];
    w(d) = net.params[static_cast<std::size_t>(d)];
    const Vector<double> closed = 2.0 * Xa.transpose() * (Xa * w - y.col(0)) / n;
    for (int i = 0; i <= d; ++i) CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(closed(i)).epsilon(1e-12));
  }

  TEST_CASE("adam first step is -lr") {
    std::vector<double> p{0.0, 1.0};
    const std::vector<double> g{1.0, -1.0};
    AdamState<double> s(2, 3e-4);
    adam_step<double>(p, g, s);
    CHECK(p[0] == doctest::Approx(-3e-4).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(1.0 + 3e-4).epsilon(1e-9));
    CHECK(s.t == 1);
  }

  TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    std::vector<double> p{0.3, -0.7, 2.0};
    const auto before = p;
    AdamState<double> s(3, 3e-4);
    for (int k = 0; k < 5; ++k) adam_step<double>(p, std::vector<double>(3, 0.0), s);
    CHECK(p == before);
    std::vector<double> bad{1.0, std::nan(""), 0.0};
    CHECK_THROWS_AS(adam_step<double>(p, bad, s), NumericError);
    CHECK_THROWS_AS(adam_step<double>(p, std::vector<double>(2, 0.0), s), ShapeError);
  }

  TEST_CASE("adam update signs are invariant to loss scaling") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0, 1);
    std::vector<std::vector<double>> grads(10, std::vector<double>(30));
    for (auto& v : grads)
      for (auto& x : v) x = g(rng);
    auto run = [&](double c) {
      std::vector<double> p(30, 0.0);
      AdamState<double> s(30, 3e-4);
      for (const auto& v : grads) {
        std::vector<double> scaled(v);
        for (auto& x : scaled) x *= c;
        adam_step<double>(p, scaled, s);
      }
      return p;
    };
    const auto base = run(1.0);
    for (double c : {0.1, 10.0}) {
      const auto p = run(c);
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(std::signbit(p[i]) == std::signbit(base[i]));
        CHECK(std::abs(p[i] - base[i]) < 1e-3 * std::abs(base[i]) + 1e-9);
      }
    }
    CHECK(run(1.0) == base);
  }

  TEST_CASE("soft update examples") {
    std::vector<double> t{0.0, 0.0};
    soft_update<double>(t, std::vector<double>{1.0, 1.0}, 0.005);
    CHECK(t[0] == doctest::Approx(0.005));
    soft_update<double>(t, std::vector<double>{4.0, -2.0}, 1.0);
    CHECK(t[0] == 4.0);
    CHECK(t[1] == -2.0);
    const std::vector<double> same{0.7, -0.1};
    std::vector<double> u = same;
    soft_update<double>(u, same, 0.3);
    CHECK(u[0] == doctest::Approx(0.7));
    CHECK(u[1] == doctest::Approx(-0.1));
    CHECK_THROWS_AS(soft_update<double>(u, same, 0.0), ConfigError);
  }

  TEST_CASE("policy log-prob at the squashed mean equals the analytic density") {
    std::mt19937_64 rng(8);
    auto pi = make_policy<double>(3, {8}, Activation::relu, 0.5, kPi / 2, rng, 1.0);
    pi.params[pi.mlp_size()] = -0.4;
    pi.params[pi.mlp_size() + 1] = 0.2;
    const auto s = random_matrix(3, 4, rng);
    const Matrix<double> mu = pi.mean(s);
    const Matrix<double> a = mu.array().tanh().matrix();
    const auto lp = pi.log_prob(s, a);
    for (int j = 0; j < 4; ++j) {
      double want = 0.0;
      const double ls[2] = {-0.4, 0.2};
      const double sc[2] = {0.5, kPi / 2};
      for (int k = 0; k < 2; ++k) {
        const double t = std::tanh(mu(k, j));
        want += -std::log(std::sqrt(2 * kPi) * std::exp(ls[k])) - std::log(sc[k] * (1 - t * t));
      }
      CHECK(lp(j) == doctest::Approx(want).epsilon(1e-10));
    }
  }

  TEST_CASE("policy log-prob decreases away from the mode") {
    std::mt19937_64 rng(9);
    auto pi = make_policy<double>(3, {8}, Activation::relu, 0.5, kPi / 2, rng, 0.0);  // mean 0
    pi.params[pi.mlp_size()] = std::log(0.5);
    pi.params[pi.mlp_size() + 1] = std::log(0.5);
    const Matrix<double> s = Matrix<double>::Zero(3, 1);
    double prev = 1e300;
    for (int k = 0; k <= 40; ++k) {
      Matrix<double> a(2, 1);
      a << 0.024 * k, -0.024 * k;
      const double lp = pi.log_prob(s, a)(0);
      CHECK(lp < prev);
      prev = lp;
    }
  }

  TEST_CASE("policy density integrates to one over the action box") {
    std::mt19937_64 rng(10);
    auto pi = make_policy<double>(3, {8}, Activation::relu, 0.5, kPi / 2, rng, 0.1);
    pi.params[pi.mlp_size()] = std::log(0.6);
    pi.params[pi.mlp_size() + 1] = std::log(0.4);
    Matrix<double> s0 = random_matrix(3, 1, rng);
    // midpoint quadrature loses accuracy once the mass piles up at the bounds
    REQUIRE(pi.mean(s0).cwiseAbs().maxCoeff() < 1.0);
    const int N = 600;
    Matrix<double> s(3, N * N);
    Matrix<double> a(2, N * N);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        s.col(i * N + j) = s0;
        a(0, i * N + j) = -1.0 + (i + 0.5) * 2.0 / N;
        a(1, i * N + j) = -1.0 + (j + 0.5) * 2.0 / N;
      }
    }
    const auto lp = pi.log_prob(s, a);
    const double cell = (2.0 * 0.5 / N) * (2.0 * (kPi / 2) / N);  // physical units
    double total = 0.0;
    for (Eigen::Index k = 0; k < lp.size(); ++k) total += std::exp(lp(k)) * cell;
    CHECK(std::abs(total - 1.0) < 1e-3);
  }

  TEST_CASE("actions on the bound stay finite") {
    std::mt19937_64 rng(11);
    const auto pi = make_policy<double>(3, {8}, Activation::relu, 0.5, kPi / 2, rng);
    Matrix<double> a(2, 2);
    a << 1.0, -1.0, -1.0, 1.0;
    const auto lp = pi.log_prob(Matrix<double>::Zero(3, 2), a);
    CHECK(std::isfinite(lp(0)));
    CHECK(std::isfinite(lp(1)));
  }

  TEST_CASE("log-std is clamped") {
    std::mt19937_64 rng(12);
    auto pi = make_policy<double>(3, {4}, Activation::relu, 1.0, 1.0, rng);
    pi.params[pi.mlp_size()] = 9.0;
    pi.params[pi.mlp_size() + 1] = -9.0;
    CHECK(pi.log_std(0) == 2.0);
    CHECK(pi.log_std(1) == -5.0);
  }

  TEST_CASE("checkpoint round-trip is bitwise, including optimizer state") {
    std::mt19937_64 rng(13);
    const auto L = MlpLayout::make(5, {7}, 2, Activation::tanh);
    auto net = make_network<float>(L, rng);
    AdamState<float> adam(L.param_count(), 3e-4);
    std::vector<float> g(L.param_count(), 0.25f);
    adam_step<float>(net.params, g, adam);
    Checkpoint ck;
    ck.meta["method"] = "bc";
    ck.meta["note"] = "x=1";
    ck.nets.push_back(to_record<float>("policy", L, net.params, &adam));
    const auto path = std::filesystem::temp_directory_path() / "fanav_nn_ck.bin";
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    CHECK(checkpoint_digest(back) == checkpoint_digest(ck));
    CHECK(back.meta_at("note") == "x=1");
    const auto& r = back.net("policy");
    CHECK(r.layout == L);
    CHECK(cast_params<float>(r.params) == net.params);
    const auto a2 = adam_from_record<float>(r);
    CHECK(a2.m == adam.m);
    CHECK(a2.v == adam.v);
    CHECK(a2.t == 1);
    CHECK_THROWS_AS(back.net("missing"), FormatError);

    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << "NOTCKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
  }
}
