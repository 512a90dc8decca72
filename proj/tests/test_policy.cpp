#include "cnp3o/policy.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cnp3o;

namespace {

Eigen::MatrixXd randn_mat(std::mt19937_64& rng, int r, int c, double s = 1.0) {
  std::normal_distribution<double> gauss(0.0, s);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
  return m;
}

// Scalar probe loss sum(Y .* R) so dL/dY = R.
double probe_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& r) {
  return (y.array() * r.array()).sum();
}

}  // namespace

TEST_CASE("mlp forward and backward") {
  std::mt19937_64 rng(42);
  Mlp net = make_mlp(4, {6, 5}, 3, rng);
  // Zero output layer would zero most gradients; randomize it for the check.
  net.layers.back().W = randn_mat(rng, 3, 5, 0.7);
  net.layers.back().b = randn_mat(rng, 3, 1, 0.3);

  const Eigen::MatrixXd x = randn_mat(rng, 7, 4);
  const Eigen::MatrixXd probe = randn_mat(rng, 7, 3);

  MlpCache cache;
  const Eigen::MatrixXd y = mlp_forward(net, x, &cache);
  MlpGrads grads;
  grads.init_like(net);
  const Eigen::MatrixXd dx = mlp_backward(net, cache, probe, grads);

  SUBCASE("parameter gradients match central differences") {
    const double h = 1e-6;
    for (size_t li = 0; li < net.layers.size(); ++li) {
      for (int i = 0; i < net.layers[li].W.rows(); i += 2) {
        for (int j = 0; j < net.layers[li].W.cols(); j += 2) {
          Mlp pert = net;
          pert.layers[li].W(i, j) += h;
          const double up = probe_loss(mlp_forward(pert, x, nullptr), probe);
          pert.layers[li].W(i, j) -= 2 * h;
          const double dn = probe_loss(mlp_forward(pert, x, nullptr), probe);
          const double fd = (up - dn) / (2 * h);
          CHECK(grads.W[li](i, j) ==
                doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
      }
      for (int i = 0; i < net.layers[li].b.rows(); ++i) {
        Mlp pert = net;
        pert.layers[li].b(i, 0) += h;
        const double up = probe_loss(mlp_forward(pert, x, nullptr), probe);
        pert.layers[li].b(i, 0) -= 2 * h;
        const double dn = probe_loss(mlp_forward(pert, x, nullptr), probe);
        CHECK(grads.b[li](i, 0) ==
              doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1.0));
      }
    }
  }

  SUBCASE("input gradient matches central differences") {
    const double h = 1e-6;
    for (int i = 0; i < x.rows(); i += 3) {
      for (int j = 0; j < x.cols(); ++j) {
        Eigen::MatrixXd xp = x;
        xp(i, j) += h;
        const double up = probe_loss(mlp_forward(net, xp, nullptr), probe);
        xp(i, j) -= 2 * h;
        const double dn = probe_loss(mlp_forward(net, xp, nullptr), probe);
        CHECK(dx(i, j) ==
              doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1.0));
      }
    }
  }

  SUBCASE("hidden layers are orthogonal with gain sqrt(2)") {
    const Eigen::MatrixXd& w = net.layers[1].W;  // 5 x 6
    const Eigen::MatrixXd gram = w * w.transpose();
    CHECK((gram - 2.0 * Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <
          1e-10);
  }
}

TEST_CASE("latent layout") {
  const LatentLayout l = LatentLayout::make(3, 5, 10);
  CHECK(l.dim == 15 + 10 + 9);
  CHECK(l.ofs_cfg_free == 0);
  CHECK(l.ofs_time == 15);
  CHECK(l.ofs_end_q == 25);
  CHECK(l.config_indices().size() == 24);
  CHECK(l.time_indices().size() == 10);

  const LatentLayout two = LatentLayout::make(3, 5, 10, true, 4, 10);
  CHECK(two.dim == 34 + 12 + 10 + 3);
  CHECK(two.ofs_retreat_q == 34 + 12 + 10);
  CHECK(two.config_indices().size() == 24 + 12 + 3);
  CHECK(two.time_indices().size() == 20);

  // Every index is covered exactly once by the two heads.
  std::vector<int> seen(static_cast<size_t>(two.dim), 0);
  for (int i : two.config_indices()) seen[static_cast<size_t>(i)]++;
  for (int i : two.time_indices()) seen[static_cast<size_t>(i)]++;
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("policy network") {
  std::mt19937_64 rng(7);
  const LatentLayout layout = LatentLayout::make(3, 5, 10);
  PolicyNet net = make_policy(6, layout, rng, 16, 3);

  SUBCASE("fresh network emits zero mean and unit std") {
    const Eigen::MatrixXd tasks = randn_mat(rng, 4, 6);
    const PolicyForward f = policy_forward(net, tasks);
    CHECK(f.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK(f.log_std.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("deterministic and finite") {
    const Eigen::MatrixXd tasks = randn_mat(rng, 4, 6);
    for (auto& layer : net.config_head.layers) layer.b.setConstant(0.05);
    const PolicyForward a = policy_forward(net, tasks);
    const PolicyForward b = policy_forward(net, tasks);
    CHECK(a.mu == b.mu);
    CHECK(a.log_std == b.log_std);
    CHECK(a.mu.allFinite());
    CHECK(a.log_std.allFinite());
  }

  SUBCASE("backward matches finite differences through both heads") {
    // Randomize all output layers so gradients flow everywhere.
    net.config_head.layers.back().W = randn_mat(rng, 48, 16, 0.4);
    net.time_head.layers.back().W = randn_mat(rng, 20, 16, 0.4);
    const Eigen::MatrixXd tasks = randn_mat(rng, 3, 6);
    const Eigen::MatrixXd probe_mu = randn_mat(rng, 3, layout.dim);
    const Eigen::MatrixXd probe_ls = randn_mat(rng, 3, layout.dim);
    auto loss = [&](const PolicyNet& p) {
      const PolicyForward f = policy_forward(p, tasks);
      return probe_loss(f.mu, probe_mu) + probe_loss(f.log_std, probe_ls);
    };
    const PolicyForward f = policy_forward(net, tasks);
    PolicyGrads grads;
    grads.init_like(net);
    policy_backward(net, f, probe_mu, probe_ls, grads);

    const double h = 1e-6;
    auto check_tensor = [&](Eigen::MatrixXd* tensor, const Eigen::MatrixXd& g) {
      for (int i = 0; i < tensor->rows(); i += std::max<int>(1, tensor->rows() / 3))
        for (int j = 0; j < tensor->cols();
             j += std::max<int>(1, tensor->cols() / 3)) {
          (*tensor)(i, j) += h;
          const double up = loss(net);
          (*tensor)(i, j) -= 2 * h;
          const double dn = loss(net);
          (*tensor)(i, j) += h;
          CHECK(g(i, j) ==
                doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
        }
    };
    check_tensor(&net.trunk.layers[0].W, grads.trunk.W[0]);
    check_tensor(&net.trunk.layers[2].W, grads.trunk.W[2]);
    check_tensor(&net.config_head.layers[0].W, grads.cfg.W[0]);
    check_tensor(&net.config_head.layers[1].W, grads.cfg.W[1]);
    check_tensor(&net.time_head.layers[0].W, grads.time.W[0]);
    check_tensor(&net.trunk.layers[1].b, grads.trunk.b[1]);
  }
}

TEST_CASE("sample transform") {
  const LatentLayout layout = LatentLayout::make(3, 5, 10);
  TransformScales scales;
  const Eigen::Vector3d dq_max(1.48, 1.48, 1.75);
  const Eigen::Vector3d ddq_max(10.0, 10.0, 10.0);
  const SampleTransform t = make_transform(layout, scales, dq_max, ddq_max);

  SUBCASE("zero latent maps time dims to one") {
    const Eigen::VectorXd out = t.apply(Eigen::VectorXd::Zero(layout.dim));
    for (int k = 0; k < layout.n_time; ++k) {
      CHECK(out[layout.ofs_time + k] == 1.0);
    }
    CHECK(out.cwiseAbs().maxCoeff() == 1.0);
  }

  SUBCASE("config value at a reference point") {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(layout.dim);
    z[layout.ofs_end_q] = 10.0;  // a=0.02 -> pi*tanh(0.2)
    const Eigen::VectorXd out = t.apply(z);
    CHECK(out[layout.ofs_end_q] ==
          doctest::Approx(0.6200728560184914).epsilon(1e-14));
  }

  SUBCASE("saturation approaches the bound") {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(layout.dim);
    z[layout.ofs_cfg_free] = 1e6;
    const Eigen::VectorXd out = t.apply(z);
    CHECK(out[layout.ofs_cfg_free] == doctest::Approx(M_PI).epsilon(1e-12));
  }

  SUBCASE("bounds hold over many random draws") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> gauss(0.0, 3.0);
    for (int rep = 0; rep < 2000; ++rep) {
      Eigen::VectorXd z(layout.dim);
      for (int i = 0; i < layout.dim; ++i) z[i] = gauss(rng);
      const Eigen::VectorXd out = t.apply(z);
      for (int k = 0; k < layout.n_time; ++k) CHECK(out[layout.ofs_time + k] > 0.0);
      for (int i : layout.config_indices()) CHECK(std::abs(out[i]) < t.bound[i]);
      for (int j = 0; j < 3; ++j) {
        CHECK(std::abs(out[layout.ofs_end_dq + j]) < 2.0 * dq_max[j]);
        CHECK(std::abs(out[layout.ofs_end_ddq + j]) < ddq_max[j]);
      }
    }
  }

  SUBCASE("jacobian matches finite differences and is positive") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 2.0);
    Eigen::VectorXd z(layout.dim);
    for (int i = 0; i < layout.dim; ++i) z[i] = gauss(rng);
    const Eigen::VectorXd jac = t.jacobian_diag(z);
    const double h = 1e-6;
    for (int i = 0; i < layout.dim; ++i) {
      Eigen::VectorXd zp = z;
      zp[i] += h;
      const Eigen::VectorXd up = t.apply(zp);
      zp[i] -= 2 * h;
      const Eigen::VectorXd dn = t.apply(zp);
      CHECK(jac[i] ==
            doctest::Approx((up[i] - dn[i]) / (2 * h)).epsilon(1e-5).scale(1e-8));
      CHECK(jac[i] > 0.0);
    }
  }
}

TEST_CASE("gaussian log density") {
  SUBCASE("matches a frozen reference value") {
    Eigen::VectorXd z(2), mu(2), ls(2);
    z << 0.3, -1.2;
    mu << 0.1, 0.4;
    ls << std::log(0.5), std::log(2.0);
    CHECK(gaussian_logp(z, mu, ls) ==
          doctest::Approx(-2.2378770664093453).epsilon(1e-14));
  }

  SUBCASE("gradients match finite differences") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z(4), mu(4), ls(4);
    for (int i = 0; i < 4; ++i) {
      z[i] = gauss(rng);
      mu[i] = gauss(rng);
      ls[i] = 0.3 * gauss(rng);
    }
    Eigen::VectorXd dmu, dls;
    gaussian_logp_grad(z, mu, ls, dmu, dls);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd m2 = mu;
      m2[i] += h;
      const double up = gaussian_logp(z, m2, ls);
      m2[i] -= 2 * h;
      const double dn = gaussian_logp(z, m2, ls);
      CHECK(dmu[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
      Eigen::VectorXd l2 = ls;
      l2[i] += h;
      const double lu = gaussian_logp(z, mu, l2);
      l2[i] -= 2 * h;
      const double ld = gaussian_logp(z, mu, l2);
      CHECK(dls[i] == doctest::Approx((lu - ld) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("rng streams") {
  SUBCASE("same key reproduces the sequence") {
    auto a = make_stream(123, 4, 7);
    auto b = make_stream(123, 4, 7);
    for (int i = 0; i < 10; ++i) CHECK(a() == b());
  }
  SUBCASE("different keys give different sequences") {
    auto a = make_stream(123, 4, 7);
    auto b = make_stream(123, 4, 8);
    auto c = make_stream(123, 5, 7);
    auto d = make_stream(124, 4, 7);
    CHECK(a() != b());
    CHECK(a() != c());
    CHECK(a() != d());
  }
  SUBCASE("sampling is reproducible") {
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(5, 0.3);
    const Eigen::VectorXd ls = Eigen::VectorXd::Zero(5);
    auto r1 = make_stream(9, 0, 0);
    auto r2 = make_stream(9, 0, 0);
    CHECK(sample_gaussian(mu, ls, r1) == sample_gaussian(mu, ls, r2));
  }
}

TEST_CASE("adaptive moment optimizer") {
  SUBCASE("first step moves by about lr in the gradient sign direction") {
    std::mt19937_64 rng(1);
    PolicyNet net = make_policy(4, LatentLayout::make(2, 2, 3), rng, 8, 2);
    std::vector<NamedParam> params = policy_params(net);
    PolicyGrads grads;
    grads.init_like(net);
    grads.trunk.W[0].setConstant(0.5);
    const Eigen::MatrixXd before = net.trunk.layers[0].W;
    Adam opt(1e-3);
    opt.step(params, grads.tensors());
    const Eigen::MatrixXd delta = net.trunk.layers[0].W - before;
    CHECK((delta.array() + 1e-3).abs().maxCoeff() < 1e-9);
  }

  SUBCASE("minimizes a quadratic") {
    ValueNet v;
    v.net.layers.push_back(
        {Eigen::MatrixXd::Constant(1, 1, 5.0), Eigen::MatrixXd::Zero(1, 1), false});
    std::vector<NamedParam> params = value_params(v);
    Adam opt(0.1);
    MlpGrads g;
    g.init_like(v.net);
    for (int it = 0; it < 500; ++it) {
      const double w = v.net.layers[0].W(0, 0);
      g.W[0](0, 0) = 2.0 * (w - 1.5);
      g.b[0](0, 0) = 0.0;
      opt.step(params, g.tensors());
    }
    CHECK(v.net.layers[0].W(0, 0) == doctest::Approx(1.5).epsilon(1e-3));
  }
}

TEST_CASE("value network") {
  std::mt19937_64 rng(11);
  ValueNet v = make_value_net(5, rng, 16, 4);
  CHECK(v.net.layers.size() == 5);
  const Eigen::MatrixXd tasks = randn_mat(rng, 6, 5);
  const Eigen::MatrixXd out = mlp_forward(v.net, tasks, nullptr);
  CHECK(out.rows() == 6);
  CHECK(out.cols() == 1);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);  // zero-initialized output layer
}
