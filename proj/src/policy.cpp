#include "cnp3o/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace cnp3o {

namespace {

// Thin-QR orthogonal init with deterministic sign fix.
Eigen::MatrixXd orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool wide = rows < cols;
  const int r = wide ? cols : rows;
  const int c = wide ? rows : cols;
  Eigen::MatrixXd a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j) {
    if (rmat(j, j) < 0) q.col(j) = -q.col(j);
  }
  q *= gain;
  return wide ? Eigen::MatrixXd(q.transpose()) : q;
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

void MlpGrads::init_like(const Mlp& net) {
  W.clear();
  b.clear();
  for (const auto& layer : net.layers) {
    W.emplace_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
    b.emplace_back(Eigen::MatrixXd::Zero(layer.b.rows(), 1));
  }
}

void MlpGrads::zero() {
  for (auto& w : W) w.setZero();
  for (auto& bias : b) bias.setZero();
}

std::vector<const Eigen::MatrixXd*> MlpGrads::tensors() const {
  std::vector<const Eigen::MatrixXd*> out;
  for (size_t i = 0; i < W.size(); ++i) {
    out.push_back(&W[i]);
    out.push_back(&b[i]);
  }
  return out;
}

double MlpGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& w : W) s += w.squaredNorm();
  for (const auto& bias : b) s += bias.squaredNorm();
  return s;
}

Mlp make_tanh_stack(int in_dim, const std::vector<int>& hidden,
                    std::mt19937_64& rng) {
  Mlp net;
  int prev = in_dim;
  for (int h : hidden) {
    Mlp::Layer layer;
    layer.W = orthogonal(h, prev, std::sqrt(2.0), rng);
    layer.b = Eigen::MatrixXd::Zero(h, 1);
    layer.tanh_act = true;
    net.layers.push_back(std::move(layer));
    prev = h;
  }
  return net;
}

Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
             std::mt19937_64& rng) {
  Mlp net = make_tanh_stack(in_dim, hidden, rng);
  const int prev = hidden.empty() ? in_dim : hidden.back();
  Mlp::Layer out;
  out.W = Eigen::MatrixXd::Zero(out_dim, prev);
  out.b = Eigen::MatrixXd::Zero(out_dim, 1);
  out.tanh_act = false;
  net.layers.push_back(std::move(out));
  return net;
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x,
                            MlpCache* cache) {
  Eigen::MatrixXd h = x;
  if (cache) {
    cache->x.clear();
    cache->x.push_back(h);
  }
  for (const auto& layer : net.layers) {
    h = (h * layer.W.transpose()).rowwise() + layer.b.col(0).transpose();
    if (layer.tanh_act) h = h.array().tanh().matrix();
    if (cache) cache->x.push_back(h);
  }
  return h;
}

Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache,
                             const Eigen::MatrixXd& dy, MlpGrads& grads) {
  if (cache.x.size() != net.layers.size() + 1)
    throw std::invalid_argument("mlp backward: cache does not match network");
  Eigen::MatrixXd d = dy;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const auto& layer = net.layers[static_cast<size_t>(i)];
    if (layer.tanh_act) {
      const Eigen::MatrixXd& a = cache.x[static_cast<size_t>(i) + 1];
      d = (d.array() * (1.0 - a.array().square())).matrix();
    }
    grads.W[static_cast<size_t>(i)].noalias() +=
        d.transpose() * cache.x[static_cast<size_t>(i)];
    grads.b[static_cast<size_t>(i)].col(0) += d.colwise().sum().transpose();
    d = d * layer.W;
  }
  return d;
}

LatentLayout LatentLayout::make(int n_q, int n_free_cfg, int n_time,
                                bool two_segment, int n_free_stop,
                                int n_time_stop, bool end_blocks) {
  LatentLayout l;
  l.n_q = n_q;
  l.n_free_cfg = n_free_cfg;
  l.n_time = n_time;
  l.two_segment = two_segment;
  l.n_free_stop = two_segment ? n_free_stop : 0;
  l.n_time_stop = two_segment ? n_time_stop : 0;
  l.end_blocks = end_blocks;
  int o = 0;
  l.ofs_cfg_free = o;
  o += n_q * n_free_cfg;
  l.ofs_time = o;
  o += n_time;
  if (end_blocks) {
    l.ofs_end_q = o;
    o += n_q;
    l.ofs_end_dq = o;
    o += n_q;
    l.ofs_end_ddq = o;
    o += n_q;
  }
  if (two_segment) {
    l.ofs_stop_free = o;
    o += n_q * l.n_free_stop;
    l.ofs_stop_time = o;
    o += l.n_time_stop;
    l.ofs_retreat_q = o;
    o += n_q;
  }
  l.dim = o;
  return l;
}

std::vector<int> LatentLayout::config_indices() const {
  std::vector<int> idx;
  auto range = [&idx](int ofs, int n) {
    for (int k = 0; k < n; ++k) idx.push_back(ofs + k);
  };
  range(ofs_cfg_free, n_q * n_free_cfg);
  if (end_blocks) range(ofs_end_q, 3 * n_q);
  if (two_segment) {
    range(ofs_stop_free, n_q * n_free_stop);
    range(ofs_retreat_q, n_q);
  }
  return idx;
}

std::vector<int> LatentLayout::time_indices() const {
  std::vector<int> idx;
  for (int k = 0; k < n_time; ++k) idx.push_back(ofs_time + k);
  if (two_segment) {
    for (int k = 0; k < n_time_stop; ++k) idx.push_back(ofs_stop_time + k);
  }
  return idx;
}

PolicyNet make_policy(int input_dim, const LatentLayout& layout,
                      std::mt19937_64& rng, int hidden, int trunk_depth) {
  PolicyNet net;
  net.layout = layout;
  net.cfg_idx = layout.config_indices();
  net.time_idx = layout.time_indices();
  net.trunk =
      make_tanh_stack(input_dim, std::vector<int>(trunk_depth, hidden), rng);
  net.config_head =
      make_mlp(hidden, {hidden}, 2 * static_cast<int>(net.cfg_idx.size()), rng);
  net.time_head =
      make_mlp(hidden, {}, 2 * static_cast<int>(net.time_idx.size()), rng);
  return net;
}

void PolicyGrads::init_like(const PolicyNet& net) {
  trunk.init_like(net.trunk);
  cfg.init_like(net.config_head);
  time.init_like(net.time_head);
}

void PolicyGrads::zero() {
  trunk.zero();
  cfg.zero();
  time.zero();
}

std::vector<const Eigen::MatrixXd*> PolicyGrads::tensors() const {
  std::vector<const Eigen::MatrixXd*> out = trunk.tensors();
  for (const auto* t : cfg.tensors()) out.push_back(t);
  for (const auto* t : time.tensors()) out.push_back(t);
  return out;
}

double PolicyGrads::squared_norm() const {
  return trunk.squared_norm() + cfg.squared_norm() + time.squared_norm();
}

PolicyForward policy_forward(const PolicyNet& net, const Eigen::MatrixXd& tasks) {
  PolicyForward f;
  const Eigen::MatrixXd t = mlp_forward(net.trunk, tasks, &f.trunk);
  const Eigen::MatrixXd c = mlp_forward(net.config_head, t, &f.cfg);
  const Eigen::MatrixXd tm = mlp_forward(net.time_head, t, &f.time);
  const Eigen::Index batch = tasks.rows();
  const int nc = static_cast<int>(net.cfg_idx.size());
  const int nt = static_cast<int>(net.time_idx.size());
  f.mu.resize(batch, net.layout.dim);
  f.log_std.resize(batch, net.layout.dim);
  for (int k = 0; k < nc; ++k) {
    f.mu.col(net.cfg_idx[static_cast<size_t>(k)]) = c.col(k);
    f.log_std.col(net.cfg_idx[static_cast<size_t>(k)]) = c.col(nc + k);
  }
  for (int k = 0; k < nt; ++k) {
    f.mu.col(net.time_idx[static_cast<size_t>(k)]) = tm.col(k);
    f.log_std.col(net.time_idx[static_cast<size_t>(k)]) = tm.col(nt + k);
  }
  return f;
}

void policy_backward(const PolicyNet& net, const PolicyForward& fwd,
                     const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_std,
                     PolicyGrads& grads) {
  const Eigen::Index batch = dmu.rows();
  const int nc = static_cast<int>(net.cfg_idx.size());
  const int nt = static_cast<int>(net.time_idx.size());
  Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(batch, 2 * nc);
  Eigen::MatrixXd dt = Eigen::MatrixXd::Zero(batch, 2 * nt);
  for (int k = 0; k < nc; ++k) {
    dc.col(k) = dmu.col(net.cfg_idx[static_cast<size_t>(k)]);
    dc.col(nc + k) = dlog_std.col(net.cfg_idx[static_cast<size_t>(k)]);
  }
  for (int k = 0; k < nt; ++k) {
    dt.col(k) = dmu.col(net.time_idx[static_cast<size_t>(k)]);
    dt.col(nt + k) = dlog_std.col(net.time_idx[static_cast<size_t>(k)]);
  }
  Eigen::MatrixXd dtrunk = mlp_backward(net.config_head, fwd.cfg, dc, grads.cfg);
  dtrunk += mlp_backward(net.time_head, fwd.time, dt, grads.time);
  mlp_backward(net.trunk, fwd.trunk, dtrunk, grads.trunk);
}

ValueNet make_value_net(int input_dim, std::mt19937_64& rng, int hidden,
                        int depth) {
  ValueNet v;
  v.net = make_mlp(input_dim, std::vector<int>(depth, hidden), 1, rng);
  return v;
}

namespace {

void collect_mlp_params(Mlp& net, const std::string& prefix,
                        std::vector<NamedParam>& out) {
  for (size_t i = 0; i < net.layers.size(); ++i) {
    out.push_back({prefix + ".W" + std::to_string(i), &net.layers[i].W});
    out.push_back({prefix + ".b" + std::to_string(i), &net.layers[i].b});
  }
}

}  // namespace

std::vector<NamedParam> policy_params(PolicyNet& net) {
  std::vector<NamedParam> out;
  collect_mlp_params(net.trunk, "trunk", out);
  collect_mlp_params(net.config_head, "config_head", out);
  collect_mlp_params(net.time_head, "time_head", out);
  return out;
}

std::vector<NamedParam> value_params(ValueNet& net) {
  std::vector<NamedParam> out;
  collect_mlp_params(net.net, "value", out);
  return out;
}

void Adam::step(const std::vector<NamedParam>& params,
                const std::vector<const Eigen::MatrixXd*>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(Eigen::MatrixXd::Zero(p.tensor->rows(), p.tensor->cols()));
      v_.emplace_back(Eigen::MatrixXd::Zero(p.tensor->rows(), p.tensor->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd& g = *grads[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    params[i].tensor->array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

Eigen::VectorXd SampleTransform::apply(const Eigen::VectorXd& zeta) const {
  Eigen::VectorXd out(zeta.size());
  for (Eigen::Index i = 0; i < zeta.size(); ++i) {
    const double az = scale[i] * zeta[i];
    out[i] = is_time[static_cast<size_t>(i)] ? std::exp(az)
                                             : bound[i] * std::tanh(az);
  }
  return out;
}

Eigen::VectorXd SampleTransform::jacobian_diag(const Eigen::VectorXd& zeta) const {
  Eigen::VectorXd out(zeta.size());
  for (Eigen::Index i = 0; i < zeta.size(); ++i) {
    const double az = scale[i] * zeta[i];
    if (is_time[static_cast<size_t>(i)]) {
      out[i] = scale[i] * std::exp(az);
    } else {
      const double th = std::tanh(az);
      out[i] = bound[i] * scale[i] * (1.0 - th * th);
    }
  }
  return out;
}

SampleTransform make_transform(const LatentLayout& layout,
                               const TransformScales& scales,
                               const Eigen::VectorXd& dq_max,
                               const Eigen::VectorXd& ddq_max) {
  if (dq_max.size() != layout.n_q || ddq_max.size() != layout.n_q)
    throw std::invalid_argument("transform: joint limit size mismatch");
  SampleTransform t;
  t.scale = Eigen::VectorXd::Zero(layout.dim);
  t.bound = Eigen::VectorXd::Zero(layout.dim);
  t.is_time.assign(static_cast<size_t>(layout.dim), 0);

  auto fill = [&t](int ofs, int n, double a, double xi) {
    for (int k = 0; k < n; ++k) {
      t.scale[ofs + k] = a;
      t.bound[ofs + k] = xi;
    }
  };
  fill(layout.ofs_cfg_free, layout.n_q * layout.n_free_cfg, scales.a_cfg_free,
       scales.xi_cfg);
  for (int k = 0; k < layout.n_time; ++k) {
    t.scale[layout.ofs_time + k] = scales.a_time;
    t.is_time[static_cast<size_t>(layout.ofs_time + k)] = 1;
  }
  if (layout.end_blocks) {
    fill(layout.ofs_end_q, layout.n_q, scales.a_end_q, scales.xi_cfg);
    for (int j = 0; j < layout.n_q; ++j) {
      t.scale[layout.ofs_end_dq + j] = scales.a_end_dq;
      t.bound[layout.ofs_end_dq + j] = 2.0 * dq_max[j];
      t.scale[layout.ofs_end_ddq + j] = scales.a_end_ddq;
      t.bound[layout.ofs_end_ddq + j] = ddq_max[j];
    }
  }
  if (layout.two_segment) {
    fill(layout.ofs_stop_free, layout.n_q * layout.n_free_stop,
         scales.a_cfg_free, scales.xi_cfg);
    for (int k = 0; k < layout.n_time_stop; ++k) {
      t.scale[layout.ofs_stop_time + k] = scales.a_time;
      t.is_time[static_cast<size_t>(layout.ofs_stop_time + k)] = 1;
    }
    fill(layout.ofs_retreat_q, layout.n_q, scales.a_end_q, scales.xi_cfg);
  }
  return t;
}

double gaussian_logp(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& log_std) {
  constexpr double half_log_2pi = 0.9189385332046727;
  const Eigen::ArrayXd sd = log_std.array().exp();
  const Eigen::ArrayXd u = (z - mu).array() / sd;
  return (-0.5 * u.square() - log_std.array() - half_log_2pi).sum();
}

void gaussian_logp_grad(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                        const Eigen::VectorXd& log_std, Eigen::VectorXd& dmu,
                        Eigen::VectorXd& dlog_std) {
  const Eigen::ArrayXd sd = log_std.array().exp();
  const Eigen::ArrayXd u = (z - mu).array() / sd;
  dmu = (u / sd).matrix();
  dlog_std = (u.square() - 1.0).matrix();
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t epoch,
                            std::uint64_t episode) {
  std::uint64_t s = mix64(seed);
  s = mix64(s ^ (0xC2B2AE3D27D4EB4FULL + epoch));
  s = mix64(s ^ (0x165667B19E3779F9ULL + episode));
  return std::mt19937_64(s);
}

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& log_std,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    z[i] = mu[i] + std::exp(log_std[i]) * gauss(rng);
  }
  return z;
}

}  // namespace cnp3o
