#include "cnp3o/splines.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace cnp3o {

namespace {

// Indicator of the degree-0 basis: half-open knot intervals, except that
// the last nonempty interval is closed on the right. This right-endpoint
// convention makes B_{n_b}(1) = 1 on a clamped vector.
double basis_deg0(const KnotVector& kv, int i, double s) {
  const double ki = kv.knots[i];
  const double ki1 = kv.knots[i + 1];
  if (ki <= s && s < ki1) return 1.0;
  if (s == ki1 && ki1 == kv.knots[kv.num_knots() - 1] && ki < ki1) return 1.0;
  return 0.0;
}

// Plain Cox-de Boor recursion for a single basis function of the given
// degree. Used by the derivative recurrence; bulk evaluation goes through
// the span-local triangle in eval_basis.
double basis_single(const KnotVector& kv, int i, int degree, double s) {
  if (degree == 0) return basis_deg0(kv, i, s);
  double out = 0.0;
  const double den1 = kv.knots[i + degree] - kv.knots[i];
  if (den1 > 0.0) {
    out += (s - kv.knots[i]) / den1 * basis_single(kv, i, degree - 1, s);
  }
  const double den2 = kv.knots[i + degree + 1] - kv.knots[i + 1];
  if (den2 > 0.0) {
    out += (kv.knots[i + degree + 1] - s) / den2 *
           basis_single(kv, i + 1, degree - 1, s);
  }
  return out;
}

// m-th derivative of B_{i,degree} through the derivative recurrence
// B'_{i,p} = p (B_{i,p-1}/(k_{i+p}-k_i) - B_{i+1,p-1}/(k_{i+p+1}-k_{i+1})).
double basis_deriv_single(const KnotVector& kv, int i, int degree, int m,
                          double s) {
  if (m == 0) return basis_single(kv, i, degree, s);
  double out = 0.0;
  const double den1 = kv.knots[i + degree] - kv.knots[i];
  if (den1 > 0.0) {
    out += basis_deriv_single(kv, i, degree - 1, m - 1, s) / den1;
  }
  const double den2 = kv.knots[i + degree + 1] - kv.knots[i + 1];
  if (den2 > 0.0) {
    out -= basis_deriv_single(kv, i + 1, degree - 1, m - 1, s) / den2;
  }
  return degree * out;
}

// Largest span index j with knots[j] <= s < knots[j+1], restricted to the
// nondegenerate range [order, num_ctrl-1]; s = 1 maps to the last span.
int find_span(const KnotVector& kv, double s) {
  const int p = kv.order;
  const int hi = kv.num_ctrl - 1;
  if (s >= kv.knots[hi + 1]) return hi;
  const double* first = kv.knots.data();
  const double* it = std::upper_bound(first + p, first + hi + 1, s);
  int span = static_cast<int>(it - first) - 1;
  return std::clamp(span, p, hi);
}

}  // namespace

KnotVector make_clamped_knots(int order, int num_ctrl) {
  if (order < 1) throw std::invalid_argument("spline order must be >= 1");
  if (num_ctrl < order + 1) {
    throw std::invalid_argument(
        "basis underdetermined: num_ctrl must be >= order + 1");
  }
  const int n_interior = num_ctrl - order - 1;
  KnotVector kv;
  kv.order = order;
  kv.num_ctrl = num_ctrl;
  kv.knots.resize(num_ctrl + order + 1);
  for (int i = 0; i <= order; ++i) kv.knots[i] = 0.0;
  for (int i = 0; i < n_interior; ++i) {
    kv.knots[order + 1 + i] = static_cast<double>(i + 1) / (n_interior + 1);
  }
  for (int i = 0; i <= order; ++i) kv.knots[num_ctrl + i] = 1.0;
  return kv;
}

Eigen::VectorXd eval_basis(const KnotVector& kv, double s) {
  if (s < 0.0 || s > 1.0) {
    throw std::invalid_argument("phase s outside [0, 1]");
  }
  const int p = kv.order;
  const int span = find_span(kv, s);
  std::vector<double> left(p + 1), right(p + 1), tri(p + 1);
  tri[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = s - kv.knots[span + 1 - j];
    right[j] = kv.knots[span + j] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = tri[r] / (right[r + 1] + left[j - r]);
      tri[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    tri[j] = saved;
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(kv.num_ctrl);
  for (int r = 0; r <= p; ++r) out[span - p + r] = tri[r];
  return out;
}

Eigen::VectorXd eval_basis_derivative(const KnotVector& kv, double s,
                                      int deriv_order) {
  if (s < 0.0 || s > 1.0) {
    throw std::invalid_argument("phase s outside [0, 1]");
  }
  if (deriv_order < 1 || deriv_order > kv.order) {
    throw std::invalid_argument(
        "deriv_order must be in [1, order]; higher derivatives vanish");
  }
  Eigen::VectorXd out(kv.num_ctrl);
  for (int i = 0; i < kv.num_ctrl; ++i) {
    out[i] = basis_deriv_single(kv, i, kv.order, deriv_order, s);
  }
  return out;
}

BasisTensor precompute_tensor(const KnotVector& kv, int n_s) {
  if (n_s < 2) throw std::invalid_argument("phase grid needs n_s >= 2");
  BasisTensor t;
  const int nb = kv.num_ctrl;
  t.phase.resize(n_s);
  t.values.resize(n_s, nb);
  t.d1 = Eigen::MatrixXd::Zero(n_s, nb);
  t.d2 = Eigen::MatrixXd::Zero(n_s, nb);
  t.d3 = Eigen::MatrixXd::Zero(n_s, nb);
  for (int j = 0; j < n_s; ++j) {
    const double s = static_cast<double>(j) / (n_s - 1);
    t.phase[j] = s;
    t.values.row(j) = eval_basis(kv, s).transpose();
    if (kv.order >= 1) t.d1.row(j) = eval_basis_derivative(kv, s, 1).transpose();
    if (kv.order >= 2) t.d2.row(j) = eval_basis_derivative(kv, s, 2).transpose();
    if (kv.order >= 3) t.d3.row(j) = eval_basis_derivative(kv, s, 3).transpose();
  }
  return t;
}

}  // namespace cnp3o
