#pragma once

#include <Eigen/Dense>

namespace cnp3o {

/// Clamped B-spline knot vector on [0, 1].
///
/// `order` is the polynomial degree (cubic = 3). The first and last
/// order+1 knots repeat the domain endpoints, so a curve built on this
/// vector interpolates its first and last control points. Interior knots
/// are equidistant.
struct KnotVector {
  Eigen::VectorXd knots;
  int order = 3;
  int num_ctrl = 0;

  int num_knots() const { return static_cast<int>(knots.size()); }
};

/// Basis values and phase derivatives precomputed on an equidistant grid.
///
/// values(j, i) = B_i(s_j) for s_j = j / (n_s - 1). d1..d3 hold the
/// first to third derivatives with respect to the phase variable. Rows of
/// `values` sum to one (partition of unity). Everything downstream reduces
/// to matrix-vector products against this tensor.
struct BasisTensor {
  Eigen::VectorXd phase;  // n_s equidistant values in [0, 1]
  Eigen::MatrixXd values; // [n_s x n_b]
  Eigen::MatrixXd d1;
  Eigen::MatrixXd d2;
  Eigen::MatrixXd d3;

  int num_phase() const { return static_cast<int>(phase.size()); }
  int num_basis() const { return static_cast<int>(values.cols()); }
};

/// Builds the clamped knot vector with equidistant interior knots.
/// Requires num_ctrl >= order + 1.
KnotVector make_clamped_knots(int order, int num_ctrl);

/// Evaluates all num_ctrl basis functions at phase s in [0, 1].
///
/// Uses the span-local triangular Cox-de Boor scheme. The final knot
/// interval is treated as closed on the right so that the last basis
/// function equals one at s = 1.
Eigen::VectorXd eval_basis(const KnotVector& kv, double s);

/// Evaluates the deriv_order-th phase derivative of every basis function
/// via the exact B-spline derivative recurrence (no differencing).
/// Requires 1 <= deriv_order <= order.
Eigen::VectorXd eval_basis_derivative(const KnotVector& kv, double s,
                                      int deriv_order);

/// Fills a BasisTensor over n_s equidistant phases (n_s >= 2).
/// Derivative planes above the spline order are identically zero.
BasisTensor precompute_tensor(const KnotVector& kv, int n_s);

}  // namespace cnp3o
