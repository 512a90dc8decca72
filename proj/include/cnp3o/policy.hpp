#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cnp3o {

/// Fully-connected stack with optional tanh after each layer. Biases are
/// stored as n x 1 matrices so every parameter tensor has one type.
struct Mlp {
  struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::MatrixXd b;  // out x 1
    bool tanh_act = false;
  };
  std::vector<Layer> layers;
};

/// Layer inputs captured during the forward pass; x[i] feeds layer i and
/// x.back() is the network output.
struct MlpCache {
  std::vector<Eigen::MatrixXd> x;
};

struct MlpGrads {
  std::vector<Eigen::MatrixXd> W, b;

  void init_like(const Mlp& net);
  void zero();
  std::vector<const Eigen::MatrixXd*> tensors() const;
  double squared_norm() const;
};

/// Builds an MLP with orthogonally initialized hidden layers (gain
/// sqrt(2)) and a zero-initialized linear output layer.
Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
             std::mt19937_64& rng);

/// Hidden tanh layers only, no output layer.
Mlp make_tanh_stack(int in_dim, const std::vector<int>& hidden,
                    std::mt19937_64& rng);

/// Rows of x are batch entries. Returns the output and fills the cache.
Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x,
                            MlpCache* cache);

/// Propagates dL/dy back through the cached pass, accumulating parameter
/// gradients; returns dL/dx.
Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache,
                             const Eigen::MatrixXd& dy, MlpGrads& grads);

/// Placement of the latent blocks inside one flat vector zeta. Config-like
/// blocks are served by the policy's configuration head, time blocks by
/// the time head.
struct LatentLayout {
  int n_q = 0;
  int n_free_cfg = 0;   // free interior spline columns, main segment
  int n_time = 0;       // time-scaling weights, main segment
  bool two_segment = false;
  int n_free_stop = 0;
  int n_time_stop = 0;
  // Basis families that cannot enforce end boundary conditions (the
  // normalized-RBF variant) drop the end-value blocks entirely.
  bool end_blocks = true;

  int ofs_cfg_free = 0;
  int ofs_time = 0;
  int ofs_end_q = -1;
  int ofs_end_dq = -1;
  int ofs_end_ddq = -1;
  int ofs_stop_free = -1;
  int ofs_stop_time = -1;
  int ofs_retreat_q = -1;
  int dim = 0;

  static LatentLayout make(int n_q, int n_free_cfg, int n_time,
                           bool two_segment = false, int n_free_stop = 0,
                           int n_time_stop = 0, bool end_blocks = true);
  std::vector<int> config_indices() const;
  std::vector<int> time_indices() const;
};

/// Trunk shared by both heads; the configuration head carries one hidden
/// layer, the time head is a single linear map. Each head emits means and
/// log standard deviations for its latent blocks.
struct PolicyNet {
  Mlp trunk;
  Mlp config_head;
  Mlp time_head;
  LatentLayout layout;
  std::vector<int> cfg_idx, time_idx;
};

PolicyNet make_policy(int input_dim, const LatentLayout& layout,
                      std::mt19937_64& rng, int hidden = 256,
                      int trunk_depth = 3);

struct PolicyForward {
  MlpCache trunk, cfg, time;
  Eigen::MatrixXd mu;       // batch x dim
  Eigen::MatrixXd log_std;  // batch x dim
};

struct PolicyGrads {
  MlpGrads trunk, cfg, time;

  void init_like(const PolicyNet& net);
  void zero();
  std::vector<const Eigen::MatrixXd*> tensors() const;
  double squared_norm() const;
};

PolicyForward policy_forward(const PolicyNet& net, const Eigen::MatrixXd& tasks);

/// dmu/dlog_std are batch x dim gradients at the distribution outputs.
void policy_backward(const PolicyNet& net, const PolicyForward& fwd,
                     const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_std,
                     PolicyGrads& grads);

struct ValueNet {
  Mlp net;
};

ValueNet make_value_net(int input_dim, std::mt19937_64& rng, int hidden = 256,
                        int depth = 4);

/// Editable views of every parameter tensor, with stable names and order.
struct NamedParam {
  std::string name;
  Eigen::MatrixXd* tensor;
};
std::vector<NamedParam> policy_params(PolicyNet& net);
std::vector<NamedParam> value_params(ValueNet& net);

/// Adaptive-moment gradient descent; state is lazily shaped on first step.
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(const std::vector<NamedParam>& params,
            const std::vector<const Eigen::MatrixXd*>& grads);
  double lr() const { return lr_; }

 private:
  double lr_;
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

/// Per-dimension elementwise map from latent samples to head quantities:
/// time dims use exp(a*z) (strictly positive), config dims use
/// bound*tanh(a*z) (bounded by the per-dimension limit).
struct SampleTransform {
  Eigen::VectorXd scale;
  Eigen::VectorXd bound;
  std::vector<char> is_time;

  Eigen::VectorXd apply(const Eigen::VectorXd& zeta) const;
  Eigen::VectorXd jacobian_diag(const Eigen::VectorXd& zeta) const;
};

struct TransformScales {
  double a_time = 1.0;
  double a_cfg_free = 0.02;
  double a_end_q = 0.02;  // 0.007 when an analytic bias is applied
  double a_end_dq = 0.02;
  double a_end_ddq = 1.0;
  double xi_cfg = M_PI;  // bound for interior and end-configuration dims
};

/// dq_max / ddq_max give per-joint bounds: end velocities are bounded by
/// twice the joint velocity limit, end accelerations by the limit itself.
SampleTransform make_transform(const LatentLayout& layout,
                               const TransformScales& scales,
                               const Eigen::VectorXd& dq_max,
                               const Eigen::VectorXd& ddq_max);

/// Log density of a diagonal Gaussian evaluated at z.
double gaussian_logp(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& log_std);

/// d logp / d mu and d logp / d log_std.
void gaussian_logp_grad(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                        const Eigen::VectorXd& log_std, Eigen::VectorXd& dmu,
                        Eigen::VectorXd& dlog_std);

/// Independent, reproducible stream per (seed, epoch, episode).
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t epoch,
                            std::uint64_t episode);

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& log_std,
                                std::mt19937_64& rng);

}  // namespace cnp3o
