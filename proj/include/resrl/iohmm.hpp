#pragma once

#include "resrl/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace resrl {

// One logged episode as seen by the regime detector: u rows are the applied
// actuation at each step, y rows the resulting process variables.
struct SequencePair {
  Matrix u;  // T x d_u
  Matrix y;  // T x m

  long length() const { return u.rows(); }
};

// Input-driven hidden-state model: multinomial-logistic transitions
// conditioned on phi(u) = [1, u...], per-state Gaussian emissions with
// input-affine mean and diagonal covariance.
struct IohmmParams {
  int n_states = 0;
  int d_in = 0;   // feature dim including the bias entry
  int d_obs = 0;

  Vector pi;                    // initial state distribution
  std::vector<Matrix> trans_w;  // per origin state: n_states x d_in logits
  std::vector<Matrix> emit_a;   // per state: d_obs x d_in mean map
  std::vector<Vector> emit_var; // per state: diagonal variances (floored)

  void validate() const;
  // P(x_t = . | x_{t-1} = i, phi): softmax over trans_w[i] * phi.
  Vector transition_row(int i, const Vector& phi) const;
  Vector emission_mean(int j, const Vector& phi) const;
  double log_emission(int j, const Vector& phi, const Vector& y) const;

  void save(const std::string& path) const;
  static IohmmParams load(const std::string& path);
};

// phi(u) = [1, u...]; prepends the bias entry.
Vector iohmm_features(const Vector& u_row);

inline constexpr double kVarFloor = 1e-6;

struct ForwardBackward {
  double loglik = 0.0;
  Matrix gamma;             // T x N smoothed state posteriors
  std::vector<Matrix> xi;   // xi[t-1]: N x N pair posteriors for steps 1..T-1
  Matrix alpha;             // T x N filtered (scaled) forward variables
};

ForwardBackward forward_backward(const IohmmParams& p, const SequencePair& seq);
double loglik(const IohmmParams& p, const std::vector<SequencePair>& seqs);

// Most likely state per step from the smoothed posterior (ties -> lowest
// index). Causal variant uses the filtered forward distribution only.
std::vector<int> decode_smoothed(const IohmmParams& p, const SequencePair& seq);
std::vector<int> decode_filtered(const IohmmParams& p, const SequencePair& seq);

// Incremental causal decoder for the online gate. state() is the most
// likely regime given everything pushed so far; before any push it is the
// argmax of the initial distribution.
class IohmmFilter {
 public:
  explicit IohmmFilter(IohmmParams params);

  void reset();
  void push(const Vector& u_row, const Vector& y_row);
  int state() const;
  const Vector& belief() const { return belief_; }
  const IohmmParams& params() const { return params_; }

 private:
  IohmmParams params_;
  Vector belief_;
  long t_ = 0;
};

struct EmOptions {
  int n_states = 4;
  int max_iters = 200;
  double tol = 10.0;        // stop once the log-likelihood gain drops below
  int restarts = 5;
  int kmeans_iters = 10;
  int trans_grad_iters = 15;
};

struct EmResult {
  IohmmParams params;
  double loglik = 0.0;
  std::vector<double> loglik_history;  // per accepted iteration
  int restart_index = -1;
};

// Generalized EM with random restarts. The transition M-step is gradient
// ascent with backtracking on the expected complete-data objective, so the
// data log-likelihood is non-decreasing across iterations. Throws if every
// restart degenerates (a state losing all responsibility).
EmResult em_fit(const std::vector<SequencePair>& seqs, const EmOptions& opts,
                std::uint64_t seed);

}  // namespace resrl
