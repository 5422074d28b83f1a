#pragma once

#include "resrl/common.hpp"

#include <string>
#include <vector>

namespace resrl {

enum class Activation { Relu, Sigmoid, Tanh, Linear };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& s);

// Fully connected layer. Batched: columns are samples.
struct DenseLayer {
  Matrix w;  // out x in
  Vector b;
  Activation act = Activation::Linear;

  Matrix dw;
  Vector db;

  DenseLayer(int in, int out, Activation activation, Rng& rng);

  Matrix forward(const Matrix& x);        // x: in x B -> out x B, caches for backward
  Matrix backward(const Matrix& dy);      // dy: out x B -> dL/dx, accumulates dw/db
  void zero_grad();

  int in_dim() const { return static_cast<int>(w.cols()); }
  int out_dim() const { return static_cast<int>(w.rows()); }

 private:
  Matrix x_cache_, pre_cache_;
  bool has_cache_ = false;
};

// Standard gated recurrent (LSTM) cell unrolled over a short sequence.
// Gate rows are packed [input; forget; candidate; output]. Hidden and cell
// state start at zero on every forward call, so outputs depend only on the
// presented window and never leak across episodes.
struct LstmLayer {
  Matrix w_in;   // 4h x in
  Matrix w_rec;  // 4h x h
  Vector b;      // 4h

  Matrix dw_in, dw_rec;
  Vector db;

  LstmLayer(int in, int hidden, Rng& rng);

  // xs[t]: in x B. Returns per-step hidden states h_t (h x B).
  std::vector<Matrix> forward(const std::vector<Matrix>& xs);
  // dh[t]: upstream dL/dh_t per step. Returns dL/dx_t, accumulates grads.
  std::vector<Matrix> backward(const std::vector<Matrix>& dh);
  void zero_grad();

  int in_dim() const { return static_cast<int>(w_in.cols()); }
  int hidden_dim() const { return static_cast<int>(w_rec.cols()); }

 private:
  struct StepCache {
    Matrix x, h_prev, c_prev, i, f, g, o, c, tanh_c;
  };
  std::vector<StepCache> cache_;
};

// A recurrent stack (possibly empty) followed by a dense stack. The dense
// head consumes the final step of the recurrent output, so purely dense
// networks take single-step inputs.
class Network {
 public:
  explicit Network(int input_dim) : input_dim_(input_dim) {}
  Network() = default;

  Network& add_lstm(int hidden, Rng& rng);
  Network& add_dense(int out, Activation act, Rng& rng);
  Network& set_lr(double lr) {
    lr_ = lr;
    return *this;
  }

  // Batched forward: xs[t] is in x B. Dense-only networks require T == 1.
  Matrix forward_batch(const std::vector<Matrix>& xs);
  // Single sample; rows of `seq` are time steps.
  Vector forward(const Matrix& seq);
  Vector forward(const Vector& x);

  // Upstream dL/dout (out x B); returns dL/dx per step. Requires a cached
  // forward pass.
  std::vector<Matrix> backward_batch(const Matrix& dout);

  void zero_grad();
  // Adam with bias correction over all accumulated gradients.
  void apply_update();

  int input_dim() const { return input_dim_; }
  int output_dim() const;
  int sequence_len() const;  // expected T (1 for dense-only; any T otherwise)
  std::size_t param_count() const;
  long adam_step() const { return adam_t_; }
  double lr() const { return lr_; }

  struct ParamView {
    double* value;
    double* grad;
    std::size_t size;
    std::string name;
  };
  std::vector<ParamView> param_views();
  std::vector<ParamView> param_views() const;  // views into const storage; do not write

  void save(const std::string& path) const;
  static Network load(const std::string& path);

  std::vector<LstmLayer> recurrent;
  std::vector<DenseLayer> dense;

 private:
  int input_dim_ = 0;
  double lr_ = 1e-3;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Vector adam_m_, adam_v_;
  long adam_t_ = 0;
  bool forwarded_ = false;
  int last_T_ = 0;

  friend void polyak(Network& target, const Network& online, double rho);
};

// target <- rho*target + (1-rho)*online, elementwise over all parameters.
void polyak(Network& target, const Network& online, double rho);

}  // namespace resrl
