#include "resrl/iohmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace resrl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Vector softmax(const Vector& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

int argmax_lowest(const Vector& v) {
  int best = 0;
  for (long i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

void write_block(std::ostream& os, const double* p, long n) {
  char buf[64];
  for (long i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", p[i]);
    os << buf << '\n';
  }
}

void read_block(std::istream& is, double* p, long n, const char* what) {
  for (long i = 0; i < n; ++i) {
    if (!(is >> p[i])) {
      throw std::runtime_error(std::string("iohmm: model file truncated in ") + what);
    }
  }
}

}  // namespace

Vector iohmm_features(const Vector& u_row) {
  Vector phi(u_row.size() + 1);
  phi[0] = 1.0;
  phi.tail(u_row.size()) = u_row;
  return phi;
}

void IohmmParams::validate() const {
  if (n_states < 1) throw std::invalid_argument("iohmm: need at least one state");
  if (d_in < 1 || d_obs < 1) throw std::invalid_argument("iohmm: bad dimensions");
  if (pi.size() != n_states) throw std::invalid_argument("iohmm: pi size mismatch");
  if (static_cast<int>(trans_w.size()) != n_states ||
      static_cast<int>(emit_a.size()) != n_states ||
      static_cast<int>(emit_var.size()) != n_states) {
    throw std::invalid_argument("iohmm: per-state parameter count mismatch");
  }
  for (int i = 0; i < n_states; ++i) {
    if (trans_w[i].rows() != n_states || trans_w[i].cols() != d_in) {
      throw std::invalid_argument("iohmm: transition weight shape mismatch");
    }
    if (emit_a[i].rows() != d_obs || emit_a[i].cols() != d_in) {
      throw std::invalid_argument("iohmm: emission map shape mismatch");
    }
    if (emit_var[i].size() != d_obs || emit_var[i].minCoeff() <= 0.0) {
      throw std::invalid_argument("iohmm: emission variances must be positive");
    }
  }
}

Vector IohmmParams::transition_row(int i, const Vector& phi) const {
  return softmax(trans_w[static_cast<std::size_t>(i)] * phi);
}

Vector IohmmParams::emission_mean(int j, const Vector& phi) const {
  return emit_a[static_cast<std::size_t>(j)] * phi;
}

double IohmmParams::log_emission(int j, const Vector& phi, const Vector& y) const {
  const Vector mu = emission_mean(j, phi);
  const Vector& var = emit_var[static_cast<std::size_t>(j)];
  double ll = 0.0;
  for (long k = 0; k < y.size(); ++k) {
    const double diff = y[k] - mu[k];
    ll -= 0.5 * (kLog2Pi + std::log(var[k]) + diff * diff / var[k]);
  }
  return ll;
}

namespace {

// Per-sequence quantities shared by the forward and backward sweeps.
struct SweepCache {
  std::vector<Vector> phi;    // T
  Matrix w;                   // T x N: exp(log b - shift)
  Vector shift;               // T
  Vector c_raw;               // T
  std::vector<Matrix> trans;  // T (index 0 unused): N x N
};

SweepCache prepare(const IohmmParams& p, const SequencePair& seq) {
  const long T = seq.length();
  const int N = p.n_states;
  if (seq.y.rows() != T) throw std::invalid_argument("iohmm: sequence u/y length mismatch");
  if (seq.y.cols() != p.d_obs || seq.u.cols() + 1 != p.d_in) {
    throw std::invalid_argument("iohmm: sequence dimensions do not match the model");
  }
  SweepCache c;
  c.phi.reserve(static_cast<std::size_t>(T));
  c.w.resize(T, N);
  c.shift.resize(T);
  c.c_raw.resize(T);
  c.trans.resize(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) {
    c.phi.push_back(iohmm_features(seq.u.row(t).transpose()));
    Vector logb(N);
    for (int j = 0; j < N; ++j) {
      logb[j] = p.log_emission(j, c.phi.back(), seq.y.row(t).transpose());
    }
    c.shift[t] = logb.maxCoeff();
    c.w.row(t) = (logb.array() - c.shift[t]).exp().matrix().transpose();
    if (t > 0) {
      Matrix A(N, N);
      for (int i = 0; i < N; ++i) {
        A.row(i) = p.transition_row(i, c.phi.back()).transpose();
      }
      c.trans[static_cast<std::size_t>(t)] = std::move(A);
    }
  }
  return c;
}

}  // namespace

ForwardBackward forward_backward(const IohmmParams& p, const SequencePair& seq) {
  p.validate();
  SweepCache c = prepare(p, seq);
  const long T = seq.length();
  const int N = p.n_states;

  ForwardBackward fb;
  fb.alpha.resize(T, N);
  for (long t = 0; t < T; ++t) {
    Vector a(N);
    if (t == 0) {
      a = p.pi.cwiseProduct(c.w.row(0).transpose());
    } else {
      const Vector pred =
          c.trans[static_cast<std::size_t>(t)].transpose() * fb.alpha.row(t - 1).transpose();
      a = pred.cwiseProduct(c.w.row(t).transpose());
    }
    const double raw = a.sum();
    if (!(raw > 0.0) || !std::isfinite(raw)) {
      throw std::runtime_error("iohmm: forward pass underflow at step " + std::to_string(t));
    }
    c.c_raw[t] = raw;
    fb.alpha.row(t) = (a / raw).transpose();
    fb.loglik += std::log(raw) + c.shift[t];
  }

  Matrix beta = Matrix::Ones(T, N);
  for (long t = T - 2; t >= 0; --t) {
    const Matrix& A = c.trans[static_cast<std::size_t>(t + 1)];
    const Vector wb = c.w.row(t + 1).transpose().cwiseProduct(beta.row(t + 1).transpose());
    beta.row(t) = (A * wb).transpose() / c.c_raw[t + 1];
  }

  fb.gamma.resize(T, N);
  for (long t = 0; t < T; ++t) {
    Vector g = fb.alpha.row(t).transpose().cwiseProduct(beta.row(t).transpose());
    const double s = g.sum();
    if (!(s > 0.0)) {
      throw std::runtime_error("iohmm: degenerate posterior at step " + std::to_string(t));
    }
    fb.gamma.row(t) = (g / s).transpose();
  }

  fb.xi.reserve(static_cast<std::size_t>(T > 0 ? T - 1 : 0));
  for (long t = 1; t < T; ++t) {
    const Matrix& A = c.trans[static_cast<std::size_t>(t)];
    Matrix x(N, N);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        x(i, j) = fb.alpha(t - 1, i) * A(i, j) * c.w(t, j) * beta(t, j) / c.c_raw[t];
      }
    }
    const double s = x.sum();
    if (s > 0.0) x /= s;
    fb.xi.push_back(std::move(x));
  }
  return fb;
}

double loglik(const IohmmParams& p, const std::vector<SequencePair>& seqs) {
  double total = 0.0;
  for (const auto& s : seqs) total += forward_backward(p, s).loglik;
  return total;
}

std::vector<int> decode_smoothed(const IohmmParams& p, const SequencePair& seq) {
  const ForwardBackward fb = forward_backward(p, seq);
  std::vector<int> states(static_cast<std::size_t>(seq.length()));
  for (long t = 0; t < seq.length(); ++t) {
    states[static_cast<std::size_t>(t)] = argmax_lowest(fb.gamma.row(t).transpose());
  }
  return states;
}

std::vector<int> decode_filtered(const IohmmParams& p, const SequencePair& seq) {
  const ForwardBackward fb = forward_backward(p, seq);
  std::vector<int> states(static_cast<std::size_t>(seq.length()));
  for (long t = 0; t < seq.length(); ++t) {
    states[static_cast<std::size_t>(t)] = argmax_lowest(fb.alpha.row(t).transpose());
  }
  return states;
}

IohmmFilter::IohmmFilter(IohmmParams params) : params_(std::move(params)) {
  params_.validate();
  belief_ = params_.pi;
}

void IohmmFilter::reset() {
  belief_ = params_.pi;
  t_ = 0;
}

void IohmmFilter::push(const Vector& u_row, const Vector& y_row) {
  const Vector phi = iohmm_features(u_row);
  const int N = params_.n_states;
  Vector pred(N);
  if (t_ == 0) {
    pred = params_.pi;
  } else {
    pred.setZero();
    for (int i = 0; i < N; ++i) {
      pred += belief_[i] * params_.transition_row(i, phi);
    }
  }
  Vector logb(N);
  for (int j = 0; j < N; ++j) logb[j] = params_.log_emission(j, phi, y_row);
  const double shift = logb.maxCoeff();
  Vector post = pred.cwiseProduct((logb.array() - shift).exp().matrix());
  const double s = post.sum();
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw std::runtime_error("iohmm: filter underflow at step " + std::to_string(t_));
  }
  belief_ = post / s;
  ++t_;
}

int IohmmFilter::state() const { return argmax_lowest(belief_); }

namespace {

struct SeqPosteriors {
  ForwardBackward fb;
  std::vector<Vector> phi;
};

// Expected complete-data transition objective for origin state i and its
// gradient, over all sequences.
double trans_objective(const Matrix& w_i, int i, const std::vector<SequencePair>& seqs,
                       const std::vector<SeqPosteriors>& post, Matrix* grad) {
  const int N = static_cast<int>(w_i.rows());
  double q = 0.0;
  if (grad) grad->setZero();
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const long T = seqs[s].length();
    for (long t = 1; t < T; ++t) {
      const Vector& phi = post[s].phi[static_cast<std::size_t>(t)];
      const Vector p = softmax(w_i * phi);
      const Matrix& xi = post[s].fb.xi[static_cast<std::size_t>(t - 1)];
      const double mass = post[s].fb.gamma(t - 1, i);
      for (int j = 0; j < N; ++j) {
        q += xi(i, j) * std::log(std::max(p[j], 1e-300));
      }
      if (grad) {
        const Vector coef = xi.row(i).transpose() - mass * p;
        *grad += coef * phi.transpose();
      }
    }
  }
  return q;
}

IohmmParams init_params(const std::vector<SequencePair>& seqs, const EmOptions& opts,
                        std::uint64_t seed) {
  Rng rng(seed);
  const int d_u = static_cast<int>(seqs[0].u.cols());
  const int m = static_cast<int>(seqs[0].y.cols());
  const int N = opts.n_states;

  std::vector<Vector> rows;
  for (const auto& s : seqs) {
    for (long t = 0; t < s.length(); ++t) rows.push_back(s.y.row(t).transpose());
  }
  const long n_rows = static_cast<long>(rows.size());
  if (n_rows < N) throw std::runtime_error("iohmm: fewer observations than states");

  Vector global_mean = Vector::Zero(m);
  for (const auto& r : rows) global_mean += r;
  global_mean /= static_cast<double>(n_rows);
  Vector global_var = Vector::Zero(m);
  for (const auto& r : rows) global_var += (r - global_mean).cwiseAbs2();
  global_var /= static_cast<double>(n_rows);
  global_var = global_var.cwiseMax(kVarFloor);

  std::vector<Vector> centers(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    centers[static_cast<std::size_t>(j)] =
        rows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n_rows)))];
  }
  std::vector<int> assign(rows.size(), 0);
  for (int it = 0; it < opts.kmeans_iters; ++it) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      int best = 0;
      double best_d = (rows[r] - centers[0]).squaredNorm();
      for (int j = 1; j < N; ++j) {
        const double d = (rows[r] - centers[static_cast<std::size_t>(j)]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      assign[r] = best;
    }
    for (int j = 0; j < N; ++j) {
      Vector sum = Vector::Zero(m);
      long count = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (assign[r] == j) {
          sum += rows[r];
          ++count;
        }
      }
      centers[static_cast<std::size_t>(j)] =
          count > 0 ? Vector(sum / static_cast<double>(count))
                    : rows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n_rows)))];
    }
  }

  IohmmParams p;
  p.n_states = N;
  p.d_in = d_u + 1;
  p.d_obs = m;
  p.pi = Vector::Constant(N, 1.0 / N);
  p.trans_w.assign(static_cast<std::size_t>(N), Matrix::Zero(N, p.d_in));
  p.emit_a.assign(static_cast<std::size_t>(N), Matrix::Zero(m, p.d_in));
  p.emit_var.assign(static_cast<std::size_t>(N), global_var);
  for (int j = 0; j < N; ++j) {
    p.emit_a[static_cast<std::size_t>(j)].col(0) = centers[static_cast<std::size_t>(j)];
    Vector var = Vector::Zero(m);
    long count = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (assign[r] == j) {
        var += (rows[r] - centers[static_cast<std::size_t>(j)]).cwiseAbs2();
        ++count;
      }
    }
    if (count > 1) {
      p.emit_var[static_cast<std::size_t>(j)] = (var / static_cast<double>(count))
                                                    .cwiseMax(kVarFloor);
    }
  }
  return p;
}

EmResult em_once(const std::vector<SequencePair>& seqs, const EmOptions& opts,
                 std::uint64_t seed) {
  IohmmParams p = init_params(seqs, opts, seed);
  const int N = p.n_states;
  const int d = p.d_in;
  const int m = p.d_obs;

  EmResult result;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    std::vector<SeqPosteriors> post;
    post.reserve(seqs.size());
    double total_ll = 0.0;
    for (const auto& s : seqs) {
      SeqPosteriors sp;
      sp.fb = forward_backward(p, s);
      sp.phi.reserve(static_cast<std::size_t>(s.length()));
      for (long t = 0; t < s.length(); ++t) {
        sp.phi.push_back(iohmm_features(s.u.row(t).transpose()));
      }
      total_ll += sp.fb.loglik;
      post.push_back(std::move(sp));
    }
    result.loglik_history.push_back(total_ll);
    result.loglik = total_ll;
    if (iter > 0 && total_ll - prev_ll < opts.tol) break;
    prev_ll = total_ll;

    // Initial distribution.
    Vector pi_acc = Vector::Zero(N);
    for (const auto& sp : post) pi_acc += sp.fb.gamma.row(0).transpose();
    p.pi = pi_acc / pi_acc.sum();

    // Emissions: weighted least squares per state, then residual variances.
    for (int j = 0; j < N; ++j) {
      Matrix spp = Matrix::Zero(d, d);
      Matrix syp = Matrix::Zero(m, d);
      double g = 0.0;
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        for (long t = 0; t < seqs[s].length(); ++t) {
          const double w = post[s].fb.gamma(t, j);
          const Vector& phi = post[s].phi[static_cast<std::size_t>(t)];
          spp += w * phi * phi.transpose();
          syp += w * seqs[s].y.row(t).transpose() * phi.transpose();
          g += w;
        }
      }
      if (g < 1e-8) {
        throw std::runtime_error("iohmm: state " + std::to_string(j) +
                                 " lost all responsibility during EM");
      }
      spp += 1e-9 * Matrix::Identity(d, d);
      const Matrix a = spp.ldlt().solve(syp.transpose()).transpose();
      Vector var = Vector::Zero(m);
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        for (long t = 0; t < seqs[s].length(); ++t) {
          const double w = post[s].fb.gamma(t, j);
          const Vector resid =
              seqs[s].y.row(t).transpose() - a * post[s].phi[static_cast<std::size_t>(t)];
          var += w * resid.cwiseAbs2();
        }
      }
      p.emit_a[static_cast<std::size_t>(j)] = a;
      p.emit_var[static_cast<std::size_t>(j)] = (var / g).cwiseMax(kVarFloor);
    }

    // Transitions: backtracking gradient ascent on the expected objective;
    // never accepts a step that lowers it, so the EM bound holds.
    for (int i = 0; i < N; ++i) {
      Matrix w_i = p.trans_w[static_cast<std::size_t>(i)];
      double step = 1.0;
      for (int it = 0; it < opts.trans_grad_iters; ++it) {
        Matrix grad(N, d);
        const double q0 = trans_objective(w_i, i, seqs, post, &grad);
        const double gn = grad.norm();
        if (gn < 1e-10) break;
        double s = step;
        bool moved = false;
        while (s > 1e-12) {
          const Matrix cand = w_i + s * grad;
          if (trans_objective(cand, i, seqs, post, nullptr) > q0) {
            w_i = cand;
            step = s * 2.0;
            moved = true;
            break;
          }
          s *= 0.5;
        }
        if (!moved) break;
      }
      p.trans_w[static_cast<std::size_t>(i)] = w_i;
    }
  }
  result.params = std::move(p);
  return result;
}

}  // namespace

EmResult em_fit(const std::vector<SequencePair>& seqs, const EmOptions& opts,
                std::uint64_t seed) {
  if (seqs.empty()) throw std::invalid_argument("iohmm: no sequences to fit");
  if (opts.n_states < 1) throw std::invalid_argument("iohmm: need at least one state");
  EmResult best;
  bool have = false;
  std::string last_error;
  for (int r = 0; r < opts.restarts; ++r) {
    try {
      EmResult res = em_once(seqs, opts, derive_seed(seed, seed_stream::kIohmm, r));
      res.restart_index = r;
      if (!have || res.loglik > best.loglik) {
        best = std::move(res);
        have = true;
      }
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  if (!have) {
    throw std::runtime_error("iohmm: every EM restart failed; last error: " + last_error);
  }
  return best;
}

void IohmmParams::save(const std::string& path) const {
  validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("iohmm: cannot open '" + path + "' for writing");
  os << "resrl-iohmm 1\n";
  os << "dims " << n_states << ' ' << d_in << ' ' << d_obs << '\n';
  os << "pi\n";
  write_block(os, pi.data(), pi.size());
  for (int i = 0; i < n_states; ++i) {
    os << "trans_w " << i << '\n';
    const Matrix& w = trans_w[static_cast<std::size_t>(i)];
    for (long r = 0; r < w.rows(); ++r) {
      for (long c2 = 0; c2 < w.cols(); ++c2) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", w(r, c2));
        os << buf << '\n';
      }
    }
  }
  for (int j = 0; j < n_states; ++j) {
    os << "emit_a " << j << '\n';
    const Matrix& a = emit_a[static_cast<std::size_t>(j)];
    for (long r = 0; r < a.rows(); ++r) {
      for (long c2 = 0; c2 < a.cols(); ++c2) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", a(r, c2));
        os << buf << '\n';
      }
    }
    os << "emit_var " << j << '\n';
    write_block(os, emit_var[static_cast<std::size_t>(j)].data(),
                emit_var[static_cast<std::size_t>(j)].size());
  }
  if (!os) throw std::runtime_error("iohmm: failed while writing '" + path + "'");
}

IohmmParams IohmmParams::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("iohmm: cannot open '" + path + "'");
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "resrl-iohmm" || version != 1) {
    throw std::runtime_error("iohmm: '" + path + "' is not a version-1 model file");
  }
  std::string key;
  IohmmParams p;
  is >> key >> p.n_states >> p.d_in >> p.d_obs;
  if (key != "dims" || p.n_states < 1) {
    throw std::runtime_error("iohmm: malformed model file '" + path + "'");
  }
  is >> key;
  if (key != "pi") throw std::runtime_error("iohmm: malformed model file '" + path + "'");
  p.pi.resize(p.n_states);
  read_block(is, p.pi.data(), p.n_states, "pi");
  p.trans_w.assign(static_cast<std::size_t>(p.n_states), Matrix(p.n_states, p.d_in));
  for (int i = 0; i < p.n_states; ++i) {
    int idx = -1;
    is >> key >> idx;
    if (key != "trans_w" || idx != i) {
      throw std::runtime_error("iohmm: malformed model file '" + path + "'");
    }
    Matrix& w = p.trans_w[static_cast<std::size_t>(i)];
    for (long r = 0; r < w.rows(); ++r) {
      for (long c2 = 0; c2 < w.cols(); ++c2) {
        if (!(is >> w(r, c2))) {
          throw std::runtime_error("iohmm: model file truncated in trans_w");
        }
      }
    }
  }
  p.emit_a.assign(static_cast<std::size_t>(p.n_states), Matrix(p.d_obs, p.d_in));
  p.emit_var.assign(static_cast<std::size_t>(p.n_states), Vector(p.d_obs));
  for (int j = 0; j < p.n_states; ++j) {
    int idx = -1;
    is >> key >> idx;
    if (key != "emit_a" || idx != j) {
      throw std::runtime_error("iohmm: malformed model file '" + path + "'");
    }
    Matrix& a = p.emit_a[static_cast<std::size_t>(j)];
    for (long r = 0; r < a.rows(); ++r) {
      for (long c2 = 0; c2 < a.cols(); ++c2) {
        if (!(is >> a(r, c2))) {
          throw std::runtime_error("iohmm: model file truncated in emit_a");
        }
      }
    }
    is >> key >> idx;
    if (key != "emit_var" || idx != j) {
      throw std::runtime_error("iohmm: malformed model file '" + path + "'");
    }
    read_block(is, p.emit_var[static_cast<std::size_t>(j)].data(), p.d_obs, "emit_var");
  }
  p.validate();
  return p;
}

}  // namespace resrl
