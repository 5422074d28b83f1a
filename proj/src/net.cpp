#include "resrl/net.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace resrl {

namespace {

Matrix init_weights(int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix w(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      w(i, j) = rng.uniform(-bound, bound);
    }
  }
  return w;
}

Matrix sigmoid(const Matrix& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

void write_values(std::ostream& os, const double* p, std::size_t n) {
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", p[i]);
    os << buf << '\n';
  }
}

void read_values(std::istream& is, double* p, std::size_t n, const std::string& what) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(is >> p[i])) {
      throw std::runtime_error("net: checkpoint truncated while reading " + what);
    }
  }
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Tanh:
      return "tanh";
    case Activation::Linear:
      return "linear";
  }
  throw std::logic_error("net: unknown activation");
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  if (s == "linear") return Activation::Linear;
  throw std::runtime_error("net: unknown activation '" + s + "'");
}

DenseLayer::DenseLayer(int in, int out, Activation activation, Rng& rng)
    : w(init_weights(out, in, in, rng)),
      b(Vector::Zero(out)),
      act(activation),
      dw(Matrix::Zero(out, in)),
      db(Vector::Zero(out)) {}

Matrix DenseLayer::forward(const Matrix& x) {
  if (x.rows() != w.cols()) {
    throw std::runtime_error("net: dense layer expected input dim " + std::to_string(w.cols()) +
                             ", got " + std::to_string(x.rows()));
  }
  x_cache_ = x;
  pre_cache_ = (w * x).colwise() + b;
  has_cache_ = true;
  switch (act) {
    case Activation::Relu:
      return pre_cache_.cwiseMax(0.0);
    case Activation::Sigmoid:
      return sigmoid(pre_cache_);
    case Activation::Tanh:
      return pre_cache_.array().tanh().matrix();
    case Activation::Linear:
      return pre_cache_;
  }
  throw std::logic_error("net: unknown activation");
}

Matrix DenseLayer::backward(const Matrix& dy) {
  if (!has_cache_) {
    throw std::logic_error("net: dense backward without forward");
  }
  Matrix dpre;
  switch (act) {
    case Activation::Relu:
      dpre = dy.cwiseProduct((pre_cache_.array() > 0.0).cast<double>().matrix());
      break;
    case Activation::Sigmoid: {
      const Matrix s = sigmoid(pre_cache_);
      dpre = dy.cwiseProduct(s.cwiseProduct(Matrix::Ones(s.rows(), s.cols()) - s));
      break;
    }
    case Activation::Tanh: {
      const Matrix t = pre_cache_.array().tanh().matrix();
      dpre = dy.cwiseProduct((1.0 - t.array().square()).matrix());
      break;
    }
    case Activation::Linear:
      dpre = dy;
      break;
  }
  dw += dpre * x_cache_.transpose();
  db += dpre.rowwise().sum();
  return w.transpose() * dpre;
}

void DenseLayer::zero_grad() {
  dw.setZero();
  db.setZero();
}

LstmLayer::LstmLayer(int in, int hidden, Rng& rng)
    : w_in(init_weights(4 * hidden, in, in + hidden, rng)),
      w_rec(init_weights(4 * hidden, hidden, in + hidden, rng)),
      b(Vector::Zero(4 * hidden)),
      dw_in(Matrix::Zero(4 * hidden, in)),
      dw_rec(Matrix::Zero(4 * hidden, hidden)),
      db(Vector::Zero(4 * hidden)) {
  // Forget gate bias starts open so early training does not erase state.
  b.segment(hidden, hidden).setOnes();
}

std::vector<Matrix> LstmLayer::forward(const std::vector<Matrix>& xs) {
  if (xs.empty()) {
    throw std::runtime_error("net: lstm forward on empty sequence");
  }
  const int h = hidden_dim();
  const auto B = xs[0].cols();
  cache_.clear();
  cache_.reserve(xs.size());
  Matrix h_prev = Matrix::Zero(h, B);
  Matrix c_prev = Matrix::Zero(h, B);
  std::vector<Matrix> hs;
  hs.reserve(xs.size());
  for (const Matrix& x : xs) {
    if (x.rows() != w_in.cols() || x.cols() != B) {
      throw std::runtime_error("net: lstm sequence step has inconsistent shape");
    }
    Matrix z = ((w_in * x + w_rec * h_prev).colwise() + b);
    StepCache sc;
    sc.x = x;
    sc.h_prev = h_prev;
    sc.c_prev = c_prev;
    sc.i = sigmoid(z.topRows(h));
    sc.f = sigmoid(z.middleRows(h, h));
    sc.g = z.middleRows(2 * h, h).array().tanh().matrix();
    sc.o = sigmoid(z.bottomRows(h));
    sc.c = sc.f.cwiseProduct(c_prev) + sc.i.cwiseProduct(sc.g);
    sc.tanh_c = sc.c.array().tanh().matrix();
    Matrix h_t = sc.o.cwiseProduct(sc.tanh_c);
    hs.push_back(h_t);
    h_prev = h_t;
    c_prev = sc.c;
    cache_.push_back(std::move(sc));
  }
  return hs;
}

std::vector<Matrix> LstmLayer::backward(const std::vector<Matrix>& dh) {
  if (dh.size() != cache_.size()) {
    throw std::logic_error("net: lstm backward step count mismatch");
  }
  const int h = hidden_dim();
  const auto T = static_cast<long>(cache_.size());
  const auto B = cache_[0].x.cols();
  std::vector<Matrix> dx(cache_.size());
  Matrix dh_next = Matrix::Zero(h, B);
  Matrix dc_next = Matrix::Zero(h, B);
  for (long t = T - 1; t >= 0; --t) {
    const StepCache& sc = cache_[static_cast<std::size_t>(t)];
    Matrix dht = dh[static_cast<std::size_t>(t)] + dh_next;
    Matrix dot = dht.cwiseProduct(sc.tanh_c);
    Matrix dc = dht.cwiseProduct(sc.o).cwiseProduct(
                    (1.0 - sc.tanh_c.array().square()).matrix()) +
                dc_next;
    Matrix di = dc.cwiseProduct(sc.g);
    Matrix df = dc.cwiseProduct(sc.c_prev);
    Matrix dg = dc.cwiseProduct(sc.i);
    dc_next = dc.cwiseProduct(sc.f);

    Matrix dz(4 * h, B);
    dz.topRows(h) = di.cwiseProduct(sc.i).cwiseProduct((1.0 - sc.i.array()).matrix());
    dz.middleRows(h, h) = df.cwiseProduct(sc.f).cwiseProduct((1.0 - sc.f.array()).matrix());
    dz.middleRows(2 * h, h) = dg.cwiseProduct((1.0 - sc.g.array().square()).matrix());
    dz.bottomRows(h) = dot.cwiseProduct(sc.o).cwiseProduct((1.0 - sc.o.array()).matrix());

    dw_in += dz * sc.x.transpose();
    dw_rec += dz * sc.h_prev.transpose();
    db += dz.rowwise().sum();
    dx[static_cast<std::size_t>(t)] = w_in.transpose() * dz;
    dh_next = w_rec.transpose() * dz;
  }
  return dx;
}

void LstmLayer::zero_grad() {
  dw_in.setZero();
  dw_rec.setZero();
  db.setZero();
}

Network& Network::add_lstm(int hidden, Rng& rng) {
  if (!dense.empty()) {
    throw std::logic_error("net: recurrent layers must precede dense layers");
  }
  const int in = recurrent.empty() ? input_dim_ : recurrent.back().hidden_dim();
  recurrent.emplace_back(in, hidden, rng);
  return *this;
}

Network& Network::add_dense(int out, Activation act, Rng& rng) {
  int in;
  if (!dense.empty()) {
    in = dense.back().out_dim();
  } else if (!recurrent.empty()) {
    in = recurrent.back().hidden_dim();
  } else {
    in = input_dim_;
  }
  dense.emplace_back(in, out, act, rng);
  return *this;
}

int Network::output_dim() const {
  if (!dense.empty()) return dense.back().out_dim();
  if (!recurrent.empty()) return recurrent.back().hidden_dim();
  return input_dim_;
}

int Network::sequence_len() const { return recurrent.empty() ? 1 : -1; }

Matrix Network::forward_batch(const std::vector<Matrix>& xs) {
  if (xs.empty()) {
    throw std::runtime_error("net: forward on empty sequence");
  }
  if (recurrent.empty() && xs.size() != 1) {
    throw std::runtime_error("net: dense-only network given a sequence of length " +
                             std::to_string(xs.size()));
  }
  if (xs[0].rows() != input_dim_) {
    throw std::runtime_error("net: expected input dim " + std::to_string(input_dim_) + ", got " +
                             std::to_string(xs[0].rows()));
  }
  std::vector<Matrix> cur = xs;
  for (auto& layer : recurrent) {
    cur = layer.forward(cur);
  }
  Matrix v = cur.back();
  for (auto& layer : dense) {
    v = layer.forward(v);
  }
  forwarded_ = true;
  last_T_ = static_cast<int>(xs.size());
  return v;
}

Vector Network::forward(const Matrix& seq) {
  std::vector<Matrix> xs;
  xs.reserve(static_cast<std::size_t>(seq.rows()));
  for (long t = 0; t < seq.rows(); ++t) {
    xs.push_back(seq.row(t).transpose());
  }
  return forward_batch(xs).col(0);
}

Vector Network::forward(const Vector& x) {
  return forward_batch({x}).col(0);
}

std::vector<Matrix> Network::backward_batch(const Matrix& dout) {
  if (!forwarded_) {
    throw std::logic_error("net: backward without forward");
  }
  Matrix d = dout;
  for (auto it = dense.rbegin(); it != dense.rend(); ++it) {
    d = it->backward(d);
  }
  if (recurrent.empty()) {
    return {d};
  }
  std::vector<Matrix> dh(static_cast<std::size_t>(last_T_));
  const int h_last = recurrent.back().hidden_dim();
  for (int t = 0; t < last_T_; ++t) {
    dh[static_cast<std::size_t>(t)] = Matrix::Zero(h_last, d.cols());
  }
  dh.back() = d;
  for (auto it = recurrent.rbegin(); it != recurrent.rend(); ++it) {
    dh = it->backward(dh);
  }
  return dh;
}

void Network::zero_grad() {
  for (auto& l : recurrent) l.zero_grad();
  for (auto& l : dense) l.zero_grad();
}

std::vector<Network::ParamView> Network::param_views() {
  std::vector<ParamView> views;
  int li = 0;
  for (auto& l : recurrent) {
    const std::string tag = "lstm" + std::to_string(li++);
    views.push_back({l.w_in.data(), l.dw_in.data(), static_cast<std::size_t>(l.w_in.size()),
                     tag + ".w_in"});
    views.push_back({l.w_rec.data(), l.dw_rec.data(), static_cast<std::size_t>(l.w_rec.size()),
                     tag + ".w_rec"});
    views.push_back({l.b.data(), l.db.data(), static_cast<std::size_t>(l.b.size()), tag + ".b"});
  }
  li = 0;
  for (auto& l : dense) {
    const std::string tag = "dense" + std::to_string(li++);
    views.push_back({l.w.data(), l.dw.data(), static_cast<std::size_t>(l.w.size()), tag + ".w"});
    views.push_back({l.b.data(), l.db.data(), static_cast<std::size_t>(l.b.size()), tag + ".b"});
  }
  return views;
}

std::vector<Network::ParamView> Network::param_views() const {
  return const_cast<Network*>(this)->param_views();
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& v : param_views()) n += v.size;
  return n;
}

void Network::apply_update() {
  const std::size_t n = param_count();
  if (adam_m_.size() != static_cast<long>(n)) {
    adam_m_ = Vector::Zero(static_cast<long>(n));
    adam_v_ = Vector::Zero(static_cast<long>(n));
  }
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(adam_t_));
  std::size_t idx = 0;
  for (auto& view : param_views()) {
    for (std::size_t k = 0; k < view.size; ++k, ++idx) {
      const double g = view.grad[k];
      if (!std::isfinite(g)) {
        throw std::runtime_error("net: non-finite gradient in " + view.name);
      }
      double& m = adam_m_[static_cast<long>(idx)];
      double& v = adam_v_[static_cast<long>(idx)];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      view.value[k] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
    }
  }
}

void Network::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("net: cannot open '" + path + "' for writing");
  }
  os << "resrl-net 1\n";
  os << "input " << input_dim_ << '\n';
  for (const auto& l : recurrent) {
    os << "lstm " << l.hidden_dim() << '\n';
  }
  for (const auto& l : dense) {
    os << "dense " << l.out_dim() << ' ' << activation_name(l.act) << '\n';
  }
  os << "end_arch\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", lr_);
  os << "lr " << buf << '\n';
  os << "adam_t " << adam_t_ << '\n';
  const std::size_t n = param_count();
  os << "params " << n << '\n';
  for (const auto& v : param_views()) {
    write_values(os, v.value, v.size);
  }
  Vector m = adam_m_, vv = adam_v_;
  if (m.size() != static_cast<long>(n)) {
    m = Vector::Zero(static_cast<long>(n));
    vv = Vector::Zero(static_cast<long>(n));
  }
  os << "adam_m\n";
  write_values(os, m.data(), n);
  os << "adam_v\n";
  write_values(os, vv.data(), n);
  if (!os) {
    throw std::runtime_error("net: failed while writing '" + path + "'");
  }
}

Network Network::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("net: cannot open '" + path + "'");
  }
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "resrl-net" || version != 1) {
    throw std::runtime_error("net: '" + path + "' is not a version-1 network checkpoint");
  }
  std::string key;
  int input = 0;
  is >> key >> input;
  if (key != "input") {
    throw std::runtime_error("net: malformed checkpoint '" + path + "' (missing input)");
  }
  Network net(input);
  Rng dummy(0);
  while (is >> key) {
    if (key == "end_arch") break;
    if (key == "lstm") {
      int h = 0;
      is >> h;
      net.add_lstm(h, dummy);
    } else if (key == "dense") {
      int out = 0;
      std::string act;
      is >> out >> act;
      net.add_dense(out, activation_from_name(act), dummy);
    } else {
      throw std::runtime_error("net: malformed checkpoint '" + path + "' (layer '" + key + "')");
    }
  }
  is >> key >> net.lr_;
  if (key != "lr") {
    throw std::runtime_error("net: malformed checkpoint '" + path + "' (missing lr)");
  }
  is >> key >> net.adam_t_;
  if (key != "adam_t") {
    throw std::runtime_error("net: malformed checkpoint '" + path + "' (missing adam_t)");
  }
  std::size_t n = 0;
  is >> key >> n;
  if (key != "params" || n != net.param_count()) {
    throw std::runtime_error("net: checkpoint '" + path + "' parameter count mismatch");
  }
  for (auto& v : net.param_views()) {
    read_values(is, v.value, v.size, v.name);
  }
  net.adam_m_ = Vector::Zero(static_cast<long>(n));
  net.adam_v_ = Vector::Zero(static_cast<long>(n));
  is >> key;
  if (key != "adam_m") {
    throw std::runtime_error("net: malformed checkpoint '" + path + "' (missing adam_m)");
  }
  read_values(is, net.adam_m_.data(), n, "adam_m");
  is >> key;
  if (key != "adam_v") {
    throw std::runtime_error("net: malformed checkpoint '" + path + "' (missing adam_v)");
  }
  read_values(is, net.adam_v_.data(), n, "adam_v");
  return net;
}

void polyak(Network& target, const Network& online, double rho) {
  auto tv = target.param_views();
  auto ov = online.param_views();
  if (tv.size() != ov.size()) {
    throw std::runtime_error("net: polyak between different architectures");
  }
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (tv[i].size != ov[i].size) {
      throw std::runtime_error("net: polyak between different architectures");
    }
    for (std::size_t k = 0; k < tv[i].size; ++k) {
      tv[i].value[k] = rho * tv[i].value[k] + (1.0 - rho) * ov[i].value[k];
    }
  }
}

}  // namespace resrl
