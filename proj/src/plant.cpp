#include "resrl/plant.hpp"

#include <cmath>
#include <stdexcept>

namespace resrl {

namespace {
Vector vec_from_config(const Config& c, const std::string& key, int m_y, double fallback) {
  if (!c.has(key)) return Vector::Constant(m_y, fallback);
  const auto vals = c.get_vec(key);
  if (vals.size() == 1) return Vector::Constant(m_y, vals[0]);
  if (static_cast<int>(vals.size()) != m_y) {
    throw std::runtime_error("config: key '" + key + "' expects 1 or " + std::to_string(m_y) +
                             " values, got " + std::to_string(vals.size()));
  }
  return Eigen::Map<const Vector>(vals.data(), m_y);
}
}  // namespace

int PlantConfig::steps() const {
  const double n = episode_hours / dt;
  return static_cast<int>(std::llround(n));
}

void PlantConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("plant config: field '" + field + "': " + why);
  };
  if (m_y < 1) bad("m_y", "must be >= 1");
  if (!(dt > 0.0)) bad("dt", "must be > 0");
  const double n = episode_hours / dt;
  if (!(n > 0.0) || std::abs(n - std::llround(n)) > 1e-6 * std::max(1.0, n)) {
    bad("episode_hours", "episode_hours/dt must be a positive integer step count");
  }
  if (tau.size() != m_y) bad("tau", "size must equal m_y");
  if ((tau.array() <= 0.0).any()) bad("tau", "must be > 0 elementwise");
  if (gain.size() != m_y) bad("gain", "size must equal m_y");
  if (coupling.rows() != m_y || coupling.cols() != m_y) bad("coupling", "must be m_y x m_y");
  if (setpoint.size() != m_y) bad("setpoint", "size must equal m_y");
  if (y_low.size() != m_y || y_high.size() != m_y) bad("y_bounds", "sizes must equal m_y");
  if (!((y_low.array() < setpoint.array()).all() && (setpoint.array() < y_high.array()).all())) {
    bad("y_bounds", "must satisfy y_low < setpoint < y_high elementwise");
  }
  if (!(u_low < u_high)) bad("u_bounds", "u_low must be < u_high");
  if (noise_sd < 0.0) bad("noise_sd", "must be >= 0");
  if (history_depth < 0) bad("history_depth", "must be >= 0");
}

PlantConfig PlantConfig::siso_default() {
  PlantConfig c;
  c.m_y = 1;
  c.dt = 0.01;
  c.episode_hours = 5.0;
  c.tau = Vector::Constant(1, 0.1);
  c.gain = Vector::Constant(1, 4.0);
  c.coupling = Matrix::Identity(1, 1);
  c.setpoint = Vector::Constant(1, 1.0);
  c.noise_sd = 0.004;
  c.y_low = Vector::Constant(1, 0.25);
  c.y_high = Vector::Constant(1, 1.75);
  return c;
}

PlantConfig PlantConfig::miso_default() {
  PlantConfig c;
  c.m_y = 8;
  c.dt = 0.01;
  c.episode_hours = 2.5;
  c.tau.resize(8);
  c.tau << 0.10, 0.08, 0.12, 0.15, 0.09, 0.11, 0.13, 0.07;
  c.setpoint.resize(8);
  c.setpoint << 1.0, 0.9, 1.1, 0.8, 1.2, 0.95, 1.05, 1.0;
  // One actuator drives every variable; gains put the undisturbed
  // equilibrium at u = 0.25 for all setpoints simultaneously.
  c.gain = 4.0 * c.setpoint;
  c.coupling = Matrix::Identity(8, 8);
  for (int i = 0; i < 8; ++i) {
    c.coupling(i, (i + 1) % 8) = 0.12;
    c.coupling(i, (i + 7) % 8) = -0.08;
  }
  c.noise_sd = 0.004;
  c.y_low = c.setpoint.array() - 0.75;
  c.y_high = c.setpoint.array() + 0.75;
  return c;
}

PlantConfig PlantConfig::from_config(const Config& c) {
  const std::string preset = c.get_str("plant.preset", "siso");
  PlantConfig p;
  if (preset == "siso") {
    p = siso_default();
  } else if (preset == "miso") {
    p = miso_default();
  } else {
    throw std::runtime_error("config: plant.preset must be 'siso' or 'miso', got '" + preset + "'");
  }
  p.m_y = c.get_int("plant.m_y", p.m_y);
  p.dt = c.get_double("plant.dt", p.dt);
  p.episode_hours = c.get_double("plant.episode_hours", p.episode_hours);
  if (p.m_y != p.tau.size()) {
    // m_y overridden away from the preset: rebuild vectors from scalars below.
    p.tau = Vector::Constant(p.m_y, p.tau[0]);
    p.gain = Vector::Constant(p.m_y, p.gain[0]);
    p.setpoint = Vector::Constant(p.m_y, p.setpoint[0]);
    p.y_low = Vector::Constant(p.m_y, p.y_low[0]);
    p.y_high = Vector::Constant(p.m_y, p.y_high[0]);
    p.coupling = Matrix::Identity(p.m_y, p.m_y);
  }
  p.tau = vec_from_config(c, "plant.tau", p.m_y, p.tau[0]);
  if (c.has("plant.gain")) p.gain = vec_from_config(c, "plant.gain", p.m_y, 0.0);
  if (c.has("plant.setpoint")) p.setpoint = vec_from_config(c, "plant.setpoint", p.m_y, 0.0);
  if (c.has("plant.y_low")) p.y_low = vec_from_config(c, "plant.y_low", p.m_y, 0.0);
  if (c.has("plant.y_high")) p.y_high = vec_from_config(c, "plant.y_high", p.m_y, 0.0);
  if (c.has("plant.coupling")) {
    const auto vals = c.get_vec("plant.coupling");
    if (static_cast<int>(vals.size()) != p.m_y * p.m_y) {
      throw std::runtime_error("config: plant.coupling expects m_y*m_y row-major values");
    }
    p.coupling = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        vals.data(), p.m_y, p.m_y);
  }
  p.noise_sd = c.get_double("plant.noise_sd", p.noise_sd);
  p.u_low = c.get_double("plant.u_low", p.u_low);
  p.u_high = c.get_double("plant.u_high", p.u_high);
  p.history_depth = c.get_int("plant.history_depth", p.history_depth);
  p.validate();
  return p;
}

void DisturbanceProfile::validate(int total_steps, int m_y) const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("disturbance: field '" + field + "': " + why);
  };
  if (magnitude < 0.0 || magnitude > 1.0) bad("magnitude", "must be in [0, 1]");
  if (target_var < 0 || target_var >= m_y) bad("target_var", "out of range");
  if (magnitude == 0.0) return;
  if (on_lo < 0 || on_lo > on_hi) bad("on_lo/on_hi", "need 0 <= on_lo <= on_hi");
  if (on_hi >= off_lo) bad("on_hi/off_lo", "need on_hi < off_lo so that t_on < t_off");
  if (off_lo > off_hi || off_hi > total_steps) bad("off_lo/off_hi", "need off_lo <= off_hi <= step count");
}

DisturbanceProfile DisturbanceProfile::from_config(const Config& c, int total_steps) {
  DisturbanceProfile d;
  d.magnitude = c.get_double("disturbance.magnitude", 0.65);
  d.target_var = c.get_int("disturbance.target_var", 0);
  // Ranges may be given as absolute steps or as fractions of the episode.
  auto steps_of = [&](const std::string& key, double frac_fallback) {
    if (c.has(key)) {
      const double v = c.get_double(key);
      return v <= 1.0 ? static_cast<int>(std::llround(v * total_steps)) : static_cast<int>(std::llround(v));
    }
    return static_cast<int>(std::llround(frac_fallback * total_steps));
  };
  d.on_lo = steps_of("disturbance.on_lo", 0.10);
  d.on_hi = steps_of("disturbance.on_hi", 0.45);
  d.off_lo = steps_of("disturbance.off_lo", 0.55);
  d.off_hi = steps_of("disturbance.off_hi", 0.90);
  return d;
}

double setpoint_reward(const Vector& y, const Vector& setpoint) {
  if (y.size() != setpoint.size()) {
    throw std::invalid_argument("setpoint_reward: y and setpoint length mismatch (" +
                                std::to_string(y.size()) + " vs " + std::to_string(setpoint.size()) + ")");
  }
  return -(y - setpoint).cwiseAbs().sum();
}

Matrix Observation::as_sequence() const {
  const int width = m_y + 1;
  Matrix seq(history_depth + 1, width);
  for (int t = 0; t <= history_depth; ++t) {
    seq.row(t) = entries.segment(t * width, width).transpose();
  }
  return seq;
}

Vector Observation::newest_y() const {
  return entries.segment(history_depth * (m_y + 1), m_y);
}

Plant::Plant(PlantConfig config, DisturbanceProfile disturbance, std::uint64_t seed)
    : cfg_(std::move(config)), dist_(disturbance), rng_(seed) {
  cfg_.validate();
  dist_.validate(cfg_.steps(), cfg_.m_y);
  y_ = cfg_.setpoint;
  if (dist_.magnitude > 0.0) {
    t_on_ = rng_.uniform_int(dist_.on_lo, dist_.on_hi + 1);
    t_off_ = rng_.uniform_int(dist_.off_lo, dist_.off_hi + 1);
  } else {
    t_on_ = t_off_ = cfg_.steps() + 1;  // never active
  }
  for (int i = 0; i < cfg_.history_depth; ++i) {
    history_.emplace_back(Vector::Zero(cfg_.m_y), 0.0);
  }
  history_.emplace_back(y_, 0.0);
}

StepResult Plant::step(double u, double a_expert) {
  if (shutdown_) {
    throw std::logic_error("plant: step() called after emergency shutdown at t=" + std::to_string(t_));
  }
  if (!std::isfinite(u) || !std::isfinite(a_expert)) {
    throw std::invalid_argument("plant: non-finite actuation");
  }
  if (u < cfg_.u_low - 1e-12 || u > cfg_.u_high + 1e-12) {
    throw std::invalid_argument("plant: u=" + std::to_string(u) + " outside u_bounds");
  }
  const bool disturbed = disturbance_at(t_);
  const double d = disturbed ? dist_.magnitude : 0.0;

  Vector drive = cfg_.gain * u;
  drive[dist_.target_var] *= (1.0 - d);
  y_ += (cfg_.dt * cfg_.coupling * (drive - y_)).cwiseQuotient(cfg_.tau);
  if (cfg_.noise_sd > 0.0) {
    for (int i = 0; i < cfg_.m_y; ++i) y_[i] += rng_.gaussian(0.0, cfg_.noise_sd);
  }
  ++t_;
  history_.pop_front();
  history_.emplace_back(y_, a_expert);
  shutdown_ = ((y_.array() < cfg_.y_low.array()) || (y_.array() > cfg_.y_high.array())).any();

  StepResult r;
  r.observation = observation();
  r.reward = setpoint_reward(y_, cfg_.setpoint);
  r.shutdown = shutdown_;
  r.y = y_;
  r.disturbance_active = disturbed;
  return r;
}

Observation Plant::observation() const {
  Observation o;
  o.history_depth = cfg_.history_depth;
  o.m_y = cfg_.m_y;
  o.entries.resize(Observation::length(cfg_.history_depth, cfg_.m_y));
  int k = 0;
  for (const auto& [y, a] : history_) {
    o.entries.segment(k, cfg_.m_y) = y;
    o.entries[k + cfg_.m_y] = a;
    k += cfg_.m_y + 1;
  }
  return o;
}

double Plant::worst_reward() const {
  double total = 0.0;
  for (int i = 0; i < cfg_.m_y; ++i) {
    total -= std::max(std::abs(cfg_.y_low[i] - cfg_.setpoint[i]), std::abs(cfg_.y_high[i] - cfg_.setpoint[i]));
  }
  return total;
}

}  // namespace resrl
