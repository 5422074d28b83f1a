#include "resrl/specialization.hpp"

#include "resrl/csv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace resrl {

namespace {

Matrix obs_matrix(const std::vector<const Transition*>& batch, bool next) {
  const long B = static_cast<long>(batch.size());
  const long n = batch[0]->obs.entries.size();
  Matrix m(n, B);
  for (long b = 0; b < B; ++b) {
    m.col(b) = next ? batch[static_cast<std::size_t>(b)]->obs_next.entries
                    : batch[static_cast<std::size_t>(b)]->obs.entries;
  }
  return m;
}

}  // namespace

double value_update_step(Network& vnet, const std::vector<const Transition*>& batch,
                         double gamma) {
  if (batch.empty()) throw std::invalid_argument("specialization: empty batch");
  const long B = static_cast<long>(batch.size());
  const Matrix v_next = vnet.forward_batch({obs_matrix(batch, true)});
  Vector targets(B);
  for (long b = 0; b < B; ++b) {
    const Transition& tr = *batch[static_cast<std::size_t>(b)];
    targets[b] = tr.reward + (tr.done ? 0.0 : gamma * v_next(0, b));
  }
  const Matrix v = vnet.forward_batch({obs_matrix(batch, false)});
  Matrix dv(1, B);
  double loss = 0.0;
  for (long b = 0; b < B; ++b) {
    const double diff = targets[b] - v(0, b);
    loss += 0.5 * diff * diff;
    dv(0, b) = -diff / static_cast<double>(B);
  }
  vnet.zero_grad();
  vnet.backward_batch(dv);
  vnet.apply_update();
  return loss / static_cast<double>(B);
}

double train_value(Network& vnet, const ReplayBuffer& expert, long warmup_steps, int batch_size,
                   double gamma, Rng& batch_rng) {
  double last = 0.0;
  for (long s = 0; s < warmup_steps; ++s) {
    const auto batch = expert.sample(static_cast<std::size_t>(batch_size), batch_rng);
    last = value_update_step(vnet, batch, gamma);
  }
  return last;
}

bool StateClassification::is_abnormal(int state) const {
  return std::binary_search(abnormal.begin(), abnormal.end(), state);
}

StateClassification classify_states(Network& vnet, const IohmmParams& params,
                                    const std::vector<std::vector<Transition>>& episodes,
                                    const std::vector<SequencePair>& sequences) {
  if (episodes.size() != sequences.size()) {
    throw std::invalid_argument("specialization: episode/sequence count mismatch");
  }
  const int N = params.n_states;
  StateClassification out;
  std::vector<double> sum(static_cast<std::size_t>(N), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(N), 0.0);
  std::vector<long> count(static_cast<std::size_t>(N), 0);

  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto path = decode_smoothed(params, sequences[e]);
    if (path.size() != episodes[e].size()) {
      throw std::runtime_error("specialization: decoded path length mismatch");
    }
    for (std::size_t t = 0; t < path.size(); ++t) {
      const int s = path[t];
      const double v = vnet.forward(episodes[e][t].obs.entries)[0];
      sum[static_cast<std::size_t>(s)] += v;
      sumsq[static_cast<std::size_t>(s)] += v * v;
      ++count[static_cast<std::size_t>(s)];
    }
    out.decoded.push_back(path);
  }

  for (int s = 0; s < N; ++s) {
    StateStats st;
    st.state = s;
    st.count = count[static_cast<std::size_t>(s)];
    if (st.count > 0) {
      const double n = static_cast<double>(st.count);
      st.mean_v = sum[static_cast<std::size_t>(s)] / n;
      const double var =
          std::max(0.0, sumsq[static_cast<std::size_t>(s)] / n - st.mean_v * st.mean_v);
      st.sd_v = std::sqrt(var);
      const double half = 1.96 * st.sd_v / std::sqrt(n);
      st.ci_high = st.mean_v + half;
      st.ci_low = st.mean_v - half;
    } else {
      out.empty_states.push_back(s);
    }
    out.stats.push_back(st);
  }

  std::vector<int> visited;
  for (const auto& st : out.stats) {
    if (st.count > 0) visited.push_back(st.state);
  }
  if (visited.empty()) {
    throw std::runtime_error("specialization: no decoded steps to classify");
  }
  std::vector<int> negative;
  for (int s : visited) {
    if (out.stats[static_cast<std::size_t>(s)].mean_v < 0.0) negative.push_back(s);
  }
  const int argmin = *std::min_element(visited.begin(), visited.end(), [&](int a, int b) {
    return out.stats[static_cast<std::size_t>(a)].mean_v <
           out.stats[static_cast<std::size_t>(b)].mean_v;
  });
  if (negative.empty() || negative.size() == visited.size()) {
    // Either nothing scores negative or everything does; in both cases the
    // rule carries no contrast and the gate falls back to the single worst
    // state.
    out.abnormal = {argmin};
  } else {
    out.abnormal = negative;
  }
  std::sort(out.abnormal.begin(), out.abnormal.end());
  for (int s : out.abnormal) {
    out.stats[static_cast<std::size_t>(s)].specialized = true;
  }
  return out;
}

bool gate(int decoded_state, const StateClassification& classification) {
  return classification.is_abnormal(decoded_state);
}

void write_classification_csv(const std::string& path, const StateClassification& c) {
  CsvWriter w(path, {"state", "mean_v", "sd_v", "ci_high", "ci_low", "count", "specialized"});
  for (const auto& st : c.stats) {
    w.field(st.state)
        .field(st.mean_v)
        .field(st.sd_v)
        .field(st.ci_high)
        .field(st.ci_low)
        .field(static_cast<std::int64_t>(st.count))
        .field(st.specialized ? 1 : 0);
    w.end_row();
  }
}

void write_state_distribution_csv(const std::string& path, Network& vnet,
                                  const std::vector<std::vector<Transition>>& episodes,
                                  const StateClassification& c) {
  if (c.decoded.size() != episodes.size()) {
    throw std::invalid_argument("specialization: classification does not match episodes");
  }
  CsvWriter w(path, {"episode", "t", "state", "v", "reward"});
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (std::size_t t = 0; t < episodes[e].size(); ++t) {
      const double v = vnet.forward(episodes[e][t].obs.entries)[0];
      w.field(static_cast<int>(e))
          .field(static_cast<int>(t))
          .field(c.decoded[e][t])
          .field(v)
          .field(episodes[e][t].reward);
      w.end_row();
    }
  }
}

}  // namespace resrl
