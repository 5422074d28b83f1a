#pragma once

#include "resrl/common.hpp"
#include "resrl/iohmm.hpp"
#include "resrl/net.hpp"
#include "resrl/td3.hpp"

#include <string>
#include <vector>

namespace resrl {

// One bootstrapped value regression step: L_V = mean 0.5*((r + gamma*V(s'))
// - V(s))^2 with the bootstrap treated as a constant (and cut at terminal
// steps). Returns the loss before the update.
double value_update_step(Network& vnet, const std::vector<const Transition*>& batch,
                         double gamma);

// W update steps on batches drawn from the expert buffer.
double train_value(Network& vnet, const ReplayBuffer& expert, long warmup_steps, int batch_size,
                   double gamma, Rng& batch_rng);

struct StateStats {
  int state = 0;
  double mean_v = 0.0;
  double sd_v = 0.0;
  double ci_high = 0.0;  // mean + 1.96*sd/sqrt(count)
  double ci_low = 0.0;
  long count = 0;
  bool specialized = false;
};

struct StateClassification {
  std::vector<StateStats> stats;              // one row per hidden state
  std::vector<int> abnormal;                  // x*, ascending
  std::vector<int> empty_states;              // states with zero decoded steps
  std::vector<std::vector<int>> decoded;      // smoothed path per episode

  bool is_abnormal(int state) const;
};

// Decodes every expert step (smoothed posterior), aggregates V per decoded
// state, and selects the abnormal set: states with negative mean V, with two
// fallbacks keeping the gate discriminative — if no mean is negative the
// argmin-mean state is selected, and if every visited state is negative
// (the usual case for non-positive rewards) the selection narrows to the
// argmin-mean state alone.
StateClassification classify_states(Network& vnet, const IohmmParams& params,
                                    const std::vector<std::vector<Transition>>& episodes,
                                    const std::vector<SequencePair>& sequences);

// Algorithm gate: act with the agent only in an abnormal state.
bool gate(int decoded_state, const StateClassification& classification);

void write_classification_csv(const std::string& path, const StateClassification& c);

// Per-step (episode, t, state, v, reward) rows for distribution plots.
void write_state_distribution_csv(const std::string& path, Network& vnet,
                                  const std::vector<std::vector<Transition>>& episodes,
                                  const StateClassification& c);

}  // namespace resrl
