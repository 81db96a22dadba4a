#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "odflow/metrics.hpp"
#include "odflow/network.hpp"
#include "odflow/train_view.hpp"

namespace odflow {

enum class NodeRole { regular, val_interest, test_interest };

struct SplitOptions {
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  BinSpec bins;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_frac > 0.0 && val_frac >= 0.0 && test_frac > 0.0))
      throw DataError("SplitOptions: fractions must be positive (val may be 0)");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
      throw DataError("SplitOptions: fractions must sum to 1");
    bins.validate();
  }
};

/// Node roles plus the induced edge partition. Overflow edges of full bins
/// are discarded outright: they are incident to an interest node, so they can
/// neither be evaluated nor legally re-enter training.
struct SplitAssignment {
  std::vector<NodeRole> role;
  std::vector<EdgeKey> train_edges, val_edges, test_edges, discarded_edges;
  std::vector<std::size_t> test_bin_counts, val_bin_counts;  // standard bins + overflow
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::vector<int> interest_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < role.size(); ++i)
      if (role[i] != NodeRole::regular) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> test_interest_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < role.size(); ++i)
      if (role[i] == NodeRole::test_interest) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> regular_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < role.size(); ++i)
      if (role[i] == NodeRole::regular) out.push_back(static_cast<int>(i));
    return out;
  }
};

/// Draws interest nodes without replacement and funnels their incident edges
/// into the subset until every bin is at capacity (or cannot be fed anymore).
/// Per-bin capacity is max(1, floor(frac |E| / 4)). A phase also ends when
/// the discard count reaches twice the assignments or after ceil(2 frac n)
/// node draws, so a scarce bin cannot pull the whole graph out of training.
inline SplitAssignment make_split(const FlowNetwork& net, const SplitOptions& opts = {}) {
  opts.validate();
  const auto& edges = net.edges();
  const std::size_t n_edges = edges.size();
  if (n_edges == 0) throw DataError("make_split: network has no edges");
  const std::size_t n_bins = opts.bins.n_bins() + 1;  // + overflow

  SplitAssignment split;
  split.seed = opts.seed;
  split.role.assign(static_cast<std::size_t>(net.n()), NodeRole::regular);

  // bin per edge and per-bin pools of unassigned edges
  std::vector<std::size_t> edge_bin(n_edges);
  std::vector<std::size_t> pool(n_bins, 0);
  for (std::size_t e = 0; e < n_edges; ++e) {
    edge_bin[e] = opts.bins.bin_of(net.flow(edges[e].a, edges[e].b));
    pool[edge_bin[e]] += 1;
  }
  enum class EdgeState { unassigned, assigned, discarded };
  std::vector<EdgeState> state(n_edges, EdgeState::unassigned);

  // incidence lists by edge index
  std::vector<std::vector<std::size_t>> incident(static_cast<std::size_t>(net.n()));
  for (std::size_t e = 0; e < n_edges; ++e) {
    incident[static_cast<std::size_t>(edges[e].a)].push_back(e);
    incident[static_cast<std::size_t>(edges[e].b)].push_back(e);
  }

  std::vector<int> perm(static_cast<std::size_t>(net.n()));
  for (int i = 0; i < net.n(); ++i) perm[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(derive_seed(opts.seed, "split"));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t perm_at = 0;

  auto run_phase = [&](double frac, NodeRole role, std::vector<EdgeKey>& out,
                       std::vector<std::size_t>& bin_counts, const char* label) {
    const std::size_t capacity =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                     frac * static_cast<double>(n_edges) / 4.0)));
    const std::size_t total_target =
        static_cast<std::size_t>(std::llround(frac * static_cast<double>(n_edges)));
    const std::size_t node_budget = static_cast<std::size_t>(
        std::ceil(2.0 * frac * static_cast<double>(net.n())));
    bin_counts.assign(n_bins, 0);
    std::size_t assigned_total = 0, discarded_total = 0, drawn = 0;

    auto can_continue = [&]() {
      if (drawn >= node_budget) return false;
      if (assigned_total >= total_target) return false;
      // hunting a scarce bin discards every other edge of each drawn node;
      // stop once the discard cost outweighs the assignments two to one
      if (assigned_total > 0 && discarded_total > 2 * assigned_total) return false;
      for (std::size_t b = 0; b < n_bins; ++b)
        if (bin_counts[b] < capacity && pool[b] > 0) return true;
      return false;
    };

    while (perm_at < perm.size() && can_continue()) {
      const int node = perm[perm_at++];
      ++drawn;
      split.role[static_cast<std::size_t>(node)] = role;
      for (std::size_t e : incident[static_cast<std::size_t>(node)]) {
        if (state[e] != EdgeState::unassigned) continue;
        const std::size_t b = edge_bin[e];
        pool[b] -= 1;
        if (bin_counts[b] < capacity) {
          state[e] = EdgeState::assigned;
          out.push_back(edges[e]);
          bin_counts[b] += 1;
          ++assigned_total;
        } else {
          state[e] = EdgeState::discarded;
          split.discarded_edges.push_back(edges[e]);
          ++discarded_total;
        }
      }
    }
    if (drawn >= node_budget && assigned_total < total_target)
      split.warnings.push_back(std::string(label) + " phase hit the node budget of " +
                               std::to_string(node_budget) + " draws");
    for (std::size_t b = 0; b + 1 < n_bins; ++b)
      if (bin_counts[b] == 0)
        split.warnings.push_back(std::string(label) + " bin " + std::to_string(b) + " is empty");
    if (assigned_total == 0) {
      std::string dist = "edge bin distribution:";
      for (std::size_t b = 0; b < n_bins; ++b) dist += " " + std::to_string(pool[b]);
      throw DataError(std::string("make_split: could not fill any ") + label + " bin; " + dist);
    }
  };

  run_phase(opts.test_frac, NodeRole::test_interest, split.test_edges, split.test_bin_counts,
            "test");
  if (opts.val_frac > 0.0)
    run_phase(opts.val_frac, NodeRole::val_interest, split.val_edges, split.val_bin_counts,
              "validation");
  else
    split.val_bin_counts.assign(n_bins, 0);

  // whatever survived and touches no interest node trains
  for (std::size_t e = 0; e < n_edges; ++e) {
    if (state[e] != EdgeState::unassigned) continue;
    if (split.role[static_cast<std::size_t>(edges[e].a)] != NodeRole::regular ||
        split.role[static_cast<std::size_t>(edges[e].b)] != NodeRole::regular) {
      state[e] = EdgeState::discarded;  // touched an interest node after its phase closed
      split.discarded_edges.push_back(edges[e]);
      continue;
    }
    split.train_edges.push_back(edges[e]);
  }
  std::sort(split.train_edges.begin(), split.train_edges.end());
  return split;
}

/// Owns the leakage guard and the model-facing training view for one split.
class SplitContext {
 public:
  SplitContext(const FlowNetwork& net, const SplitAssignment& split)
      : split_(&split),
        flows_(net, [&] {
          std::unordered_set<int> masked;
          for (int v : split.interest_nodes()) masked.insert(v);
          return masked;
        }()) {
    view_.net = &net;
    view_.flows = &flows_;
    view_.train_edges = split.train_edges;
    view_.regular_nodes = split.regular_nodes();
    view_.interest_nodes = split.interest_nodes();
    view_.scaler = FeatureScaler::fit(net, view_.regular_nodes, view_.train_edges);

    for (const EdgeKey& e : split.val_edges) val_y_.push_back(net.flow(e.a, e.b));
    for (const EdgeKey& e : split.test_edges) test_y_.push_back(net.flow(e.a, e.b));
  }

  const TrainView& view() const { return view_; }
  const GuardedFlows& flows() const { return flows_; }
  const SplitAssignment& split() const { return *split_; }
  /// Ground truth of the held-out subsets, prepared outside the guarded path
  /// (evaluation data, never a fitting input).
  const std::vector<double>& val_y() const { return val_y_; }
  const std::vector<double>& test_y() const { return test_y_; }

 private:
  const SplitAssignment* split_;
  GuardedFlows flows_;
  TrainView view_;
  std::vector<double> val_y_, test_y_;
};

}  // namespace odflow
