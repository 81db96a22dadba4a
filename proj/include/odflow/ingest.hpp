#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "odflow/grid.hpp"
#include "odflow/network.hpp"

namespace odflow {

struct TripRecord {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double dest_x = 0.0;
  double dest_y = 0.0;
  long long count = 1;
};

/// Directed origin-destination counts per cell pair, before symmetrization.
struct RawOdCounts {
  int n_cells = 0;
  std::unordered_map<std::uint64_t, double> counts;  // key = origin * n_cells + dest
  long long dropped_same_cell = 0;
  long long total_trips = 0;

  double at(int origin, int dest) const {
    auto it = counts.find(static_cast<std::uint64_t>(origin) * static_cast<std::uint64_t>(n_cells) +
                          static_cast<std::uint64_t>(dest));
    return it == counts.end() ? 0.0 : it->second;
  }
};

/// Bins trip endpoints into grid cells and accumulates directed counts.
/// Same-cell trips are dropped and counted. Errors carry the 1-based trip
/// index.
inline RawOdCounts aggregate_od(const std::vector<TripRecord>& trips, const GridSpec& grid) {
  grid.validate();
  RawOdCounts raw;
  raw.n_cells = grid.n_cells();
  std::size_t trip_no = 0;
  for (const TripRecord& t : trips) {
    ++trip_no;
    if (t.count < 1)
      throw DataError("trip " + std::to_string(trip_no) + ": count must be >= 1");
    int a, b;
    try {
      a = assign_cell(t.origin_x, t.origin_y, grid);
      b = assign_cell(t.dest_x, t.dest_y, grid);
    } catch (const DataError& e) {
      throw DataError("trip " + std::to_string(trip_no) + ": " + e.what());
    }
    raw.total_trips += t.count;
    if (a == b) {
      raw.dropped_same_cell += t.count;
      continue;
    }
    raw.counts[static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(raw.n_cells) +
               static_cast<std::uint64_t>(b)] += static_cast<double>(t.count);
  }
  return raw;
}

/// L1 asymmetry ||W - W^T||_1 / ||W||_1 of the directed counts.
inline double od_asymmetry(const RawOdCounts& raw) {
  double num = 0.0, den = 0.0;
  for (const auto& [key, v] : raw.counts) {
    const int a = static_cast<int>(key / static_cast<std::uint64_t>(raw.n_cells));
    const int b = static_cast<int>(key % static_cast<std::uint64_t>(raw.n_cells));
    num += std::abs(v - raw.at(b, a));
    den += v;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Symmetrized unordered-pair flows (W + W^T) / 2 keyed on node pairs, given
/// a cell -> node mapping (-1 for cells without a node).
inline std::unordered_map<EdgeKey, double, EdgeKeyHash> symmetrize_od(
    const RawOdCounts& raw, const std::vector<int>& cell_to_node) {
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows;
  for (const auto& [key, v] : raw.counts) {
    const int a = static_cast<int>(key / static_cast<std::uint64_t>(raw.n_cells));
    const int b = static_cast<int>(key % static_cast<std::uint64_t>(raw.n_cells));
    const int na = cell_to_node.at(static_cast<std::size_t>(a));
    const int nb = cell_to_node.at(static_cast<std::size_t>(b));
    if (na < 0)
      throw DataError("trips reference cell " + std::to_string(a) + " which has no node");
    if (nb < 0)
      throw DataError("trips reference cell " + std::to_string(b) + " which has no node");
    flows[EdgeKey(na, nb)] += v / 2.0;  // each directed count contributes half
  }
  return flows;
}

inline std::vector<TripRecord> load_trips(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError(path + ": empty trips file");
  auto head = csv::split_line(header);
  const bool with_count = head.size() == 5;
  if (!(head.size() == 4 || with_count) || head[0] != "origin_x" || head[1] != "origin_y" ||
      head[2] != "dest_x" || head[3] != "dest_y" || (with_count && head[4] != "count"))
    throw DataError(path + ": header must be origin_x,origin_y,dest_x,dest_y[,count]");
  std::vector<TripRecord> trips;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = csv::split_line(line);
    const std::string ctx = path + ":" + std::to_string(line_no);
    if (f.size() != head.size()) throw DataError(ctx + ": column count mismatch with header");
    TripRecord t;
    t.origin_x = csv::parse_double(f[0], ctx);
    t.origin_y = csv::parse_double(f[1], ctx);
    t.dest_x = csv::parse_double(f[2], ctx);
    t.dest_y = csv::parse_double(f[3], ctx);
    if (with_count) t.count = csv::parse_int(f[4], ctx);
    if (!std::isfinite(t.origin_x) || !std::isfinite(t.origin_y) || !std::isfinite(t.dest_x) ||
        !std::isfinite(t.dest_y))
      throw DataError(ctx + ": non-finite coordinate");
    trips.push_back(t);
  }
  return trips;
}

struct IngestReport {
  long long total_trips = 0;
  long long dropped_same_cell = 0;
  double asymmetry = 0.0;
  int n_nodes = 0;
  std::size_t n_edges = 0;
};

/// Builds a FlowNetwork from trips plus a node table (cells + features).
/// Positive-flow pairs missing from the edge-feature table get synthesized
/// distance features so the network invariant holds.
inline FlowNetwork build_network_from_trips(
    const std::vector<TripRecord>& trips, const GridSpec& grid, std::vector<int> node_cell,
    Eigen::MatrixXd node_features, std::vector<std::string> node_feature_names,
    std::vector<std::string> edge_feature_names,
    std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features,
    int distance_feature, int log_distance_feature, IngestReport* report = nullptr) {
  RawOdCounts raw = aggregate_od(trips, grid);
  std::vector<int> cell_to_node(static_cast<std::size_t>(grid.n_cells()), -1);
  for (std::size_t i = 0; i < node_cell.size(); ++i) {
    if (cell_to_node[static_cast<std::size_t>(node_cell[i])] >= 0)
      throw DataError("ingest: two nodes mapped to cell " + std::to_string(node_cell[i]));
    cell_to_node[static_cast<std::size_t>(node_cell[i])] = static_cast<int>(i);
  }
  auto flows = symmetrize_od(raw, cell_to_node);

  if (edge_feature_names.empty()) {
    edge_feature_names = {"distance", "log_distance"};
    distance_feature = 0;
    log_distance_feature = 1;
  }
  for (const auto& [key, v] : flows) {
    if (edge_features.count(key)) continue;
    Eigen::VectorXd synth = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(edge_feature_names.size()));
    const double d = grid.centroid_distance(node_cell[static_cast<std::size_t>(key.a)],
                                            node_cell[static_cast<std::size_t>(key.b)]);
    if (distance_feature >= 0) synth(distance_feature) = d;
    if (log_distance_feature >= 0) {
      if (!(d > 0.0))
        throw DataError("ingest: co-located nodes " + std::to_string(key.a) + ", " +
                        std::to_string(key.b) + " need explicit edge features");
      synth(log_distance_feature) = std::log(d);
    }
    edge_features.emplace(key, std::vector<double>(synth.data(), synth.data() + synth.size()));
  }

  if (report != nullptr) {
    report->total_trips = raw.total_trips;
    report->dropped_same_cell = raw.dropped_same_cell;
    report->asymmetry = od_asymmetry(raw);
    report->n_nodes = static_cast<int>(node_cell.size());
    report->n_edges = flows.size();
  }

  return FlowNetwork(grid, std::move(node_cell), std::move(node_features),
                     std::move(node_feature_names), std::move(edge_feature_names),
                     std::move(flows), std::move(edge_features), distance_feature,
                     log_distance_feature);
}

}  // namespace odflow
