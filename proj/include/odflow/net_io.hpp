#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "odflow/network.hpp"

namespace odflow {

/// The three delimited text files a network serializes to.
struct NetworkPaths {
  std::string nodes;
  std::string edges;
  std::string grid;

  static NetworkPaths in_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    return {(fs::path(dir) / "nodes.csv").string(), (fs::path(dir) / "edges.csv").string(),
            (fs::path(dir) / "grid.csv").string()};
  }
};

inline void save_network(const FlowNetwork& net, const NetworkPaths& paths) {
  {
    std::ostringstream out;
    out << "node_id,row,col";
    for (const auto& name : net.node_feature_names()) out << ',' << name;
    out << '\n';
    for (int i = 0; i < net.n(); ++i) {
      const int cell = net.cell_of(i);
      out << i << ',' << net.grid().row_of(cell) << ',' << net.grid().col_of(cell);
      for (int c = 0; c < net.p(); ++c) out << ',' << format_double(net.node_features()(i, c));
      out << '\n';
    }
    write_text_file(paths.nodes, out.str());
  }
  {
    std::ostringstream out;
    out << "src_id,dst_id,flow";
    for (const auto& name : net.edge_feature_names()) out << ',' << name;
    out << '\n';
    // one row per stored feature pair; pairs with flow but no features cannot
    // exist by the network invariant
    std::vector<EdgeKey> keys;
    keys.reserve(net.edge_feature_map().size());
    for (const auto& [key, feats] : net.edge_feature_map()) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    for (const EdgeKey& key : keys) {
      out << key.a << ',' << key.b << ',' << format_double(net.flow(key.a, key.b));
      for (double v : *net.stored_edge_features(key.a, key.b)) out << ',' << format_double(v);
      out << '\n';
    }
    write_text_file(paths.edges, out.str());
  }
  {
    std::ostringstream out;
    out << "origin_x,origin_y,cell_size,n_rows,n_cols\n";
    out << format_double(net.grid().origin_x) << ',' << format_double(net.grid().origin_y) << ','
        << format_double(net.grid().cell_size) << ',' << net.grid().n_rows << ','
        << net.grid().n_cols << '\n';
    write_text_file(paths.grid, out.str());
  }
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::string& path,
                                                           std::size_t expect_cols) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = csv::split_line(line);
    if (fields.size() != expect_cols)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expect_cols) + " columns, got " +
                      std::to_string(fields.size()));
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace detail

/// Loads the three-file network. Distance-typed edge features are recognized
/// by header name so kernels and feature synthesis know where to look.
inline FlowNetwork load_network(const NetworkPaths& paths,
                                const std::string& distance_name = "distance",
                                const std::string& log_distance_name = "log_distance") {
  // grid
  GridSpec grid;
  {
    std::ifstream in(paths.grid);
    if (!in) throw DataError("cannot open file: " + paths.grid);
    std::string header, row;
    if (!std::getline(in, header) || csv::split_line(header) !=
            std::vector<std::string>{"origin_x", "origin_y", "cell_size", "n_rows", "n_cols"})
      throw DataError(paths.grid + ": bad grid header");
    if (!std::getline(in, row)) throw DataError(paths.grid + ": missing grid row");
    auto f = csv::split_line(row);
    if (f.size() != 5) throw DataError(paths.grid + ": grid row needs 5 columns");
    grid.origin_x = csv::parse_double(f[0], paths.grid);
    grid.origin_y = csv::parse_double(f[1], paths.grid);
    grid.cell_size = csv::parse_double(f[2], paths.grid);
    grid.n_rows = static_cast<int>(csv::parse_int(f[3], paths.grid));
    grid.n_cols = static_cast<int>(csv::parse_int(f[4], paths.grid));
    grid.validate();
  }

  // nodes
  std::vector<int> node_cell;
  Eigen::MatrixXd node_features;
  std::vector<std::string> node_names;
  {
    std::ifstream in(paths.nodes);
    if (!in) throw DataError("cannot open file: " + paths.nodes);
    std::string header;
    if (!std::getline(in, header)) throw DataError(paths.nodes + ": empty file");
    auto head = csv::split_line(header);
    if (head.size() < 3 || head[0] != "node_id" || head[1] != "row" || head[2] != "col")
      throw DataError(paths.nodes + ": header must start with node_id,row,col");
    node_names.assign(head.begin() + 3, head.end());
    auto rows = detail::read_csv_rows(paths.nodes, head.size());
    rows.erase(rows.begin());  // header re-read
    const int n = static_cast<int>(rows.size());
    if (n < 1) throw DataError(paths.nodes + ": no nodes");
    node_cell.resize(static_cast<std::size_t>(n));
    node_features.resize(n, static_cast<Eigen::Index>(node_names.size()));
    for (int i = 0; i < n; ++i) {
      const auto& f = rows[static_cast<std::size_t>(i)];
      const std::string ctx = paths.nodes + " node row " + std::to_string(i);
      if (csv::parse_int(f[0], ctx) != i)
        throw DataError(ctx + ": node ids must be 0..n-1 in order");
      const int r = static_cast<int>(csv::parse_int(f[1], ctx));
      const int c = static_cast<int>(csv::parse_int(f[2], ctx));
      if (r < 0 || r >= grid.n_rows || c < 0 || c >= grid.n_cols)
        throw DataError(ctx + ": cell (" + std::to_string(r) + ", " + std::to_string(c) +
                        ") outside grid");
      node_cell[static_cast<std::size_t>(i)] = r * grid.n_cols + c;
      for (std::size_t col = 3; col < f.size(); ++col) {
        const double v = csv::parse_double(f[col], ctx);
        if (!std::isfinite(v)) throw DataError(ctx + ": non-finite feature in column " + head[col]);
        node_features(i, static_cast<Eigen::Index>(col - 3)) = v;
      }
    }
  }

  // edges
  std::vector<std::string> edge_names;
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows;
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features;
  {
    std::ifstream in(paths.edges);
    if (!in) throw DataError("cannot open file: " + paths.edges);
    std::string header;
    if (!std::getline(in, header)) throw DataError(paths.edges + ": empty file");
    auto head = csv::split_line(header);
    if (head.size() < 3 || head[0] != "src_id" || head[1] != "dst_id" || head[2] != "flow")
      throw DataError(paths.edges + ": header must start with src_id,dst_id,flow");
    edge_names.assign(head.begin() + 3, head.end());
    std::string line;
    std::size_t line_no = 1;
    const int n = static_cast<int>(node_cell.size());
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto f = csv::split_line(line);
      const std::string ctx = paths.edges + ":" + std::to_string(line_no);
      if (f.size() != head.size()) throw DataError(ctx + ": column count mismatch with header");
      const int src = static_cast<int>(csv::parse_int(f[0], ctx));
      const int dst = static_cast<int>(csv::parse_int(f[1], ctx));
      if (src < 0 || src >= n || dst < 0 || dst >= n)
        throw DataError(ctx + ": node id out of range");
      if (src == dst) throw DataError(ctx + ": self edge not allowed");
      const EdgeKey key(src, dst);
      if (edge_features.count(key))
        throw DataError(ctx + ": duplicate edge (" + std::to_string(src) + ", " +
                        std::to_string(dst) + ")");
      const double flow = csv::parse_double(f[2], ctx);
      if (!(flow >= 0.0)) throw DataError(ctx + ": negative flow");
      std::vector<double> feats(edge_names.size());
      for (std::size_t c = 3; c < f.size(); ++c) {
        feats[c - 3] = csv::parse_double(f[c], ctx);
        if (!std::isfinite(feats[c - 3]))
          throw DataError(ctx + ": non-finite feature in column " + head[c]);
      }
      edge_features.emplace(key, std::move(feats));
      if (flow > 0.0) flows.emplace(key, flow);
    }
  }

  int dist_idx = -1, log_dist_idx = -1;
  for (std::size_t c = 0; c < edge_names.size(); ++c) {
    if (edge_names[c] == distance_name) dist_idx = static_cast<int>(c);
    if (edge_names[c] == log_distance_name) log_dist_idx = static_cast<int>(c);
  }

  return FlowNetwork(grid, std::move(node_cell), std::move(node_features), std::move(node_names),
                     std::move(edge_names), std::move(flows), std::move(edge_features), dist_idx,
                     log_dist_idx);
}

inline bool networks_equal(const FlowNetwork& a, const FlowNetwork& b, double feature_rtol) {
  if (a.n() != b.n() || a.p() != b.p() || a.k() != b.k()) return false;
  if (a.node_cells() != b.node_cells()) return false;
  if (a.edges() != b.edges()) return false;
  auto close = [&](double x, double y) {
    const double scale = std::max({std::abs(x), std::abs(y), 1.0});
    return std::abs(x - y) <= feature_rtol * scale;
  };
  for (const EdgeKey& e : a.edges())
    if (a.flow(e.a, e.b) != b.flow(e.a, e.b)) return false;
  for (int i = 0; i < a.n(); ++i)
    for (int c = 0; c < a.p(); ++c)
      if (!close(a.node_features()(i, c), b.node_features()(i, c))) return false;
  for (const auto& [key, feats] : a.edge_feature_map()) {
    const auto* other = b.stored_edge_features(key.a, key.b);
    if (other == nullptr || other->size() != feats.size()) return false;
    for (std::size_t c = 0; c < feats.size(); ++c)
      if (!close(feats[c], (*other)[c])) return false;
  }
  return a.edge_feature_map().size() == b.edge_feature_map().size();
}

}  // namespace odflow
