#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "odflow/models.hpp"
#include "odflow/net_io.hpp"

namespace odflow {

struct ExperimentConfig {
  std::vector<ModelKind> models{ModelKind::constant, ModelKind::dcgm,   ModelKind::huff,
                                ModelKind::poisson,  ModelKind::negbin, ModelKind::fcnn,
                                ModelKind::gnn_geo,  ModelKind::gnn_flow};
  int n_seeds = 5;  // stochastic models only; deterministic models report no spread
  nn::LayerConfig layers;
  nn::TrainConfig train;
  BinSpec bins;
  std::uint64_t seed = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
  bool has_sd = false;
  bool present = false;
};

struct ModelResultRow {
  std::string name;
  bool stochastic = false;
  std::string error;  // non-empty isolates this row, others proceed
  std::vector<MetricsReport> per_seed;
  std::vector<std::vector<double>> predictions;  // raw, aligned with test edges
  MetricSummary mae_total, bin_mean, ssi, cpc, cpl;
  std::vector<MetricSummary> mae_bins, mape_bins;
};

struct ExperimentReport {
  std::vector<ModelResultRow> rows;
  std::vector<EdgeKey> test_edges;
  std::vector<double> test_y;
  std::uint64_t seed = 0;
  int n_seeds = 1;
  std::size_t n_train = 0, n_val = 0, n_test = 0, n_discarded = 0;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  s.present = true;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    s.has_sd = true;
  }
  return s;
}

inline void aggregate_row(ModelResultRow& row, std::size_t n_bins) {
  auto gather = [&](auto accessor) {
    std::vector<double> vals;
    for (const MetricsReport& r : row.per_seed) vals.push_back(accessor(r));
    return summarize(vals);
  };
  if (row.per_seed.empty()) return;
  row.mae_total = gather([](const MetricsReport& r) { return r.mae_total; });
  row.bin_mean = gather([](const MetricsReport& r) { return r.bin_mean; });
  row.ssi = gather([](const MetricsReport& r) { return r.ssi; });
  row.cpc = gather([](const MetricsReport& r) { return r.cpc; });
  row.cpl = gather([](const MetricsReport& r) { return r.cpl; });
  row.mae_bins.assign(n_bins, {});
  row.mape_bins.assign(n_bins, {});
  for (std::size_t b = 0; b < n_bins; ++b) {
    std::vector<double> mae_vals, mape_vals;
    for (const MetricsReport& r : row.per_seed) {
      if (r.mae_bins[b].has_value()) mae_vals.push_back(*r.mae_bins[b]);
      if (r.mape_bins[b].has_value()) mape_vals.push_back(*r.mape_bins[b]);
    }
    if (mae_vals.size() == row.per_seed.size()) row.mae_bins[b] = summarize(mae_vals);
    if (mape_vals.size() == row.per_seed.size()) row.mape_bins[b] = summarize(mape_vals);
  }
}

}  // namespace detail

using ModelFactory = std::function<std::unique_ptr<FlowModel>(ModelKind)>;

/// Fits and evaluates every requested model on identical training edges.
/// Stochastic models run n_seeds times; each fit runs behind the leakage
/// guard and a nonzero masked-read count fails that model's row. A custom
/// factory can substitute model construction (diagnostics, tests).
inline ExperimentReport run_experiment(const FlowNetwork& net, const SplitAssignment& split,
                                       const ExperimentConfig& cfg,
                                       const ModelFactory& factory = {}) {
  SplitContext ctx(net, split);
  ExperimentReport report;
  report.test_edges = split.test_edges;
  report.test_y = ctx.test_y();
  report.seed = cfg.seed;
  report.n_seeds = cfg.n_seeds;
  report.n_train = split.train_edges.size();
  report.n_val = split.val_edges.size();
  report.n_test = split.test_edges.size();
  report.n_discarded = split.discarded_edges.size();

  auto build = [&](ModelKind kind) {
    return factory ? factory(kind) : make_model(kind, cfg.layers, cfg.train);
  };

  for (ModelKind kind : cfg.models) {
    ModelResultRow row;
    row.name = model_kind_name(kind);
    auto probe = build(kind);
    row.stochastic = probe->stochastic();
    const int runs = row.stochastic ? cfg.n_seeds : 1;

    try {
      for (int s = 0; s < runs; ++s) {
        auto model = build(kind);
        ctx.flows().reset_counter();
        model->fit(ctx, derive_seed(cfg.seed, row.name + "/seed" + std::to_string(s)));
        if (kind != ModelKind::oracle && ctx.flows().masked_reads() != 0)
          throw ComputeError(row.name + ": leakage guard recorded " +
                             std::to_string(ctx.flows().masked_reads()) +
                             " masked flow reads during fitting");
        row.predictions.push_back(model->predict(net, report.test_edges));
        row.per_seed.push_back(compute_metrics(report.test_y, row.predictions.back(), cfg.bins));
      }
      detail::aggregate_row(row, cfg.bins.n_bins());
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace detail {

inline std::string cell_value(const MetricSummary& s, bool stochastic, int precision = 2) {
  if (!s.present) return "-";
  char buf[64];
  if (stochastic && s.has_sd) {
    std::snprintf(buf, sizeof(buf), "%.*f +- %.*f", precision, s.mean, precision, s.sd);
  } else {
    std::snprintf(buf, sizeof(buf), "%.*f", precision, s.mean);
  }
  return buf;
}

}  // namespace detail

/// Plain-text comparison tables (MAE block, then SSI/MAPE/CPL/CPC block).
inline std::string report_table(const ExperimentReport& report) {
  std::ostringstream out;
  auto pad = [](const std::string& s, std::size_t w) {
    return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' ');
  };
  const std::size_t name_w = 10, col_w = 18;
  out << pad("MAE", name_w) << pad("total", col_w) << pad("[0;10)", col_w)
      << pad("[10;100)", col_w) << pad("[100;1000)", col_w) << pad("[1000;10000)", col_w)
      << pad("bin_mean", col_w) << '\n';
  for (const ModelResultRow& row : report.rows) {
    out << pad(row.name, name_w);
    if (!row.error.empty()) {
      out << "ERROR: " << row.error << '\n';
      continue;
    }
    out << pad(detail::cell_value(row.mae_total, row.stochastic), col_w);
    for (std::size_t b = 0; b < 4 && b < row.mae_bins.size(); ++b)
      out << pad(detail::cell_value(row.mae_bins[b], row.stochastic), col_w);
    out << pad(detail::cell_value(row.bin_mean, row.stochastic), col_w) << '\n';
  }
  out << '\n';
  out << pad("", name_w) << pad("SSI", col_w) << pad("MAPE[1e3;1e4)", col_w) << pad("CPL", col_w)
      << pad("CPC", col_w) << '\n';
  for (const ModelResultRow& row : report.rows) {
    out << pad(row.name, name_w);
    if (!row.error.empty()) {
      out << "ERROR: " << row.error << '\n';
      continue;
    }
    out << pad(detail::cell_value(row.ssi, row.stochastic), col_w)
        << pad(row.mape_bins.size() > 3 ? detail::cell_value(row.mape_bins[3], row.stochastic)
                                        : std::string("-"),
               col_w)
        << pad(detail::cell_value(row.cpl, row.stochastic), col_w)
        << pad(detail::cell_value(row.cpc, row.stochastic), col_w) << '\n';
  }
  return out.str();
}

namespace detail {

inline Json summary_json(const MetricSummary& s) {
  Json o;
  if (!s.present) return o;
  o["mean"] = s.mean;
  if (s.has_sd) o["sd"] = s.sd;
  return o;
}

}  // namespace detail

inline Json report_json(const ExperimentReport& report) {
  Json o;
  o["seed"] = report.seed;
  o["n_seeds"] = report.n_seeds;
  Json split;
  split["n_train_edges"] = report.n_train;
  split["n_val_edges"] = report.n_val;
  split["n_test_edges"] = report.n_test;
  split["n_discarded_edges"] = report.n_discarded;
  o["split"] = std::move(split);
  Json rows = Json::array();
  for (const ModelResultRow& row : report.rows) {
    Json r;
    r["model"] = row.name;
    r["stochastic"] = row.stochastic;
    if (!row.error.empty()) {
      r["error"] = row.error;
      rows.push_back(std::move(r));
      continue;
    }
    r["mae_total"] = detail::summary_json(row.mae_total);
    Json bins = Json::array();
    for (const auto& b : row.mae_bins) bins.push_back(detail::summary_json(b));
    r["mae_bins"] = std::move(bins);
    r["bin_mean_mae"] = detail::summary_json(row.bin_mean);
    Json mapes = Json::array();
    for (const auto& b : row.mape_bins) mapes.push_back(detail::summary_json(b));
    r["mape_bins"] = std::move(mapes);
    r["ssi"] = detail::summary_json(row.ssi);
    r["cpc"] = detail::summary_json(row.cpc);
    r["cpl"] = detail::summary_json(row.cpl);
    r["n_test_edges"] = row.per_seed.empty() ? 0 : row.per_seed[0].n_edges;
    rows.push_back(std::move(r));
  }
  o["models"] = std::move(rows);
  return o;
}

/// Per test-interest node residual aggregation (Figure-4-style map data).
struct ResidualEntry {
  int node = 0;
  int row = 0;
  int col = 0;
  double mae = 0.0;
  double signed_mean = 0.0;  // mean of (prediction - truth)
  std::size_t n_edges = 0;
};

inline std::vector<ResidualEntry> residual_map(
    const FlowNetwork& net, const SplitAssignment& split,
    const std::map<EdgeKey, double>& predictions) {
  std::string missing;
  std::size_t n_missing = 0;
  for (const EdgeKey& e : split.test_edges) {
    if (!predictions.count(e)) {
      ++n_missing;
      if (n_missing <= 8)
        missing += " (" + std::to_string(e.a) + "," + std::to_string(e.b) + ")";
    }
  }
  if (n_missing > 0)
    throw DataError("residual_map: predictions missing for " + std::to_string(n_missing) +
                    " test edges:" + missing + (n_missing > 8 ? " ..." : ""));

  std::map<int, ResidualEntry> acc;
  for (int node : split.test_interest_nodes()) {
    ResidualEntry e;
    e.node = node;
    e.row = net.grid().row_of(net.cell_of(node));
    e.col = net.grid().col_of(net.cell_of(node));
    acc[node] = e;
  }
  for (const EdgeKey& e : split.test_edges) {
    const double y = net.flow(e.a, e.b);
    const double yhat = std::max(0.0, predictions.at(e));
    for (int node : {e.a, e.b}) {
      auto it = acc.find(node);
      if (it == acc.end()) continue;  // endpoint is regular or val-interest
      it->second.mae += std::abs(y - yhat);
      it->second.signed_mean += yhat - y;
      it->second.n_edges += 1;
    }
  }
  std::vector<ResidualEntry> out;
  for (auto& [node, e] : acc) {
    if (e.n_edges > 0) {
      e.mae /= static_cast<double>(e.n_edges);
      e.signed_mean /= static_cast<double>(e.n_edges);
    }
    out.push_back(e);
  }
  return out;
}

inline std::string residuals_csv(const std::vector<ResidualEntry>& entries) {
  std::ostringstream out;
  out << "node_id,row,col,mae,signed_mean,n_edges\n";
  for (const ResidualEntry& e : entries)
    out << e.node << ',' << e.row << ',' << e.col << ',' << format_double(e.mae) << ','
        << format_double(e.signed_mean) << ',' << e.n_edges << '\n';
  return out.str();
}

/// Cell polygons in raw projected grid coordinates with residual properties.
inline Json residuals_geojson(const FlowNetwork& net, const std::vector<ResidualEntry>& entries) {
  const GridSpec& g = net.grid();
  Json fc;
  fc["type"] = "FeatureCollection";
  Json features = Json::array();
  for (const ResidualEntry& e : entries) {
    const double x0 = g.origin_x + e.col * g.cell_size;
    const double y0 = g.origin_y + e.row * g.cell_size;
    const double x1 = x0 + g.cell_size;
    const double y1 = y0 + g.cell_size;
    Json f;
    f["type"] = "Feature";
    Json geom;
    geom["type"] = "Polygon";
    geom["coordinates"] = Json::array(
        {Json::array({Json::array({x0, y0}), Json::array({x1, y0}), Json::array({x1, y1}),
                      Json::array({x0, y1}), Json::array({x0, y0})})});
    f["geometry"] = std::move(geom);
    Json props;
    props["node_id"] = e.node;
    props["mae"] = e.mae;
    props["signed_mean"] = e.signed_mean;
    props["n_edges"] = e.n_edges;
    f["properties"] = std::move(props);
    features.push_back(std::move(f));
  }
  fc["features"] = std::move(features);
  return fc;
}

/// Writes report.json, table.txt, per-model predictions, and the residual map
/// of the first clean model (mean prediction across seeds).
inline void write_report_bundle(const ExperimentReport& report, const FlowNetwork& net,
                                const SplitAssignment& split, const std::string& out_dir,
                                const std::string& residual_model = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "report.json").string(), report_json(report).dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "table.txt").string(), report_table(report));

  const ModelResultRow* residual_row = nullptr;
  for (const ModelResultRow& row : report.rows) {
    if (!row.error.empty()) continue;
    std::ostringstream out;
    out << "src_id,dst_id,y_true";
    for (std::size_t s = 0; s < row.predictions.size(); ++s) out << ",pred_seed" << s;
    out << ",pred_mean\n";
    for (std::size_t e = 0; e < report.test_edges.size(); ++e) {
      out << report.test_edges[e].a << ',' << report.test_edges[e].b << ','
          << format_double(report.test_y[e]);
      double mean = 0.0;
      for (const auto& preds : row.predictions) {
        out << ',' << format_double(preds[e]);
        mean += preds[e];
      }
      mean /= static_cast<double>(row.predictions.size());
      out << ',' << format_double(mean) << '\n';
    }
    write_text_file((fs::path(out_dir) / ("predictions_" + row.name + ".csv")).string(),
                    out.str());
    if (residual_row == nullptr && (residual_model.empty() || row.name == residual_model))
      residual_row = &row;
  }

  if (residual_row != nullptr) {
    std::map<EdgeKey, double> mean_pred;
    for (std::size_t e = 0; e < report.test_edges.size(); ++e) {
      double mean = 0.0;
      for (const auto& preds : residual_row->predictions) mean += preds[e];
      mean_pred[report.test_edges[e]] = mean / static_cast<double>(residual_row->predictions.size());
    }
    auto entries = residual_map(net, split, mean_pred);
    write_text_file((fs::path(out_dir) / "residuals.csv").string(), residuals_csv(entries));
    write_text_file((fs::path(out_dir) / "residuals.geojson").string(),
                    residuals_geojson(net, entries).dump(2) + "\n");
  }
}

/// Split serialization so `split`, `train`, and `evaluate` can share one
/// assignment across CLI invocations.
inline Json split_json(const SplitAssignment& split) {
  Json o;
  o["seed"] = split.seed;
  Json roles = Json::array();
  for (NodeRole r : split.role)
    roles.push_back(r == NodeRole::regular ? "regular"
                    : r == NodeRole::val_interest ? "val_interest"
                                                  : "test_interest");
  o["roles"] = std::move(roles);
  auto edges_json = [](const std::vector<EdgeKey>& edges) {
    Json a = Json::array();
    for (const EdgeKey& e : edges) a.push_back(Json::array({e.a, e.b}));
    return a;
  };
  o["train_edges"] = edges_json(split.train_edges);
  o["val_edges"] = edges_json(split.val_edges);
  o["test_edges"] = edges_json(split.test_edges);
  o["discarded_edges"] = edges_json(split.discarded_edges);
  o["warnings"] = split.warnings;
  return o;
}

inline SplitAssignment split_from_json(const Json& o) {
  SplitAssignment split;
  split.seed = o.at("seed").get<std::uint64_t>();
  for (const auto& r : o.at("roles")) {
    const std::string s = r.get<std::string>();
    split.role.push_back(s == "regular" ? NodeRole::regular
                         : s == "val_interest" ? NodeRole::val_interest
                                               : NodeRole::test_interest);
  }
  auto edges_from = [](const Json& a) {
    std::vector<EdgeKey> out;
    for (const auto& e : a) out.emplace_back(e[0].get<int>(), e[1].get<int>());
    return out;
  };
  split.train_edges = edges_from(o.at("train_edges"));
  split.val_edges = edges_from(o.at("val_edges"));
  split.test_edges = edges_from(o.at("test_edges"));
  split.discarded_edges = edges_from(o.at("discarded_edges"));
  BinSpec bins;
  split.test_bin_counts.assign(bins.n_bins() + 1, 0);
  split.val_bin_counts.assign(bins.n_bins() + 1, 0);
  if (o.contains("warnings"))
    split.warnings = o.at("warnings").get<std::vector<std::string>>();
  return split;
}

}  // namespace odflow
