// Command-line surface for the OD flow toolkit: synthetic data generation,
// trip ingestion, node-of-interest splitting, model training/evaluation, the
// full model comparison, residual maps, and the tail-exponent estimate.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "odflow/experiment.hpp"
#include "odflow/ingest.hpp"
#include "odflow/synth.hpp"

namespace fs = std::filesystem;
using namespace odflow;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

Config load_config_or_empty(const std::string& path) {
  if (path.empty()) return Config{};
  return Config::load(path);
}

FlowNetwork load_data(const Config& cfg, const std::string& data_dir) {
  if (data_dir.empty()) throw DataError("--data directory is required");
  return load_network(NetworkPaths::in_dir(data_dir),
                      cfg.get_string("data.distance_feature", "distance"),
                      cfg.get_string("data.log_distance_feature", "log_distance"));
}

SplitOptions split_options(const Config& cfg, std::uint64_t seed) {
  SplitOptions opts;
  opts.train_frac = cfg.get_double("split.train_frac", opts.train_frac);
  opts.val_frac = cfg.get_double("split.val_frac", opts.val_frac);
  opts.test_frac = cfg.get_double("split.test_frac", opts.test_frac);
  opts.seed = seed;
  return opts;
}

nn::TrainConfig train_config(const Config& cfg) {
  nn::TrainConfig tc;
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", tc.batch_size));
  tc.lr = cfg.get_double("train.lr", tc.lr);
  tc.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs", tc.max_epochs));
  tc.lr_drop_epoch = static_cast<int>(cfg.get_int("train.lr_drop_epoch", tc.lr_drop_epoch));
  tc.lr_drop_period = static_cast<int>(cfg.get_int("train.lr_drop_period", tc.lr_drop_period));
  tc.lr_factor = cfg.get_double("train.lr_factor", tc.lr_factor);
  tc.early_stop_patience =
      static_cast<int>(cfg.get_int("train.early_stop_patience", tc.early_stop_patience));
  return tc;
}

nn::LayerConfig layer_config(const Config& cfg) {
  nn::LayerConfig lc;
  lc.n_fc_layers = static_cast<int>(cfg.get_int("train.n_fc_layers", lc.n_fc_layers));
  lc.hidden = static_cast<int>(cfg.get_int("train.hidden", lc.hidden));
  lc.dropout_rate = cfg.get_double("train.dropout_rate", lc.dropout_rate);
  lc.batchnorm = cfg.get_int("train.batchnorm", 1) != 0;
  return lc;
}

SplitAssignment load_split(const std::string& path) {
  return split_from_json(Json::parse(read_text_file(path)));
}

void write_history_csv(const std::vector<nn::EpochRecord>& history, const std::string& path) {
  std::ostringstream out;
  out << "epoch,train_mse,val_bin_mean_mae,lr\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.train_mse) << ','
        << format_double(r.val_bin_mean_mae) << ',' << format_double(r.lr) << '\n';
  write_text_file(path, out.str());
}

int cmd_synth(const CommonArgs& args) {
  Config cfg = load_config_or_empty(args.config_path);
  SynthConfig synth = SynthConfig::from_config(cfg);
  if (args.seed_set) synth.seed = args.seed;
  auto [net, gt] = generate_synthetic_city(synth);
  fs::create_directories(args.out_dir);
  save_network(net, NetworkPaths::in_dir(args.out_dir));
  Json meta;
  meta["seed"] = synth.seed;
  meta["gravity_beta"] = gt.beta;
  meta["flow_scale"] = synth.flow_scale;
  meta["nonlinear_term"] = synth.nonlinear_term;
  meta["n_nodes"] = net.n();
  meta["n_edges"] = net.edges().size();
  write_text_file((fs::path(args.out_dir) / "synth_meta.json").string(), meta.dump(2) + "\n");
  std::cout << "wrote synthetic city with " << net.n() << " nodes and " << net.edges().size()
            << " edges to " << args.out_dir << "\n";
  return 0;
}

int cmd_ingest(const CommonArgs& args, const std::string& trips_path,
               const std::string& nodes_path, const std::string& grid_path,
               const std::string& edge_features_path) {
  Config cfg = load_config_or_empty(args.config_path);

  GridSpec grid;
  {
    auto rows = detail::read_csv_rows(grid_path, 5);
    if (rows.size() != 2) throw DataError(grid_path + ": expected a header and one row");
    grid.origin_x = csv::parse_double(rows[1][0], grid_path);
    grid.origin_y = csv::parse_double(rows[1][1], grid_path);
    grid.cell_size = csv::parse_double(rows[1][2], grid_path);
    grid.n_rows = static_cast<int>(csv::parse_int(rows[1][3], grid_path));
    grid.n_cols = static_cast<int>(csv::parse_int(rows[1][4], grid_path));
    grid.validate();
  }

  std::vector<int> node_cell;
  Eigen::MatrixXd node_features;
  std::vector<std::string> node_names;
  {
    std::ifstream in(nodes_path);
    if (!in) throw DataError("cannot open file: " + nodes_path);
    std::string header;
    std::getline(in, header);
    auto head = csv::split_line(header);
    if (head.size() < 3 || head[0] != "node_id" || head[1] != "row" || head[2] != "col")
      throw DataError(nodes_path + ": header must start with node_id,row,col");
    node_names.assign(head.begin() + 3, head.end());
    auto rows = detail::read_csv_rows(nodes_path, head.size());
    rows.erase(rows.begin());
    node_cell.resize(rows.size());
    node_features.resize(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(node_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string ctx = nodes_path + " row " + std::to_string(i);
      if (csv::parse_int(rows[i][0], ctx) != static_cast<long long>(i))
        throw DataError(ctx + ": node ids must be 0..n-1 in order");
      const int r = static_cast<int>(csv::parse_int(rows[i][1], ctx));
      const int c = static_cast<int>(csv::parse_int(rows[i][2], ctx));
      node_cell[i] = r * grid.n_cols + c;
      for (std::size_t col = 3; col < rows[i].size(); ++col)
        node_features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col - 3)) =
            csv::parse_double(rows[i][col], ctx);
    }
  }

  std::vector<std::string> edge_names;
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features;
  if (!edge_features_path.empty()) {
    std::ifstream in(edge_features_path);
    if (!in) throw DataError("cannot open file: " + edge_features_path);
    std::string header;
    std::getline(in, header);
    auto head = csv::split_line(header);
    if (head.size() < 3 || head[0] != "src_id" || head[1] != "dst_id")
      throw DataError(edge_features_path + ": header must start with src_id,dst_id");
    edge_names.assign(head.begin() + 2, head.end());
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto f = csv::split_line(line);
      const std::string ctx = edge_features_path + ":" + std::to_string(line_no);
      if (f.size() != head.size()) throw DataError(ctx + ": column count mismatch");
      EdgeKey key(static_cast<int>(csv::parse_int(f[0], ctx)),
                  static_cast<int>(csv::parse_int(f[1], ctx)));
      std::vector<double> feats;
      for (std::size_t c = 2; c < f.size(); ++c) feats.push_back(csv::parse_double(f[c], ctx));
      if (!edge_features.emplace(key, std::move(feats)).second)
        throw DataError(ctx + ": duplicate edge");
    }
  }

  int dist_idx = -1, log_dist_idx = -1;
  const std::string dist_name = cfg.get_string("data.distance_feature", "distance");
  const std::string log_dist_name = cfg.get_string("data.log_distance_feature", "log_distance");
  for (std::size_t c = 0; c < edge_names.size(); ++c) {
    if (edge_names[c] == dist_name) dist_idx = static_cast<int>(c);
    if (edge_names[c] == log_dist_name) log_dist_idx = static_cast<int>(c);
  }

  IngestReport report;
  FlowNetwork net = build_network_from_trips(load_trips(trips_path), grid, std::move(node_cell),
                                             std::move(node_features), std::move(node_names),
                                             std::move(edge_names), std::move(edge_features),
                                             dist_idx, log_dist_idx, &report);
  fs::create_directories(args.out_dir);
  save_network(net, NetworkPaths::in_dir(args.out_dir));
  Json rep;
  rep["total_trips"] = report.total_trips;
  rep["dropped_same_cell"] = report.dropped_same_cell;
  rep["asymmetry_l1"] = report.asymmetry;
  rep["n_nodes"] = report.n_nodes;
  rep["n_edges"] = report.n_edges;
  write_text_file((fs::path(args.out_dir) / "ingest_report.json").string(), rep.dump(2) + "\n");
  std::cout << "ingested " << report.total_trips << " trips (" << report.dropped_same_cell
            << " same-cell dropped, asymmetry " << report.asymmetry << ") into " << args.out_dir
            << "\n";
  return 0;
}

int cmd_split(const CommonArgs& args, const std::string& out_path) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  SplitOptions opts = split_options(cfg, args.seed);
  SplitAssignment split = make_split(net, opts);
  write_text_file(out_path, split_json(split).dump(2) + "\n");
  std::cout << "split: " << split.train_edges.size() << " train / " << split.val_edges.size()
            << " val / " << split.test_edges.size() << " test / "
            << split.discarded_edges.size() << " discarded edges -> " << out_path << "\n";
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& split_path, const std::string& model_name) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  SplitAssignment split = load_split(split_path);
  SplitContext ctx(net, split);

  const ModelKind kind = parse_model_kind(model_name);
  auto model = make_model(kind, layer_config(cfg), train_config(cfg));
  ctx.flows().reset_counter();
  model->fit(ctx, args.seed);
  if (kind != ModelKind::oracle && ctx.flows().masked_reads() != 0)
    throw ComputeError("leakage guard recorded " + std::to_string(ctx.flows().masked_reads()) +
                       " masked flow reads during fitting");

  fs::create_directories(args.out_dir);
  write_text_file((fs::path(args.out_dir) / "model.json").string(),
                  model->to_json().dump(2) + "\n");
  if (const auto* history = model->history())
    write_history_csv(*history, (fs::path(args.out_dir) / "history.csv").string());
  std::cout << "trained " << model->name() << " -> " << args.out_dir << "/model.json\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& split_path,
                 const std::string& model_file) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  SplitAssignment split = load_split(split_path);
  if (!fs::exists(model_file))
    throw DataError("model file not found: " + model_file + " (run `odflow train` first)");
  auto model = load_model(Json::parse(read_text_file(model_file)), net);

  std::vector<double> test_y;
  for (const EdgeKey& e : split.test_edges) test_y.push_back(net.flow(e.a, e.b));
  auto preds = model->predict(net, split.test_edges);
  MetricsReport metrics = compute_metrics(test_y, preds);

  fs::create_directories(args.out_dir);
  Json o;
  o["model"] = model->name();
  o["n_test_edges"] = metrics.n_edges;
  o["mae_total"] = metrics.mae_total;
  Json bins = Json::array();
  for (const auto& b : metrics.mae_bins) bins.push_back(b.has_value() ? Json(*b) : Json());
  o["mae_bins"] = std::move(bins);
  o["bin_mean_mae"] = metrics.bin_mean;
  Json mapes = Json::array();
  for (const auto& b : metrics.mape_bins) mapes.push_back(b.has_value() ? Json(*b) : Json());
  o["mape_bins"] = std::move(mapes);
  o["ssi"] = metrics.ssi;
  o["cpc"] = metrics.cpc;
  o["cpl"] = metrics.cpl;
  write_text_file((fs::path(args.out_dir) / "report.json").string(), o.dump(2) + "\n");

  std::ostringstream pred_csv;
  pred_csv << "src_id,dst_id,y_true,prediction\n";
  for (std::size_t i = 0; i < split.test_edges.size(); ++i)
    pred_csv << split.test_edges[i].a << ',' << split.test_edges[i].b << ','
             << format_double(test_y[i]) << ',' << format_double(preds[i]) << '\n';
  write_text_file((fs::path(args.out_dir) / "predictions.csv").string(), pred_csv.str());
  std::cout << "evaluated " << model->name() << ": total MAE " << metrics.mae_total
            << ", bin-mean MAE " << metrics.bin_mean << " -> " << args.out_dir << "\n";
  return 0;
}

int cmd_compare(const CommonArgs& args, const std::string& split_path,
                const std::vector<std::string>& model_names, int n_seeds,
                const std::string& residual_model) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  SplitAssignment split =
      split_path.empty() ? make_split(net, split_options(cfg, args.seed)) : load_split(split_path);

  ExperimentConfig exp;
  exp.seed = args.seed;
  exp.n_seeds = n_seeds;
  exp.train = train_config(cfg);
  exp.layers = layer_config(cfg);
  if (!model_names.empty()) {
    exp.models.clear();
    for (const std::string& name : model_names) exp.models.push_back(parse_model_kind(name));
  }

  auto report = run_experiment(net, split, exp);
  write_report_bundle(report, net, split, args.out_dir, residual_model);
  std::cout << report_table(report);
  for (const auto& row : report.rows)
    if (!row.error.empty()) std::cerr << "model " << row.name << " failed: " << row.error << "\n";
  std::cout << "report bundle -> " << args.out_dir << "\n";
  return 0;
}

int cmd_residuals(const CommonArgs& args, const std::string& split_path,
                  const std::string& predictions_path) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  SplitAssignment split = load_split(split_path);

  std::ifstream in(predictions_path);
  if (!in) throw DataError("cannot open file: " + predictions_path);
  std::string header;
  std::getline(in, header);
  auto head = csv::split_line(header);
  if (head.size() < 3 || head[0] != "src_id" || head[1] != "dst_id")
    throw DataError(predictions_path + ": header must start with src_id,dst_id");
  // use pred_mean if present, otherwise the last column
  std::size_t pred_col = head.size() - 1;
  for (std::size_t c = 0; c < head.size(); ++c)
    if (head[c] == "pred_mean" || head[c] == "prediction") pred_col = c;

  std::map<EdgeKey, double> predictions;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = csv::split_line(line);
    const std::string ctx = predictions_path + ":" + std::to_string(line_no);
    if (f.size() != head.size()) throw DataError(ctx + ": column count mismatch");
    predictions[EdgeKey(static_cast<int>(csv::parse_int(f[0], ctx)),
                        static_cast<int>(csv::parse_int(f[1], ctx)))] =
        csv::parse_double(f[pred_col], ctx);
  }

  auto entries = residual_map(net, split, predictions);
  fs::create_directories(args.out_dir);
  write_text_file((fs::path(args.out_dir) / "residuals.csv").string(), residuals_csv(entries));
  write_text_file((fs::path(args.out_dir) / "residuals.geojson").string(),
                  residuals_geojson(net, entries).dump(2) + "\n");
  std::cout << "residual map for " << entries.size() << " test nodes -> " << args.out_dir << "\n";
  return 0;
}

int cmd_powerlaw(const CommonArgs& args, double x_min, const std::string& out_path) {
  Config cfg = load_config_or_empty(args.config_path);
  FlowNetwork net = load_data(cfg, args.data_dir);
  std::vector<double> flows;
  for (const EdgeKey& e : net.edges()) flows.push_back(net.flow(e.a, e.b));
  const double alpha = powerlaw_exponent(flows, x_min);
  Json o;
  o["x_min"] = x_min;
  o["n_edges"] = flows.size();
  o["alpha"] = alpha;
  if (!out_path.empty()) write_text_file(out_path, o.dump(2) + "\n");
  std::cout << "power-law tail exponent alpha = " << alpha << " (x_min = " << x_min << ", "
            << flows.size() << " flows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"origin-destination flow prediction toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string split_path, model_name, model_file;
  std::string split_out = "split.json", powerlaw_out;
  std::string trips_path, nodes_path, grid_path, edge_features_path, predictions_path;
  std::string residual_model;
  std::vector<std::string> model_names;
  int n_seeds = 5;
  double x_min = 10.0;

  auto add_common = [&](CLI::App* cmd, bool needs_data) {
    cmd->add_option("--config", args.config_path,
                    "config file (sections [data], [split], [train], [synth])");
    cmd->add_option("--seed", args.seed, "top-level RNG seed")->each([&](const std::string&) {
      args.seed_set = true;
    });
    if (needs_data) cmd->add_option("--data", args.data_dir, "dataset directory")->required();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic city dataset");
  add_common(synth, false);
  synth->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* ingest = app.add_subcommand("ingest", "build a dataset from trips and feature tables");
  add_common(ingest, false);
  ingest->add_option("--trips", trips_path, "trips CSV")->required();
  ingest->add_option("--nodes", nodes_path, "node table CSV (node_id,row,col,features...)")
      ->required();
  ingest->add_option("--grid", grid_path, "grid CSV")->required();
  ingest->add_option("--edge-features", edge_features_path,
                     "edge feature CSV (src_id,dst_id,...)");
  ingest->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* split_cmd = app.add_subcommand("split", "draw the node-of-interest split");
  add_common(split_cmd, true);
  split_cmd->add_option("--out", split_out, "output split JSON");

  auto* train = app.add_subcommand("train", "fit one model on the training split");
  add_common(train, true);
  train->add_option("--split", split_path, "split JSON")->required();
  train
      ->add_option("--model", model_name,
                   "dcgm|huff|poisson|negbin|fcnn|gnn-geo|gnn-flow|constant")
      ->required();
  train->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a trained model on the test edges");
  add_common(evaluate, true);
  evaluate->add_option("--split", split_path, "split JSON")->required();
  evaluate->add_option("--model-file", model_file, "model JSON written by train")->required();
  evaluate->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* compare = app.add_subcommand("compare", "fit and evaluate all models");
  add_common(compare, true);
  compare->add_option("--split", split_path, "split JSON (made fresh when omitted)");
  compare->add_option("--models", model_names, "subset of models to run")->delimiter(',');
  compare->add_option("--seeds", n_seeds, "seeds per stochastic model");
  compare->add_option("--residual-model", residual_model, "model for residuals.geojson");
  compare->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* residuals = app.add_subcommand("residuals", "aggregate residuals per test node");
  add_common(residuals, true);
  residuals->add_option("--split", split_path, "split JSON")->required();
  residuals->add_option("--predictions", predictions_path, "predictions CSV")->required();
  residuals->add_option("--out-dir", args.out_dir, "output directory")->required();

  auto* powerlaw = app.add_subcommand("powerlaw", "ML tail exponent of the flow distribution");
  add_common(powerlaw, true);
  powerlaw->add_option("--xmin", x_min, "tail threshold");
  powerlaw->add_option("--out", powerlaw_out, "optional JSON output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    if (synth->parsed()) return cmd_synth(args);
    if (ingest->parsed())
      return cmd_ingest(args, trips_path, nodes_path, grid_path, edge_features_path);
    if (split_cmd->parsed()) return cmd_split(args, split_out);
    if (train->parsed()) return cmd_train(args, split_path, model_name);
    if (evaluate->parsed()) return cmd_evaluate(args, split_path, model_file);
    if (compare->parsed())
      return cmd_compare(args, split_path, model_names, n_seeds, residual_model);
    if (residuals->parsed()) return cmd_residuals(args, split_path, predictions_path);
    if (powerlaw->parsed()) return cmd_powerlaw(args, x_min, powerlaw_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
