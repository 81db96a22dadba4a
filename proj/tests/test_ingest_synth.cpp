#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <map>
#include <random>

#include "odflow/config.hpp"
#include "odflow/ingest.hpp"
#include "odflow/metrics.hpp"
#include "odflow/net_io.hpp"
#include "odflow/synth.hpp"

using namespace odflow;

namespace {

std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("odflow_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("aggregate_od counts directed trips per cell pair", "[ingest]") {
  GridSpec grid{0.0, 0.0, 500.0, 1, 2};
  std::vector<TripRecord> trips(3, TripRecord{10.0, 10.0, 600.0, 10.0, 1});
  auto raw = aggregate_od(trips, grid);
  CHECK(raw.at(0, 1) == 3.0);
  CHECK(raw.at(1, 0) == 0.0);
  CHECK(raw.dropped_same_cell == 0);

  // same-cell trip dropped with a counter
  auto raw2 = aggregate_od({TripRecord{10.0, 10.0, 20.0, 20.0, 1}}, grid);
  CHECK(raw2.counts.empty());
  CHECK(raw2.dropped_same_cell == 1);
  CHECK(raw2.total_trips == 1);
}

TEST_CASE("aggregate_od matches a hash-map counting oracle", "[ingest]") {
  GridSpec grid{0.0, 0.0, 250.0, 4, 4};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::vector<TripRecord> trips;
  for (int t = 0; t < 500; ++t) trips.push_back({u(rng), u(rng), u(rng), u(rng), 1 + (t % 3)});

  auto raw = aggregate_od(trips, grid);

  std::map<std::pair<int, int>, double> oracle;
  long long dropped = 0, total = 0;
  for (const auto& t : trips) {
    const int a = assign_cell(t.origin_x, t.origin_y, grid);
    const int b = assign_cell(t.dest_x, t.dest_y, grid);
    total += t.count;
    if (a == b)
      dropped += t.count;
    else
      oracle[{a, b}] += static_cast<double>(t.count);
  }
  REQUIRE(raw.dropped_same_cell == dropped);
  REQUIRE(raw.total_trips == total);
  double matrix_sum = 0.0;
  for (const auto& [key, v] : oracle) {
    REQUIRE(raw.at(key.first, key.second) == v);
    matrix_sum += v;
  }
  REQUIRE(raw.counts.size() == oracle.size());
  // conservation: matrix total + dropped = trip total
  REQUIRE(matrix_sum + static_cast<double>(dropped) == static_cast<double>(total));
}

TEST_CASE("aggregate_od propagates assign_cell errors with the trip index", "[ingest]") {
  GridSpec grid{0.0, 0.0, 500.0, 1, 2};
  std::vector<TripRecord> trips{{10.0, 10.0, 20.0, 20.0, 1}, {-5.0, 0.0, 10.0, 10.0, 1}};
  CHECK_THROWS_WITH(aggregate_od(trips, grid), Catch::Matchers::ContainsSubstring("trip 2"));
}

TEST_CASE("synthetic city generation is deterministic and validated", "[ingest]") {
  SynthConfig cfg;
  cfg.n_rows = 5;
  cfg.n_cols = 5;
  cfg.flow_scale = 2e4;
  cfg.seed = 77;

  auto [net1, gt1] = generate_synthetic_city(cfg);
  auto [net2, gt2] = generate_synthetic_city(cfg);
  REQUIRE(networks_equal(net1, net2, 0.0));
  REQUIRE(gt1.mu == gt2.mu);

  SynthConfig bad = cfg;
  bad.flow_scale = 0.0;
  CHECK_THROWS_AS(generate_synthetic_city(bad), DataError);
  SynthConfig single = cfg;
  single.n_rows = 1;
  single.n_cols = 1;
  CHECK_THROWS_AS(generate_synthetic_city(single), DataError);
}

TEST_CASE("synthetic flows have a heavy tail matching the latent exponent", "[ingest]") {
  SynthConfig cfg;
  cfg.n_rows = 10;
  cfg.n_cols = 10;
  cfg.flow_scale = 5e4;
  cfg.seed = 2024;
  auto [net, gt] = generate_synthetic_city(cfg);

  const double x_min = 10.0;
  // independent tail-exponent reference computed from the latent means
  double log_sum = 0.0;
  std::size_t n_tail = 0;
  for (int i = 0; i < net.n(); ++i) {
    for (int j = i + 1; j < net.n(); ++j) {
      if (gt.mu(i, j) >= x_min) {
        log_sum += std::log(gt.mu(i, j) / x_min);
        ++n_tail;
      }
    }
  }
  REQUIRE(n_tail >= 10);
  const double alpha_ref = 1.0 + static_cast<double>(n_tail) / log_sum;

  std::vector<double> flows;
  for (const EdgeKey& e : net.edges()) flows.push_back(net.flow(e.a, e.b));
  const double alpha_hat = powerlaw_exponent(flows, x_min);
  REQUIRE_THAT(alpha_hat, Catch::Matchers::WithinAbs(alpha_ref, 0.4));
}

TEST_CASE("network save/load round trips exactly", "[ingest]") {
  SynthConfig cfg;
  cfg.n_rows = 5;
  cfg.n_cols = 5;
  cfg.flow_scale = 2e4;
  cfg.seed = 3;
  auto [net, gt] = generate_synthetic_city(cfg);

  auto paths = NetworkPaths::in_dir(temp_dir("roundtrip"));
  save_network(net, paths);
  FlowNetwork loaded = load_network(paths);
  REQUIRE(networks_equal(net, loaded, 1e-12));
  CHECK(loaded.distance_feature() == 0);
  CHECK(loaded.log_distance_feature() == 1);
}

TEST_CASE("loader rejects duplicate edges naming the line", "[ingest]") {
  const std::string dir = temp_dir("dupe");
  auto paths = NetworkPaths::in_dir(dir);
  write_text_file(paths.grid, "origin_x,origin_y,cell_size,n_rows,n_cols\n0,0,500,1,2\n");
  write_text_file(paths.nodes, "node_id,row,col,f\n0,0,0,1.5\n1,0,1,2.5\n");
  write_text_file(paths.edges, "src_id,dst_id,flow,e\n0,1,5,1\n1,0,4,1\n");
  CHECK_THROWS_WITH(load_network(paths), Catch::Matchers::ContainsSubstring(":3"));
}

TEST_CASE("loader rejects schema violations", "[ingest]") {
  const std::string dir = temp_dir("schema");
  auto paths = NetworkPaths::in_dir(dir);
  write_text_file(paths.grid, "origin_x,origin_y,cell_size,n_rows,n_cols\n0,0,500,1,2\n");
  write_text_file(paths.nodes, "node_id,row,col,f\n0,0,0,1.5\n1,0,1,2.5\n");

  write_text_file(paths.edges, "src_id,dst_id,flow,e\n0,1,5\n");
  CHECK_THROWS_AS(load_network(paths), DataError);  // column count mismatch

  write_text_file(paths.edges, "src_id,dst_id,flow,e\n0,1,5,nan\n");
  CHECK_THROWS_WITH(load_network(paths), Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("hand-written two-node fixture loads to the expected structure", "[ingest]") {
  const std::string dir = temp_dir("fixture");
  auto paths = NetworkPaths::in_dir(dir);
  write_text_file(paths.grid, "origin_x,origin_y,cell_size,n_rows,n_cols\n100,200,250,1,2\n");
  write_text_file(paths.nodes, "node_id,row,col,pop,income\n0,0,0,10,1.25\n1,0,1,20,2.5\n");
  write_text_file(paths.edges, "src_id,dst_id,flow,distance\n0,1,42,250\n");

  FlowNetwork net = load_network(paths);
  REQUIRE(net.n() == 2);
  REQUIRE(net.p() == 2);
  REQUIRE(net.k() == 1);
  CHECK(net.flow(0, 1) == 42.0);
  CHECK(net.node_features()(0, 0) == 10.0);
  CHECK(net.node_features()(1, 1) == 2.5);
  CHECK(net.cell_of(1) == 1);
  CHECK(net.distance(0, 1) == 250.0);
  CHECK(net.grid().origin_x == 100.0);
}

TEST_CASE("trips file ingestion builds a symmetric network", "[ingest]") {
  GridSpec grid{0.0, 0.0, 500.0, 1, 3};
  // 4 trips 0->1, 2 trips 1->0: symmetrized flow (4+2)/2 = 3
  std::vector<TripRecord> trips;
  for (int i = 0; i < 4; ++i) trips.push_back({10, 10, 600, 10, 1});
  for (int i = 0; i < 2; ++i) trips.push_back({600, 10, 10, 10, 1});
  trips.push_back({10, 10, 20, 20, 1});  // same-cell, dropped

  IngestReport report;
  FlowNetwork net = build_network_from_trips(trips, grid, {0, 1, 2}, Eigen::MatrixXd::Zero(3, 1),
                                             {"f"}, {}, {}, -1, -1, &report);
  CHECK(net.flow(0, 1) == 3.0);
  CHECK(report.dropped_same_cell == 1);
  CHECK(report.total_trips == 7);
  // asymmetry of the directed counts: |4-2| + |2-4| over total 6
  CHECK_THAT(report.asymmetry, Catch::Matchers::WithinAbs(4.0 / 6.0, 1e-12));
  // synthesized distance features
  REQUIRE(net.k() == 2);
  CHECK(net.distance(0, 1) == 500.0);
}

TEST_CASE("config files parse sections and typed values", "[ingest]") {
  const std::string text =
      "# comment\n[synth]\nn_rows = 7\nflow_scale = 1e4\n\n[train]\nbatch_size=64\n";
  Config cfg = Config::parse(text);
  CHECK(cfg.get_int("synth.n_rows", 0) == 7);
  CHECK(cfg.get_double("synth.flow_scale", 0.0) == 1e4);
  CHECK(cfg.get_int("train.batch_size", 0) == 64);
  CHECK(cfg.get_int("train.missing", 5) == 5);
  CHECK_THROWS_AS(Config::parse("novalue\n"), DataError);

  SynthConfig s = SynthConfig::from_config(cfg);
  CHECK(s.n_rows == 7);
  CHECK(s.flow_scale == 1e4);
}
