#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "odflow/adjacency.hpp"
#include "odflow/features.hpp"
#include "odflow/grid.hpp"
#include "odflow/network.hpp"
#include "test_helpers.hpp"

using namespace odflow;

TEST_CASE("assign_cell maps points to row-major cells", "[core]") {
  GridSpec grid{0.0, 0.0, 500.0, 3, 2};

  CHECK(assign_cell(10.0, 10.0, grid) == 0);
  CHECK(assign_cell(500.0, 0.0, grid) == 1);  // boundary goes to the higher column
  CHECK(assign_cell(999.0, 0.0, grid) == 1);
  CHECK(assign_cell(0.0, 500.0, grid) == 2);
  CHECK(assign_cell(1000.0, 1500.0, grid) == 5);  // outer max edge stays in the last cell

  CHECK_THROWS_AS(assign_cell(-1.0, 0.0, grid), DataError);
  CHECK_THROWS_AS(assign_cell(0.0, 1500.1, grid), DataError);
}

TEST_CASE("assign_cell matches the floor-division oracle on random points", "[core]") {
  GridSpec grid{-250.0, 1000.0, 125.0, 7, 11};
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ux(grid.origin_x, grid.origin_x + grid.n_cols * grid.cell_size);
  std::uniform_real_distribution<double> uy(grid.origin_y, grid.origin_y + grid.n_rows * grid.cell_size);
  for (int t = 0; t < 1000; ++t) {
    const double x = ux(rng), y = uy(rng);
    int col = static_cast<int>(std::floor((x - grid.origin_x) / grid.cell_size));
    int row = static_cast<int>(std::floor((y - grid.origin_y) / grid.cell_size));
    col = std::min(col, grid.n_cols - 1);
    row = std::min(row, grid.n_rows - 1);
    REQUIRE(assign_cell(x, y, grid) == row * grid.n_cols + col);
  }
}

TEST_CASE("symmetrize averages a matrix with its transpose", "[core]") {
  Eigen::MatrixXd w(2, 2);
  w << 0, 2, 4, 0;
  Eigen::MatrixXd s = symmetrize(w);
  CHECK(s(0, 1) == 3.0);
  CHECK(s(1, 0) == 3.0);
  CHECK(s(0, 0) == 0.0);

  // idempotence on an already-symmetric matrix
  Eigen::MatrixXd again = symmetrize(s);
  CHECK(again == s);

  Eigen::MatrixXd neg(2, 2);
  neg << 0, -1, 0, 0;
  CHECK_THROWS_WITH(symmetrize(neg), Catch::Matchers::ContainsSubstring("(0, 1)"));
  Eigen::MatrixXd diag(2, 2);
  diag << 1, 0, 0, 0;
  CHECK_THROWS_AS(symmetrize(diag), DataError);
}

TEST_CASE("symmetrize matches the dense elementwise oracle and preserves totals", "[core]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 10.0);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(20, 20);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j)
      if (i != j) w(i, j) = unit(rng);

  Eigen::MatrixXd s = symmetrize(w);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) REQUIRE(s(i, j) == (w(i, j) + w(j, i)) / 2.0);
  REQUIRE_THAT(s.sum(), Catch::Matchers::WithinRel(w.sum(), 1e-9));
}

TEST_CASE("FlowNetwork validates its invariants", "[core]") {
  // flow without an edge-feature vector
  GridSpec grid{0.0, 0.0, 500.0, 1, 2};
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows{{EdgeKey(0, 1), 5.0}};
  CHECK_THROWS_AS(FlowNetwork(grid, {0, 1}, Eigen::MatrixXd::Zero(2, 1), {"f"}, {}, flows, {}),
                  DataError);

  auto net = odtest::make_network(1, 2, {{0, 1, 5.0}});
  CHECK(net.flow(0, 1) == 5.0);
  CHECK(net.flow(1, 0) == 5.0);
  CHECK(net.flow(0, 0) == 0.0);
  CHECK(net.total_flow() == 10.0);
  CHECK(net.edges().size() == 1);
}

TEST_CASE("geo adjacency keeps only Moore-adjacent pairs", "[core]") {
  auto two = odtest::make_network(1, 2, {{0, 1, 5.0}});
  auto geo = geo_adjacency(two);
  CHECK(geo.matrix.coeff(0, 1) == 5.0);
  CHECK(geo.matrix.coeff(1, 0) == 5.0);

  auto far = odtest::make_network(1, 4, {{0, 3, 9.0}});  // 3 cells apart
  CHECK(geo_adjacency(far).matrix.coeff(0, 3) == 0.0);
}

TEST_CASE("geo adjacency matches the Chebyshev mask oracle", "[core]") {
  const int n = 25;
  auto net = odtest::make_network(5, 5, odtest::random_flow_entries(n, 0.5, 99));
  auto geo = geo_adjacency(net);
  Eigen::MatrixXd dense = Eigen::MatrixXd(geo.matrix);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int dr = std::abs(i / 5 - j / 5), dc = std::abs(i % 5 - j % 5);
      const bool neighbor = i != j && dr <= 1 && dc <= 1;
      const double expected = neighbor ? net.flow(i, j) : 0.0;
      REQUIRE(dense(i, j) == expected);
      // every geo entry is either 0 or the true flow
      REQUIRE((dense(i, j) == 0.0 || dense(i, j) == net.flow(i, j)));
    }
  }
}

TEST_CASE("flow adjacency approximates interest entries from neighborhood averages", "[core]") {
  // line of 4 cells: 0-1-2-3, make node 2 the interest node
  auto net = odtest::make_network(1, 4, {{0, 1, 7.0}, {1, 2, 4.0}, {2, 3, 6.0}, {0, 2, 2.0}});
  GuardedFlows guarded(net, {2});
  auto view = flow_adjacency(guarded);
  CHECK(guarded.masked_reads() == 0);

  // regular pair passes through
  CHECK(view.matrix.coeff(0, 1) == 7.0);
  // interest node 2 has readable neighborhood {1, 3}: W~_02 = (W_01 + W_03)/2
  CHECK(view.matrix.coeff(0, 2) == Catch::Approx((7.0 + 0.0) / 2.0));
  CHECK(view.matrix.coeff(2, 0) == view.matrix.coeff(0, 2));
}

TEST_CASE("flow adjacency matches a loop-based averaging oracle", "[core]") {
  const int n = 36;
  auto net = odtest::make_network(6, 6, odtest::random_flow_entries(n, 0.4, 1234, 30.0));
  const std::unordered_set<int> interest{3, 17, 30};
  GuardedFlows guarded(net, interest);
  auto view = flow_adjacency(guarded);
  REQUIRE(guarded.masked_reads() == 0);

  auto neighborhood = [&](int node) {
    std::vector<int> out;
    for (int o = 0; o < n; ++o)
      if (o != node && net.grid().moore_adjacent(net.cell_of(node), net.cell_of(o)) &&
          !interest.count(o))
        out.push_back(o);
    return out;
  };

  Eigen::MatrixXd dense = Eigen::MatrixXd(view.matrix);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double expected = 0.0;
      const bool mi = interest.count(i) > 0, mj = interest.count(j) > 0;
      if (!mi && !mj) {
        expected = net.flow(i, j);
      } else if (mi && mj) {
        double sum = 0.0;
        const auto ni = neighborhood(i), nj = neighborhood(j);
        REQUIRE((!ni.empty() && !nj.empty()));
        for (int k : ni)
          for (int l : nj) sum += net.flow(k, l);
        expected = sum / static_cast<double>(ni.size() * nj.size());
      } else {
        const int reg = mi ? j : i, intr = mi ? i : j;
        const auto nb = neighborhood(intr);
        REQUIRE(!nb.empty());
        double sum = 0.0;
        for (int k : nb) sum += net.flow(reg, k);
        expected = sum / static_cast<double>(nb.size());
      }
      REQUIRE_THAT(dense(i, j), Catch::Matchers::WithinAbs(expected, 1e-12));
      REQUIRE(dense(i, j) == dense(j, i));
    }
  }
}

TEST_CASE("flow adjacency warns on an empty readable neighborhood", "[core]") {
  // two nodes three cells apart: interest node 1 has no Moore neighbors at all
  auto net = odtest::make_network(1, 4, {{0, 1, 9.0}}, 2, std::vector<int>{0, 3});
  GuardedFlows guarded(net, {1});
  auto view = flow_adjacency(guarded);
  CHECK(view.matrix.coeff(0, 1) == 0.0);
  CHECK_FALSE(view.warnings.empty());
  CHECK(guarded.masked_reads() == 0);
}

TEST_CASE("normalized adjacency handles the trivial cases", "[core]") {
  auto isolated = odtest::make_network(1, 1, {});
  auto norm1 = normalized_adjacency(geo_adjacency(isolated));
  REQUIRE(norm1.rows() == 1);
  CHECK(norm1.coeff(0, 0) == 1.0);

  auto pair = odtest::make_network(1, 2, {{0, 1, 1.0}});
  auto norm2 = normalized_adjacency(geo_adjacency(pair));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(norm2.coeff(i, j) == Catch::Approx(0.5));
}

TEST_CASE("normalized adjacency matches a dense loop oracle", "[core]") {
  const int n = 15;
  auto net = odtest::make_network(3, 5, odtest::random_flow_entries(n, 0.6, 5));
  auto view = flow_adjacency(net, {});
  auto norm = normalized_adjacency(view);

  Eigen::MatrixXd tilde = Eigen::MatrixXd(view.matrix) + Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd deg = tilde.rowwise().sum();
  Eigen::MatrixXd dense = Eigen::MatrixXd(norm);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      REQUIRE_THAT(dense(i, j),
                   Catch::Matchers::WithinAbs(tilde(i, j) / std::sqrt(deg(i) * deg(j)), 1e-12));

  // symmetry, entries in [0,1], spectral radius <= 1
  REQUIRE_THAT((dense - dense.transpose()).cwiseAbs().maxCoeff(),
               Catch::Matchers::WithinAbs(0.0, 1e-15));
  CHECK(dense.minCoeff() >= 0.0);
  CHECK(dense.maxCoeff() <= 1.0);
  CHECK(odtest::spectral_radius(dense) <= 1.0 + 1e-9);
}

TEST_CASE("normalized adjacency spectral radius stays below one on random instances", "[core]") {
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    auto net = odtest::make_network(7, 7, odtest::random_flow_entries(49, 0.3, seed));
    Eigen::MatrixXd dense = Eigen::MatrixXd(normalized_adjacency(flow_adjacency(net, {})));
    REQUIRE(odtest::spectral_radius(dense) <= 1.0 + 1e-9);
  }
}

TEST_CASE("concat_edge_input lays out origin, edge, destination blocks", "[core]") {
  GridSpec grid{0.0, 0.0, 500.0, 1, 2};
  Eigen::MatrixXd feats(2, 2);
  feats << 1, 2, 3, 4;
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows{{EdgeKey(0, 1), 5.0}};
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> efeats{{EdgeKey(0, 1), {9.0}}};
  FlowNetwork net(grid, {0, 1}, feats, {"a", "b"}, {"e"}, flows, efeats);

  auto scaler = FeatureScaler::identity(2, 1);
  Eigen::VectorXd x = concat_edge_input(net, 0, 1, scaler);
  REQUIRE(x.size() == 5);
  CHECK(x(0) == 1.0);
  CHECK(x(1) == 2.0);
  CHECK(x(2) == 9.0);
  CHECK(x(3) == 3.0);
  CHECK(x(4) == 4.0);

  // reversing the pair swaps only the node blocks
  Eigen::VectorXd rev = concat_edge_input(net, 1, 0, scaler);
  CHECK(rev(0) == 3.0);
  CHECK(rev(1) == 4.0);
  CHECK(rev(2) == 9.0);
  CHECK(rev(3) == 1.0);
  CHECK(rev(4) == 2.0);

  CHECK_THROWS_AS(concat_edge_input(net, 1, 1, scaler), DataError);
}

TEST_CASE("missing edge features error when synthesis is impossible", "[core]") {
  GridSpec grid{0.0, 0.0, 500.0, 1, 3};
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(3, 1);
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows{{EdgeKey(0, 1), 5.0}};
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> efeats{{EdgeKey(0, 1), {9.0}}};
  // no designated distance feature -> pair (0,2) cannot be synthesized
  FlowNetwork net(grid, {0, 1, 2}, feats, {"a"}, {"e"}, flows, efeats, -1, -1);
  auto scaler = FeatureScaler::identity(1, 1);
  CHECK_THROWS_WITH(concat_edge_input(net, 0, 2, scaler),
                    Catch::Matchers::ContainsSubstring("(0, 2)"));
}

TEST_CASE("z-score scaler gives zero mean unit variance on its fit rows", "[core]") {
  auto net = odtest::make_network(4, 4, odtest::random_flow_entries(16, 0.8, 3), 3);
  std::vector<int> fit_nodes;
  for (int i = 0; i < 12; ++i) fit_nodes.push_back(i);
  std::vector<EdgeKey> fit_edges(net.edges().begin(), net.edges().begin() + 10);
  auto scaler = FeatureScaler::fit(net, fit_nodes, fit_edges);

  Eigen::MatrixXd scaled(fit_nodes.size(), net.p());
  for (std::size_t r = 0; r < fit_nodes.size(); ++r)
    scaled.row(static_cast<Eigen::Index>(r)) =
        scaler.scale_node(net.node_features().row(fit_nodes[r]).transpose()).transpose();
  for (int c = 0; c < net.p(); ++c) {
    REQUIRE_THAT(scaled.col(c).mean(), Catch::Matchers::WithinAbs(0.0, 1e-12));
    const double var = (scaled.col(c).array() - scaled.col(c).mean()).square().mean();
    REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("masked flow reads are counted by the guard", "[core]") {
  auto net = odtest::make_network(1, 3, {{0, 1, 5.0}, {1, 2, 3.0}});
  GuardedFlows guarded(net, {2});
  CHECK(guarded.flow(0, 1) == 5.0);
  CHECK(guarded.masked_reads() == 0);
  CHECK(guarded.flow(1, 2) == 0.0);  // masked: reads as zero and is counted
  CHECK(guarded.masked_reads() == 1);
  guarded.reset_counter();
  CHECK(guarded.masked_reads() == 0);
}
