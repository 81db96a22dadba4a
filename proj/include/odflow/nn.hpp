#pragma once

#include <random>
#include <string>
#include <vector>

#include "odflow/adjacency.hpp"
#include "odflow/features.hpp"
#include "odflow/tensor.hpp"

namespace odflow::nn {

enum class ModelMode { fcnn, gnn_geo, gnn_flow };

inline std::string mode_name(ModelMode m) {
  switch (m) {
    case ModelMode::fcnn: return "fcnn";
    case ModelMode::gnn_geo: return "gnn-geo";
    default: return "gnn-flow";
  }
}

struct LayerConfig {
  int n_fc_layers = 4;
  int hidden = 32;
  double dropout_rate = 0.5;
  bool batchnorm = true;
};

struct FcLayer {
  Tensor weight;  // D_in x D_out
  Tensor bias;    // 1 x D_out
  Tensor gamma;   // 1 x D_out (batchnorm scale)
  Tensor shift;   // 1 x D_out (batchnorm shift)
  BatchNormStats bn_stats;
};

/// Graph inputs shared by every edge in a forward pass: the normalized
/// adjacency and the standardized node features feeding the GCN.
struct GcnContext {
  Eigen::SparseMatrix<double> a_norm;
  Eigen::MatrixXd node_inputs;  // n x p, standardized
  AdjacencyKind kind = AdjacencyKind::geo;
};

/// The three architectures share four fully connected layers; the GNN modes
/// add one graph convolution whose output embeddings are fused after the
/// first block with learned weights phi1, phi2.
class LayerStack {
 public:
  LayerStack() = default;

  LayerStack(ModelMode mode, int input_dim, int gcn_input_dim, const LayerConfig& cfg,
             std::uint64_t init_seed)
      : mode_(mode), cfg_(cfg), input_dim_(input_dim) {
    if (cfg.n_fc_layers < 2) throw DataError("LayerStack: need at least two fc layers");
    std::mt19937_64 rng(init_seed);
    int d_in = input_dim;
    for (int l = 0; l < cfg.n_fc_layers; ++l) {
      const int d_out = l + 1 == cfg.n_fc_layers ? 1 : cfg.hidden;
      FcLayer layer;
      layer.weight = Tensor::leaf(fan_in_uniform(rng, d_in, d_out), true);
      layer.bias = Tensor::leaf(Eigen::MatrixXd::Zero(1, d_out), true);
      layer.gamma = Tensor::leaf(Eigen::MatrixXd::Ones(1, d_out), true);
      layer.shift = Tensor::leaf(Eigen::MatrixXd::Zero(1, d_out), true);
      layer.bn_stats = BatchNormStats(d_out);
      fc_.push_back(std::move(layer));
      d_in = d_out;
    }
    if (mode != ModelMode::fcnn) {
      theta_g_ = Tensor::leaf(fan_in_uniform(rng, gcn_input_dim, cfg.hidden), true);
    }
    phi1_ = Tensor::scalar(1.0, true);
    phi2_ = Tensor::scalar(1.0, true);
  }

  ModelMode mode() const { return mode_; }
  const LayerConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for (auto& l : fc_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
      if (cfg_.batchnorm) {
        out.push_back(l.gamma);
        out.push_back(l.shift);
      }
    }
    if (mode_ != ModelMode::fcnn) {
      out.push_back(theta_g_);
      out.push_back(phi1_);
      out.push_back(phi2_);
    }
    return out;
  }

  std::vector<FcLayer>& fc_layers() { return fc_; }
  const std::vector<FcLayer>& fc_layers() const { return fc_; }
  Tensor& gcn_weight() { return theta_g_; }
  Tensor& phi1() { return phi1_; }
  Tensor& phi2() { return phi2_; }

  /// Deep copy of all learned values and running statistics.
  struct Snapshot {
    std::vector<Eigen::MatrixXd> values;
    std::vector<BatchNormStats> bn;
  };

  Snapshot snapshot() {
    Snapshot s;
    for (Tensor& t : parameters()) s.values.push_back(t.values());
    for (auto& l : fc_) s.bn.push_back(l.bn_stats);
    return s;
  }

  void restore(const Snapshot& s) {
    auto params = parameters();
    if (s.values.size() != params.size() || s.bn.size() != fc_.size())
      throw DataError("LayerStack::restore: snapshot shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = s.values[i];
    for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].bn_stats = s.bn[i];
  }

 private:
  static Eigen::MatrixXd fan_in_uniform(std::mt19937_64& rng, int d_in, int d_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(d_in, d_out);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    return w;
  }

  ModelMode mode_ = ModelMode::fcnn;
  LayerConfig cfg_;
  int input_dim_ = 0;
  std::vector<FcLayer> fc_;
  Tensor theta_g_;
  Tensor phi1_, phi2_;
};

/// One graph convolution: ReLU(A_norm H Theta).
inline Tensor gcn_forward(const Tensor& h, const Eigen::SparseMatrix<double>& a_norm,
                          const Tensor& theta) {
  return relu(matmul(spmm(a_norm, h), theta));
}

/// Hidden block: Linear -> BatchNorm -> ReLU -> Dropout.
inline Tensor fc_block(LayerStack& model, std::size_t layer, const Tensor& h, bool training,
                       std::mt19937_64& rng) {
  FcLayer& l = model.fc_layers()[layer];
  Tensor z = add_rowvec(matmul(h, l.weight), l.bias);
  if (model.config().batchnorm) z = batchnorm(z, l.gamma, l.shift, l.bn_stats, training);
  z = relu(z);
  return dropout(z, model.config().dropout_rate, training, rng);
}

/// Batched forward pass. `xbar` holds one standardized concatenated edge
/// vector per row; for GNN modes `gcn` plus the incident node indices of each
/// row must be supplied.
inline Tensor forward_batch(LayerStack& model, const Eigen::MatrixXd& xbar,
                            const GcnContext* gcn, const std::vector<int>* idx_i,
                            const std::vector<int>* idx_j, bool training, std::mt19937_64& rng) {
  if (xbar.cols() != model.input_dim())
    throw DataError("forward_batch: input width " + std::to_string(xbar.cols()) +
                    " != expected " + std::to_string(model.input_dim()));
  Tensor x = Tensor::leaf(xbar, false);

  Tensor h = fc_block(model, 0, x, training, rng);
  if (model.mode() != ModelMode::fcnn) {
    if (gcn == nullptr || idx_i == nullptr || idx_j == nullptr)
      throw DataError("forward_batch: GNN mode requires a GcnContext and node indices");
    const AdjacencyKind want =
        model.mode() == ModelMode::gnn_geo ? AdjacencyKind::geo : AdjacencyKind::flow;
    if (gcn->kind != want)
      throw DataError("forward_batch: adjacency kind does not match model mode " +
                      mode_name(model.mode()));
    // both endpoint embeddings come from the same convolution weights
    Tensor embeddings = gcn_forward(Tensor::leaf(gcn->node_inputs, false), gcn->a_norm,
                                    model.gcn_weight());
    Tensor gi = gather_rows(embeddings, *idx_i);
    Tensor gj = gather_rows(embeddings, *idx_j);
    h = add(scale(h, model.phi1()), scale(add(gi, gj), model.phi2()));
  }

  const std::size_t n_layers = model.fc_layers().size();
  for (std::size_t l = 1; l + 1 < n_layers; ++l) h = fc_block(model, l, h, training, rng);
  FcLayer& last = model.fc_layers()[n_layers - 1];
  return add_rowvec(matmul(h, last.weight), last.bias);  // final layer stays linear
}

/// Single-edge prediction. In GNN modes the adjacency view's kind must match
/// the model; training mode with batchnorm needs batches, so this wrapper is
/// eval-oriented.
inline double forward_edge(LayerStack& model, const FlowNetwork& net, int i, int j,
                           const AdjacencyView* adjacency, const FeatureScaler& scaler,
                           bool training, std::mt19937_64& rng) {
  Eigen::MatrixXd xbar = concat_edge_input(net, i, j, scaler).transpose();
  if (model.mode() == ModelMode::fcnn) {
    return forward_batch(model, xbar, nullptr, nullptr, nullptr, training, rng).values()(0, 0);
  }
  if (adjacency == nullptr) throw DataError("forward_edge: GNN mode requires an adjacency");
  GcnContext ctx{normalized_adjacency(*adjacency), scaler.scale_all_nodes(net), adjacency->kind};
  std::vector<int> ii{i}, jj{j};
  return forward_batch(model, xbar, &ctx, &ii, &jj, training, rng).values()(0, 0);
}

}  // namespace odflow::nn
