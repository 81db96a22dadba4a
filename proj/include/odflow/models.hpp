#pragma once

#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "odflow/dcgm.hpp"
#include "odflow/glm.hpp"
#include "odflow/huff.hpp"
#include "odflow/split.hpp"
#include "odflow/train.hpp"

namespace odflow {

using Json = nlohmann::ordered_json;

enum class ModelKind { constant, dcgm, huff, poisson, negbin, fcnn, gnn_geo, gnn_flow, oracle };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::constant: return "constant";
    case ModelKind::dcgm: return "dcgm";
    case ModelKind::huff: return "huff";
    case ModelKind::poisson: return "poisson";
    case ModelKind::negbin: return "negbin";
    case ModelKind::fcnn: return "fcnn";
    case ModelKind::gnn_geo: return "gnn-geo";
    case ModelKind::gnn_flow: return "gnn-flow";
    default: return "oracle";
  }
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (ModelKind k : {ModelKind::constant, ModelKind::dcgm, ModelKind::huff, ModelKind::poisson,
                      ModelKind::negbin, ModelKind::fcnn, ModelKind::gnn_geo, ModelKind::gnn_flow,
                      ModelKind::oracle})
    if (model_kind_name(k) == s) return k;
  throw DataError("unknown model '" + s +
                  "' (expected dcgm, huff, poisson, negbin, fcnn, gnn-geo, gnn-flow, constant, "
                  "or oracle)");
}

namespace jsonio {

inline Json vec(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::VectorXd to_vec(const Json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Json mat(const Eigen::MatrixXd& m) {
  Json o;
  o["rows"] = m.rows();
  o["cols"] = m.cols();
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  o["data"] = std::move(data);
  return o;
}

inline Eigen::MatrixXd to_mat(const Json& o) {
  const Eigen::Index r = o.at("rows").get<Eigen::Index>(), c = o.at("cols").get<Eigen::Index>();
  Eigen::MatrixXd m(r, c);
  const Json& data = o.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r * c)
    throw DataError("model file: matrix data length mismatch");
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = data[static_cast<std::size_t>(at++)].get<double>();
  return m;
}

inline Json scaler(const FeatureScaler& s) {
  Json o;
  o["node_mean"] = vec(s.node_mean());
  o["node_std"] = vec(s.node_std());
  o["edge_mean"] = vec(s.edge_mean());
  o["edge_std"] = vec(s.edge_std());
  return o;
}

inline FeatureScaler to_scaler(const Json& o) {
  FeatureScaler s;
  s.set_moments(to_vec(o.at("node_mean")), to_vec(o.at("node_std")), to_vec(o.at("edge_mean")),
                to_vec(o.at("edge_std")));
  return s;
}

}  // namespace jsonio

/// A fitted flow predictor. `fit` sees only the guarded training view;
/// `predict` returns raw (unclipped) values for arbitrary edges.
class FlowModel {
 public:
  virtual ~FlowModel() = default;
  virtual std::string name() const = 0;
  virtual bool stochastic() const { return false; }
  virtual void fit(const SplitContext& ctx, std::uint64_t seed) = 0;
  virtual std::vector<double> predict(const FlowNetwork& net,
                                      const std::vector<EdgeKey>& edges) const = 0;
  virtual Json to_json() const = 0;
  virtual const std::vector<nn::EpochRecord>* history() const { return nullptr; }
};

class ConstantModel final : public FlowModel {
 public:
  std::string name() const override { return "constant"; }

  void fit(const SplitContext& ctx, std::uint64_t) override {
    const auto& edges = ctx.view().train_edges;
    if (edges.empty()) throw DataError("constant model: no training edges");
    double sum = 0.0;
    for (const EdgeKey& e : edges) sum += ctx.view().flows->flow(e.a, e.b);
    mean_ = sum / static_cast<double>(edges.size());
    fitted_ = true;
  }

  std::vector<double> predict(const FlowNetwork&, const std::vector<EdgeKey>& edges) const override {
    if (!fitted_) throw DataError("constant model: not fitted");
    return std::vector<double>(edges.size(), mean_);
  }

  Json to_json() const override {
    Json o;
    o["model"] = name();
    o["mean_flow"] = mean_;
    return o;
  }

  void set_mean(double m) {
    mean_ = m;
    fitted_ = true;
  }

 private:
  double mean_ = 0.0;
  bool fitted_ = false;
};

/// Diagnostic predictor that returns the true flows (reads ground truth;
/// never part of a real comparison, used to sanity-check the metric path).
class OracleModel final : public FlowModel {
 public:
  std::string name() const override { return "oracle"; }
  void fit(const SplitContext&, std::uint64_t) override {}
  std::vector<double> predict(const FlowNetwork& net,
                              const std::vector<EdgeKey>& edges) const override {
    std::vector<double> out;
    out.reserve(edges.size());
    for (const EdgeKey& e : edges) out.push_back(net.flow(e.a, e.b));
    return out;
  }
  Json to_json() const override {
    Json o;
    o["model"] = name();
    return o;
  }
};

class DcgmModel final : public FlowModel {
 public:
  std::string name() const override { return "dcgm"; }

  void fit(const SplitContext& ctx, std::uint64_t) override {
    params_ = fit_dcgm(ctx.view());
    scaler_ = ctx.view().scaler;
  }

  std::vector<double> predict(const FlowNetwork& net,
                              const std::vector<EdgeKey>& edges) const override {
    std::vector<double> out;
    out.reserve(edges.size());
    for (const EdgeKey& e : edges) out.push_back(predict_dcgm(params_, net, e.a, e.b));
    return out;
  }

  Json to_json() const override {
    Json o;
    o["model"] = name();
    o["beta"] = params_.beta;
    o["degenerate"] = params_.degenerate;
    o["A"] = jsonio::vec(params_.A);
    o["B"] = jsonio::vec(params_.B);
    o["O"] = jsonio::vec(params_.O);
    o["D"] = jsonio::vec(params_.D);
    o["mass_out_coef"] = jsonio::vec(params_.mass.out_coef);
    o["mass_in_coef"] = jsonio::vec(params_.mass.in_coef);
    o["scaler"] = jsonio::scaler(scaler_);
    return o;
  }

  void load(const Json& o) {
    params_.beta = o.at("beta").get<double>();
    params_.degenerate = o.at("degenerate").get<bool>();
    params_.A = jsonio::to_vec(o.at("A"));
    params_.B = jsonio::to_vec(o.at("B"));
    params_.O = jsonio::to_vec(o.at("O"));
    params_.D = jsonio::to_vec(o.at("D"));
    params_.mass.out_coef = jsonio::to_vec(o.at("mass_out_coef"));
    params_.mass.in_coef = jsonio::to_vec(o.at("mass_in_coef"));
    scaler_ = jsonio::to_scaler(o.at("scaler"));
    params_.fitted = true;
  }

  const DCGMParams& params() const { return params_; }

 private:
  DCGMParams params_;
  FeatureScaler scaler_;
};

class HuffModel final : public FlowModel {
 public:
  std::string name() const override { return "huff"; }

  void fit(const SplitContext& ctx, std::uint64_t) override {
    params_ = fit_huff(ctx.view());
    scaler_ = ctx.view().scaler;
  }

  std::vector<double> predict(const FlowNetwork& net,
                              const std::vector<EdgeKey>& edges) const override {
    std::vector<double> out;
    out.reserve(edges.size());
    for (const EdgeKey& e : edges) out.push_back(predict_huff(params_, net, e.a, e.b));
    return out;
  }

  Json to_json() const override {
    Json o;
    o["model"] = name();
    o["alpha"] = params_.alpha;
    o["beta"] = params_.beta;
    o["attractiveness"] = jsonio::vec(params_.attractiveness);
    o["margins"] = jsonio::vec(params_.margins);
    o["mass_out_coef"] = jsonio::vec(params_.mass.out_coef);
    o["mass_in_coef"] = jsonio::vec(params_.mass.in_coef);
    o["scaler"] = jsonio::scaler(scaler_);
    return o;
  }

  void load(const Json& o) {
    params_.alpha = o.at("alpha").get<double>();
    params_.beta = o.at("beta").get<double>();
    params_.attractiveness = jsonio::to_vec(o.at("attractiveness"));
    params_.margins = jsonio::to_vec(o.at("margins"));
    params_.mass.out_coef = jsonio::to_vec(o.at("mass_out_coef"));
    params_.mass.in_coef = jsonio::to_vec(o.at("mass_in_coef"));
    scaler_ = jsonio::to_scaler(o.at("scaler"));
    params_.fitted = true;
  }

  const HuffParams& params() const { return params_; }

 private:
  HuffParams params_;
  FeatureScaler scaler_;
};

class GlmModel final : public FlowModel {
 public:
  explicit GlmModel(GlmFamily family) : family_(family) {}

  std::string name() const override {
    return family_ == GlmFamily::poisson ? "poisson" : "negbin";
  }

  void fit(const SplitContext& ctx, std::uint64_t) override {
    const TrainView& view = ctx.view();
    const FlowNetwork& net = view.network();
    const auto& edges = view.train_edges;
    if (edges.empty()) throw DataError(name() + ": no training edges");
    Eigen::MatrixXd X(edges.size(), 2 * net.p() + net.k() + 1);
    Eigen::VectorXd y(edges.size());
    for (std::size_t r = 0; r < edges.size(); ++r) {
      X(static_cast<Eigen::Index>(r), 0) = 1.0;
      X.row(static_cast<Eigen::Index>(r)).tail(2 * net.p() + net.k()) =
          concat_edge_input(net, edges[r].a, edges[r].b, view.scaler).transpose();
      y(static_cast<Eigen::Index>(r)) = view.flows->flow(edges[r].a, edges[r].b);
    }
    params_ = family_ == GlmFamily::poisson ? fit_poisson(X, y, opts_, &report_)
                                            : fit_negbin(X, y, opts_, &report_);
    scaler_ = view.scaler;
  }

  std::vector<double> predict(const FlowNetwork& net,
                              const std::vector<EdgeKey>& edges) const override {
    std::vector<double> out;
    out.reserve(edges.size());
    Eigen::VectorXd x(params_.coefficients.size());
    for (const EdgeKey& e : edges) {
      x(0) = 1.0;
      x.tail(x.size() - 1) = concat_edge_input(net, e.a, e.b, scaler_);
      out.push_back(predict_glm(params_, x));
    }
    return out;
  }

  Json to_json() const override {
    Json o;
    o["model"] = name();
    o["coefficients"] = jsonio::vec(params_.coefficients);
    o["dispersion"] = params_.dispersion;
    o["dispersion_capped"] = params_.dispersion_capped;
    o["ridge_applied"] = params_.ridge_applied;
    o["scaler"] = jsonio::scaler(scaler_);
    return o;
  }

  void load(const Json& o) {
    params_.coefficients = jsonio::to_vec(o.at("coefficients"));
    params_.dispersion = o.at("dispersion").get<double>();
    params_.dispersion_capped = o.at("dispersion_capped").get<bool>();
    params_.family = family_;
    params_.fitted = true;
    scaler_ = jsonio::to_scaler(o.at("scaler"));
  }

  const GLMParams& params() const { return params_; }
  const GlmFitReport& fit_report() const { return report_; }

 private:
  GlmFamily family_;
  GlmOptions opts_;
  GLMParams params_;
  GlmFitReport report_;
  FeatureScaler scaler_;
};

class NeuralModel final : public FlowModel {
 public:
  NeuralModel(nn::ModelMode mode, nn::LayerConfig layer_cfg, nn::TrainConfig train_cfg)
      : mode_(mode), layer_cfg_(layer_cfg), train_cfg_(train_cfg) {}

  std::string name() const override { return nn::mode_name(mode_); }
  bool stochastic() const override { return true; }

  void fit(const SplitContext& ctx, std::uint64_t seed) override {
    const TrainView& view = ctx.view();
    const FlowNetwork& net = view.network();
    interest_ = view.interest_nodes;
    scaler_ = view.scaler;
    model_ = nn::LayerStack(mode_, 2 * net.p() + net.k(), net.p(), layer_cfg_,
                            derive_seed(seed, "init"));
    nn::TrainConfig cfg = train_cfg_;
    cfg.seed = derive_seed(seed, "train");

    std::unique_ptr<nn::GcnContext> gcn;
    if (mode_ != nn::ModelMode::fcnn) gcn = build_gcn_context(net, *view.flows);
    result_ = nn::train_model(model_, view, ctx.split().val_edges, ctx.val_y(), cfg, gcn.get());
    fitted_ = true;
  }

  std::vector<double> predict(const FlowNetwork& net,
                              const std::vector<EdgeKey>& edges) const override {
    if (!fitted_) throw DataError(name() + ": not fitted");
    Eigen::MatrixXd xbar(edges.size(), 2 * net.p() + net.k());
    std::vector<int> ii, jj;
    for (std::size_t r = 0; r < edges.size(); ++r) {
      xbar.row(static_cast<Eigen::Index>(r)) =
          concat_edge_input(net, edges[r].a, edges[r].b, scaler_).transpose();
      ii.push_back(edges[r].a);
      jj.push_back(edges[r].b);
    }
    std::unique_ptr<nn::GcnContext> gcn;
    if (mode_ != nn::ModelMode::fcnn) {
      GuardedFlows guard(net, {interest_.begin(), interest_.end()});
      gcn = build_gcn_context(net, guard);
    }
    std::mt19937_64 idle(0);
    auto& self = const_cast<NeuralModel&>(*this);  // eval forward mutates nothing persistent
    nn::Tensor out =
        nn::forward_batch(self.model_, xbar, gcn.get(), mode_ == nn::ModelMode::fcnn ? nullptr : &ii,
                          mode_ == nn::ModelMode::fcnn ? nullptr : &jj, false, idle);
    std::vector<double> pred(edges.size());
    for (std::size_t r = 0; r < pred.size(); ++r)
      pred[r] = out.values()(static_cast<Eigen::Index>(r), 0);
    return pred;
  }

  Json to_json() const override {
    Json o;
    o["model"] = name();
    Json cfg;
    cfg["n_fc_layers"] = layer_cfg_.n_fc_layers;
    cfg["hidden"] = layer_cfg_.hidden;
    cfg["dropout_rate"] = layer_cfg_.dropout_rate;
    cfg["batchnorm"] = layer_cfg_.batchnorm;
    o["layer_config"] = cfg;
    o["config_hash"] = detail::fnv1a64(cfg.dump());
    Json layers = Json::array();
    for (const auto& l : const_cast<NeuralModel*>(this)->model_.fc_layers()) {
      Json lj;
      lj["weight"] = jsonio::mat(l.weight.values());
      lj["bias"] = jsonio::mat(l.bias.values());
      lj["gamma"] = jsonio::mat(l.gamma.values());
      lj["shift"] = jsonio::mat(l.shift.values());
      lj["bn_running_mean"] = jsonio::vec(l.bn_stats.running_mean);
      lj["bn_running_var"] = jsonio::vec(l.bn_stats.running_var);
      layers.push_back(std::move(lj));
    }
    o["layers"] = std::move(layers);
    if (mode_ != nn::ModelMode::fcnn) {
      auto& self = const_cast<NeuralModel&>(*this);
      o["theta_g"] = jsonio::mat(self.model_.gcn_weight().values());
      o["phi1"] = self.model_.phi1().item();
      o["phi2"] = self.model_.phi2().item();
    }
    o["interest_nodes"] = interest_;
    o["scaler"] = jsonio::scaler(scaler_);
    return o;
  }

  void load(const Json& o, int input_dim, int gcn_input_dim) {
    const Json& cfg = o.at("layer_config");
    layer_cfg_.n_fc_layers = cfg.at("n_fc_layers").get<int>();
    layer_cfg_.hidden = cfg.at("hidden").get<int>();
    layer_cfg_.dropout_rate = cfg.at("dropout_rate").get<double>();
    layer_cfg_.batchnorm = cfg.at("batchnorm").get<bool>();
    model_ = nn::LayerStack(mode_, input_dim, gcn_input_dim, layer_cfg_, 0);
    const Json& layers = o.at("layers");
    if (layers.size() != model_.fc_layers().size())
      throw DataError("model file: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& layer = model_.fc_layers()[l];
      layer.weight.mutable_values() = jsonio::to_mat(layers[l].at("weight"));
      layer.bias.mutable_values() = jsonio::to_mat(layers[l].at("bias"));
      layer.gamma.mutable_values() = jsonio::to_mat(layers[l].at("gamma"));
      layer.shift.mutable_values() = jsonio::to_mat(layers[l].at("shift"));
      layer.bn_stats.running_mean = jsonio::to_vec(layers[l].at("bn_running_mean"));
      layer.bn_stats.running_var = jsonio::to_vec(layers[l].at("bn_running_var"));
    }
    if (mode_ != nn::ModelMode::fcnn) {
      model_.gcn_weight().mutable_values() = jsonio::to_mat(o.at("theta_g"));
      model_.phi1().mutable_values()(0, 0) = o.at("phi1").get<double>();
      model_.phi2().mutable_values()(0, 0) = o.at("phi2").get<double>();
    }
    interest_ = o.at("interest_nodes").get<std::vector<int>>();
    scaler_ = jsonio::to_scaler(o.at("scaler"));
    fitted_ = true;
  }

  const std::vector<nn::EpochRecord>* history() const override { return &result_.history; }
  const nn::TrainResult& train_result() const { return result_; }
  nn::LayerStack& layer_stack() { return model_; }

 private:
  std::unique_ptr<nn::GcnContext> build_gcn_context(const FlowNetwork& net,
                                                    const GuardedFlows& flows) const {
    auto ctx = std::make_unique<nn::GcnContext>();
    const AdjacencyView view = mode_ == nn::ModelMode::gnn_geo ? geo_adjacency(flows)
                                                               : flow_adjacency(flows);
    ctx->a_norm = normalized_adjacency(view);
    ctx->node_inputs = scaler_.scale_all_nodes(net);
    ctx->kind = view.kind;
    return ctx;
  }

  nn::ModelMode mode_;
  nn::LayerConfig layer_cfg_;
  nn::TrainConfig train_cfg_;
  nn::LayerStack model_;
  FeatureScaler scaler_;
  std::vector<int> interest_;
  nn::TrainResult result_;
  bool fitted_ = false;
};

inline std::unique_ptr<FlowModel> make_model(ModelKind kind, const nn::LayerConfig& layers = {},
                                             const nn::TrainConfig& train = {}) {
  switch (kind) {
    case ModelKind::constant: return std::make_unique<ConstantModel>();
    case ModelKind::oracle: return std::make_unique<OracleModel>();
    case ModelKind::dcgm: return std::make_unique<DcgmModel>();
    case ModelKind::huff: return std::make_unique<HuffModel>();
    case ModelKind::poisson: return std::make_unique<GlmModel>(GlmFamily::poisson);
    case ModelKind::negbin: return std::make_unique<GlmModel>(GlmFamily::negbin);
    case ModelKind::fcnn:
      return std::make_unique<NeuralModel>(nn::ModelMode::fcnn, layers, train);
    case ModelKind::gnn_geo:
      return std::make_unique<NeuralModel>(nn::ModelMode::gnn_geo, layers, train);
    default: return std::make_unique<NeuralModel>(nn::ModelMode::gnn_flow, layers, train);
  }
}

/// Rehydrates a fitted model from its JSON file.
inline std::unique_ptr<FlowModel> load_model(const Json& o, const FlowNetwork& net) {
  const ModelKind kind = parse_model_kind(o.at("model").get<std::string>());
  auto model = make_model(kind);
  switch (kind) {
    case ModelKind::constant:
      static_cast<ConstantModel&>(*model).set_mean(o.at("mean_flow").get<double>());
      break;
    case ModelKind::oracle: break;
    case ModelKind::dcgm: static_cast<DcgmModel&>(*model).load(o); break;
    case ModelKind::huff: static_cast<HuffModel&>(*model).load(o); break;
    case ModelKind::poisson:
    case ModelKind::negbin: static_cast<GlmModel&>(*model).load(o); break;
    default:
      static_cast<NeuralModel&>(*model).load(o, 2 * net.p() + net.k(), net.p());
      break;
  }
  return model;
}

}  // namespace odflow
