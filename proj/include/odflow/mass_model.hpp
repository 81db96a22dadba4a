#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "odflow/train_view.hpp"

namespace odflow {

/// Regresses log(1 + margin) on standardized node features, giving the
/// margin-based baselines a way to produce out/in totals for interest nodes
/// whose incident flows are withheld.
struct MassModel {
  Eigen::VectorXd out_coef;  // p + 1, intercept first
  Eigen::VectorXd in_coef;

  static MassModel fit(const TrainView& view) {
    const FlowNetwork& net = view.network();
    const auto& nodes = view.regular_nodes;
    if (nodes.empty()) throw DataError("MassModel: no regular nodes to fit on");
    Eigen::MatrixXd X(nodes.size(), net.p() + 1);
    Eigen::VectorXd y(nodes.size());
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      X(static_cast<Eigen::Index>(r), 0) = 1.0;
      X.row(static_cast<Eigen::Index>(r)).tail(net.p()) =
          view.scaler.scale_node(net.node_features().row(nodes[r]).transpose()).transpose();
      y(static_cast<Eigen::Index>(r)) = std::log1p(view.visible_margin(nodes[r]));
    }
    MassModel m;
    m.out_coef = X.colPivHouseholderQr().solve(y);
    // the flow matrix is symmetric, so in and out margins coincide
    m.in_coef = m.out_coef;
    return m;
  }

  double predict_out(const FlowNetwork& net, const FeatureScaler& scaler, int node) const {
    return predict(out_coef, net, scaler, node);
  }
  double predict_in(const FlowNetwork& net, const FeatureScaler& scaler, int node) const {
    return predict(in_coef, net, scaler, node);
  }

 private:
  static double predict(const Eigen::VectorXd& coef, const FlowNetwork& net,
                        const FeatureScaler& scaler, int node) {
    Eigen::VectorXd x(net.p() + 1);
    x(0) = 1.0;
    x.tail(net.p()) = scaler.scale_node(net.node_features().row(node).transpose());
    return std::max(0.0, std::expm1(coef.dot(x)));
  }
};

}  // namespace odflow
