#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "odflow/metrics.hpp"
#include "odflow/nn.hpp"
#include "odflow/optim.hpp"
#include "odflow/train_view.hpp"

namespace odflow::nn {

struct TrainConfig {
  int batch_size = 256;
  double lr = 0.01;
  int max_epochs = 110;
  int lr_drop_epoch = 50;   // first drop after this many epochs
  int lr_drop_period = 15;  // and every this many epochs after
  double lr_factor = 0.1;
  AdamConfig adam;
  int early_stop_patience = 10;  // epochs without val bin-mean MAE improvement
  // start the output layer at the mean training flow; with a linear output
  // head and MSE on raw flows, a zero start costs thousands of steps just to
  // climb to the flow scale
  bool center_output_bias = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2) throw DataError("TrainConfig: batch_size must be >= 2");
    if (!(lr > 0.0) || max_epochs < 1 || lr_drop_epoch < 1 || lr_drop_period < 1)
      throw DataError("TrainConfig: positive schedule values required");
    if (!(lr_factor > 0.0 && lr_factor < 1.0))
      throw DataError("TrainConfig: lr_factor must be in (0, 1)");
    if (early_stop_patience < 0) throw DataError("TrainConfig: patience must be >= 0");
  }
};

/// Learning rate for a 1-based epoch: `lr` until lr_drop_epoch, then one
/// factor per started lr_drop_period.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch <= cfg.lr_drop_epoch) return cfg.lr;
  const int drops = 1 + (epoch - cfg.lr_drop_epoch - 1) / cfg.lr_drop_period;
  return cfg.lr * std::pow(cfg.lr_factor, drops);
}

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_bin_mean_mae = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_bin_mean_mae = 0.0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

/// Pre-assembled training matrices for one model run.
struct TrainData {
  Eigen::MatrixXd xbar;       // rows aligned with edges
  std::vector<double> y;
  std::vector<int> node_i, node_j;
  std::vector<std::size_t> bin;  // standard bin or overflow index
};

inline TrainData assemble_rows(const TrainView& view, const std::vector<EdgeKey>& edges,
                               const BinSpec& bins, bool read_flows) {
  const FlowNetwork& net = view.network();
  TrainData data;
  data.xbar.resize(static_cast<Eigen::Index>(edges.size()), 2 * net.p() + net.k());
  data.y.reserve(edges.size());
  for (std::size_t r = 0; r < edges.size(); ++r) {
    const EdgeKey& e = edges[r];
    data.xbar.row(static_cast<Eigen::Index>(r)) =
        concat_edge_input(net, e.a, e.b, view.scaler).transpose();
    const double y = read_flows ? view.flows->flow(e.a, e.b) : 0.0;
    data.y.push_back(y);
    data.node_i.push_back(e.a);
    data.node_j.push_back(e.b);
    data.bin.push_back(bins.bin_of(y));
  }
  return data;
}

/// Equalizes the four magnitude bins by oversampling each with replacement up
/// to the largest bin; overflow rows are appended once per epoch. Empty bins
/// are skipped (warned about once by the caller).
inline std::vector<std::size_t> resample_bins(const TrainData& data, const BinSpec& bins,
                                              std::mt19937_64& rng,
                                              std::vector<std::size_t>* empty_bins = nullptr) {
  std::vector<std::vector<std::size_t>> members(bins.n_bins() + 1);
  for (std::size_t r = 0; r < data.bin.size(); ++r) members[data.bin[r]].push_back(r);

  std::size_t largest = 0;
  for (std::size_t b = 0; b < bins.n_bins(); ++b) largest = std::max(largest, members[b].size());
  if (largest == 0) throw DataError("resample_bins: no training rows in any bin");

  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < bins.n_bins(); ++b) {
    if (members[b].empty()) {
      if (empty_bins) empty_bins->push_back(b);
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, members[b].size() - 1);
    for (std::size_t k = 0; k < largest; ++k) out.push_back(members[b][pick(rng)]);
  }
  for (std::size_t r : members[bins.n_bins()]) out.push_back(r);  // overflow rows, once
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Eval-mode predictions for pre-assembled rows, clipped at zero.
inline std::vector<double> predict_rows(LayerStack& model, const TrainData& data,
                                        const GcnContext* gcn) {
  std::mt19937_64 idle_rng(0);  // eval mode draws nothing
  Tensor out = forward_batch(model, data.xbar, gcn,
                             model.mode() == ModelMode::fcnn ? nullptr : &data.node_i,
                             model.mode() == ModelMode::fcnn ? nullptr : &data.node_j,
                             /*training=*/false, idle_rng);
  std::vector<double> pred(data.y.size());
  for (std::size_t r = 0; r < pred.size(); ++r)
    pred[r] = std::max(0.0, out.values()(static_cast<Eigen::Index>(r), 0));
  return pred;
}

/// Minibatch MSE training with per-epoch bin-equalizing resampling, the step
/// learning-rate schedule, and early stopping on validation bin-mean MAE.
/// Validation ground truth is supplied by the harness (evaluation data, not
/// part of the guarded fitting inputs). Returns with the best snapshot
/// restored into the model.
inline TrainResult train_model(LayerStack& model, const TrainView& view,
                               const std::vector<EdgeKey>& val_edges,
                               const std::vector<double>& val_y, const TrainConfig& cfg,
                               const GcnContext* gcn, const BinSpec& bins = BinSpec{}) {
  cfg.validate();
  if (view.train_edges.empty()) throw DataError("train_model: no training edges");
  if (val_edges.size() != val_y.size())
    throw DataError("train_model: validation edges/targets mismatch");

  TrainData train = assemble_rows(view, view.train_edges, bins, /*read_flows=*/true);
  TrainData val = assemble_rows(view, val_edges, bins, /*read_flows=*/false);
  val.y = val_y;

  if (cfg.center_output_bias) {
    double mean_y = 0.0;
    for (double y : train.y) mean_y += y;
    mean_y /= static_cast<double>(train.y.size());
    model.fc_layers().back().bias.mutable_values()(0, 0) = mean_y;
  }

  std::mt19937_64 rng(cfg.seed);
  Adam opt(model.parameters(), cfg.adam);

  TrainResult result;
  result.best_val_bin_mean_mae = std::numeric_limits<double>::infinity();
  LayerStack::Snapshot best = model.snapshot();
  std::vector<std::size_t> warned_empty;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);

    std::vector<std::size_t> empty_bins;
    std::vector<std::size_t> order = resample_bins(train, bins, rng, &empty_bins);
    for (std::size_t b : empty_bins) {
      if (std::find(warned_empty.begin(), warned_empty.end(), b) == warned_empty.end()) {
        warned_empty.push_back(b);
        result.warnings.push_back("training bin " + std::to_string(b) +
                                  " is empty; excluded from resampling");
      }
    }

    double loss_sum = 0.0;
    std::size_t loss_rows = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b = std::min(order.size() - at, static_cast<std::size_t>(cfg.batch_size));
      if (b < 2 && model.config().batchnorm) break;  // trailing singleton cannot batch-normalize
      Eigen::MatrixXd xb(b, train.xbar.cols());
      Eigen::MatrixXd yb(b, 1);
      std::vector<int> bi(b), bj(b);
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t row = order[at + r];
        xb.row(static_cast<Eigen::Index>(r)) = train.xbar.row(static_cast<Eigen::Index>(row));
        yb(static_cast<Eigen::Index>(r), 0) = train.y[row];
        bi[r] = train.node_i[row];
        bj[r] = train.node_j[row];
      }
      opt.zero_grad();
      Tensor pred = forward_batch(model, xb, gcn,
                                  model.mode() == ModelMode::fcnn ? nullptr : &bi,
                                  model.mode() == ModelMode::fcnn ? nullptr : &bj,
                                  /*training=*/true, rng);
      Tensor loss = mse_loss(pred, yb);
      loss.backward();
      opt.step(lr);
      loss_sum += loss.item() * static_cast<double>(b);
      loss_rows += b;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_mse = loss_rows > 0 ? loss_sum / static_cast<double>(loss_rows) : 0.0;
    if (!val_edges.empty()) {
      rec.val_bin_mean_mae = bin_mean_mae(val.y, predict_rows(model, val, gcn), bins);
    }
    result.history.push_back(rec);

    if (rec.val_bin_mean_mae < result.best_val_bin_mean_mae || val_edges.empty()) {
      result.best_val_bin_mean_mae = rec.val_bin_mean_mae;
      result.best_epoch = epoch;
      best = model.snapshot();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best > cfg.early_stop_patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  model.restore(best);
  return result;
}

}  // namespace odflow::nn
