#include "hpt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "hpt/ops.hpp"
#include "hpt/rng.hpp"
#include "op_common.hpp"

namespace hpt {

using detail::record;
using detail::tracing;

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) {
    throw ShapeError("cross_entropy: expected rank-1 logits, got " + shape_str(logits.shape()));
  }
  const std::size_t c = logits.extent(0);
  if (label >= c) {
    throw ValueError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(c) + " classes");
  }
  const auto lv = logits.values();
  const std::size_t arg =
      static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin());
  const double mx = lv[arg];
  // log Σ exp(x−m) = log1p(Σ_{i≠argmax} exp(x_i−m)) keeps full relative
  // precision when one logit dominates.
  double rest = 0;
  for (std::size_t i = 0; i < c; ++i) {
    if (i != arg) rest += std::exp(lv[i] - mx);
  }
  const double z = 1.0 + rest;
  const double loss = (mx - lv[label]) + std::log1p(rest);
  Tensor res(Shape{}, std::vector<double>{loss});
  if (tracing(logits)) {
    auto ln = logits.node(), on = res.node();
    record(res, [ln, on, label, mx, z, c] {
      if (on->grad.empty()) return;
      if (!ln->requires_grad) return;
      auto& g = ln->ensure_grad();
      const double up = on->grad[0];
      for (std::size_t i = 0; i < c; ++i) {
        const double p = std::exp(ln->data[i] - mx) / z;
        g[i] += up * (p - (i == label ? 1.0 : 0.0));
      }
    });
  }
  return res;
}

AdamW::AdamW(ParamRefs params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg.lr <= 0) throw ConfigError("adamw: learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.emplace_back(p->count(), 0.0);
    v_.emplace_back(p->count(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (!p->trainable() || !p->value.has_grad()) continue;
    const auto g = p->value.grad();
    auto theta = p->value.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= cfg_.lr * cfg_.weight_decay * theta[j] +
                  cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
    }
  }
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("early stopping: patience must be at least one epoch");
}

bool EarlyStopper::record(std::size_t epoch, double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= patience_;
}

std::pair<double, double> evaluate(const EncoderModel& model, const Split& split) {
  if (split.size() == 0) throw ValueError("evaluate: empty split");
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    Tensor logits = model_forward(model, split.sample(i));
    loss_sum += cross_entropy(logits, split.labels[i]).item();
    const auto lv = logits.values();
    const std::size_t pred =
        static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin());
    if (pred == split.labels[i]) ++correct;
  }
  const double m = static_cast<double>(split.size());
  return {loss_sum / m, static_cast<double>(correct) / m};
}

namespace {

std::vector<double> snapshot(const ParamRefs& params) {
  std::vector<double> flat;
  for (const Parameter* p : params) {
    const auto v = p->value.values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void restore(const ParamRefs& params, const std::vector<double>& flat) {
  std::size_t off = 0;
  for (Parameter* p : params) {
    auto v = p->value.values();
    std::copy_n(flat.data() + off, v.size(), v.begin());
    off += v.size();
  }
}

}  // namespace

RunReport train(EncoderModel& model, const DatasetBundle& data, const TrainConfig& cfg) {
  if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0) {
    throw ValueError("train: every split must be non-empty");
  }
  if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");

  const auto t0 = std::chrono::steady_clock::now();
  ParamRefs tunable = model.trainable_params();
  AdamW opt(tunable, cfg);
  EarlyStopper stopper(cfg.patience);
  Rng rng(cfg.seed);

  RunReport report;
  report.trainable_params = total_count(tunable);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> best_params = snapshot(tunable);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (Parameter* p : tunable) p->value.clear_grad();
      Tape tape;
      Tensor batch_loss = Tensor::scalar(0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        Tensor loss = cross_entropy(model_forward(model, data.train.sample(idx)),
                                    data.train.labels[idx]);
        batch_loss = add(batch_loss, loss);
      }
      batch_loss = scale(batch_loss, inv);
      tape.backward(batch_loss);
      epoch_loss += batch_loss.item() * static_cast<double>(stop - start);
      opt.step();
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / static_cast<double>(order.size());
    const auto [val_loss, val_acc] = evaluate(model, data.val);
    row.val_loss = val_loss;
    row.val_acc = val_acc;
    report.epochs.push_back(row);
    report.stopping_epoch = epoch;

    const double prev_best = stopper.best_loss();
    const bool stop = stopper.record(epoch, val_loss);
    if (val_loss < prev_best) best_params = snapshot(tunable);
    if (stop) break;
  }

  restore(tunable, best_params);
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best_loss();
  const auto [test_loss, test_acc] = evaluate(model, data.test);
  report.test_loss = test_loss;
  report.test_accuracy = test_acc;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string loss_csv_string(const RunReport& report) {
  std::string out = "epoch,train_loss,val_loss,val_acc\n";
  char buf[160];
  for (const EpochRow& row : report.epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", row.epoch, row.train_loss,
                  row.val_loss, row.val_acc);
    out += buf;
  }
  return out;
}

void write_loss_csv(const std::string& path, const RunReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("loss csv: cannot open '" + path + "' for writing");
  os << loss_csv_string(report);
  if (!os) throw IoError("loss csv: write to '" + path + "' failed");
}

std::string run_report_json(const RunReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRow& row : report.epochs) {
    epochs.push_back({{"epoch", row.epoch},
                      {"train_loss", row.train_loss},
                      {"val_loss", row.val_loss},
                      {"val_acc", row.val_acc}});
  }
  nlohmann::json j{{"epochs", epochs},
                   {"stopping_epoch", report.stopping_epoch},
                   {"best_epoch", report.best_epoch},
                   {"best_val_loss", report.best_val_loss},
                   {"test_loss", report.test_loss},
                   {"test_accuracy", report.test_accuracy},
                   {"trainable_params", report.trainable_params},
                   {"wall_seconds", report.wall_seconds}};
  return j.dump(2);
}

}  // namespace hpt
