#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hpt/data.hpp"
#include "hpt/encoder.hpp"
#include "hpt/param.hpp"

namespace hpt {

struct TrainConfig {
  double lr = 1e-3;  // drop to 1e-5 for full fine-tuning
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
};

// −log softmax(logits)[label] on a rank-1 logit vector, stabilized by the
// usual max shift.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

// Decoupled weight decay with bias-corrected moments:
//   θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)
// Parameters without a gradient buffer are skipped entirely.
class AdamW {
 public:
  AdamW(ParamRefs params, const TrainConfig& cfg);

  void step();
  std::size_t steps_taken() const { return t_; }

 private:
  ParamRefs params_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Strict-improvement early stopping: stop after `patience` consecutive
// epochs whose validation loss fails to beat the best seen so far.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  // Feed epochs in order (1-based); true means training should stop now.
  bool record(std::size_t epoch, double val_loss);

  double best_loss() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
};

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
};

struct RunReport {
  std::vector<EpochRow> epochs;
  std::size_t stopping_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  double test_loss = 0;
  double test_accuracy = 0;
  std::size_t trainable_params = 0;
  double wall_seconds = 0;
};

// Epoch loop with seeded shuffling, per-batch AdamW steps, early stopping,
// and best-epoch parameter restoration before the test evaluation.
RunReport train(EncoderModel& model, const DatasetBundle& data, const TrainConfig& cfg);

// Mean cross-entropy and top-1 accuracy over a split, in index order.
std::pair<double, double> evaluate(const EncoderModel& model, const Split& split);

// CSV rows `epoch,train_loss,val_loss,val_acc` at 9 significant digits.
void write_loss_csv(const std::string& path, const RunReport& report);
std::string loss_csv_string(const RunReport& report);

std::string run_report_json(const RunReport& report);

}  // namespace hpt
