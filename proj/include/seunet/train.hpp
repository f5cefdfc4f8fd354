#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "seunet/checkpoint.hpp"
#include "seunet/data.hpp"
#include "seunet/metrics.hpp"
#include "seunet/model.hpp"
#include "seunet/optim.hpp"

namespace seunet {

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;          // sample-weighted mean of the batch losses
  ImageMetrics train_metrics; // from the training-mode forward passes of the epoch
  std::int64_t steps = 0;
};

struct TrainOptions {
  int epochs = 1;  // index of the last epoch to run
  int start_epoch = 0;  // epochs already completed (non-zero when resuming)
  Index batch_size = 8;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  std::vector<std::pair<std::string, std::string>> config;  // copied into every checkpoint
  std::ostream* log = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Sample order for one epoch; depends only on (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Minibatch Adam on the BCE loss. Each epoch visits every sample once in a seeded
/// order, keeping the last partial batch. Checkpoints are written after every epoch
/// divisible by `checkpoint_every` and after the final epoch.
TrainResult train_loop(SeUNetTrans<float>& model, Adam<float>& optimizer, const std::vector<Sample>& data,
                       const TrainOptions& options);

std::string format_epoch_line(const EpochRecord& record);

/// Eval-mode probability maps, one (1, H, W) tensor per sample, in input order.
std::vector<Tensor<float>> predict_probabilities(SeUNetTrans<float>& model, const std::vector<Sample>& data,
                                                 Index batch_size = 8);

/// Eval-mode mean BCE over the data set.
double evaluate_loss(SeUNetTrans<float>& model, const std::vector<Sample>& data, Index batch_size = 8);

MetricReport evaluate_model(SeUNetTrans<float>& model, const std::vector<Sample>& data, Index batch_size = 8,
                            double threshold = 0.5);

}  // namespace seunet
