#include "seunet/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "seunet/loss.hpp"
#include "seunet/random.hpp"

namespace seunet {

namespace {

std::vector<Tensor<float>> split_batch(const Tensor<float>& batch) {
  const Index n = batch.dim(0);
  const Shape item(batch.shape().begin() + 1, batch.shape().end());
  const Index size = shape_numel(item);
  std::vector<Tensor<float>> out;
  for (Index i = 0; i < n; ++i) {
    out.emplace_back(item, std::vector<float>(batch.data() + i * size, batch.data() + (i + 1) * size));
  }
  return out;
}

template <typename Fn>
void for_each_batch(std::size_t n, Index batch_size, const std::vector<std::size_t>& order, Fn&& fn) {
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(n, start + b);
    fn(std::span<const std::size_t>(order.data() + start, end - start));
  }
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ (0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(epoch + 1)));
  rng.shuffle(order);
  return order;
}

std::string format_epoch_line(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch %04d loss %.9f mDC %.6f mIoU %.6f mPre %.6f mRec %.6f steps %lld", r.epoch,
                r.loss, r.train_metrics.dice, r.train_metrics.iou, r.train_metrics.precision, r.train_metrics.recall,
                static_cast<long long>(r.steps));
  return buf;
}

TrainResult train_loop(SeUNetTrans<float>& model, Adam<float>& optimizer, const std::vector<Sample>& data,
                       const TrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (options.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  if (options.epochs < 1 || options.start_epoch < 0 || options.start_epoch > options.epochs) {
    throw std::invalid_argument("train: invalid epoch range");
  }
  if (options.checkpoint_every < 1) throw std::invalid_argument("train: checkpoint interval must be positive");
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  std::vector<Parameter<float>*> params = model.parameters();
  TrainResult result;
  for (int epoch = options.start_epoch + 1; epoch <= options.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(data.size(), options.seed, epoch);
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<Tensor<float>> probs, masks;
    for_each_batch(data.size(), options.batch_size, order, [&](std::span<const std::size_t> idx) {
      const Batch batch = stack_samples(data, idx);
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const Var<float> logits = model.forward_logits(Var<float>(batch.images), Mode::kTrain);
      const Var<float> loss = bce_with_logits(logits, batch.masks);
      tape.backward(loss);
      optimizer.step(params);
      ++record.steps;
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
      Tensor<float> p = logits.value();
      for (Index i = 0; i < p.numel(); ++i) p[i] = 1.0f / (1.0f + std::exp(-p[i]));
      for (auto& t : split_batch(p)) probs.push_back(std::move(t));
      for (auto& t : split_batch(batch.masks)) masks.push_back(std::move(t));
    });
    record.loss = loss_sum / static_cast<double>(data.size());
    record.train_metrics = dataset_metrics(probs, masks).mean;
    result.history.push_back(record);
    if (options.log) *options.log << format_epoch_line(record) << '\n' << std::flush;

    if (!options.checkpoint_dir.empty() && (epoch % options.checkpoint_every == 0 || epoch == options.epochs)) {
      const auto path = options.checkpoint_dir / checkpoint_filename(epoch);
      write_checkpoint(path, capture_checkpoint(model, &optimizer, epoch, options.seed, options.config));
      result.checkpoints.push_back(path);
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  return result;
}

std::vector<Tensor<float>> predict_probabilities(SeUNetTrans<float>& model, const std::vector<Sample>& data,
                                                 Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("predict: batch size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor<float>> out;
  for_each_batch(data.size(), batch_size, order, [&](std::span<const std::size_t> idx) {
    const Batch batch = stack_samples(data, idx);
    const Var<float> probs = model.forward(Var<float>(batch.images), Mode::kEval);
    for (auto& t : split_batch(probs.value())) out.push_back(std::move(t));
  });
  return out;
}

double evaluate_loss(SeUNetTrans<float>& model, const std::vector<Sample>& data, Index batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  for_each_batch(data.size(), batch_size, order, [&](std::span<const std::size_t> idx) {
    const Batch batch = stack_samples(data, idx);
    const Var<float> logits = model.forward_logits(Var<float>(batch.images), Mode::kEval);
    sum += static_cast<double>(bce_with_logits(logits, batch.masks).value()[0]) * static_cast<double>(idx.size());
  });
  return sum / static_cast<double>(data.size());
}

MetricReport evaluate_model(SeUNetTrans<float>& model, const std::vector<Sample>& data, Index batch_size,
                            double threshold) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<Tensor<float>> masks;
  std::vector<std::string> ids;
  for (const auto& s : data) {
    masks.push_back(s.mask);
    ids.push_back(s.id);
  }
  return dataset_metrics(predict_probabilities(model, data, batch_size), masks, threshold, std::move(ids));
}

}  // namespace seunet
