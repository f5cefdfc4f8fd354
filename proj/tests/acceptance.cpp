// Runs every acceptance criterion at its stated tolerance and prints one PASS/FAIL line each.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "seunet/checkpoint.hpp"
#include "seunet/gradcheck_suite.hpp"
#include "seunet/train.hpp"

namespace fs = std::filesystem;
using namespace seunet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int g_failures = 0;

void report(int id, const std::string& name, bool passed, const std::string& detail) {
  if (!passed) ++g_failures;
  std::cout << (passed ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << detail << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / "seunet_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1. Every gradient check over 20 seeds at the default tolerances, within two minutes.
void gradient_suite() {
  const auto t0 = Clock::now();
  SuiteOptions o;
  o.seeds = 20;
  bool passed = true;
  double worst = 0.0;
  std::string failing;
  for (const SuiteResult& r : run_gradcheck_suite(o)) {
    std::cout << "  " << format_suite_result(r) << '\n';
    passed = passed && r.passed;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failing += " " + r.name;
  }
  const double secs = seconds_since(t0);
  report(1, "gradient-suite", passed && secs <= 120.0,
         "20 seeds, max_rel_err " + fmt("%.3e", worst) + ", runtime " + fmt("%.1f", secs) + " s (limit 120)" +
             (failing.empty() ? "" : ", failing:" + failing));
}

// 2. Output shape, range and token count for every variant at two input sizes.
void shape_contract() {
  bool passed = true;
  std::ostringstream detail;
  for (const char* name : {"L", "M", "S"}) {
    const VariantSpec spec = build_variant(name);
    SeUNetTrans<float> model(spec, 1);
    for (auto [batch, size] : {std::pair<Index, Index>{1, 64}, std::pair<Index, Index>{2, 256}}) {
      Rng rng(static_cast<std::uint64_t>(size + batch));
      const auto x = rng.uniform_tensor<float>({batch, 3, size, size}, 0.0, 1.0);
      ForwardTrace<float> trace;
      const auto probs = ops::sigmoid(model.forward_logits(Var<float>(x), Mode::kEval, &trace)).value();
      bool in_range = true;
      for (Index i = 0; i < probs.numel(); ++i) in_range = in_range && probs[i] > 0.f && probs[i] < 1.f;
      const Index side = (size - 3 + 2 * 1) / spec.merge_stride + 1;
      const Index tokens = trace.embedded.tokens.shape()[1];
      const bool ok = probs.shape() == Shape{batch, 1, size, size} && in_range && tokens == side * side;
      passed = passed && ok;
      detail << ' ' << name << '@' << batch << 'x' << size << " N=" << tokens << (ok ? "" : "(bad)");
    }
  }
  report(2, "shape-contract", passed, detail.str().substr(1));
}

// 3. Row-stochastic attention, R=1 equals dense attention, score count N²/R.
void attention_invariants() {
  double worst_row = 0.0;
  bool exact = true;
  bool counts = true;
  std::ostringstream detail;
  for (const char* name : {"L", "M", "S"}) {
    const VariantSpec spec = build_variant(name);
    Rng rng(7);
    SpatialReductionAttention<float> attn("a", spec.embed_dim, spec.heads, spec.reduction_ratio, rng);
    const auto t = rng.uniform_tensor<float>({1, 256, spec.embed_dim}, -2.0, 2.0);
    for (Index e = 0; e < spec.heads; ++e) {
      const AttentionHeadWeights<float> w = attn.head_weights(e);
      Var<float> kv(t);
      if (spec.reduction_ratio > 1) kv = reduce_sequence(kv, spec.reduction_ratio, *w.reduction, *w.reduction_norm);
      const auto q = ops::linear(Var<float>(t), w.query_w, w.query_b).value();
      const auto k = ops::linear(kv, w.key_w, w.key_b).value();
      const auto p = ops::attention_probabilities(q, k);
      const Index cols = p.shape().back();
      for (Index r = 0; r < p.numel() / cols; ++r) {
        double s = 0.0;
        for (Index c = 0; c < cols; ++c) s += p[r * cols + c];
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
    SeUNetTrans<float> model(spec, 3);
    for (Index size : {64, 256}) {
      const auto x = rng.uniform_tensor<float>({1, 3, size, size}, 0.0, 1.0);
      reset_attention_stats();
      model.forward(Var<float>(x), Mode::kEval);
      const Index n = spec.token_count(size, size);
      const auto& st = attention_stats();
      const bool ok = st.head_evaluations == spec.depth * spec.heads &&
                      st.score_entries == st.head_evaluations * n * n / spec.reduction_ratio;
      counts = counts && ok;
      detail << ' ' << name << '@' << size << " scores/head=" << st.score_entries / std::max<std::int64_t>(1, st.head_evaluations)
             << " N^2/R=" << n * n / spec.reduction_ratio;
    }
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    SpatialReductionAttention<float> attn("a", 64, 4, 1, rng);
    const auto t = rng.uniform_tensor<float>({2, 1024, 64}, -1.0, 1.0);
    exact = exact && bitwise_equal(attn.forward(Var<float>(t)).value(), attn.forward_dense_reference(Var<float>(t)).value());
  }
  report(3, "attention-invariants", worst_row <= 1e-6 && exact && counts,
         "max |row sum - 1| " + fmt("%.2e", worst_row) + ", R=1 equals dense " + (exact ? "bitwise" : "NOT bitwise") +
             ";" + detail.str());
}

// 4. Zeroed attention output and second MLP layer make the D=3 stack the identity.
void residual_identity() {
  bool passed = true;
  for (const char* name : {"L", "M", "S"}) {
    SeUNetTrans<float> model(build_variant(name), 5);
    for (auto& block : model.blocks()) {
      block.attention().output().weight().value().fill(0.f);
      block.attention().output().bias().value().fill(0.f);
      block.mlp_out().weight().value().fill(0.f);
      block.mlp_out().bias().value().fill(0.f);
    }
    Rng rng(6);
    const auto t = rng.uniform_tensor<float>({2, 256, 64}, -4.0, 4.0);
    Var<float> x(t);
    for (auto& block : model.blocks()) x = block.forward(x);
    passed = passed && model.blocks().size() == 3 && bitwise_equal(x.value(), t);
  }
  report(4, "residual-identity", passed, "D=3 stacks of L, M, S return their input bitwise");
}

struct OverfitRun {
  TrainResult result;
  double secs = 0.0;
  fs::path checkpoint_dir;
  std::vector<Sample> samples;
};

// 5. Desk-scale M model on 8 synthetic 64×64 images, batch 8, lr 1e-4, 300 epochs.
OverfitRun overfit(const fs::path& root) {
  OverfitRun run;
  const SyntheticDataset ds = generate_synthetic(8, 64, 1, root / "overfit_data");
  run.samples = load_samples(ds.manifest, 64, 64);
  run.checkpoint_dir = root / "overfit_checkpoints";
  SeUNetTrans<float> model(build_variant("M"), 42);
  Adam<float> adam;  // lr 1e-4, weight decay 1e-4
  TrainOptions o;
  o.epochs = 300;
  o.batch_size = 8;
  o.seed = 42;
  o.checkpoint_every = 10;
  o.checkpoint_dir = run.checkpoint_dir;
  o.on_epoch = [](const EpochRecord& r) {
    if (r.epoch % 50 == 0) std::cout << "  " << format_epoch_line(r) << std::endl;
  };
  const auto t0 = Clock::now();
  run.result = train_loop(model, adam, run.samples, o);
  run.secs = seconds_since(t0);

  const EpochRecord& last = run.result.history.back();
  const double eval_loss = evaluate_loss(model, run.samples);
  const double eval_dice = evaluate_model(model, run.samples).mean.dice;
  bool windows_ok = true;
  double previous = INFINITY;
  std::string means;
  for (std::size_t w = 0; w + 20 <= run.result.history.size(); w += 20) {
    double m = 0.0;
    for (std::size_t i = w; i < w + 20; ++i) m += run.result.history[i].loss;
    m /= 20.0;
    windows_ok = windows_ok && m <= previous;
    previous = m;
    means += " " + fmt("%.4f", m);
  }
  const bool dice_ok = last.train_metrics.dice >= 0.95;
  const bool bce_ok = last.loss <= 0.1;
  const bool time_ok = run.secs <= 900.0;
  report(5, "overfit", dice_ok && bce_ok && time_ok && windows_ok,
         "train mDC " + fmt("%.4f", last.train_metrics.dice) + (dice_ok ? " (>= 0.95 ok)" : " (< 0.95)") +
             ", train BCE " + fmt("%.4f", last.loss) + (bce_ok ? " (<= 0.1 ok)" : " (> 0.1)") + ", eval-mode mDC " +
             fmt("%.4f", eval_dice) + " BCE " + fmt("%.4f", eval_loss) + ", runtime " + fmt("%.0f", run.secs) +
             " s (limit 900), 20-epoch window means" + means + (windows_ok ? " non-increasing" : " INCREASE"));
  return run;
}

// 7. Save/load of the overfit model is bitwise; checkpoints at every 10th epoch.
void checkpoint_round_trip(const OverfitRun& run) {
  bool cadence = run.result.checkpoints.size() == 30;
  for (int e = 10; e <= 300; e += 10) cadence = cadence && fs::exists(run.checkpoint_dir / checkpoint_filename(e));
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(run.checkpoint_dir)) files += entry.path().extension() == ".seut";
  cadence = cadence && files == 30;

  const CheckpointData ck = read_checkpoint(run.checkpoint_dir / checkpoint_filename(300));
  SeUNetTrans<float> a(ck.spec, ck.seed);
  apply_checkpoint(ck, a, nullptr);
  const fs::path again = run.checkpoint_dir.parent_path() / "resaved.seut";
  write_checkpoint(again, capture_checkpoint(a, nullptr, ck.epoch, ck.seed));
  const CheckpointData ck2 = read_checkpoint(again);
  SeUNetTrans<float> b(ck2.spec, 999);
  apply_checkpoint(ck2, b, nullptr);
  bool params = true;
  auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.params.size(); ++i) {
    params = params && bitwise_equal(sa.params[i]->value(), sb.params[i]->value());
    const NamedTensor* stored = ck.find(sa.params[i]->name());
    params = params && stored != nullptr && bitwise_equal(stored->value, sa.params[i]->value());
  }
  for (std::size_t i = 0; i < sa.buffers.size(); ++i) params = params && bitwise_equal(*sa.buffers[i].second, *sb.buffers[i].second);
  const auto pa = predict_probabilities(a, run.samples);
  const auto pb = predict_probabilities(b, run.samples);
  bool eval_same = true;
  for (std::size_t i = 0; i < pa.size(); ++i) eval_same = eval_same && bitwise_equal(pa[i], pb[i]);
  report(7, "checkpoint-round-trip", cadence && params && eval_same,
         std::to_string(files) + " checkpoints at epochs 10..300, parameters " + (params ? "bitwise equal" : "DIFFER") +
             ", eval outputs " + (eval_same ? "identical" : "DIFFER"));
}

// 6. Metrics equal a brute-force count on 100 random 16×16 pairs; TP=FP=FN=2 hand case.
void metric_oracle() {
  Rng rng(2024);
  std::vector<Tensor<float>> preds, truths;
  bool exact = true;
  double sum_dice = 0, sum_iou = 0, sum_pre = 0, sum_rec = 0;
  for (int t = 0; t < 100; ++t) {
    Tensor<float> p({1, 16, 16}), g({1, 16, 16});
    const double density = rng.uniform(0.0, 0.7);
    long tp = 0, fp = 0, fn = 0;
    for (Index i = 0; i < 256; ++i) {
      p[i] = static_cast<float>(rng.uniform());
      g[i] = rng.uniform() < density ? 1.f : 0.f;
      const bool pp = p[i] >= 0.5f, gg = g[i] == 1.f;
      tp += pp && gg;
      fp += pp && !gg;
      fn += !pp && gg;
    }
    auto ratio = [](double n, double d) { return d == 0.0 ? 1.0 : n / d; };
    const double dice = ratio(2.0 * tp, 2.0 * tp + fp + fn), iou = ratio(tp, tp + fp + fn);
    const double pre = ratio(tp, tp + fp), rec = ratio(tp, tp + fn);
    const ImageMetrics m = image_metrics(confusion_counts(binarize(p), g));
    exact = exact && m.dice == dice && m.iou == iou && m.precision == pre && m.recall == rec;
    sum_dice += dice;
    sum_iou += iou;
    sum_pre += pre;
    sum_rec += rec;
    preds.push_back(p);
    truths.push_back(g);
  }
  const MetricReport r = dataset_metrics(preds, truths);
  exact = exact && r.mean.dice == sum_dice / 100 && r.mean.iou == sum_iou / 100 && r.mean.precision == sum_pre / 100 &&
          r.mean.recall == sum_rec / 100;
  const ImageMetrics hand = image_metrics({2, 2, 2, 10});
  const bool hand_ok = hand.iou == 1.0 / 3.0 && hand.dice == 0.5;
  report(6, "metric-oracle", exact && hand_ok,
         std::string("100 random pairs ") + (exact ? "match exactly" : "MISMATCH") + ", hand case IoU " +
             fmt("%.6f", hand.iou) + " DC " + fmt("%.6f", hand.dice));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int shell(const std::string& cmd) {
  std::cout << "  $ " << cmd << std::endl;
  return std::system((cmd + " > /dev/null").c_str());
}

// 8. Two CLI runs with the same seed give bitwise-identical logs, checkpoints and reports.
void determinism(const fs::path& root) {
  const std::string cli = SEUNET_CLI_PATH;
  const fs::path data = root / "cli_data";
  bool ran = shell(cli + " synth --count 8 --size 64 --seed 3 --output-dir " + data.string()) == 0;
  const std::string manifest = (data / "manifest.tsv").string();
  for (const char* tag : {"run_a", "run_b"}) {
    const fs::path dir = root / tag;
    ran = ran && shell(cli + " train --variant M --manifest " + manifest + " --epochs 12 --seed 11 --checkpoint-dir " +
                       (dir / "checkpoints").string()) == 0;
    ran = ran && shell(cli + " eval --checkpoint " + (dir / "checkpoints" / checkpoint_filename(12)).string() +
                       " --manifest " + manifest + " --output-dir " + (dir / "report").string()) == 0;
  }
  std::size_t compared = 0;
  bool identical = ran;
  if (ran) {
    for (const auto& entry : fs::recursive_directory_iterator(root / "run_a")) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), root / "run_a");
      const fs::path other = root / "run_b" / rel;
      identical = identical && fs::exists(other) && slurp(entry.path()) == slurp(other);
      ++compared;
    }
    std::size_t count_b = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "run_b")) count_b += entry.is_regular_file();
    identical = identical && count_b == compared && compared == 5;  // log, 2 checkpoints, 2 report files
  }
  report(8, "determinism", identical,
         ran ? std::to_string(compared) + " files (train.log, checkpoints, report.txt, report.kv) " +
                   (identical ? "bitwise identical" : "DIFFER")
             : "CLI invocation failed");
}

}  // namespace

int main() {
  const fs::path root = scratch_dir();
  const auto t0 = Clock::now();
  try {
    gradient_suite();
    shape_contract();
    attention_invariants();
    residual_identity();
    const OverfitRun run = overfit(root);
    metric_oracle();
    checkpoint_round_trip(run);
    determinism(root);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " criterion(s) FAILED") << " in "
            << fmt("%.0f", seconds_since(t0)) << " s" << std::endl;
  fs::remove_all(root);
  return g_failures == 0 ? 0 : 1;
}
