#include "seunet/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "seunet/checkpoint.hpp"
#include "seunet/data.hpp"
#include "seunet/gradcheck_suite.hpp"
#include "seunet/metrics.hpp"
#include "seunet/train.hpp"

namespace seunet {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string variant = "M";
  std::string widths = "desk";
  int epochs = 25;
  Index batch = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  Index size = 0;  // 0: from the manifest or checkpoint
  int checkpoint_every = 10;
  std::string manifest;
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir;
  std::string checkpoint;
  std::string resume;
  std::string log;
  std::string report_name = "report";
  double threshold = 0.5;
  // gradcheck
  std::optional<double> tolerance;
  double e2e_tolerance = 1e-3;
  int seeds = 20;
  Index coordinates = 64;
  bool skip_end_to_end = false;
  // synth
  int count = 8;
};

// key=value lines; '#' starts a comment line. Keys use the long flag names.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "config file '" + path.string() + "' not found");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key=value");
    }
    std::string key = trim(t.substr(0, eq));
    for (char& c : key) {
      if (c == '_') c = '-';
    }
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty() || key == "config") {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": invalid key '" + key + "'");
    }
    out.emplace_back(key, value);
  }
  return out;
}

EncoderWidths widths_preset(const std::string& name) {
  if (name == "desk") return kDeskWidths;
  if (name == "paper") return kPaperWidths;
  throw UsageError("unknown widths preset '" + name + "' (expected desk or paper)");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::pair<std::string, std::string>> stored_config(const RunConfig& c, Index size) {
  return {{"widths", c.widths},          {"size", std::to_string(size)},      {"batch", std::to_string(c.batch)},
          {"lr", fmt(c.lr)},             {"weight_decay", fmt(c.weight_decay)}, {"epochs", std::to_string(c.epochs)},
          {"checkpoint_every", std::to_string(c.checkpoint_every)}};
}

Index resolve_size(Index flag, Index from_manifest, Index fallback) {
  if (flag > 0) return flag;
  if (from_manifest > 0) return from_manifest;
  if (fallback > 0) return fallback;
  throw UsageError("input size unknown: pass --size or add '# size: N' to the manifest");
}

std::string config_value(const CheckpointData& ck, const std::string& key) {
  for (const auto& [k, v] : ck.config) {
    if (k == key) return v;
  }
  return "";
}

Index checkpoint_size(const CheckpointData& ck) {
  const std::string v = config_value(ck, "size");
  return v.empty() ? 0 : std::stoll(v);
}

void check_size(const VariantSpec& spec, Index size) {
  try {
    spec.check_input_size(size, size);
  } catch (const ShapeError& e) {
    throw UsageError(std::string("--size ") + std::to_string(size) + ": " + e.what());
  }
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  if (c.manifest.empty()) throw UsageError("train requires --manifest");
  if (c.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (c.batch < 1) throw UsageError("--batch must be >= 1");
  if (c.checkpoint_every < 1) throw UsageError("--checkpoint-every must be >= 1");
  AdamOptions adam_options;
  adam_options.learning_rate = c.lr;
  adam_options.weight_decay = c.weight_decay;
  try {
    adam_options.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  VariantSpec spec = build_variant(c.variant, widths_preset(c.widths));
  const Manifest manifest = load_manifest(c.manifest);
  if (manifest.entries.empty()) throw UsageError("manifest '" + c.manifest + "' has no entries");
  const Index size = resolve_size(c.size, manifest.target_size, 0);
  check_size(spec, size);

  SeUNetTrans<float> model(spec, c.seed);
  Adam<float> adam(adam_options);
  TrainOptions options;
  options.epochs = c.epochs;
  options.batch_size = c.batch;
  options.seed = c.seed;
  options.checkpoint_every = c.checkpoint_every;
  options.checkpoint_dir = c.checkpoint_dir;
  options.config = stored_config(c, size);
  if (!c.resume.empty()) {
    const CheckpointData ck = read_checkpoint(c.resume);
    if (variant_label(ck.spec.name) != c.variant || ck.spec.encoder.stages != spec.encoder.stages) {
      throw UsageError("checkpoint '" + c.resume + "' was trained with a different architecture");
    }
    apply_checkpoint(ck, model, &adam);
    options.start_epoch = static_cast<int>(ck.epoch);
    if (options.start_epoch >= c.epochs) throw UsageError("checkpoint is already at epoch " + std::to_string(ck.epoch));
  }

  const std::vector<Sample> samples = load_samples(manifest, size, size);
  fs::create_directories(c.checkpoint_dir);
  const fs::path log_path = c.log.empty() ? fs::path(c.checkpoint_dir) / "train.log" : fs::path(c.log);
  std::ofstream log(log_path, c.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError(DataError::Kind::kIo, "cannot open log '" + log_path.string() + "'");
  options.log = &log;
  options.on_epoch = [&out](const EpochRecord& r) { out << format_epoch_line(r) << '\n' << std::flush; };
  const TrainResult result = train_loop(model, adam, samples, options);
  for (const auto& p : result.checkpoints) out << "checkpoint " << p.string() << '\n';
  return kExitOk;
}

struct LoadedModel {
  CheckpointData data;
  std::unique_ptr<SeUNetTrans<float>> model;
};

LoadedModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError(DataError::Kind::kMissingFile, "checkpoint '" + path + "' not found");
  LoadedModel m;
  m.data = read_checkpoint(path);
  m.model = std::make_unique<SeUNetTrans<float>>(m.data.spec, m.data.seed);
  apply_checkpoint(m.data, *m.model, nullptr);
  return m;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  if (c.manifest.empty()) throw UsageError("eval requires --manifest");
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
  LoadedModel m = load_model(c.checkpoint);
  const Manifest manifest = load_manifest(c.manifest);
  if (manifest.entries.empty()) throw UsageError("manifest '" + c.manifest + "' has no entries");
  const Index size = resolve_size(c.size, manifest.target_size, checkpoint_size(m.data));
  check_size(m.data.spec, size);
  const MetricReport report = evaluate_model(*m.model, load_samples(manifest, size, size), c.batch, c.threshold);
  const fs::path dir = c.output_dir.empty() ? fs::path(".") : fs::path(c.output_dir);
  write_metric_report(report, dir, c.report_name);
  out << format_metric_keyvalues(report);
  return kExitOk;
}

int cmd_predict(const RunConfig& c, std::ostream& out) {
  if (c.manifest.empty()) throw UsageError("predict requires --manifest");
  if (c.output_dir.empty()) throw UsageError("predict requires --output-dir");
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
  LoadedModel m = load_model(c.checkpoint);
  const Manifest manifest = load_manifest(c.manifest);
  const Index size = resolve_size(c.size, manifest.target_size, checkpoint_size(m.data));
  check_size(m.data.spec, size);
  const std::vector<Sample> samples = load_samples(manifest, size, size);
  const std::vector<Tensor<float>> probs = predict_probabilities(*m.model, samples, c.batch);
  fs::create_directories(c.output_dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Image8 prob{size, size, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size))};
    Image8 mask = prob;
    for (Index k = 0; k < size * size; ++k) {
      const float p = probs[i][k];
      prob.pixels[k] = static_cast<std::uint8_t>(std::lround(static_cast<double>(p) * 255.0));
      mask.pixels[k] = static_cast<double>(p) >= c.threshold ? 255 : 0;
    }
    char prefix[16];
    std::snprintf(prefix, sizeof(prefix), "%04zu_", i);
    const std::string stem = prefix + samples[i].id;
    write_image(fs::path(c.output_dir) / (stem + "_prob.png"), prob);
    write_image(fs::path(c.output_dir) / (stem + "_mask.png"), mask);
  }
  out << "wrote " << samples.size() << " predictions to " << c.output_dir << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  if (c.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (c.coordinates < 1) throw UsageError("--coordinates must be >= 1");
  if (c.tolerance && !(*c.tolerance > 0.0)) throw UsageError("--tolerance must be positive");
  if (!(c.e2e_tolerance > 0.0)) throw UsageError("--e2e-tolerance must be positive");
  SuiteOptions o;
  o.seeds = c.seeds;
  o.base_seed = c.seed;
  o.operator_tolerance = c.tolerance;
  o.end_to_end_tolerance = c.e2e_tolerance;
  o.max_coordinates = c.coordinates;
  o.include_end_to_end = !c.skip_end_to_end;
  bool passed = true;
  double worst = 0.0;
  for (const SuiteResult& r : run_gradcheck_suite(o)) {
    out << format_suite_result(r) << '\n' << std::flush;
    passed = passed && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  char line[64];
  std::snprintf(line, sizeof(line), "%s max_rel_err=%.3e", passed ? "PASS" : "FAIL", worst);
  out << line << '\n';
  return passed ? kExitOk : kExitValidation;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  if (c.output_dir.empty()) throw UsageError("synth requires --output-dir");
  if (c.count < 1) throw UsageError("--count must be >= 1");
  const Index size = c.size > 0 ? c.size : 64;
  const SyntheticDataset ds = generate_synthetic(c.count, size, c.seed, c.output_dir);
  out << "wrote " << ds.manifest.entries.size() << " samples; manifest " << ds.manifest_path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"seunet: UNet-transformer segmentation (train, eval, predict, gradcheck, synth)", "seunet"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  auto add_config = [&](CLI::App* s) { s->add_option("--config", config_path, "key=value defaults for the flags"); };
  auto add_model = [&](CLI::App* s) {
    s->add_option("--variant", c.variant, "L, M or S")->check(CLI::IsMember({"L", "M", "S"}));
    s->add_option("--widths", c.widths, "encoder width preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  };
  auto add_data = [&](CLI::App* s) {
    s->add_option("--manifest", c.manifest, "tab-separated image/mask list");
    s->add_option("--size", c.size, "square input extent")->check(CLI::PositiveNumber);
    s->add_option("--batch", c.batch, "mini-batch size")->check(CLI::PositiveNumber);
  };

  CLI::App* train = app.add_subcommand("train", "Train a model and write checkpoints");
  add_config(train);
  add_model(train);
  add_data(train);
  train->add_option("--epochs", c.epochs, "last epoch to run")->check(CLI::PositiveNumber);
  train->add_option("--lr", c.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", c.weight_decay, "coupled L2 weight decay")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", c.seed, "initialisation and shuffling seed");
  train->add_option("--checkpoint-dir", c.checkpoint_dir, "directory for checkpoints and train.log");
  train->add_option("--checkpoint-every", c.checkpoint_every, "epochs between checkpoints")->check(CLI::PositiveNumber);
  train->add_option("--resume", c.resume, "continue from this checkpoint");
  train->add_option("--log", c.log, "log file (default <checkpoint-dir>/train.log)");

  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a test manifest");
  add_config(eval);
  add_data(eval);
  eval->add_option("--checkpoint", c.checkpoint, "checkpoint file");
  eval->add_option("--output-dir", c.output_dir, "directory for the report files");
  eval->add_option("--report-name", c.report_name, "report file stem");
  eval->add_option("--threshold", c.threshold, "binarisation threshold");

  CLI::App* predict = app.add_subcommand("predict", "Write probability maps and masks");
  add_config(predict);
  add_data(predict);
  predict->add_option("--checkpoint", c.checkpoint, "checkpoint file");
  predict->add_option("--output-dir", c.output_dir, "directory for the PNG outputs");
  predict->add_option("--threshold", c.threshold, "binarisation threshold");

  CLI::App* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  add_config(grad);
  grad->add_option("--tolerance", c.tolerance, "tolerance for every operator-level check");
  grad->add_option("--e2e-tolerance", c.e2e_tolerance, "tolerance for the whole-model check");
  grad->add_option("--seeds", c.seeds, "seeds per check")->check(CLI::PositiveNumber);
  grad->add_option("--seed", c.seed, "first seed");
  grad->add_option("--coordinates", c.coordinates, "coordinates sampled per check")->check(CLI::PositiveNumber);
  grad->add_flag("--skip-end-to-end", c.skip_end_to_end, "omit the whole-model check");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic ellipse dataset");
  add_config(synth);
  synth->add_option("--count", c.count, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", c.size, "image extent")->check(CLI::PositiveNumber);
  synth->add_option("--seed", c.seed, "generator seed");
  synth->add_option("--output-dir", c.output_dir, "destination directory");

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

  try {
    // Config file entries become flags placed before the user's own, so the user's win.
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
      } else {
        continue;
      }
      if (args.empty() || app.get_subcommand_no_throw(args[0]) == nullptr) break;
      CLI::App* sub = app.get_subcommand(args[0]);
      std::vector<std::string> injected;
      for (const auto& [key, value] : read_config_file(path)) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) throw UsageError("config '" + path + "': unknown key '" + key + "' for " + args[0]);
        injected.push_back("--" + key);
        if (opt->get_expected_min() > 0) {
          injected.push_back(value);
        } else if (value != "true" && value != "1") {
          if (value == "false" || value == "0") {
            injected.pop_back();
          } else {
            throw UsageError("config '" + path + "': flag '" + key + "' takes true or false");
          }
        }
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
      break;
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (train->parsed()) return cmd_train(c, out);
    if (eval->parsed()) return cmd_eval(c, out);
    if (predict->parsed()) return cmd_predict(c, out);
    if (grad->parsed()) return cmd_gradcheck(c, out);
    if (synth->parsed()) return cmd_synth(c, out);
    return kExitUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid command line";
    err << "seunet: usage error: " << msg << " (try --help)\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "seunet: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "seunet: i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    err << "seunet: checkpoint error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "seunet: i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "seunet: error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace seunet
