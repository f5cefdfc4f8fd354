#include "seunet/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace seunet {

namespace {

using Kind = CheckpointError::Kind;

std::string join(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& text, const std::string& what) {
  Int value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw CheckpointError(Kind::kMalformed, "checkpoint: bad " + what + " '" + text + "'");
  }
  return value;
}

Shape parse_shape(const std::string& text) {
  if (text == "scalar") return {};
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(parse_int<Index>(part, "shape"));
  for (Index d : shape) {
    if (d < 0) throw CheckpointError(Kind::kMalformed, "checkpoint: negative extent in shape '" + text + "'");
  }
  return shape;
}

std::string join_widths(const EncoderWidths& w) {
  std::string out;
  for (std::size_t i = 0; i < w.stages.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(w.stages[i]);
  }
  return out;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

const NamedTensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string checkpoint_filename(std::int64_t epoch) {
  std::ostringstream os;
  os << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << epoch << ".seut";
  return os.str();
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::ostringstream header;
  const VariantSpec& s = data.spec;
  header << "variant: " << variant_label(s.name) << '\n'
         << "encoder: " << join_widths(s.encoder) << '\n'
         << "bottleneck: " << s.encoder.bottleneck << '\n'
         << "embed_dim: " << s.embed_dim << '\n'
         << "heads: " << s.heads << '\n'
         << "head_dim: " << s.head_dim << '\n'
         << "depth: " << s.depth << '\n'
         << "bridge_channels: " << s.bridge_channels << '\n'
         << "mlp_ratio: " << s.mlp_ratio << '\n'
         << "cbr_hidden1: " << s.cbr_hidden1 << '\n'
         << "cbr_hidden2: " << s.cbr_hidden2 << '\n'
         << "in_channels: " << s.in_channels << '\n'
         << "epoch: " << data.epoch << '\n'
         << "seed: " << data.seed << '\n'
         << "adam_step: " << data.adam_step << '\n';
  for (const auto& [key, value] : data.config) {
    if (key.find_first_of(": \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw CheckpointError(Kind::kMalformed, "checkpoint: config entry '" + key + "' cannot be stored");
    }
    header << "config." << key << ": " << value << '\n';
  }
  header << "tensor_count: " << data.tensors.size() << '\n';
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \n") != std::string::npos) {
      throw CheckpointError(Kind::kMalformed, "checkpoint: invalid tensor name '" + t.name + "'");
    }
    header << "tensor: " << t.name << " f32 " << join(t.value.shape()) << ' ' << offset << '\n';
    offset += static_cast<std::uint64_t>(t.value.numel()) * 4;
  }
  header << '\n';

  std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(bytes, kCheckpointVersion);
  bytes += header.str();
  bytes.reserve(bytes.size() + offset);
  for (const auto& t : data.tensors) {
    for (Index i = 0; i < t.value.numel(); ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(t.value[i]));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::kIo, "checkpoint: write to '" + path.string() + "' failed");
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "checkpoint: cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " ('" + path.string() + "')";

  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(Kind::kNotCheckpoint, "not a checkpoint: bad magic" + where);
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated version field" + where);
  const std::uint32_t version = get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint: unsupported version " + std::to_string(version) +
                                              " (expected " + std::to_string(kCheckpointVersion) + ")" + where);
  }
  const std::size_t header_end = bytes.find("\n\n", 12);
  if (header_end == std::string::npos) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: header not terminated" + where);
  }
  const std::size_t payload_begin = header_end + 2;

  std::map<std::string, std::string> fields;
  CheckpointData data;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> directory;
  std::istringstream header(bytes.substr(12, header_end + 1 - 12));
  std::string line;
  while (std::getline(header, line)) {
    const std::size_t colon = line.find(": ");
    if (colon == std::string::npos) throw CheckpointError(Kind::kMalformed, "checkpoint: bad header line '" + line + "'");
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "tensor") {
      std::istringstream ls(value);
      Entry e;
      std::string dtype, shape, offset;
      if (!(ls >> e.name >> dtype >> shape >> offset) || dtype != "f32") {
        throw CheckpointError(Kind::kMalformed, "checkpoint: bad tensor entry '" + value + "'");
      }
      e.shape = parse_shape(shape);
      e.offset = parse_int<std::uint64_t>(offset, "offset");
      directory.push_back(std::move(e));
    } else if (key.rfind("config.", 0) == 0) {
      data.config.emplace_back(key.substr(7), value);
    } else if (!fields.emplace(key, value).second) {
      throw CheckpointError(Kind::kMalformed, "checkpoint: duplicate header key '" + key + "'");
    }
  }

  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError(Kind::kMalformed, "checkpoint: header lacks '" + key + "'");
    return it->second;
  };
  auto int_field = [&](const std::string& key) { return parse_int<Index>(field(key), key); };

  try {
    EncoderWidths widths;
    std::stringstream ws(field("encoder"));
    std::string part;
    std::size_t count = 0;
    while (std::getline(ws, part, ',')) {
      if (count >= widths.stages.size()) throw CheckpointError(Kind::kMalformed, "checkpoint: too many encoder widths");
      widths.stages[count++] = parse_int<Index>(part, "encoder width");
    }
    if (count != widths.stages.size()) throw CheckpointError(Kind::kMalformed, "checkpoint: expected 4 encoder widths");
    widths.bottleneck = int_field("bottleneck");
    VariantSpec spec = build_variant(field("variant"), widths, int_field("cbr_hidden1"), int_field("cbr_hidden2"));
    spec.embed_dim = int_field("embed_dim");
    spec.heads = int_field("heads");
    spec.head_dim = int_field("head_dim");
    spec.depth = int_field("depth");
    spec.bridge_channels = int_field("bridge_channels");
    spec.mlp_ratio = int_field("mlp_ratio");
    spec.in_channels = int_field("in_channels");
    spec.validate();
    data.spec = spec;
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::kMalformed, std::string("checkpoint: invalid architecture: ") + e.what());
  }
  data.epoch = parse_int<std::int64_t>(field("epoch"), "epoch");
  data.seed = parse_int<std::uint64_t>(field("seed"), "seed");
  data.adam_step = parse_int<std::int64_t>(field("adam_step"), "adam_step");
  if (parse_int<std::size_t>(field("tensor_count"), "tensor_count") != directory.size()) {
    throw CheckpointError(Kind::kMalformed, "checkpoint: tensor_count disagrees with the directory");
  }

  const std::size_t payload_size = bytes.size() - payload_begin;
  std::uint64_t expected_offset = 0;
  for (const Entry& e : directory) {
    const std::uint64_t n = static_cast<std::uint64_t>(shape_numel(e.shape));
    if (e.offset != expected_offset) {
      throw CheckpointError(Kind::kMalformed, "checkpoint: tensor '" + e.name + "' is not at its directory offset");
    }
    expected_offset += n * 4;
    if (expected_offset > payload_size) {
      throw CheckpointError(Kind::kTruncated, "checkpoint: payload ends inside tensor '" + e.name + "'" + where);
    }
    Tensor<float> value(e.shape);
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_begin + e.offset;
    for (std::uint64_t i = 0; i < n; ++i) value[static_cast<Index>(i)] = std::bit_cast<float>(get_u32(src + 4 * i));
    data.tensors.push_back(NamedTensor{e.name, std::move(value)});
  }
  if (expected_offset != payload_size) {
    throw CheckpointError(Kind::kMalformed, "checkpoint: " + std::to_string(payload_size - expected_offset) +
                                                " trailing payload bytes" + where);
  }
  return data;
}

CheckpointData capture_checkpoint(SeUNetTrans<float>& model, const Adam<float>* optimizer, std::int64_t epoch,
                                  std::uint64_t seed, std::vector<std::pair<std::string, std::string>> config) {
  CheckpointData data;
  data.spec = model.spec();
  data.epoch = epoch;
  data.seed = seed;
  data.config = std::move(config);
  StateRefs<float> state = model.state();
  for (Parameter<float>* p : state.params) data.tensors.push_back(NamedTensor{p->name(), p->value()});
  for (const auto& [name, buffer] : state.buffers) data.tensors.push_back(NamedTensor{name, *buffer});
  if (optimizer != nullptr) {
    data.adam_step = optimizer->step_count();
    for (const auto& [name, mom] : optimizer->moments()) {
      data.tensors.push_back(NamedTensor{"optim.m." + name, mom.m});
      data.tensors.push_back(NamedTensor{"optim.v." + name, mom.v});
    }
  }
  return data;
}

void apply_checkpoint(const CheckpointData& data, SeUNetTrans<float>& model, Adam<float>* optimizer) {
  StateRefs<float> state = model.state();
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    const NamedTensor* t = data.find(name);
    if (t == nullptr) throw CheckpointError(Kind::kMismatch, "checkpoint: missing tensor '" + name + "'");
    if (t->value.shape() != shape) {
      throw CheckpointError(Kind::kMismatch, "checkpoint: tensor '" + name + "' has shape " +
                                                 shape_to_string(t->value.shape()) + ", model expects " +
                                                 shape_to_string(shape));
    }
    return t->value;
  };
  // Validate everything before mutating anything.
  for (Parameter<float>* p : state.params) fetch(p->name(), p->shape());
  for (const auto& [name, buffer] : state.buffers) fetch(name, buffer->shape());
  std::map<std::string, AdamMoments<float>> moments;
  if (optimizer != nullptr) {
    for (const NamedTensor& t : data.tensors) {
      if (t.name.rfind("optim.m.", 0) != 0) continue;
      const std::string name = t.name.substr(8);
      moments[name] = AdamMoments<float>{t.value, fetch("optim.v." + name, t.value.shape())};
    }
  }

  for (Parameter<float>* p : state.params) p->value() = fetch(p->name(), p->shape());
  for (const auto& [name, buffer] : state.buffers) *buffer = fetch(name, buffer->shape());
  if (optimizer != nullptr) optimizer->restore(data.adam_step, std::move(moments));
}

}  // namespace seunet
