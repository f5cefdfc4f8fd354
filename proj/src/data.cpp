#include "seunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "seunet/ops.hpp"
#include "seunet/random.hpp"

namespace seunet {

namespace fs = std::filesystem;
using Kind = DataError::Kind;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Tensor<float> image_to_tensor(const Image8& img) {
  Tensor<float> out(Shape{3, img.height, img.width});
  const Index plane = img.height * img.width;
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = img.channels == 3 ? c : 0;
        out[c * plane + y * img.width + x] = static_cast<float>(img.at(y, x, src)) / 255.0f;
      }
    }
  }
  return out;
}

Tensor<float> mask_channel(const Image8& img) {
  Tensor<float> out(Shape{1, img.height, img.width});
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      std::uint8_t v = 0;
      for (int c = 0; c < img.channels; ++c) v = std::max(v, img.at(y, x, c));
      out[y * img.width + x] = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(Kind::kMissingFile, "manifest '" + path.string() + "' not found");
  const fs::path base = path.parent_path();
  Manifest m;
  std::set<std::pair<fs::path, fs::path>> seen;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto colon = body.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(body.substr(0, colon));
      const std::string value = trim(body.substr(colon + 1));
      if (key == "size") {
        try {
          std::size_t used = 0;
          m.target_size = std::stoll(value, &used);
          if (used != value.size() || m.target_size <= 0) throw std::invalid_argument("size");
        } catch (const std::exception&) {
          throw DataError(Kind::kFormat, where + ": invalid size directive '" + value + "'");
        }
      } else if (key == "split") {
        m.split = value;
      }
      continue;
    }
    const auto tab = raw.find('\t');
    if (tab == std::string::npos || raw.find('\t', tab + 1) != std::string::npos) {
      throw DataError(Kind::kFormat, where + ": expected 'image<TAB>mask'");
    }
    ManifestEntry e;
    e.line = line_no;
    const fs::path image = trim(raw.substr(0, tab));
    const fs::path mask = trim(raw.substr(tab + 1));
    if (image.empty() || mask.empty()) throw DataError(Kind::kFormat, where + ": empty path");
    e.image = (image.is_absolute() ? image : base / image).lexically_normal();
    e.mask = (mask.is_absolute() ? mask : base / mask).lexically_normal();
    for (const fs::path* p : {&e.image, &e.mask}) {
      if (!fs::is_regular_file(*p)) {
        throw DataError(Kind::kMissingReference, where + ": referenced file '" + p->string() + "' does not exist");
      }
    }
    if (!seen.emplace(e.image, e.mask).second) {
      throw DataError(Kind::kDuplicate, where + ": duplicate entry '" + image.string() + "'");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(Kind::kIo, "cannot write manifest '" + path.string() + "'");
  if (manifest.target_size > 0) out << "# size: " << manifest.target_size << '\n';
  if (!manifest.split.empty()) out << "# split: " << manifest.split << '\n';
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_proximate(base);
    return r.empty() ? p : r;
  };
  for (const auto& e : manifest.entries) out << rel(e.image).string() << '\t' << rel(e.mask).string() << '\n';
  if (!out) throw DataError(Kind::kIo, "write to '" + path.string() + "' failed");
}

Sample load_sample(const ManifestEntry& entry, Index height, Index width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("load_sample: target size must be positive");
  Sample s;
  s.id = entry.image.stem().string();
  Tensor<float> image = image_to_tensor(read_image(entry.image));
  if (image.dim(1) != height || image.dim(2) != width) image = kernels::resize_bilinear(image, height, width);
  s.image = std::move(image);

  Tensor<float> mask = mask_channel(read_image(entry.mask));
  if (mask.dim(1) != height || mask.dim(2) != width) mask = kernels::resize_nearest(mask, height, width);
  for (Index i = 0; i < mask.numel(); ++i) mask[i] = mask[i] >= 128.0f ? 1.0f : 0.0f;
  s.mask = std::move(mask);
  return s;
}

std::vector<Sample> load_samples(const Manifest& manifest, Index height, Index width) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_sample(e, height, width));
  return out;
}

Batch stack_samples(std::span<const Sample> samples, std::span<const std::size_t> order) {
  std::vector<std::size_t> identity;
  if (order.empty()) {
    identity.resize(samples.size());
    std::iota(identity.begin(), identity.end(), 0);
    order = identity;
  }
  if (order.empty()) throw std::invalid_argument("stack_samples: no samples");
  const Shape& is = samples[order[0]].image.shape();
  const Shape& ms = samples[order[0]].mask.shape();
  const Index n = static_cast<Index>(order.size());
  Batch b{Tensor<float>(Shape{n, is[0], is[1], is[2]}), Tensor<float>(Shape{n, ms[0], ms[1], ms[2]})};
  for (Index i = 0; i < n; ++i) {
    if (order[i] >= samples.size()) throw std::out_of_range("stack_samples: index out of range");
    const Sample& s = samples[order[i]];
    if (s.image.shape() != is || s.mask.shape() != ms) throw ShapeError("stack_samples: samples differ in shape");
    std::copy_n(s.image.data(), s.image.numel(), b.images.data() + i * s.image.numel());
    std::copy_n(s.mask.data(), s.mask.numel(), b.masks.data() + i * s.mask.numel());
  }
  return b;
}

Split split_dataset_count(const Manifest& manifest, std::size_t train_count, std::uint64_t seed) {
  const std::size_t n = manifest.entries.size();
  if (train_count > n) throw std::invalid_argument("split: train count exceeds dataset size");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_count));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(train_count), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  Split s;
  s.train.target_size = s.test.target_size = manifest.target_size;
  s.train.split = "train";
  s.test.split = "test";
  for (std::size_t i : train) s.train.entries.push_back(manifest.entries[i]);
  for (std::size_t i : test) s.test.entries.push_back(manifest.entries[i]);
  return s;
}

Split split_dataset(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  }
  const auto count = static_cast<std::size_t>(std::llround(static_cast<double>(manifest.entries.size()) * train_fraction));
  return split_dataset_count(manifest, count, seed);
}

std::span<const DatasetPreset> dataset_presets() {
  static constexpr DatasetPreset kPresets[] = {
      {"kvasir-seg", 512, 880, 120},      {"cvc-clinicdb", 384, 550, 62},    {"mixed-kvasir-seg", 384, 900, 100},
      {"mixed-cvc-clinicdb", 384, 550, 62}, {"mixed-cvc-colondb", 384, 0, 380}, {"mixed-endoscene", 384, 0, 60},
      {"glas", 128, 85, 80},              {"isic2018", 256, 2075, 519},      {"dsb2018", 256, 536, 134},
  };
  return kPresets;
}

const DatasetPreset& find_preset(std::string_view name) {
  for (const auto& p : dataset_presets()) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown dataset preset '" + std::string(name) + "'");
}

Split preset_split(const Manifest& full, const DatasetPreset& preset, std::uint64_t seed) {
  if (full.entries.size() != preset.train + preset.test) {
    throw std::invalid_argument("preset '" + std::string(preset.name) + "' expects " +
                                std::to_string(preset.train + preset.test) + " entries, manifest has " +
                                std::to_string(full.entries.size()));
  }
  Split s = split_dataset_count(full, preset.train, seed);
  s.train.target_size = s.test.target_size = preset.size;
  return s;
}

SyntheticDataset generate_synthetic(int n, Index size, std::uint64_t seed, const fs::path& out_dir) {
  if (n < 1) throw std::invalid_argument("synthetic: need at least one sample");
  if (size < 8) throw std::invalid_argument("synthetic: size must be at least 8");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw DataError(Kind::kIo, "synthetic: cannot create directory '" + out_dir.string() + "'");
  }
  Rng rng(seed);
  SyntheticDataset ds;
  ds.manifest.target_size = size;
  const double s = static_cast<double>(size);
  std::ostringstream params;
  params << "# index\tcx\tcy\ta\tb\n";
  for (int i = 0; i < n; ++i) {
    std::vector<Ellipse> shapes;
    const int count = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < count; ++k) {
      Ellipse e;
      e.cx = rng.uniform(0.25 * s, 0.75 * s);
      e.cy = rng.uniform(0.25 * s, 0.75 * s);
      e.a = rng.uniform(0.15 * s, 0.32 * s);
      e.b = rng.uniform(0.15 * s, 0.32 * s);
      e.r = rng.uniform(0.7, 1.0);
      e.g = rng.uniform(0.7, 1.0);
      e.bl = rng.uniform(0.7, 1.0);
      shapes.push_back(e);
      char line[160];
      std::snprintf(line, sizeof(line), "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", i, e.cx, e.cy, e.a, e.b);
      params << line;
    }
    Image8 image{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
    Image8 mask{size, size, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size))};
    for (Index y = 0; y < size; ++y) {
      for (Index x = 0; x < size; ++x) {
        const Ellipse* hit = nullptr;
        for (const auto& e : shapes) {
          if (e.contains(static_cast<double>(x), static_cast<double>(y))) hit = &e;
        }
        const double colour[3] = {hit ? hit->r : 0.15, hit ? hit->g : 0.12, hit ? hit->bl : 0.18};
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(colour[c] + rng.uniform(-0.06, 0.06), 0.0, 1.0);
          image.pixels[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        mask.pixels[y * size + x] = hit ? 255 : 0;
      }
    }
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%04d", i);
    const fs::path image_path = out_dir / ("image_" + std::string(stem) + ".ppm");
    const fs::path mask_path = out_dir / ("mask_" + std::string(stem) + ".pgm");
    write_image(image_path, image);
    write_image(mask_path, mask);
    ds.manifest.entries.push_back(ManifestEntry{image_path.lexically_normal(), mask_path.lexically_normal(), i + 2});
    ds.ellipses.push_back(std::move(shapes));
  }
  ds.manifest_path = out_dir / "manifest.tsv";
  write_manifest(ds.manifest_path, ds.manifest);
  std::ofstream ellipses(out_dir / "ellipses.tsv", std::ios::trunc);
  ellipses << params.str();
  if (!ellipses) throw DataError(Kind::kIo, "synthetic: cannot write ellipse parameters");
  return ds;
}

}  // namespace seunet
