#include <fstream>
#include <set>

#include "seunet/data.hpp"
#include "seunet/image_io.hpp"
#include "test_helpers.hpp"

namespace seunet {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

Image8 solid(std::int64_t w, std::int64_t h, int channels, std::uint8_t v) {
  return Image8{w, h, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * channels), v)};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

DataError::Kind manifest_error(const fs::path& p, std::string* what = nullptr) {
  try {
    load_manifest(p);
  } catch (const DataError& e) {
    if (what) *what = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "expected a data error";
  return DataError::Kind::kIo;
}

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int i = 0; i < 3; ++i) {
      write_image(dir_ / ("img" + std::to_string(i) + ".png"), solid(8, 8, 3, 100));
      write_image(dir_ / ("mask" + std::to_string(i) + ".png"), solid(8, 8, 1, 255));
    }
  }
  TempDir dir_{"manifest"};
};

TEST_F(ManifestTest, LoadsEntriesInOrder) {
  write_text(dir_ / "m.tsv", "# size: 32\n# split: train\nimg2.png\tmask2.png\nimg0.png\tmask0.png\n\nimg1.png\tmask1.png\n");
  const Manifest m = load_manifest(dir_ / "m.tsv");
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].image.filename(), "img2.png");
  EXPECT_EQ(m.entries[1].image.filename(), "img0.png");
  EXPECT_EQ(m.entries[2].mask.filename(), "mask1.png");
  EXPECT_EQ(m.entries[2].line, 6);
  EXPECT_EQ(m.target_size, 32);
  EXPECT_EQ(m.split, "train");

  write_manifest(dir_ / "copy.tsv", m);
  const Manifest again = load_manifest(dir_ / "copy.tsv");
  ASSERT_EQ(again.entries.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(fs::equivalent(again.entries[i].image, m.entries[i].image));
  EXPECT_EQ(again.target_size, 32);
}

TEST_F(ManifestTest, DistinctErrors) {
  EXPECT_EQ(manifest_error(dir_ / "nope.tsv"), DataError::Kind::kMissingFile);
  write_text(dir_ / "missing.tsv", "img0.png\tmask0.png\nimg1.png\tmask9.png\n");
  std::string what;
  EXPECT_EQ(manifest_error(dir_ / "missing.tsv", &what), DataError::Kind::kMissingReference);
  EXPECT_NE(what.find(":2"), std::string::npos) << what;
  EXPECT_NE(what.find("mask9.png"), std::string::npos) << what;
  write_text(dir_ / "dup.tsv", "img0.png\tmask0.png\nimg0.png\tmask0.png\n");
  EXPECT_EQ(manifest_error(dir_ / "dup.tsv"), DataError::Kind::kDuplicate);
  write_text(dir_ / "bad.tsv", "img0.png mask0.png\n");
  EXPECT_EQ(manifest_error(dir_ / "bad.tsv"), DataError::Kind::kFormat);
}

TEST(Split, FractionCountsAndPartition) {
  Manifest m;
  for (int i = 0; i < 1000; ++i) m.entries.push_back({"i" + std::to_string(i), "m" + std::to_string(i), i + 1});
  const Split s = split_dataset(m, 0.88, 3);
  EXPECT_EQ(s.train.entries.size(), 880u);
  EXPECT_EQ(s.test.entries.size(), 120u);
  std::set<std::string> train, test;
  for (const auto& e : s.train.entries) train.insert(e.image.string());
  for (const auto& e : s.test.entries) test.insert(e.image.string());
  for (const auto& t : test) EXPECT_EQ(train.count(t), 0u);
  EXPECT_EQ(train.size() + test.size(), 1000u);
  for (std::size_t i = 1; i < s.train.entries.size(); ++i) EXPECT_LT(s.train.entries[i - 1].line, s.train.entries[i].line);
  const Split again = split_dataset(m, 0.88, 3);
  for (std::size_t i = 0; i < 880; ++i) EXPECT_EQ(again.train.entries[i].image, s.train.entries[i].image);
  const Split other = split_dataset(m, 0.88, 4);
  bool differs = false;
  for (std::size_t i = 0; i < 880; ++i) differs |= other.train.entries[i].image != s.train.entries[i].image;
  EXPECT_TRUE(differs);
  EXPECT_THROW(split_dataset(m, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(split_dataset(m, 0.0, 1), std::invalid_argument);
}

TEST(Split, PresetCounts) {
  const DatasetPreset& kvasir = find_preset("kvasir-seg");
  EXPECT_EQ(kvasir.train, 880u);
  EXPECT_EQ(kvasir.test, 120u);
  Manifest m;
  for (int i = 0; i < 1000; ++i) m.entries.push_back({"i" + std::to_string(i), "m" + std::to_string(i), i + 1});
  const Split s = preset_split(m, kvasir, 0);
  EXPECT_EQ(s.train.entries.size(), 880u);
  EXPECT_EQ(s.test.entries.size(), 120u);
  EXPECT_EQ(find_preset("cvc-clinicdb").train, 550u);
  EXPECT_EQ(find_preset("isic2018").test, 519u);
  EXPECT_THROW(find_preset("imagenet"), std::invalid_argument);
}

TEST(LoadSample, ResizeAndThresholds) {
  TempDir dir("sample");
  Image8 img = solid(512, 512, 3, 0);
  for (std::int64_t y = 0; y < 512; ++y) {
    for (std::int64_t x = 0; x < 512; ++x) img.pixels[(y * 512 + x) * 3] = static_cast<std::uint8_t>(x / 2);
  }
  write_image(dir / "big.png", img);
  Image8 mask = solid(512, 512, 1, 10);
  for (std::int64_t i = 0; i < 512 * 256; ++i) mask.pixels[i] = 200;
  write_image(dir / "big_mask.png", mask);
  const Sample s = load_sample({dir / "big.png", dir / "big_mask.png", 1}, 256, 256);
  EXPECT_EQ(s.image.shape(), (Shape{3, 256, 256}));
  EXPECT_EQ(s.mask.shape(), (Shape{1, 256, 256}));
  EXPECT_EQ(s.id, "big");
  EXPECT_EQ(s.mask.at({0, 0, 0}), 1.f);
  EXPECT_EQ(s.mask.at({0, 255, 0}), 0.f);
  for (Index i = 0; i < s.mask.numel(); ++i) ASSERT_TRUE(s.mask[i] == 0.f || s.mask[i] == 1.f);
  for (Index i = 0; i < s.image.numel(); ++i) ASSERT_TRUE(s.image[i] >= 0.f && s.image[i] <= 1.f);
}

TEST(LoadSample, ConstantImageAtTargetSizeIsUnchanged) {
  TempDir dir("sample");
  write_image(dir / "c.ppm", solid(16, 16, 3, 51));
  write_image(dir / "c.pgm", solid(16, 16, 1, 0));
  const Sample s = load_sample({dir / "c.ppm", dir / "c.pgm", 1}, 16, 16);
  for (Index i = 0; i < s.image.numel(); ++i) EXPECT_FLOAT_EQ(s.image[i], 51.f / 255.f);
  for (Index i = 0; i < s.mask.numel(); ++i) EXPECT_EQ(s.mask[i], 0.f);
}

TEST(LoadSample, GrayImageIsReplicatedAndUndecodableFails) {
  TempDir dir("sample");
  write_image(dir / "g.png", solid(8, 8, 1, 255));
  write_image(dir / "m.png", solid(8, 8, 1, 128));
  const Sample s = load_sample({dir / "g.png", dir / "m.png", 1}, 8, 8);
  EXPECT_EQ(s.image.shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(s.image.at({2, 3, 3}), 1.f);
  EXPECT_EQ(s.mask.at({0, 0, 0}), 1.f);
  write_text(dir / "junk.png", "definitely not an image");
  try {
    load_sample({dir / "junk.png", dir / "m.png", 1}, 8, 8);
    FAIL() << "expected a decode error";
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::kDecode);
  }
}

TEST(ImageIo, PngAndNetpbmRoundTrip) {
  TempDir dir("io");
  Image8 rgb = solid(5, 3, 3, 0);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 7);
  for (const char* ext : {".png", ".ppm"}) {
    write_image(dir / (std::string("rgb") + ext), rgb);
    const Image8 back = read_image(dir / (std::string("rgb") + ext));
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.channels, 3);
    EXPECT_EQ(back.pixels, rgb.pixels);
  }
}

TEST(Synthetic, MaskEqualsAnalyticEllipseUnion) {
  TempDir dir("synth");
  const SyntheticDataset ds = generate_synthetic(8, 64, 5, dir.path());
  ASSERT_EQ(ds.manifest.entries.size(), 8u);
  ASSERT_EQ(ds.ellipses.size(), 8u);
  const auto samples = load_samples(ds.manifest, 64, 64);
  for (std::size_t n = 0; n < 8; ++n) {
    ASSERT_GE(ds.ellipses[n].size(), 1u);
    ASSERT_LE(ds.ellipses[n].size(), 3u);
    EXPECT_EQ(samples[n].image.shape(), (Shape{3, 64, 64}));
    for (Index y = 0; y < 64; ++y) {
      for (Index x = 0; x < 64; ++x) {
        bool inside = false;
        for (const Ellipse& e : ds.ellipses[n]) {
          const double u = static_cast<double>(x) - e.cx, v = static_cast<double>(y) - e.cy;
          inside |= u * u / (e.a * e.a) + v * v / (e.b * e.b) <= 1.0;
        }
        ASSERT_EQ(samples[n].mask.at({0, y, x}), inside ? 1.f : 0.f) << "image " << n << " at " << x << "," << y;
      }
    }
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  TempDir a("synth_a"), b("synth_b");
  const auto da = generate_synthetic(4, 32, 9, a.path());
  const auto db = generate_synthetic(4, 32, 9, b.path());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(read_image(da.manifest.entries[i].image).pixels, read_image(db.manifest.entries[i].image).pixels);
    EXPECT_EQ(read_image(da.manifest.entries[i].mask).pixels, read_image(db.manifest.entries[i].mask).pixels);
  }
  TempDir c("synth_c");
  const auto dc = generate_synthetic(4, 32, 10, c.path());
  EXPECT_NE(read_image(da.manifest.entries[0].image).pixels, read_image(dc.manifest.entries[0].image).pixels);
  EXPECT_EQ(load_manifest(da.manifest_path).target_size, 32);
}

TEST(StackSamples, OrderAndShapes) {
  TempDir dir("stack");
  const auto ds = generate_synthetic(3, 16, 1, dir.path());
  const auto samples = load_samples(ds.manifest, 16, 16);
  const std::vector<std::size_t> order{2, 0};
  const Batch b = stack_samples(samples, order);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(b.masks.shape(), (Shape{2, 1, 16, 16}));
  for (Index i = 0; i < 3 * 256; ++i) EXPECT_EQ(b.images[i], samples[2].image[i]);
}

}  // namespace
}  // namespace seunet
