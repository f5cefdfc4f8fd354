#include <fstream>
#include <sstream>

#include "seunet/checkpoint.hpp"
#include "seunet/cli.hpp"
#include "test_helpers.hpp"

namespace seunet {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "seunet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int line_count(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

TEST(Cli, UsageErrors) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"train", "--variant", "XL"}, {"train", "--epochs", "abc"}, {"synth", "--bogus", "1"}}) {
    const CliRun r = run(args);
    EXPECT_EQ(r.code, kExitUsage) << r.err;
    EXPECT_EQ(line_count(r.err), 1) << r.err;
  }
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, SynthAndValidationBeforeWork) {
  TempDir dir("cli");
  const CliRun s = run({"synth", "--count", "2", "--size", "32", "--seed", "3", "--output-dir", (dir / "d").string()});
  ASSERT_EQ(s.code, kExitOk) << s.err;
  EXPECT_TRUE(fs::exists(dir / "d" / "manifest.tsv"));
  const CliRun bad = run({"train", "--manifest", (dir / "d" / "manifest.tsv").string(), "--size", "72",
                          "--checkpoint-dir", (dir / "ck").string()});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "ck"));
  const CliRun missing = run({"train", "--manifest", (dir / "none.tsv").string()});
  EXPECT_EQ(missing.code, kExitIo);
  EXPECT_EQ(line_count(missing.err), 1);
}

TEST(Cli, ConfigFileDefaultsAndFlagPrecedence) {
  TempDir dir("cli");
  {
    std::ofstream cfg(dir / "synth.cfg");
    cfg << "# synthetic data\ncount = 3\nsize=32\nseed=4\noutput_dir=" << (dir / "from_config").string() << "\n";
  }
  const CliRun a = run({"synth", "--config", (dir / "synth.cfg").string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_TRUE(fs::exists(dir / "from_config" / "image_0002.ppm"));
  const CliRun b = run({"synth", "--config", (dir / "synth.cfg").string(), "--count", "1", "--output-dir",
                        (dir / "from_flags").string()});
  ASSERT_EQ(b.code, kExitOk) << b.err;
  EXPECT_TRUE(fs::exists(dir / "from_flags" / "image_0000.ppm"));
  EXPECT_FALSE(fs::exists(dir / "from_flags" / "image_0001.ppm"));

  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "count=2\ncolour=blue\n";
  }
  const CliRun c = run({"synth", "--config", (dir / "bad.cfg").string(), "--output-dir", (dir / "x").string()});
  EXPECT_EQ(c.code, kExitUsage);
  EXPECT_NE(c.err.find("colour"), std::string::npos) << c.err;
  {
    std::ofstream cfg(dir / "noeq.cfg");
    cfg << "count 2\n";
  }
  EXPECT_EQ(run({"synth", "--config", (dir / "noeq.cfg").string()}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--config", (dir / "absent.cfg").string()}).code, kExitIo);
}

TEST(Cli, TrainEvalPredictWorkflow) {
  TempDir dir("cli");
  ASSERT_EQ(run({"synth", "--count", "4", "--size", "32", "--seed", "1", "--output-dir", (dir / "d").string()}).code,
            kExitOk);
  const std::string manifest = (dir / "d" / "manifest.tsv").string();
  const CliRun t = run({"train", "--variant", "M", "--manifest", manifest, "--epochs", "25", "--seed", "7",
                        "--checkpoint-dir", (dir / "ck").string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  for (int e : {10, 20, 25}) EXPECT_TRUE(fs::exists(dir / "ck" / checkpoint_filename(e))) << e;
  EXPECT_FALSE(fs::exists(dir / "ck" / checkpoint_filename(15)));
  std::ifstream log(dir / "ck" / "train.log");
  std::string text((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
  EXPECT_EQ(line_count(text), 25);

  const std::string ck = (dir / "ck" / checkpoint_filename(25)).string();
  const CliRun e = run({"eval", "--checkpoint", ck, "--manifest", manifest, "--output-dir", (dir / "rep").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  for (const char* key : {"mDC=", "mIoU=", "mRec=", "mPre="}) EXPECT_NE(e.out.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.txt"));
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.kv"));

  const CliRun p = run({"predict", "--checkpoint", ck, "--manifest", manifest, "--output-dir", (dir / "pred").string()});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  EXPECT_TRUE(fs::exists(dir / "pred" / "0000_image_0000_prob.png"));
  EXPECT_TRUE(fs::exists(dir / "pred" / "0003_image_0003_mask.png"));

  const CliRun resumed = run({"train", "--variant", "M", "--manifest", manifest, "--epochs", "30", "--seed", "7",
                              "--checkpoint-dir", (dir / "ck").string(), "--resume", ck});
  ASSERT_EQ(resumed.code, kExitOk) << resumed.err;
  EXPECT_TRUE(fs::exists(dir / "ck" / checkpoint_filename(30)));
  const CliRun wrong = run({"train", "--variant", "L", "--manifest", manifest, "--epochs", "30", "--checkpoint-dir",
                            (dir / "ck2").string(), "--resume", ck});
  EXPECT_EQ(wrong.code, kExitUsage);

  EXPECT_EQ(run({"eval", "--checkpoint", (dir / "nope.seut").string(), "--manifest", manifest}).code, kExitIo);
  {
    std::ofstream junk(dir / "junk.seut");
    junk << "hello";
  }
  const CliRun j = run({"eval", "--checkpoint", (dir / "junk.seut").string(), "--manifest", manifest});
  EXPECT_EQ(j.code, kExitIo);
  EXPECT_NE(j.err.find("not a checkpoint"), std::string::npos) << j.err;
}

TEST(Cli, GradcheckReportsPassAndFail) {
  const CliRun ok = run({"gradcheck", "--tolerance", "1e-4", "--seeds", "1", "--skip-end-to-end"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_NE(ok.out.find("PASS max_rel_err="), std::string::npos) << ok.out;
  const CliRun bad = run({"gradcheck", "--tolerance", "1e-300", "--seeds", "1", "--skip-end-to-end"});
  EXPECT_EQ(bad.code, kExitValidation);
  EXPECT_NE(bad.out.find("FAIL max_rel_err="), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--tolerance", "-1"}).code, kExitUsage);
}

}  // namespace
}  // namespace seunet
