#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include "featprobe/pipeline.hpp"
#include "test_util.hpp"

using namespace featprobe;
using namespace featprobe::pipeline;
using namespace fptest;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const fs::path& logFile) {
  const std::string cmd = std::string(FEATPROBE_CLI) + " " + args + " > " + logFile.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& p, const json& j) {
  spit(p, j.dump(2));
  return p;
}

/// Small synthetic corpus shared by the end-to-end tests.
class Corpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("fp-corpus");
    SynthOptions opt;
    opt.n = 24;
    opt.seed = 3;
    std::ostringstream log;
    ASSERT_EQ(cmd_synth(dir_->path(), opt, log), kOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static json base_config(const fs::path& out) {
    return {{"manifest", (dir_->path() / "manifest.jsonl").string()},
            {"outDir", out.string()},
            {"architectures", {"Regular", "Deformable"}},
            {"seeds", {0, 1}},
            {"taps", {"conv3"}},
            {"features", {"meanPower", "waveletStat(5,mean,overTime)"}},
            {"tasks", {"class", "pitchHz"}},
            {"measures", {"cka", "lrR2"}},
            {"similarity", {{"noiseBaseline", {{"seed", 1}, {"width", 8}}}}},
            {"decode",
             {{"epochs", 20},
              {"concat", json::array({json::array({"hc:meanPower", "deep:Regular:conv3"})})},
              {"sets", {"hc:meanPower", "deep:Regular:conv3"}}}},
            {"workers", 1}};
  }

  static ExperimentConfig config(const json& j) { return ExperimentConfig::from_json(j); }

  static void run_all(const ExperimentConfig& cfg) {
    std::ostringstream log;
    ASSERT_EQ(cmd_melspec(cfg, log), kOk) << log.str();
    ASSERT_EQ(cmd_features(cfg, log), kOk) << log.str();
    ASSERT_EQ(cmd_deepfeat(cfg, log), kOk) << log.str();
    ASSERT_EQ(cmd_similarity(cfg, log), kOk) << log.str();
    ASSERT_EQ(cmd_decode(cfg, log), kOk) << log.str();
    ASSERT_EQ(cmd_report(cfg, log), kOk) << log.str();
  }

  static TempDir* dir_;
};

TempDir* Corpus::dir_ = nullptr;

}  // namespace

TEST(Config, ParsesEveryField) {
  const json j = {{"manifest", "data/m.jsonl"},
                  {"outDir", "out"},
                  {"architectures", "all"},
                  {"seeds", {7}},
                  {"taps", {"conv1", "pool2"}},
                  {"features", {"top4Combined"}},
                  {"tasks", {"class"}},
                  {"measures", {"svccaRho"}},
                  {"weights", {{{"architecture", "Dilated"}, {"seed", 7}, {"path", "w.ftb"}}}},
                  {"sourceTask", "pitch"},
                  {"init", {{"scheme", "kaimingNormal"}, {"zeroOffsetWeight", true}}},
                  {"forward", {{"activation", "identity"}, {"tapPoint", "preNorm"}, {"deformBorder", "clamp"}}},
                  {"similarity", {{"split", "all"}, {"zscore", true}, {"varianceKeep", 0.95}}},
                  {"decode", {{"learningRate", 0.1}, {"epochs", 5}, {"batchSize", 8}, {"deepSeed", 3},
                              {"sources", {{"class", "deep:Regular:conv3"}}}}},
                  {"workers", 3},
                  {"force", true},
                  {"csv", true}};
  const auto c = ExperimentConfig::from_json(j, "/base");
  EXPECT_EQ(c.manifest, fs::path("/base/data/m.jsonl"));
  EXPECT_EQ(c.outDir, fs::path("/base/out"));
  EXPECT_EQ(c.architectures.size(), 5u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(c.taps, (std::vector<convnet::Tap>{convnet::Tap::conv1, convnet::Tap::pool2}));
  EXPECT_EQ(c.features.size(), 1u);
  EXPECT_EQ(c.measures, (std::vector<simlab::Measure>{simlab::Measure::svccaRho}));
  ASSERT_EQ(c.weights.size(), 1u);
  EXPECT_EQ(c.weights_for(convnet::ArchId::Dilated, 7)->path, fs::path("/base/w.ftb"));
  EXPECT_FALSE(c.weights_for(convnet::ArchId::Dilated, 0));
  EXPECT_EQ(c.init.scheme, convnet::InitScheme::kaimingNormal);
  EXPECT_EQ(c.forward.tapPoint, convnet::ConvTapPoint::preNorm);
  EXPECT_EQ(c.forward.deformBorder, convnet::DeformBorder::clamp);
  EXPECT_EQ(c.similarity.split, "all");
  EXPECT_EQ(c.similarity.options.varianceKeep, 0.95);
  EXPECT_EQ(c.decode.train.batchSize, 8u);
  EXPECT_EQ(c.decode.deepSeed, 3u);
  EXPECT_EQ(c.workers, 3u);
  EXPECT_TRUE(c.force && c.csv);
  EXPECT_EQ(c.deep_sets().size(), 10u);
}

TEST(Config, DefaultsAndHash) {
  const auto c = ExperimentConfig::from_json(json::object());
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(c.taps, (std::vector<convnet::Tap>{convnet::Tap::conv3}));
  EXPECT_EQ(c.decode.train.learningRate, 0.01);
  EXPECT_EQ(c.decode.train.epochs, 100);
  EXPECT_EQ(c.forward.deformBorder, convnet::DeformBorder::zero);
  EXPECT_EQ(c.hash(), ExperimentConfig::from_json(json::object()).hash());
  EXPECT_NE(c.hash(), ExperimentConfig::from_json({{"seeds", {1}}}).hash());
  EXPECT_EQ(c.hash().size(), 16u);
}

TEST(Config, ErrorsAreConfigErrors) {
  const std::vector<json> bad = {json::array(),
                                 {{"architectures", {"Resnet"}}},
                                 {{"seeds", "zero"}},
                                 {{"taps", {"fc1"}}},
                                 {{"features", {"loudness"}}},
                                 {{"measures", {"mmd"}}},
                                 {{"forward", {{"tapPoint", "late"}}}},
                                 {{"forward", {{"deformBorder", "wrap"}}}},
                                 {{"init", {{"scheme", "xavier"}}}},
                                 {{"similarity", {{"rows", {"mystery"}}}}},
                                 {{"decode", {{"concat", {json::array()}}}}},
                                 {{"weights", {{{"architecture", "Regular"}}}}}};
  for (const auto& j : bad) {
    try {
      ExperimentConfig::from_json(j);
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::config) << j.dump();
    }
  }
  TempDir t;
  spit(t / "bad.json", "{ not json");
  EXPECT_THROW(ExperimentConfig::load(t / "bad.json"), Error);
  EXPECT_THROW(ExperimentConfig::load(t / "absent.json"), Error);
}

TEST(Config, ValidateChecksReferencedPaths) {
  TempDir t;
  spit(t / "m.jsonl", "");
  auto c = ExperimentConfig::from_json({{"manifest", "m.jsonl"}}, t.path());
  EXPECT_NO_THROW(c.validate());
  c.seeds.clear();
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig::from_json({{"manifest", "missing.jsonl"}}, t.path());
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig::from_json(
      {{"manifest", "m.jsonl"}, {"weights", {{{"architecture", "Regular"}, {"seed", 0}, {"path", "none.ftb"}}}}},
      t.path());
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig::from_json({{"manifest", "m.jsonl"}, {"similarity", {{"split", "val"}}}}, t.path());
  EXPECT_THROW(c.validate(), Error);
}

TEST(SetRefs, ParseAndName) {
  EXPECT_EQ(SetRef::parse("deep:OneDT:pool1").name(), "deep:1dT:pool1");
  EXPECT_EQ(SetRef::parse("hc:meanPower").name(), "hc:meanPower");
  EXPECT_TRUE(SetRef::parse("deep:Regular:conv3").deep);
  EXPECT_THROW(SetRef::parse("deep:Regular"), Error);
  EXPECT_THROW(SetRef::parse("meanPower"), Error);
}

TEST(Ledger, DedupFailuresAndNoClock) {
  TempDir t;
  RunLedger a("unit", "abc");
  a.step("one", "ok");
  a.step("two", "failed", "boom");
  a.artifact(t / "x");
  a.artifact(t / "x");
  EXPECT_EQ(a.failures(), 1u);
  EXPECT_EQ(a.artifacts().size(), 1u);
  const auto p = a.write(t.path());
  const auto j = json::parse(slurp(p));
  EXPECT_EQ(j.at("command"), "unit");
  EXPECT_EQ(j.at("configHash"), "abc");
  EXPECT_EQ(j.at("steps").size(), 2u);
  EXPECT_EQ(j.at("steps")[1].at("detail"), "boom");
  const std::string first = slurp(p);
  a.write(t.path());
  EXPECT_EQ(slurp(p), first);
}

TEST(Workers, EnvironmentVariable) {
  ::setenv("FEATPROBE_WORKERS", "3", 1);
  EXPECT_EQ(default_workers(), 3u);
  EXPECT_EQ(ExperimentConfig::from_json(json::object()).workers, 3u);
  ::setenv("FEATPROBE_WORKERS", "0", 1);
  EXPECT_GE(default_workers(), 1u);
  ::setenv("FEATPROBE_WORKERS", "many", 1);
  EXPECT_GE(default_workers(), 1u);
  ::unsetenv("FEATPROBE_WORKERS");
}

TEST(Synth, PitchGridAndStratifiedSplit) {
  EXPECT_EQ(synth_pitch(0), 220.0);
  EXPECT_EQ(synth_pitch(kSynthPitches - 1), 880.0);
  for (int k = 1; k < kSynthPitches; ++k) EXPECT_GT(synth_pitch(k), synth_pitch(k - 1));
  TempDir t;
  SynthOptions opt;
  opt.n = 60;
  opt.classes = 3;
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(t.path(), opt, log), kOk);
  const auto m = load_manifest(t / "manifest.jsonl");
  ASSERT_EQ(m.records.size(), 60u);
  std::map<std::pair<int, double>, std::pair<int, int>> cells;
  for (const auto& r : m.records) {
    auto& c = cells[{int(r.labels.at("class")), r.labels.at("pitchHz")}];
    (r.split == Split::train ? c.first : c.second)++;
  }
  EXPECT_EQ(cells.size(), 30u);
  for (const auto& [_, c] : cells) EXPECT_EQ(c.first + c.second, 2);
  const auto clip = dsp::read_wav(m.resolve(m.records[0]));
  EXPECT_EQ(clip.sampleRate, 16000);
  EXPECT_EQ(clip.samples.size(), 64000u);
  opt.classes = 4;
  EXPECT_THROW(cmd_synth(t / "bad", opt, log), Error);
}

TEST(Synth, DeterministicBytes) {
  TempDir a, b;
  SynthOptions opt;
  opt.n = 6;
  opt.seed = 11;
  std::ostringstream log;
  cmd_synth(a.path(), opt, log);
  cmd_synth(b.path(), opt, log);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "clips/00005.wav"), slurp(b / "clips/00005.wav"));
  opt.seed = 12;
  cmd_synth(b.path(), opt, log);
  EXPECT_NE(slurp(a / "clips/00005.wav"), slurp(b / "clips/00005.wav"));
}

TEST(Melspec, ThreeRecordsResumeAndForce) {
  TempDir t;
  SynthOptions opt;
  opt.n = 3;
  std::ostringstream log;
  cmd_synth(t / "data", opt, log);
  auto cfg = ExperimentConfig::from_json({{"manifest", "data/manifest.jsonl"}, {"outDir", "out"}}, t.path());
  ASSERT_EQ(cmd_melspec(cfg, log), kOk);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto b = ftb::read_bundle(melspec_path(cfg.outDir, i));
    EXPECT_EQ(b.get("melspec").dims(), (Dims{128, 128}));
  }
  const auto before = slurp(melspec_path(cfg.outDir, 1));
  fs::remove(melspec_path(cfg.outDir, 1));
  std::ostringstream second;
  ASSERT_EQ(cmd_melspec(cfg, second), kOk);
  EXPECT_NE(second.str().find("1 computed, 2 reused"), std::string::npos) << second.str();
  EXPECT_EQ(slurp(melspec_path(cfg.outDir, 1)), before);
  const auto ledger = json::parse(slurp(cfg.outDir / "ledger-melspec.json"));
  EXPECT_EQ(ledger.at("steps")[0].at("status"), "skipped");
  EXPECT_EQ(ledger.at("steps")[1].at("status"), "ok");
  cfg.force = true;
  std::ostringstream third;
  ASSERT_EQ(cmd_melspec(cfg, third), kOk);
  EXPECT_NE(third.str().find("3 computed"), std::string::npos);
  EXPECT_EQ(slurp(melspec_path(cfg.outDir, 1)), before);
}

TEST(Melspec, SampleRateMismatchFailsOnlyThatRecord) {
  TempDir t;
  SynthOptions opt;
  opt.n = 3;
  std::ostringstream log;
  cmd_synth(t / "data", opt, log);
  dsp::AudioClip odd;
  odd.sampleRate = 22050;
  odd.samples.assign(22050, 0.1);
  dsp::write_wav(odd, t / "data/clips/00001.wav");
  auto cfg = ExperimentConfig::from_json({{"manifest", "data/manifest.jsonl"}, {"outDir", "out"}}, t.path());
  std::ostringstream out;
  EXPECT_EQ(cmd_melspec(cfg, out), kDataFailure);
  EXPECT_NE(out.str().find("record 1 failed"), std::string::npos) << out.str();
  EXPECT_TRUE(fs::exists(melspec_path(cfg.outDir, 0)));
  EXPECT_FALSE(fs::exists(melspec_path(cfg.outDir, 1)));
  EXPECT_TRUE(fs::exists(melspec_path(cfg.outDir, 2)));
  EXPECT_EQ(json::parse(slurp(cfg.outDir / "ledger-melspec.json")).at("failures"), 1);
}

TEST_F(Corpus, EndToEndOutputsAndByteIdenticalRerun) {
  TempDir a, b;
  auto ja = base_config(a / "out");
  auto jb = base_config(b / "out");
  jb["workers"] = 2;
  run_all(config(ja));
  run_all(config(jb));
  for (const char* f : {"similarity/cka_s0.csv", "similarity/cka_s1.csv", "similarity/cka_mean.csv",
                        "similarity/lrR2_mean.csv", "similarity/cka_mean.svg", "decode/rows.csv",
                        "decode/aggregate.csv"}) {
    ASSERT_TRUE(fs::exists(a / "out" / f)) << f;
    EXPECT_EQ(slurp(a / "out" / f), slurp(b / "out" / f)) << f;
  }
  const auto grid = csv::read_file(a / "out/similarity/cka_mean.csv");
  ASSERT_EQ(grid.size(), 3u);
  EXPECT_EQ(grid[0], (std::vector<std::string>{"feature", "hc:meanPower", "hc:waveletStat(5,mean,overTime)", "noise"}));
  EXPECT_EQ(grid[1][0], "deep:Regular:conv3");
  const auto agg = csv::read_file(a / "out/decode/aggregate.csv");
  EXPECT_EQ(agg[0], (std::vector<std::string>{"mode", "featureName", "task", "metric", "n", "mean", "std", "formatted",
                                              "baseline"}));
  EXPECT_EQ(agg.size(), 1u + 2 * 2 + 2);
  std::set<std::string> modes;
  for (std::size_t i = 1; i < agg.size(); ++i) modes.insert(agg[i][0]);
  EXPECT_EQ(modes, (std::set<std::string>{"direct", "concat"}));
  const auto report = slurp(a / "out/report.md");
  EXPECT_NE(report.find("## Decoding"), std::string::npos);
  EXPECT_NE(report.find("## Similarity: cka"), std::string::npos);
  const auto deep = ftb::read_bundle(deep_path(a / "out", convnet::ArchId::Deformable, 1, convnet::Tap::conv3));
  EXPECT_EQ(deep.get("conv3").dims(), (Dims{24, 1080}));
  EXPECT_EQ(deep.meta().at("trained"), "false");
  EXPECT_EQ(ftb::read_bundle(a / "out/features/meanPower.ftb").get("meanPower").dims(), (Dims{24, 128}));
}

TEST_F(Corpus, RerunSkipsAndForceRecomputesIdentically) {
  TempDir a;
  auto cfg = config(base_config(a / "out"));
  run_all(cfg);
  const auto rows = slurp(a / "out/decode/rows.csv");
  const auto feat = slurp(a / "out/features/meanPower.ftb");
  std::ostringstream log;
  ASSERT_EQ(cmd_features(cfg, log), kOk);
  ASSERT_EQ(cmd_deepfeat(cfg, log), kOk);
  ASSERT_EQ(cmd_similarity(cfg, log), kOk);
  EXPECT_EQ(log.str(), "");
  for (const char* l : {"ledger-features.json", "ledger-deepfeat.json", "ledger-similarity.json"})
    for (const auto& s : json::parse(slurp(a / "out" / l)).at("steps")) EXPECT_EQ(s.at("status"), "skipped") << l;
  cfg.force = true;
  run_all(cfg);
  EXPECT_EQ(slurp(a / "out/decode/rows.csv"), rows);
  EXPECT_EQ(slurp(a / "out/features/meanPower.ftb"), feat);
}

TEST_F(Corpus, DeepFeaturesIndependentOfSourceTask) {
  TempDir a, b;
  auto ja = base_config(a / "out");
  auto jb = base_config(b / "out");
  ja["sourceTask"] = "class";
  jb["sourceTask"] = "pitchHz";
  std::ostringstream log;
  for (auto* j : {&ja, &jb}) {
    const auto cfg = config(*j);
    ASSERT_EQ(cmd_melspec(cfg, log), kOk);
    ASSERT_EQ(cmd_deepfeat(cfg, log), kOk);
  }
  const auto pa = deep_path(a / "out", convnet::ArchId::Regular, 0, convnet::Tap::conv3);
  const auto pb = deep_path(b / "out", convnet::ArchId::Regular, 0, convnet::Tap::conv3);
  const auto ba = ftb::read_bundle(pa), bb = ftb::read_bundle(pb);
  EXPECT_EQ(ba.get("conv3"), bb.get("conv3"));
  EXPECT_EQ(ba.meta().at("sourceTask"), "class");
  EXPECT_EQ(bb.meta().at("sourceTask"), "pitchHz");
}

TEST_F(Corpus, ImportedWeightsAreUsedAndMarkedTrained) {
  TempDir a;
  const auto arch = convnet::make_architecture(convnet::ArchId::Regular);
  convnet::InitConfig ic;
  ic.seed = 99;
  ftb::write_bundle(convnet::init_weights(arch, ic), a / "w.ftb");
  auto j = base_config(a / "out");
  j["architectures"] = {"Regular"};
  j["seeds"] = {0};
  j["weights"] = {{{"architecture", "Regular"}, {"seed", 0}, {"path", (a / "w.ftb").string()}}};
  const auto cfg = config(j);
  std::ostringstream log;
  ASSERT_EQ(cmd_melspec(cfg, log), kOk);
  ASSERT_EQ(cmd_deepfeat(cfg, log), kOk);
  const auto got = ftb::read_bundle(deep_path(cfg.outDir, convnet::ArchId::Regular, 0, convnet::Tap::conv3));
  EXPECT_EQ(got.meta().at("trained"), "true");
  const auto m = load_manifest(cfg.manifest);
  const auto dbs = load_spectrograms(cfg.outDir, m);
  const auto taps = convnet::forward_extract(arch, convnet::init_weights(arch, ic), dbs[5], {convnet::Tap::conv3});
  const auto row = convnet::flatten_policy(taps.at(convnet::Tap::conv3));
  const auto fm = FeatureMatrix::from_tensor(got.get("conv3"));
  for (std::size_t k = 0; k < row.size(); ++k) ASSERT_EQ(fm.values()(5, Eigen::Index(k)), row[k]);
}

TEST_F(Corpus, MissingInputsAreDataFailures) {
  TempDir a;
  const auto cfg = config(base_config(a / "out"));
  std::ostringstream log;
  try {
    cmd_features(cfg, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
  EXPECT_THROW(cmd_similarity(cfg, log), Error);
}

TEST_F(Corpus, CliExitCodesAndOverrides) {
  TempDir a;
  const fs::path log = a / "log.txt";
  EXPECT_EQ(run_cli("", log), 2);
  EXPECT_EQ(run_cli("frobnicate", log), 2);
  EXPECT_EQ(run_cli("features", log), 2);
  EXPECT_EQ(run_cli("features -c " + (a / "missing.json").string(), log), 2);
  auto j = base_config(a / "cfg-out");
  j["architectures"] = {"Regular"};
  j["seeds"] = {0};
  const auto cfgPath = write_config(a / "cfg.json", j);
  EXPECT_EQ(run_cli("features -c " + cfgPath.string(), log), 1);
  EXPECT_NE(slurp(log).find("run melspec first"), std::string::npos);
  const auto out = (a / "flag-out").string();
  EXPECT_EQ(run_cli("melspec -c " + cfgPath.string() + " -o " + out, log), 0) << slurp(log);
  EXPECT_TRUE(fs::exists(fs::path(out) / "melspec/00000.ftb"));
  EXPECT_FALSE(fs::exists(a / "cfg-out"));
  EXPECT_EQ(run_cli("deepfeat -c " + cfgPath.string() + " -o " + out + " --seeds 4 -w 2", log), 0) << slurp(log);
  EXPECT_TRUE(fs::exists(deep_path(out, convnet::ArchId::Regular, 4, convnet::Tap::conv3)));
  EXPECT_FALSE(fs::exists(deep_path(out, convnet::ArchId::Regular, 0, convnet::Tap::conv3)));
  j["architectures"] = {"Bogus"};
  EXPECT_EQ(run_cli("deepfeat -c " + write_config(a / "bad.json", j).string(), log), 2);
  EXPECT_EQ(run_cli("synth -o " + (a / "syn").string() + " -n 4 -s 2", log), 0);
  EXPECT_TRUE(fs::exists(a / "syn/manifest.jsonl"));
}

TEST_F(Corpus, DirectDecodeDefaultsToEverySet) {
  TempDir a;
  auto j = base_config(a / "out");
  j["architectures"] = {"Regular"};
  j["seeds"] = {0};
  j["tasks"] = {"class"};
  j["decode"].erase("sets");
  const auto cfg = config(j);
  std::ostringstream log;
  ASSERT_EQ(cmd_melspec(cfg, log), kOk);
  ASSERT_EQ(cmd_features(cfg, log), kOk);
  ASSERT_EQ(cmd_deepfeat(cfg, log), kOk);
  ASSERT_EQ(cmd_decode(cfg, log), kOk);
  std::vector<std::pair<std::string, std::string>> got;
  const auto agg = csv::read_file(a / "out/decode/aggregate.csv");
  for (std::size_t i = 1; i < agg.size(); ++i) got.emplace_back(agg[i][0], agg[i][1]);
  EXPECT_EQ(got, (std::vector<std::pair<std::string, std::string>>{
                     {"direct", "hc:meanPower"},
                     {"direct", "hc:waveletStat(5,mean,overTime)"},
                     {"direct", "deep:Regular:conv3"},
                     {"concat", "hc:meanPower + deep:Regular:conv3"}}));
}
