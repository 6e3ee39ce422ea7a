#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "featprobe/pipeline.hpp"

namespace fp = featprobe;
namespace pl = featprobe::pipeline;

namespace {

struct Overrides {
  std::string config, manifest, out;
  std::optional<std::size_t> workers;
  std::vector<std::uint64_t> seeds;
  bool force = false;
  bool csv = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool configRequired) {
  auto* c = cmd->add_option("-c,--config", o.config, "experiment config (JSON)");
  if (configRequired) c->required();
  cmd->add_option("-o,--out", o.out, "output directory (overrides config)");
  cmd->add_option("-w,--workers", o.workers, "worker threads (overrides FEATPROBE_WORKERS and config)");
  cmd->add_option("--seeds", o.seeds, "initialization seeds (overrides config)");
  cmd->add_flag("-f,--force", o.force, "recompute existing outputs");
  cmd->add_flag("--csv", o.csv, "also write feature matrices as CSV");
}

pl::ExperimentConfig resolve(const Overrides& o) {
  auto cfg = o.config.empty() ? pl::ExperimentConfig::from_json(nlohmann::json::object())
                              : pl::ExperimentConfig::load(o.config);
  if (!o.manifest.empty()) cfg.manifest = o.manifest;
  if (!o.out.empty()) cfg.outDir = o.out;
  if (o.workers) cfg.workers = std::max<std::size_t>(1, *o.workers);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  cfg.force = cfg.force || o.force;
  cfg.csv = cfg.csv || o.csv;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"featprobe: hand-crafted and deep audio feature probing"};
  app.require_subcommand(1);

  Overrides o;
  pl::SynthOptions synth;
  std::string synthOut = "synth";
  auto* synthCmd = app.add_subcommand("synth", "generate a labelled synthetic clip corpus");
  synthCmd->add_option("-o,--out", synthOut, "output directory");
  synthCmd->add_option("-n,--count", synth.n, "number of clips");
  synthCmd->add_option("-s,--seed", synth.seed, "generator seed");
  synthCmd->add_option("--classes", synth.classes, "2 (tones, chirps) or 3 (+ noise bursts)");
  synthCmd->add_option("--sample-rate", synth.sampleRate, "sample rate in Hz");

  auto* mel = app.add_subcommand("melspec", "compute dB mel spectrograms for every manifest record");
  add_common(mel, o, false);
  mel->add_option("-m,--manifest", o.manifest, "dataset manifest (JSON lines)");

  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(const pl::ExperimentConfig&, std::ostream&);
  };
  const Cmd cmds[] = {
      {"features", "compute hand-crafted feature matrices", pl::cmd_features},
      {"deepfeat", "extract deep features from conv nets", pl::cmd_deepfeat},
      {"similarity", "compute similarity grids", pl::cmd_similarity},
      {"decode", "train linear decoders on feature sets", pl::cmd_decode},
      {"report", "collate results into report.md", pl::cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o, true);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? pl::kOk : pl::kConfigError;
  }

  try {
    if (synthCmd->parsed()) return pl::cmd_synth(synthOut, synth, std::cout);
    if (mel->parsed()) {
      require(!o.manifest.empty() || !o.config.empty(), fp::Errc::config, "melspec needs --manifest or --config");
      return pl::cmd_melspec(resolve(o), std::cout);
    }
    for (const auto& [sub, c] : subs)
      if (sub->parsed()) return c->run(resolve(o), std::cout);
  } catch (const fp::Error& e) {
    std::cerr << "featprobe: " << e.what() << "\n";
    return e.code() == fp::Errc::config ? pl::kConfigError : pl::kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "featprobe: " << e.what() << "\n";
    return pl::kDataFailure;
  }
  return pl::kConfigError;
}
