// Command-line front end. Talks to the library only through nexus.h.

#include <CLI11.hpp>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nexus/nexus.h"

namespace {

struct Shared {
  std::string config_path;
  std::string seed;
  std::string out = "nexus_out";
  std::map<std::string, std::string> overrides;  // schema key -> value
};

struct ConfigHandle {
  nexus_config* ptr = nullptr;
  ~ConfigHandle() { nexus_config_destroy(ptr); }
};

void add_shared(CLI::App* sub, Shared& s) {
  sub->add_option("--config", s.config_path, "INI file with [run] [model] [train] [synth] [data] [ablate] sections")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", s.seed, "global seed (same as --run.seed)");
  sub->add_option("--out", s.out, "output directory")->capture_default_str();
  auto* group = sub->add_option_group("Configuration keys", "override any key of the config file");
  for (std::size_t i = 0; i < nexus_config_key_count(); ++i) {
    const std::string key = nexus_config_key_name(i);
    group->add_option_function<std::string>(
        "--" + key, [&s, key](const std::string& v) { s.overrides[key] = v; }, nexus_config_key_help(i));
  }
}

int fail(int code) {
  std::fprintf(stderr, "error: %s\n", nexus_last_error());
  return code;
}

// File, then per-key flags, then the short aliases.
int build_config(const Shared& s, const std::map<std::string, std::string>& aliases, ConfigHandle& cfg) {
  if (int rc = nexus_config_create(&cfg.ptr)) return fail(rc);
  if (!s.config_path.empty())
    if (int rc = nexus_config_load(cfg.ptr, s.config_path.c_str())) return fail(rc);
  for (const auto& [k, v] : s.overrides)
    if (int rc = nexus_config_set(cfg.ptr, k.c_str(), v.c_str())) return fail(rc);
  for (const auto& [k, v] : aliases)
    if (int rc = nexus_config_set(cfg.ptr, k.c_str(), v.c_str())) return fail(rc);
  return 0;
}

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact spatiotemporal air-quality forecaster"};
  app.require_subcommand(1);
  app.fallthrough();  // -q may follow the subcommand
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  Shared shared;
  std::string days, output, input, data, checkpoint, predictions;

  auto* gen = app.add_subcommand("generate", "write a synthetic hourly CSV");
  add_shared(gen, shared);
  gen->add_option("--days", days, "days to simulate (same as --synth.n_days, minimum 30)");
  gen->add_option("-o,--output", output, "CSV path (default <out>/synthetic.csv)");

  auto* prep = app.add_subcommand("prepare", "quality control, 3-hour alignment, splits and normalization stats");
  add_shared(prep, shared);
  prep->add_option("-i,--input", input, "raw hourly CSV")->required()->check(CLI::ExistingFile);

  auto* trn = app.add_subcommand("train", "train and write model.nxs and train_log.csv");
  add_shared(trn, shared);
  trn->add_option("--data", data, "prepared directory (default: --out)");

  auto* ev = app.add_subcommand("evaluate", "score the test split and write metrics.csv");
  add_shared(ev, shared);
  ev->add_option("--data", data, "prepared directory (default: --out)");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint (default <out>/model.nxs)");
  ev->add_option("--predictions", predictions, "score this CSV (timestamp,site_id,co,no,so2) instead of a model")
      ->check(CLI::ExistingFile);

  auto* abl = app.add_subcommand("ablate", "train every ablation variant and write ablation.csv");
  add_shared(abl, shared);
  abl->add_option("--data", data, "prepared directory (default: --out)");

  auto* ana = app.add_subcommand("analyze", "diurnal, monthly, regime, correlation (and residual) tables");
  add_shared(ana, shared);
  ana->add_option("--data", data, "prepared directory (default: --out)");
  ana->add_option("--checkpoint", checkpoint, "also write residuals.csv for this checkpoint");

  auto* pred = app.add_subcommand("predict", "forecast the next step after the prepared data");
  add_shared(pred, shared);
  pred->add_option("--data", data, "prepared directory (default: --out)");
  pred->add_option("--checkpoint", checkpoint, "model checkpoint (default <out>/model.nxs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return NEXUS_ERR_INVALID_INPUT;
  }

  if (!quiet) nexus_set_log_callback(print_line, nullptr);

  std::map<std::string, std::string> aliases;
  if (!shared.seed.empty()) aliases["run.seed"] = shared.seed;
  if (!days.empty()) aliases["synth.n_days"] = days;
  ConfigHandle cfg;
  if (int rc = build_config(shared, aliases, cfg)) return rc;

  const std::string out = shared.out;
  const std::string data_dir = data.empty() ? out : data;
  const std::string default_ckpt = out + "/model.nxs";
  const char* ckpt = checkpoint.empty() ? nullptr : checkpoint.c_str();

  int rc = NEXUS_OK;
  if (gen->parsed()) {
    const std::string path = output.empty() ? out + "/synthetic.csv" : output;
    rc = nexus_generate(cfg.ptr, path.c_str());
  } else if (prep->parsed()) {
    rc = nexus_prepare(cfg.ptr, input.c_str(), out.c_str());
  } else if (trn->parsed()) {
    rc = nexus_train(cfg.ptr, data_dir.c_str(), out.c_str());
  } else if (ev->parsed()) {
    if (!ckpt && predictions.empty()) ckpt = default_ckpt.c_str();
    rc = nexus_evaluate(cfg.ptr, data_dir.c_str(), predictions.empty() ? ckpt : nullptr,
                        predictions.empty() ? nullptr : predictions.c_str(), out.c_str());
  } else if (abl->parsed()) {
    rc = nexus_ablate(cfg.ptr, data_dir.c_str(), out.c_str());
  } else if (ana->parsed()) {
    rc = nexus_analyze(cfg.ptr, data_dir.c_str(), ckpt, out.c_str());
  } else if (pred->parsed()) {
    rc = nexus_predict(cfg.ptr, data_dir.c_str(), ckpt ? ckpt : default_ckpt.c_str(), out.c_str());
  }
  return rc == NEXUS_OK ? 0 : fail(rc);
}
