#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "nexus/config.hpp"
#include "nexus/error.hpp"

using namespace nexus;

TEST_CASE("defaults survive an ini round trip") {
  const RunConfig c;
  const auto text = c.to_ini();
  CHECK(RunConfig::from_ini(text).to_ini() == text);
  CHECK(text.find("[model]\nsites = 4\n") != std::string::npos);
}

TEST_CASE("every schema key round trips through set and get") {
  RunConfig c;
  std::set<std::string> names;
  for (const auto& k : config_schema()) {
    CHECK(names.insert(k.name).second);
    CHECK_FALSE(k.help.empty());
    const auto v = c.get(k.name);
    c.set(k.name, v);
    CHECK(c.get(k.name) == v);
  }
}

TEST_CASE("file values and types are parsed") {
  const auto c = RunConfig::from_ini(
      "; comment\n[run]\nseed = 9\n[model]\nd_hidden = 12\noutput_mode = pooled\nresidual = false\n"
      "[train]\neta0 = 0.005\n[synth]\nstart = 2019-06-01T00:00:00Z\n[data]\nsplit_mode = fractions\n"
      "[ablate]\nvariants = full, single_nanoblock\n");
  CHECK(c.seed == 9);
  CHECK(c.model.d_hidden == 12);
  CHECK(c.model.output_mode == OutputMode::kPooled);
  CHECK_FALSE(c.model.residual);
  CHECK(c.train.eta0 == 0.005);
  CHECK(c.synth.start == from_civil(2019, 6, 1));
  CHECK(c.data.split.mode == SplitBoundaries::Mode::kFractions);
  CHECK(c.ablate.variants == std::vector<std::string>{"full", "single_nanoblock"});
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(RunConfig::from_ini("[model]\nd_hiden = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[modle]\nd_hidden = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("seed = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[model]\nd_hidden = 3x\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[model]\nd_hidden = -3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[model]\npooling = max\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[train]\neta0 = nan\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[ablate]\nvariants = full,nope\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_ini("[model\n"), ConfigError);
  try {
    RunConfig::from_ini("[model]\npooling = max\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.pooling") != std::string::npos);
  }
}

TEST_CASE("a failed apply leaves the config untouched") {
  RunConfig c;
  c.model.d_hidden = 20;
  CHECK_THROWS_AS(c.apply_ini("[model]\nd_hidden = 30\nbogus = 1\n"), ConfigError);
  CHECK(c.model.d_hidden == 20);
  c.apply_ini("[model]\nd_hidden = 30\n");
  CHECK(c.model.d_hidden == 30);
}

TEST_CASE("finalize propagates the seed and validates sections") {
  RunConfig c;
  c.seed = 123;
  c.finalize();
  CHECK(c.synth.seed == 123);
  CHECK(c.train.seed == 123);

  RunConfig bad;
  bad.synth.n_days = 10;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
  bad = {};
  bad.train.patience = 99;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
  bad = {};
  bad.model.patch_len = 500;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
  bad = {};
  bad.data.split.train_frac = 0.9;
  bad.data.split.mode = SplitBoundaries::Mode::kFractions;
  CHECK_THROWS_AS(bad.finalize(), ConfigError);
}
