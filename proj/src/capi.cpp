#include "nexus/nexus.h"

#include <cstring>
#include <new>
#include <optional>
#include <string>

#include "nexus/commands.hpp"
#include "nexus/error.hpp"

struct nexus_config {
  nexus::RunConfig run;
};

struct nexus_model {
  nexus::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

nexus_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return NEXUS_OK;
  } catch (const nexus::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return NEXUS_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
  if (!p) throw nexus::InputError(std::string(what) + " must not be NULL");
}

std::optional<std::filesystem::path> opt_path(const char* p) {
  if (!p || !*p) return std::nullopt;
  return std::filesystem::path(p);
}

// Steps run on a finalized copy so the handle keeps the caller's values.
nexus::RunConfig finalized(const nexus_config* config) {
  require(config, "config");
  auto run = config->run;
  run.finalize();
  return run;
}

}  // namespace

extern "C" {

const char* nexus_last_error(void) { return g_last_error.c_str(); }

void nexus_set_log_callback(nexus_log_fn fn, void* user) {
  g_log_fn = fn;
  g_log_user = user;
  if (fn) {
    nexus::cmd::set_log_sink([](const std::string& line) { g_log_fn(line.c_str(), g_log_user); });
  } else {
    nexus::cmd::set_log_sink({});
  }
}

int nexus_config_create(nexus_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new nexus_config{};
  });
}

void nexus_config_destroy(nexus_config* config) { delete config; }

int nexus_config_load(nexus_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    config->run.apply_file(path);
  });
}

int nexus_config_set(nexus_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->run.set(key, value);
  });
}

int nexus_config_get(const nexus_config* config, const char* key, char* buf, size_t len, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    const auto v = config->run.get(key);
    if (needed) *needed = v.size() + 1;
    if (!buf || len < v.size() + 1)
      throw nexus::InputError("buffer of " + std::to_string(len) + " bytes is too small for " + key);
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

int nexus_config_save(const nexus_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    config->run.save(path);
  });
}

size_t nexus_config_key_count(void) { return nexus::config_schema().size(); }

const char* nexus_config_key_name(size_t index) {
  const auto& s = nexus::config_schema();
  return index < s.size() ? s[index].name.c_str() : nullptr;
}

const char* nexus_config_key_help(size_t index) {
  const auto& s = nexus::config_schema();
  return index < s.size() ? s[index].help.c_str() : nullptr;
}

int nexus_config_parameter_count(const nexus_config* config, size_t* out) {
  return guarded([&] {
    require(out, "out");
    require(config, "config");
    config->run.model.validate();
    *out = nexus::count_parameters(config->run.model);
  });
}

int nexus_generate(const nexus_config* config, const char* csv_out) {
  return guarded([&] {
    require(csv_out, "csv_out");
    nexus::cmd::generate(finalized(config), csv_out);
  });
}

int nexus_prepare(const nexus_config* config, const char* raw_csv, const char* out_dir) {
  return guarded([&] {
    require(raw_csv, "raw_csv");
    require(out_dir, "out_dir");
    nexus::cmd::prepare(finalized(config), raw_csv, out_dir);
  });
}

int nexus_train(const nexus_config* config, const char* prepared_dir, const char* out_dir) {
  return guarded([&] {
    require(prepared_dir, "prepared_dir");
    require(out_dir, "out_dir");
    nexus::cmd::train(finalized(config), prepared_dir, out_dir);
  });
}

int nexus_evaluate(const nexus_config* config, const char* prepared_dir, const char* checkpoint,
                   const char* predictions_csv, const char* out_dir) {
  return guarded([&] {
    require(prepared_dir, "prepared_dir");
    require(out_dir, "out_dir");
    nexus::cmd::evaluate(finalized(config), prepared_dir, opt_path(checkpoint), opt_path(predictions_csv), out_dir);
  });
}

int nexus_ablate(const nexus_config* config, const char* prepared_dir, const char* out_dir) {
  return guarded([&] {
    require(prepared_dir, "prepared_dir");
    require(out_dir, "out_dir");
    nexus::cmd::ablate(finalized(config), prepared_dir, out_dir);
  });
}

int nexus_analyze(const nexus_config* config, const char* prepared_dir, const char* checkpoint, const char* out_dir) {
  return guarded([&] {
    require(prepared_dir, "prepared_dir");
    require(out_dir, "out_dir");
    nexus::cmd::analyze(finalized(config), prepared_dir, opt_path(checkpoint), out_dir);
  });
}

int nexus_predict(const nexus_config* config, const char* prepared_dir, const char* checkpoint, const char* out_dir) {
  return guarded([&] {
    require(prepared_dir, "prepared_dir");
    require(checkpoint, "checkpoint");
    require(out_dir, "out_dir");
    nexus::cmd::predict(finalized(config), prepared_dir, checkpoint, out_dir);
  });
}

int nexus_model_load(const char* checkpoint, nexus_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = new nexus_model{nexus::load_checkpoint(checkpoint)};
  });
}

void nexus_model_destroy(nexus_model* model) { delete model; }

int nexus_model_shape(const nexus_model* model, size_t* sites, size_t* lookback, size_t* features, size_t* outputs) {
  return guarded([&] {
    require(model, "model");
    const auto& c = model->ckpt.config;
    if (sites) *sites = c.sites;
    if (lookback) *lookback = c.lookback;
    if (features) *features = c.features;
    if (outputs) *outputs = c.output_size();
  });
}

int nexus_model_parameter_count(const nexus_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->ckpt.params.scalar_count();
  });
}

int nexus_model_forward(const nexus_model* model, const double* x, size_t n, double* out) {
  return guarded([&] {
    require(model, "model");
    require(x, "x");
    require(out, "out");
    if (n == 0) throw nexus::InputError("n must be positive");
    const auto& c = model->ckpt.config;
    const std::size_t per = c.sites * c.lookback * c.features;
    nexus::Tape tape(false);
    std::mt19937_64 unused(0);
    const auto xa = nexus::DiffArray::from({n, c.sites, c.lookback, c.features}, std::vector<double>(x, x + n * per));
    const auto res = nexus::forward(tape, xa, model->ckpt.params, c, false, unused);
    std::memcpy(out, res.prediction.values().data(), res.prediction.size() * sizeof(double));
  });
}

}  // extern "C"
