#include "multimatch/multimatch.h"

#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "multimatch/error.hpp"
#include "multimatch/experiment.hpp"
#include "multimatch/plwm.hpp"

struct mm_experiment {
  multimatch::ExperimentConfig config;
  multimatch::ExperimentResult result;
  bool has_result = false;
};

namespace {

thread_local std::string last_error;

mm_status status_of(multimatch::ErrorKind kind) {
  using multimatch::ErrorKind;
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::UnsupportedConfig:
      return MM_ERR_CONFIG;
    case ErrorKind::Io:
      return MM_ERR_IO;
    case ErrorKind::Merge:
    case ErrorKind::MissingCell:
      return MM_ERR_MERGE;
    case ErrorKind::InvalidInput:
    case ErrorKind::EmptySet:
      return MM_ERR_INVALID_ARGUMENT;
    case ErrorKind::ContractViolation:
    case ErrorKind::Divergence:
      return MM_ERR_RUNTIME;
  }
  return MM_ERR_INTERNAL;
}

mm_status set_error(mm_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename Fn>
mm_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const multimatch::Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(MM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(MM_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(MM_ERR_INTERNAL, "unknown exception");
  }
}

mm_status copy_out(const std::string& text, char* buf, size_t cap, size_t* len) {
  if (len) *len = text.size();
  if (!buf && cap == 0) return MM_OK;
  if (!buf || cap < text.size() + 1)
    return set_error(MM_ERR_BUFFER_TOO_SMALL,
                     "buffer holds " + std::to_string(cap) + " bytes, " +
                         std::to_string(text.size() + 1) + " needed");
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return MM_OK;
}

mm_status null_arg(const char* name) {
  return set_error(MM_ERR_INVALID_ARGUMENT, std::string(name) + " is null");
}

}  // namespace

extern "C" {

const char* mm_version(void) { return "0.1.0"; }

const char* mm_last_error(void) { return last_error.c_str(); }

const char* mm_status_string(mm_status status) {
  switch (status) {
    case MM_OK: return "ok";
    case MM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MM_ERR_CONFIG: return "configuration error";
    case MM_ERR_IO: return "i/o error";
    case MM_ERR_RUNTIME: return "runtime error";
    case MM_ERR_MERGE: return "merge error";
    case MM_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case MM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

size_t mm_config_key_count(void) { return multimatch::config_keys().size(); }

mm_status mm_config_key(size_t index, const char** name, const char** default_value,
                        const char** help) {
  const auto& keys = multimatch::config_keys();
  if (index >= keys.size())
    return set_error(MM_ERR_INVALID_ARGUMENT, "config key index out of range");
  if (name) *name = keys[index].name;
  if (default_value) *default_value = keys[index].default_value;
  if (help) *help = keys[index].help;
  return MM_OK;
}

mm_status mm_experiment_new(mm_experiment** out) {
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new mm_experiment();
    return MM_OK;
  });
}

void mm_experiment_free(mm_experiment* experiment) { delete experiment; }

mm_status mm_experiment_load(mm_experiment* experiment, const char* path) {
  if (!experiment) return null_arg("experiment");
  if (!path) return null_arg("path");
  return guarded([&] {
    experiment->config = multimatch::ExperimentConfig::load(path);
    experiment->has_result = false;
    return MM_OK;
  });
}

mm_status mm_experiment_parse(mm_experiment* experiment, const char* text) {
  if (!experiment) return null_arg("experiment");
  if (!text) return null_arg("text");
  return guarded([&] {
    experiment->config = multimatch::ExperimentConfig::parse(text);
    experiment->has_result = false;
    return MM_OK;
  });
}

mm_status mm_experiment_set(mm_experiment* experiment, const char* key, const char* value) {
  if (!experiment) return null_arg("experiment");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded([&] {
    experiment->config.set(key, value);
    return MM_OK;
  });
}

mm_status mm_experiment_get(const mm_experiment* experiment, const char* key, char* buf,
                            size_t cap, size_t* len) {
  if (!experiment) return null_arg("experiment");
  if (!key) return null_arg("key");
  return guarded([&] { return copy_out(experiment->config.get(key), buf, cap, len); });
}

mm_status mm_experiment_validate(const mm_experiment* experiment) {
  if (!experiment) return null_arg("experiment");
  return guarded([&] {
    try {
      experiment->config.validate();
    } catch (const multimatch::Error& e) {
      if (e.kind() == multimatch::ErrorKind::Io) throw;
      return set_error(MM_ERR_CONFIG, e.what());
    }
    return MM_OK;
  });
}

mm_status mm_experiment_run(mm_experiment* experiment, unsigned jobs) {
  if (!experiment) return null_arg("experiment");
  if (mm_status s = mm_experiment_validate(experiment); s != MM_OK) return s;
  return guarded([&] {
    experiment->has_result = false;
    experiment->result = multimatch::run_experiment(experiment->config, jobs == 0 ? 1 : jobs);
    experiment->has_result = true;
    return MM_OK;
  });
}

size_t mm_experiment_run_count(const mm_experiment* experiment) {
  return experiment && experiment->has_result ? experiment->result.runs.size() : 0;
}

size_t mm_experiment_failed_count(const mm_experiment* experiment) {
  return experiment && experiment->has_result ? experiment->result.failed : 0;
}

mm_status mm_experiment_run_info(const mm_experiment* experiment, size_t index,
                                 mm_run_info* out) {
  if (!experiment) return null_arg("experiment");
  if (!out) return null_arg("out");
  if (!experiment->has_result || index >= experiment->result.runs.size())
    return set_error(MM_ERR_INVALID_ARGUMENT, "run index out of range");
  const auto& r = experiment->result.runs[index];
  out->run_id = r.run_id.c_str();
  out->algorithm = r.algorithm.c_str();
  out->setup = r.setup.c_str();
  out->seed = r.seed;
  out->failed = r.failed ? 1 : 0;
  out->failure = r.failure.c_str();
  out->epochs = r.epochs.size();
  out->final_test_error = r.final_test_error;
  return MM_OK;
}

mm_status mm_experiment_summary(const mm_experiment* experiment, char* buf, size_t cap,
                                size_t* len) {
  if (!experiment) return null_arg("experiment");
  if (!experiment->has_result) return set_error(MM_ERR_INVALID_ARGUMENT, "nothing has run yet");
  return guarded([&] { return copy_out(multimatch::summary_table(experiment->result), buf, cap, len); });
}

mm_status mm_rank(const char* const* inputs, size_t num_inputs, const char* out_dir, char* buf,
                  size_t cap, size_t* len) {
  if (!inputs && num_inputs) return null_arg("inputs");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < num_inputs; ++i) {
      if (!inputs[i]) return null_arg("inputs[i]");
      paths.emplace_back(inputs[i]);
    }
    multimatch::rank_results(paths, out_dir);
    std::ifstream in(std::filesystem::path(out_dir) / "ranks.csv");
    std::stringstream text;
    text << in.rdbuf();
    return copy_out(text.str(), buf, cap, len);
  });
}

mm_status mm_long_tail_counts(size_t num_classes, double largest, double gamma_imb,
                              size_t unlabeled_multiplier, size_t* labeled, size_t* unlabeled) {
  if (!labeled) return null_arg("labeled");
  if (!unlabeled) return null_arg("unlabeled");
  return guarded([&] {
    multimatch::LongTailSpec spec;
    spec.num_classes = num_classes;
    spec.largest = largest;
    spec.gamma_imb = gamma_imb;
    spec.unlabeled_multiplier = unlabeled_multiplier;
    const auto counts = multimatch::long_tail_counts(spec);
    for (size_t c = 0; c < num_classes; ++c) {
      labeled[c] = counts.labeled[c];
      unlabeled[c] = counts.unlabeled[c];
    }
    return MM_OK;
  });
}

mm_status mm_plwm_weight(int agree, int multi_i, int multi_j, int free_multi, double w_d,
                         double* weight) {
  if (!weight) return null_arg("weight");
  return guarded([&] {
    multimatch::FilterTrace trace;
    trace.agree = agree != 0;
    trace.multi_i = multi_i != 0;
    trace.multi_j = multi_j != 0;
    trace.free_multi = free_multi != 0;
    // Labels only matter for the pseudo-label, not the weight; agreement is
    // carried by the trace.
    *weight = multimatch::combine(0, trace, 0, trace.agree ? 0 : 1, w_d).weight;
    return MM_OK;
  });
}

}  // extern "C"
