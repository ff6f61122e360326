#include "tracekit.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "core/common.hpp"
#include "core/dataset.hpp"
#include "core/diagnostics.hpp"
#include "core/kernels.hpp"
#include "core/models.hpp"
#include "core/pipeline.hpp"
#include "core/transport.hpp"

struct tk_dataset {
  tracekit::Dataset ds;
};

struct tk_predictor {
  tracekit::Predictor p;
};

namespace {

thread_local std::string t_last_error;

tk_status status_of(const tracekit::Error& e) {
  switch (e.kind()) {
    case tracekit::ErrorKind::kUsage:
      return TK_ERR_INVALID_ARGUMENT;
    case tracekit::ErrorKind::kParse:
      return TK_ERR_PARSE;
    case tracekit::ErrorKind::kNumeric:
      return TK_ERR_NUMERIC;
    case tracekit::ErrorKind::kIo:
      return TK_ERR_IO;
  }
  return TK_ERR_INTERNAL;
}

template <typename Fn>
tk_status guarded(Fn&& fn) {
  try {
    fn();
  } catch (const tracekit::Error& e) {
    t_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return TK_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unrecognized failure";
    return TK_ERR_INTERNAL;
  }
  t_last_error.clear();
  return TK_OK;
}

void require(bool ok, const char* what) {
  if (!ok) tracekit::fail_usage(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

tracekit::RunConfig config_of(const char* config_json) {
  return tracekit::parse_run_config_text(
      config_json == nullptr ? std::string() : std::string(config_json));
}

tracekit::FileFormat format_of(const char* format, const std::string& path) {
  if (format == nullptr || *format == '\0') {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
      return tracekit::FileFormat::kCsv;
    }
    return tracekit::FileFormat::kJson;
  }
  return tracekit::parse_format(format);
}

}  // namespace

extern "C" {

const char* tk_version(void) { return "0.1.0"; }

const char* tk_last_error(void) { return t_last_error.c_str(); }

void tk_string_free(char* s) { std::free(s); }

tk_status tk_run_command(const char* command, const char* config_json,
                         char** result_json) {
  return guarded([&] {
    require(command != nullptr && *command != '\0', "command must be given");
    require(result_json != nullptr, "result_json must be given");
    const std::string out = tracekit::run_command(
        command, config_json == nullptr ? std::string() : config_json);
    *result_json = dup_string(out);
  });
}

tk_status tk_dataset_load(const char* path, const char* format,
                          int32_t class_count, tk_dataset** out) {
  return guarded([&] {
    require(path != nullptr && *path != '\0', "path must be given");
    require(out != nullptr, "out must be given");
    auto handle = std::make_unique<tk_dataset>();
    handle->ds =
        tracekit::load_dataset(path, format_of(format, path), class_count);
    *out = handle.release();
  });
}

tk_status tk_dataset_save(const tk_dataset* ds, const char* path,
                          const char* format) {
  return guarded([&] {
    require(ds != nullptr, "dataset handle must be given");
    require(path != nullptr && *path != '\0', "path must be given");
    tracekit::save_dataset(ds->ds, path, format_of(format, path));
  });
}

tk_status tk_dataset_rows(const tk_dataset* ds, int64_t* out) {
  return guarded([&] {
    require(ds != nullptr, "dataset handle must be given");
    require(out != nullptr, "out must be given");
    *out = ds->ds.rows();
  });
}

tk_status tk_dataset_cols(const tk_dataset* ds, int64_t* out) {
  return guarded([&] {
    require(ds != nullptr, "dataset handle must be given");
    require(out != nullptr, "out must be given");
    *out = ds->ds.cols();
  });
}

void tk_dataset_free(tk_dataset* ds) { delete ds; }

tk_status tk_synth_world(const char* config_json, tk_dataset** source,
                         tk_dataset** target) {
  return guarded([&] {
    require(source != nullptr && target != nullptr,
            "source and target out-parameters must be given");
    const tracekit::RunConfig cfg = config_of(config_json);
    tracekit::ShiftConfig world = cfg.world;
    world.seed = tracekit::seed_plan(cfg.seed).world;
    tracekit::ShiftedPair pair = tracekit::make_world(world);
    auto src = std::make_unique<tk_dataset>();
    auto tgt = std::make_unique<tk_dataset>();
    src->ds = std::move(pair.source);
    tgt->ds = std::move(pair.target);
    *source = src.release();
    *target = tgt.release();
  });
}

tk_status tk_predictor_train(const char* config_json, const tk_dataset* ds,
                             tk_predictor** out) {
  return guarded([&] {
    require(ds != nullptr, "dataset handle must be given");
    require(out != nullptr, "out must be given");
    const tracekit::RunConfig cfg = config_of(config_json);
    tracekit::TrainConfig tc = cfg.train;
    tc.seed = tracekit::seed_plan(cfg.seed).train_q;
    auto handle = std::make_unique<tk_predictor>();
    handle->p = tracekit::train(cfg.model, ds->ds, tc);
    *out = handle.release();
  });
}

tk_status tk_predictor_load(const char* path, tk_predictor** out) {
  return guarded([&] {
    require(path != nullptr && *path != '\0', "path must be given");
    require(out != nullptr, "out must be given");
    auto handle = std::make_unique<tk_predictor>();
    handle->p = tracekit::load_predictor(path);
    *out = handle.release();
  });
}

tk_status tk_predictor_save(const tk_predictor* p, const char* path) {
  return guarded([&] {
    require(p != nullptr, "predictor handle must be given");
    require(path != nullptr && *path != '\0', "path must be given");
    tracekit::save_predictor(p->p, path);
  });
}

void tk_predictor_free(tk_predictor* p) { delete p; }

tk_status tk_diagnose(const tk_predictor* incumbent,
                      const tk_predictor* replacement,
                      const tk_dataset* source, const tk_dataset* target,
                      const tk_dataset* test, const char* config_json,
                      char** report_json) {
  return guarded([&] {
    require(incumbent != nullptr && replacement != nullptr,
            "both predictor handles must be given");
    require(source != nullptr && target != nullptr,
            "both dataset handles must be given");
    require(report_json != nullptr, "report_json must be given");
    const tracekit::RunConfig cfg = config_of(config_json);
    const tracekit::SingleRunResult run = tracekit::run_bound(
        incumbent->p, replacement->p, source->ds, target->ds,
        test == nullptr ? nullptr : &test->ds, cfg);
    *report_json = dup_string(tracekit::report_to_json(run.report).dump(2) + "\n");
  });
}

tk_status tk_sinkhorn_divergence(const tk_dataset* a, const tk_dataset* b,
                                 const char* config_json, double* out) {
  return guarded([&] {
    require(a != nullptr && b != nullptr, "both dataset handles must be given");
    require(out != nullptr, "out must be given");
    const tracekit::RunConfig cfg = config_of(config_json);
    *out = tracekit::sinkhorn_divergence(a->ds.features, b->ds.features,
                                         cfg.transport);
  });
}

tk_status tk_mmd(const tk_dataset* a, const tk_dataset* b,
                 const char* config_json, double* out) {
  return guarded([&] {
    require(a != nullptr && b != nullptr, "both dataset handles must be given");
    require(out != nullptr, "out must be given");
    const tracekit::RunConfig cfg = config_of(config_json);
    *out = tracekit::mmd(a->ds.features, b->ds.features, cfg.kernel).mmd;
  });
}

}  // extern "C"
