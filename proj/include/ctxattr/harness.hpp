#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ctxattr/attribution.hpp"
#include "ctxattr/engine.hpp"
#include "ctxattr/errors.hpp"
#include "ctxattr/metrics.hpp"
#include "ctxattr/records.hpp"
#include "ctxattr/synthesis.hpp"
#include "ctxattr/tensor.hpp"

// Manifest-driven orchestration: validation, variant synthesis, the builtin
// model path, external ingestion, analysis and reports.
namespace ctxattr::harness {

// ---- manifest ---------------------------------------------------------------

// An error's message without its leading "Kind: " tag.
std::string bare_message(const Error& e);

struct Diagnostic {
  std::size_t line = 0;  // 1-based manifest line; 0 when not tied to a line
  std::string sample_id;
  std::string kind;      // error tag such as ShapeError or DuplicateId
  std::string message;

  std::string to_string() const;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<SampleRecord> samples;
  std::vector<std::size_t> lines;  // manifest line of each sample
  int class_count = 0;
};

struct ValidationReport {
  Manifest manifest;
  std::vector<Diagnostic> diagnostics;

  bool ok() const noexcept { return diagnostics.empty(); }
};

// Line-delimited JSON, one object per non-blank line:
//   {"sample_id", "image_path", "mask_path", "class_id", "class_name"?}
// Relative paths resolve against the manifest's directory. Checks id
// uniqueness, file existence and decoding, image/mask dimensions and the
// class range [0, class_count). Without `class_count` the range is
// [0, max class_id]. Throws IoError only when the manifest itself is
// unreadable.
ValidationReport validate_manifest(const std::filesystem::path& path,
                                   std::optional<int> class_count = std::nullopt);

class ManifestError : public Error {
 public:
  explicit ManifestError(std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

// validate_manifest, throwing ManifestError on any diagnostic.
Manifest load_manifest(const std::filesystem::path& path, std::optional<int> class_count = std::nullopt);

// ---- configuration ----------------------------------------------------------

enum class ModelSource { kBuiltin, kExternal };

std::vector<std::string> default_variants();

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<std::string> variants = default_variants();
  int severity = 3;
  std::filesystem::path network;         // builtin source
  std::string model_id;                  // builtin source; defaults to the network file stem
  std::filesystem::path external_preds;  // external source
  std::filesystem::path external_maps;
  attr::MethodSpec method;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  double context_threshold = metrics::kDefaultContextThreshold;
  std::size_t jobs = 0;  // 0 selects the hardware concurrency
  std::optional<int> class_count;

  ModelSource source() const noexcept {
    return external_preds.empty() ? ModelSource::kBuiltin : ModelSource::kExternal;
  }
  std::string resolved_model_id() const;

  // Throws ParamError on an empty or unknown variant list, a severity outside
  // 1..5, a threshold outside [0, 1), or a missing model source.
  void validate() const;
  std::vector<synth::VariantSpec> variant_specs() const;

  // Every field that can change results; `out` and `jobs` are excluded so
  // reports do not depend on them.
  nlohmann::json to_json() const;
  // 16 lowercase hex digits of the 64-bit FNV-1a hash of to_json().dump().
  std::string hash() const;

  // Keys mirror the field names. Relative paths resolve against `base`.
  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base);
  static RunConfig load(const std::filesystem::path& path);
};

std::size_t resolve_jobs(std::size_t jobs);

// ---- workers ----------------------------------------------------------------

// Calls fn(i) once for every i in [0, n) on up to `jobs` threads. Callers
// write results into slot i, so output order never depends on scheduling.
// If any call throws, the exception of the lowest failing index is rethrown
// after all calls have finished.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// ---- synthesis stage --------------------------------------------------------

// Builds one variant of `sample`. Donor backgrounds are resampled to the
// sample's size when their dimensions differ.
ImageTensor synthesize_variant(const synth::VariantSpec& variant, const SampleRecord& sample,
                               const ImageTensor& img, const BinaryMask& mask,
                               std::span<const SampleRecord> pool, int class_count, std::uint64_t seed);

struct VariantSet {
  std::vector<std::string> variants;
  std::vector<SampleRecord> samples;
  // Slot sample * variants.size() + variant.
  std::vector<ImageTensor> images;

  const ImageTensor& at(std::size_t sample, std::size_t variant) const {
    return images.at(sample * variants.size() + variant);
  }
};

// Donors are drawn from `samples` itself.
VariantSet synthesize_all(std::span<const SampleRecord> samples, std::span<const synth::VariantSpec> variants,
                          int class_count, std::uint64_t seed, std::size_t jobs);

// Writes <dir>/<variant>/<sample_id>.png for every image.
void write_variant_set(const VariantSet& set, const std::filesystem::path& dir, std::size_t jobs);

// ---- interchange ------------------------------------------------------------

nlohmann::json to_json(const PredictionRecord& p);
// Requires the six schema fields with the right types; other fields,
// including any `correct` flag, are ignored. Throws SchemaError.
PredictionRecord prediction_from_json(const nlohmann::json& doc);

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(std::span<const PredictionRecord> preds, const std::filesystem::path& path);

std::filesystem::path map_path(const std::filesystem::path& maps_dir, const std::string& variant,
                               const std::string& sample_id);
std::filesystem::path sidecar_path(const std::filesystem::path& map);

// ---- builtin model ----------------------------------------------------------

struct BuiltinOptions {
  std::string model_id;
  attr::MethodSpec method;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool write_images = true;
};

// Synthesizes, classifies and attributes every (sample, variant), writing the
// interchange bundle under `out`: predictions.jsonl, maps/<variant>/<id>.attr
// with a .json sidecar, and (optionally) variants/<variant>/<id>.png.
// Inputs are resampled to the network's input size when they differ.
// Attribution targets the predicted class.
std::vector<PredictionRecord> run_builtin(std::span<const SampleRecord> samples,
                                          std::span<const synth::VariantSpec> variants, const nn::Network& net,
                                          const BuiltinOptions& options, const std::filesystem::path& out);

// ---- ingestion and analysis -------------------------------------------------

struct JoinedRecord {
  PredictionRecord prediction;
  std::filesystem::path map;
  std::size_t sample = 0;  // index into the analysed samples
};

struct Reconciliation {
  std::size_t prediction_rows = 0;
  std::size_t skipped_filtered = 0;  // rows for samples removed by the filter
  std::size_t skipped_variant = 0;   // rows for variants not requested
  std::size_t joined = 0;
  std::size_t expected = 0;
};

struct IngestResult {
  std::vector<JoinedRecord> records;  // sample-major, variants in request order
  Reconciliation reconciliation;
};

// Joins prediction rows with maps at maps_dir/<variant>/<sample_id>.attr.
// Throws SchemaError (malformed or duplicate row, label disagreeing with the
// manifest), OrphanRecordError (sample_id absent from the manifest),
// MissingVariantError (a requested pair has no row) and MissingMapError.
IngestResult ingest_external(const std::filesystem::path& preds, const std::filesystem::path& maps_dir,
                             const Manifest& manifest, std::span<const SampleRecord> samples,
                             std::span<const std::string> variants);

struct StageCount {
  std::string stage;
  std::size_t in = 0;
  std::size_t filtered_out = 0;
  std::size_t reported = 0;

  bool balanced() const noexcept { return in == filtered_out + reported; }
};

struct Analysis {
  std::vector<PredictionRecord> predictions;      // every joined row
  std::vector<metrics::AttributionRecord> records;  // rows with attribution mass
  std::vector<std::pair<std::string, std::string>> zero_mass;  // (sample_id, variant)
  std::vector<std::pair<std::string, std::string>> resized;    // (sample_id, variant)
  std::vector<StageCount> accounting;
};

// Reads every joined map, resamples it to the mask when sizes differ, and
// scores it. Maps without attribution mass are excluded from volume
// statistics and listed in `zero_mass`. The method name comes from the map's
// sidecar when present, else `default_method`.
Analysis analyze(const IngestResult& joined, std::span<const SampleRecord> samples,
                 const std::string& default_method, std::size_t jobs);

nlohmann::json to_json(const Analysis& a);
Analysis analysis_from_json(const nlohmann::json& doc);
// Reads analysis.json as written by stage_analyze.
Analysis load_analysis(const std::filesystem::path& path);

// ---- reports ----------------------------------------------------------------

struct ReportBundle {
  metrics::AccuracyTable accuracy;
  std::vector<metrics::GroupStats> overall;         // model, method, variant
  std::vector<metrics::GroupStats> by_correctness;  // variant, correctness
  std::vector<metrics::GroupStats> by_strata;       // variant, size stratum
  std::vector<metrics::GroupStats> no_information;  // no-information variants only
  std::vector<StageCount> accounting;
};

// Context-change and perturbation groups are the standard sets restricted
// to the requested variants.
ReportBundle build_reports(const Analysis& analysis, std::span<const std::string> variants);

// Writes accuracy.csv, volume_overall.csv, volume_by_correctness.csv,
// volume_by_strata.csv, volume_no_information.csv and report.json into `dir`.
// CSVs show percentages with one decimal; report.json keeps raw values.
void write_reports(const ReportBundle& bundle, const std::filesystem::path& dir);

// ---- pipeline ---------------------------------------------------------------

// A stage failure. `cause()` is the kind tag of the underlying error.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string cause, const std::string& what);
  const std::string& stage() const noexcept { return stage_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  std::string cause_;
};

// Runs fn, converting any toolkit error into a StageError tagged `stage`.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.kind(), e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, "Error", e.what());
  }
}

inline constexpr const char* kIncompleteMarker = "INCOMPLETE";

// Creates `out` and an INCOMPLETE marker; on failure the marker records the
// failing stage, on success it is removed.
class OutputGuard {
 public:
  explicit OutputGuard(std::filesystem::path out);
  ~OutputGuard();
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;

  void fail(const StageError& e);
  void succeed();

 private:
  std::filesystem::path out_;
  bool done_ = false;
};

struct Filtered {
  Manifest manifest;
  metrics::FilterResult filter;
  StageCount count;
};

// Validates the manifest (ManifestError) and applies the context-fraction
// filter (FilterEmptied when nothing survives).
Filtered load_and_filter(const RunConfig& config);

// Stage helpers behind the CLI commands. Each writes under config.out.
VariantSet stage_synthesize(const RunConfig& config, const Filtered& data);
std::vector<PredictionRecord> stage_builtin(const RunConfig& config, const Filtered& data);
Analysis stage_analyze(const RunConfig& config, const Filtered& data);
ReportBundle stage_report(const RunConfig& config, const Analysis& analysis);

// Filter, synthesis, prediction, attribution (builtin source), ingestion,
// metrics and reports. Writes analysis.json, reports/ and provenance.json
// under config.out.
ReportBundle run_pipeline(const RunConfig& config);

// Seed, configuration hash, input hashes, severity tables in use, resized
// maps and the stage accounting.
nlohmann::json provenance(const RunConfig& config, const Analysis& analysis, const ReportBundle& bundle);

}  // namespace ctxattr::harness
