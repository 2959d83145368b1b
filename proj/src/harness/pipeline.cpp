#include <cstdio>
#include <fstream>
#include <iterator>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(synth::fnv1a64(bytes)));
  return buf;
}

void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::optional<int> class_count_for(const RunConfig& config) {
  if (config.class_count) return config.class_count;
  if (config.source() == ModelSource::kBuiltin && !config.network.empty()) {
    return run_stage("predict", [&] { return nn::Network::load(config.network).class_count(); });
  }
  return std::nullopt;
}

}  // namespace

StageError::StageError(std::string stage, std::string cause, const std::string& what)
    : Error("StageError", "stage '" + stage + "' failed: " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}

OutputGuard::OutputGuard(std::filesystem::path out) : out_(std::move(out)) {
  std::filesystem::create_directories(out_);
  std::ofstream(out_ / kIncompleteMarker, std::ios::trunc) << "running\n";
}

OutputGuard::~OutputGuard() {
  if (!done_) {
    std::ofstream(out_ / kIncompleteMarker, std::ios::trunc) << "aborted\n";
  }
}

void OutputGuard::fail(const StageError& e) {
  std::ofstream(out_ / kIncompleteMarker, std::ios::trunc)
      << "stage: " << e.stage() << "\ncause: " << e.cause() << "\nerror: " << e.what() << "\n";
  done_ = true;
}

void OutputGuard::succeed() {
  std::error_code ec;
  std::filesystem::remove(out_ / kIncompleteMarker, ec);
  done_ = true;
}

Filtered load_and_filter(const RunConfig& config) {
  Filtered f;
  f.manifest = load_manifest(config.manifest, class_count_for(config));
  run_stage("filter", [&] {
    const metrics::MaskLoader loader = [](const SampleRecord& s) { return load_mask(s.mask_path); };
    f.filter = metrics::context_fraction_filter(f.manifest.samples, loader, config.context_threshold);
    if (f.filter.kept.empty()) {
      throw FilterEmptied("no sample has a context fraction above " + std::to_string(config.context_threshold) +
                          " (" + std::to_string(f.manifest.samples.size()) + " dropped)");
    }
  });
  f.count = {"filter", f.manifest.samples.size(), f.filter.dropped.size(), f.filter.kept.size()};
  return f;
}

VariantSet stage_synthesize(const RunConfig& config, const Filtered& data) {
  return run_stage("synthesize", [&] {
    const auto specs = config.variant_specs();
    auto set = synthesize_all(data.filter.kept, specs, data.manifest.class_count, config.seed, config.jobs);
    write_variant_set(set, config.out / "variants", config.jobs);
    return set;
  });
}

std::vector<PredictionRecord> stage_builtin(const RunConfig& config, const Filtered& data) {
  const auto net = run_stage("predict", [&] { return nn::Network::load(config.network); });
  const auto specs = run_stage("synthesize", [&] { return config.variant_specs(); });
  BuiltinOptions options;
  options.model_id = config.resolved_model_id();
  options.method = config.method;
  options.seed = config.seed;
  options.jobs = config.jobs;
  return run_stage("attribute", [&] { return run_builtin(data.filter.kept, specs, net, options, config.out); });
}

Analysis stage_analyze(const RunConfig& config, const Filtered& data) {
  const bool external = config.source() == ModelSource::kExternal;
  const auto preds = external ? config.external_preds : config.out / "predictions.jsonl";
  const auto maps = external ? config.external_maps : config.out / "maps";
  const auto joined = run_stage("ingest", [&] {
    return ingest_external(preds, maps, data.manifest, data.filter.kept, config.variants);
  });
  auto analysis = run_stage("metrics", [&] {
    return analyze(joined, data.filter.kept, attr::to_string(config.method.kind), config.jobs);
  });
  analysis.accounting.insert(analysis.accounting.begin(), data.count);
  run_stage("metrics", [&] {
    std::filesystem::create_directories(config.out);
    write_json_file(to_json(analysis), config.out / "analysis.json");
  });
  return analysis;
}

ReportBundle stage_report(const RunConfig& config, const Analysis& analysis) {
  return run_stage("report", [&] {
    auto bundle = build_reports(analysis, config.variants);
    write_reports(bundle, config.out / "reports");
    write_json_file(provenance(config, analysis, bundle), config.out / "provenance.json");
    return bundle;
  });
}

ReportBundle run_pipeline(const RunConfig& config) {
  config.validate();
  OutputGuard guard(config.out);
  try {
    const auto data = load_and_filter(config);
    if (config.source() == ModelSource::kBuiltin) stage_builtin(config, data);
    const auto analysis = stage_analyze(config, data);
    auto bundle = stage_report(config, analysis);
    guard.succeed();
    return bundle;
  } catch (const StageError& e) {
    guard.fail(e);
    throw;
  }
}

nlohmann::json provenance(const RunConfig& config, const Analysis& analysis, const ReportBundle& bundle) {
  nlohmann::json j;
  j["seed"] = config.seed;
  j["config"] = config.to_json();
  j["config_hash"] = config.hash();
  j["manifest_hash"] = file_hash(config.manifest);
  if (config.source() == ModelSource::kBuiltin) {
    j["network_hash"] = file_hash(config.network);
  } else {
    j["predictions_hash"] = file_hash(config.external_preds);
  }
  j["hash_function"] = "fnv1a64";
  j["seed_derivation"] = "splitmix64(splitmix64(splitmix64(seed) ^ fnv1a64(sample_id)) ^ fnv1a64(variant))";
  j["severity"] = config.severity;
  nlohmann::json corruptions = nlohmann::json::object();
  for (const auto& v : config.variant_specs()) {
    if (v.corruption) corruptions[v.name()] = v.corruption->to_json();
  }
  j["corruptions"] = std::move(corruptions);
  j["map_resize_policy"] = "bilinear_half_pixel_to_mask";
  nlohmann::json resized = nlohmann::json::array();
  for (const auto& [id, v] : analysis.resized) resized.push_back({{"sample_id", id}, {"variant", v}});
  j["resized_maps"] = std::move(resized);
  nlohmann::json zero = nlohmann::json::array();
  for (const auto& [id, v] : analysis.zero_mass) zero.push_back({{"sample_id", id}, {"variant", v}});
  j["zero_mass_maps"] = std::move(zero);
  nlohmann::json accounting = nlohmann::json::array();
  bool balanced = true;
  for (const auto& s : bundle.accounting) {
    accounting.push_back(
        {{"stage", s.stage}, {"in", s.in}, {"filtered_out", s.filtered_out}, {"reported", s.reported}});
    balanced = balanced && s.balanced();
  }
  j["accounting"] = std::move(accounting);
  j["accounting_balanced"] = balanced;
  return j;
}

Analysis load_analysis(const std::filesystem::path& path) { return analysis_from_json(read_json_file(path)); }

}  // namespace ctxattr::harness
