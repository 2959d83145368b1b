#include <algorithm>
#include <cstdio>
#include <fstream>
#include <thread>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<std::string> default_variants() {
  std::vector<std::string> out = {"original"};
  for (const auto* list : {&metrics::kContextChangeVariants, &metrics::kContextPerturbationVariants,
                           &metrics::kNoInformationVariants}) {
    for (const auto& v : *list) {
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
  }
  return out;
}

std::string RunConfig::resolved_model_id() const {
  if (!model_id.empty()) return model_id;
  return network.empty() ? std::string("builtin") : network.stem().string();
}

void RunConfig::validate() const {
  if (variants.empty()) throw ParamError("variant list is empty");
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (std::find(variants.begin(), variants.begin() + static_cast<std::ptrdiff_t>(i), variants[i]) !=
        variants.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ParamError("variant '" + variants[i] + "' listed twice");
    }
  }
  if (severity < synth::kMinSeverity || severity > synth::kMaxSeverity) {
    throw ParamError("severity " + std::to_string(severity) + " outside 1..5");
  }
  variant_specs();
  if (!(context_threshold >= 0.0 && context_threshold < 1.0)) {
    throw ParamError("context threshold " + std::to_string(context_threshold) + " outside [0, 1)");
  }
  if (manifest.empty()) throw ParamError("no manifest given");
  if (source() == ModelSource::kExternal && external_maps.empty()) {
    throw ParamError("external predictions need a maps directory");
  }
  if (class_count && *class_count < 1) throw ParamError("class_count must be positive");
}

std::vector<synth::VariantSpec> RunConfig::variant_specs() const {
  std::vector<synth::VariantSpec> out;
  out.reserve(variants.size());
  for (const auto& v : variants) out.push_back(synth::parse_variant(v, severity));
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["manifest"] = manifest.generic_string();
  j["variants"] = variants;
  j["severity"] = severity;
  j["source"] = source() == ModelSource::kBuiltin ? "builtin" : "external";
  j["network"] = network.generic_string();
  j["model_id"] = source() == ModelSource::kBuiltin ? resolved_model_id() : "";
  j["external_preds"] = external_preds.generic_string();
  j["external_maps"] = external_maps.generic_string();
  j["method"] = attr::to_string(method.kind);
  j["target_layer"] = method.target_layer ? nlohmann::json(*method.target_layer) : nlohmann::json(nullptr);
  j["channel_reduction"] = method.reduction == attr::ChannelReduction::kMax ? "max" : "sum";
  j["seed"] = seed;
  j["context_threshold"] = context_threshold;
  j["class_count"] = class_count ? nlohmann::json(*class_count) : nlohmann::json(nullptr);
  return j;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(synth::fnv1a64(to_json().dump())));
  return buf;
}

RunConfig RunConfig::from_json(const nlohmann::json& doc, const std::filesystem::path& base) {
  if (!doc.is_object()) throw ParamError("configuration must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "manifest") c.manifest = resolve(base, value.get<std::string>());
      else if (key == "variants") c.variants = value.get<std::vector<std::string>>();
      else if (key == "severity") c.severity = value.get<int>();
      else if (key == "network") c.network = resolve(base, value.get<std::string>());
      else if (key == "model_id") c.model_id = value.get<std::string>();
      else if (key == "external_preds") c.external_preds = resolve(base, value.get<std::string>());
      else if (key == "external_maps") c.external_maps = resolve(base, value.get<std::string>());
      else if (key == "method") c.method.kind = attr::parse_method(value.get<std::string>());
      else if (key == "target_layer") {
        if (!value.is_null()) c.method.target_layer = value.get<std::size_t>();
      } else if (key == "channel_reduction") {
        const auto r = value.get<std::string>();
        if (r != "max" && r != "sum") throw ParamError("channel_reduction must be max or sum");
        c.method.reduction = r == "max" ? attr::ChannelReduction::kMax : attr::ChannelReduction::kSum;
      } else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "out") c.out = resolve(base, value.get<std::string>());
      else if (key == "context_threshold") c.context_threshold = value.get<double>();
      else if (key == "jobs") c.jobs = value.get<std::size_t>();
      else if (key == "class_count") {
        if (!value.is_null()) c.class_count = value.get<int>();
      } else {
        throw ParamError("unknown configuration key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParamError(std::string("configuration: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open configuration " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParamError(path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace ctxattr::harness
