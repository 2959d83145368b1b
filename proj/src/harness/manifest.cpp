#include <algorithm>
#include <fstream>
#include <map>
#include <type_traits>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

std::string join_diagnostics(const std::vector<Diagnostic>& diags) {
  std::string out = std::to_string(diags.size()) + " manifest problem(s)";
  for (const auto& d : diags) out += "\n  " + d.to_string();
  return out;
}

// Reads one required field, recording a SchemaError diagnostic when absent or mistyped.
template <typename T>
bool read_field(const nlohmann::json& row, const char* key, T& out, Diagnostic base,
                std::vector<Diagnostic>& diags) {
  auto it = row.find(key);
  bool ok = it != row.end();
  if (ok) {
    if constexpr (std::is_same_v<T, int>) {
      ok = it->is_number_integer();
    } else {
      ok = it->is_string();
    }
  }
  if (!ok) {
    base.kind = "SchemaError";
    base.message = std::string("missing or mistyped field '") + key + "'";
    diags.push_back(std::move(base));
    return false;
  }
  out = it->get<T>();
  return true;
}

}  // namespace

std::string bare_message(const Error& e) {
  std::string_view what = e.what();
  const std::string prefix = e.kind() + ": ";
  if (what.substr(0, prefix.size()) == prefix) what.remove_prefix(prefix.size());
  return std::string(what);
}

std::string Diagnostic::to_string() const {
  std::string out;
  if (line > 0) out += "line " + std::to_string(line) + ": ";
  if (!sample_id.empty()) out += "[" + sample_id + "] ";
  return out + kind + ": " + message;
}

ManifestError::ManifestError(std::vector<Diagnostic> diagnostics)
    : Error("ManifestError", join_diagnostics(diagnostics)), diagnostics_(std::move(diagnostics)) {}

ValidationReport validate_manifest(const std::filesystem::path& path, std::optional<int> class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  ValidationReport report;
  report.manifest.path = path;
  auto& diags = report.diagnostics;
  std::map<std::string, std::size_t> first_line;

  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Diagnostic at{line, "", "", ""};
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      diags.push_back({line, "", "SchemaError", std::string("invalid JSON: ") + e.what()});
      continue;
    }
    if (!row.is_object()) {
      diags.push_back({line, "", "SchemaError", "record must be a JSON object"});
      continue;
    }

    SampleRecord rec;
    std::string image, mask;
    bool ok = read_field(row, "sample_id", rec.sample_id, at, diags);
    at.sample_id = rec.sample_id;
    ok = read_field(row, "image_path", image, at, diags) && ok;
    ok = read_field(row, "mask_path", mask, at, diags) && ok;
    ok = read_field(row, "class_id", rec.class_id, at, diags) && ok;
    if (auto it = row.find("class_name"); it != row.end() && it->is_string()) rec.class_name = it->get<std::string>();
    if (!ok) continue;

    if (rec.sample_id.empty()) {
      diags.push_back({line, "", "SchemaError", "sample_id must not be empty"});
      continue;
    }
    if (auto [it, fresh] = first_line.emplace(rec.sample_id, line); !fresh) {
      diags.push_back({line, rec.sample_id, "DuplicateId",
                       "sample_id first defined on line " + std::to_string(it->second) + ", repeated on line " +
                           std::to_string(line)});
      continue;
    }
    if (rec.class_id < 0) {
      diags.push_back({line, rec.sample_id, "IndexError", "class_id " + std::to_string(rec.class_id) + " is negative"});
    }

    rec.image_path = std::filesystem::path(image).is_absolute() ? std::filesystem::path(image) : base / image;
    rec.mask_path = std::filesystem::path(mask).is_absolute() ? std::filesystem::path(mask) : base / mask;
    bool files_ok = true;
    for (const auto& p : {rec.image_path, rec.mask_path}) {
      if (!std::filesystem::is_regular_file(p)) {
        diags.push_back({line, rec.sample_id, "IoError", "file not found: " + p.string()});
        files_ok = false;
      }
    }
    if (files_ok) {
      try {
        require_same_dims(load_image(rec.image_path), load_mask(rec.mask_path));
      } catch (const Error& e) {
        diags.push_back({line, rec.sample_id, e.kind(), bare_message(e)});
      }
    }
    report.manifest.samples.push_back(std::move(rec));
    report.manifest.lines.push_back(line);
  }

  if (report.manifest.samples.empty() && diags.empty()) {
    diags.push_back({0, "", "SchemaError", "manifest has no records"});
  }

  int max_class = -1;
  for (const auto& s : report.manifest.samples) max_class = std::max(max_class, s.class_id);
  report.manifest.class_count = class_count.value_or(max_class + 1);
  if (class_count) {
    for (std::size_t i = 0; i < report.manifest.samples.size(); ++i) {
      const auto& s = report.manifest.samples[i];
      if (s.class_id >= *class_count) {
        diags.push_back({report.manifest.lines[i], s.sample_id, "IndexError",
                         "class_id " + std::to_string(s.class_id) + " outside [0, " + std::to_string(*class_count) +
                             ")"});
      }
    }
  }
  std::stable_sort(diags.begin(), diags.end(),
                   [](const Diagnostic& a, const Diagnostic& b) { return a.line < b.line; });
  return report;
}

Manifest load_manifest(const std::filesystem::path& path, std::optional<int> class_count) {
  auto report = validate_manifest(path, class_count);
  if (!report.ok()) throw ManifestError(std::move(report.diagnostics));
  return std::move(report.manifest);
}

}  // namespace ctxattr::harness
