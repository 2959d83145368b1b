#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

using metrics::GroupKey;

bool contains(const std::vector<std::string>& list, const std::string& v) {
  return std::find(list.begin(), list.end(), v) != list.end();
}

std::vector<std::string> restrict_to(const std::vector<std::string>& standard, std::span<const std::string> requested) {
  std::vector<std::string> out;
  for (const auto& v : requested) {
    if (contains(standard, v)) out.push_back(v);
  }
  return out;
}

std::vector<metrics::GroupStats> aggregate_or_empty(const std::vector<metrics::AttributionRecord>& records,
                                                    std::initializer_list<GroupKey> keys) {
  if (records.empty()) return {};
  const std::vector<GroupKey> k(keys);
  return metrics::aggregate(records, k);
}

std::string percent(double fraction_or_percent, bool already_percent = false) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", already_percent ? fraction_or_percent : 100.0 * fraction_or_percent);
  return buf;
}

std::string variant_group(const std::string& v) {
  if (v == "original") return "original";
  if (contains(metrics::kContextChangeVariants, v)) return "context_change";
  if (contains(metrics::kContextPerturbationVariants, v)) return "context_perturbation";
  if (contains(metrics::kNoInformationVariants, v)) return "no_information";
  return "other";
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string stats_csv(const std::vector<metrics::GroupStats>& stats, std::initializer_list<GroupKey> keys) {
  std::string out;
  for (auto k : keys) out += metrics::to_string(k) + ",";
  out += "count,object_pct,context_pct\n";
  for (const auto& s : stats) {
    for (const auto& v : s.key) out += v + ",";
    out += std::to_string(s.count) + "," + percent(s.mean_object) + "," + percent(s.mean_context) + "\n";
  }
  return out;
}

nlohmann::json stats_json(const std::vector<metrics::GroupStats>& stats, std::initializer_list<GroupKey> keys) {
  const std::vector<GroupKey> names(keys);
  auto out = nlohmann::json::array();
  for (const auto& s : stats) {
    nlohmann::json row;
    for (std::size_t i = 0; i < names.size(); ++i) row[metrics::to_string(names[i])] = s.key[i];
    row["count"] = s.count;
    row["mean_object"] = s.mean_object;
    row["mean_context"] = s.mean_context;
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

constexpr auto kOverallKeys = {GroupKey::kModel, GroupKey::kMethod, GroupKey::kVariant};
constexpr auto kCorrectnessKeys = {GroupKey::kVariant, GroupKey::kCorrectness};
constexpr auto kStrataKeys = {GroupKey::kVariant, GroupKey::kStratum};
constexpr auto kVariantKeys = {GroupKey::kVariant};

}  // namespace

ReportBundle build_reports(const Analysis& analysis, std::span<const std::string> variants) {
  ReportBundle b;
  b.accounting = analysis.accounting;
  for (const auto& s : b.accounting) {
    if (!s.balanced()) {
      throw DomainError("stage '" + s.stage + "' accounting does not balance: " + std::to_string(s.in) + " in, " +
                        std::to_string(s.filtered_out) + " filtered out, " + std::to_string(s.reported) +
                        " reported");
    }
  }
  b.accuracy = metrics::accuracy_table(analysis.predictions, restrict_to(metrics::kContextChangeVariants, variants),
                                       restrict_to(metrics::kContextPerturbationVariants, variants));
  b.overall = aggregate_or_empty(analysis.records, kOverallKeys);
  b.by_correctness = aggregate_or_empty(analysis.records, kCorrectnessKeys);
  b.by_strata = aggregate_or_empty(analysis.records, kStrataKeys);
  std::vector<metrics::AttributionRecord> no_info;
  for (const auto& r : analysis.records) {
    if (contains(metrics::kNoInformationVariants, r.prediction.variant)) no_info.push_back(r);
  }
  b.no_information = aggregate_or_empty(no_info, kVariantKeys);
  return b;
}

void write_reports(const ReportBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& t = b.accuracy;

  std::string acc = "variant,group,total,correct,accuracy_pct\n";
  for (const auto& [name, v] : t.variants) {
    acc += name + "," + variant_group(name) + "," + std::to_string(v.total) + "," + std::to_string(v.correct) + "," +
           percent(v.percent, true) + "\n";
  }
  auto summary = [&](const char* name, const char* group, const std::optional<double>& v) {
    if (v) acc += std::string(name) + "," + group + ",,," + percent(*v, true) + "\n";
  };
  summary("mean_cc", "context_change", t.mean_cc);
  summary("decline_cc", "context_change", t.decline_cc);
  summary("mean_cp", "context_perturbation", t.mean_cp);
  summary("decline_cp", "context_perturbation", t.decline_cp);
  write_text(acc, dir / "accuracy.csv");

  write_text(stats_csv(b.overall, kOverallKeys), dir / "volume_overall.csv");
  write_text(stats_csv(b.by_correctness, kCorrectnessKeys), dir / "volume_by_correctness.csv");
  write_text(stats_csv(b.by_strata, kStrataKeys), dir / "volume_by_strata.csv");
  write_text(stats_csv(b.no_information, kVariantKeys), dir / "volume_no_information.csv");

  nlohmann::json j;
  auto& ja = j["accuracy"];
  for (const auto& [name, v] : t.variants) {
    ja["variants"][name] = {{"total", v.total}, {"correct", v.correct}, {"percent", v.percent}};
  }
  ja["orig"] = t.orig;
  ja["cc_variants"] = t.cc_variants;
  ja["cp_variants"] = t.cp_variants;
  ja["mean_cc"] = optional_json(t.mean_cc);
  ja["mean_cp"] = optional_json(t.mean_cp);
  ja["decline_cc"] = optional_json(t.decline_cc);
  ja["decline_cp"] = optional_json(t.decline_cp);
  j["volume_overall"] = stats_json(b.overall, kOverallKeys);
  j["volume_by_correctness"] = stats_json(b.by_correctness, kCorrectnessKeys);
  j["volume_by_strata"] = stats_json(b.by_strata, kStrataKeys);
  j["volume_no_information"] = stats_json(b.no_information, kVariantKeys);
  auto accounting = nlohmann::json::array();
  for (const auto& s : b.accounting) {
    accounting.push_back({{"stage", s.stage},
                          {"in", s.in},
                          {"filtered_out", s.filtered_out},
                          {"reported", s.reported},
                          {"balanced", s.balanced()}});
  }
  j["accounting"] = std::move(accounting);
  write_text(j.dump(2) + "\n", dir / "report.json");
}

}  // namespace ctxattr::harness
