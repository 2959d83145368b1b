#include "ctxattr/metrics.hpp"

#include <cmath>

#include "ctxattr/errors.hpp"

namespace ctxattr::metrics {

VolumeAttribution volume_attribution(const AttributionMap& map, const BinaryMask& mask) {
  require_same_dims(map, mask);
  require_non_negative(map);
  double total = 0.0;
  double on_object = 0.0;
  double on_context = 0.0;
  const auto& a = map.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = a[i];
    total += v;
    if (mask.object(i)) {
      on_object += v;
    } else {
      on_context += v;
    }
  }
  if (!(total > 0.0)) throw ZeroAttributionError("attribution map sums to zero");
  VolumeAttribution v;
  v.v_object = on_object / total;
  v.v_context = on_context / total;
  return v;
}

std::string to_string(SizeStratum s) {
  switch (s) {
    case SizeStratum::kLarge: return "large";
    case SizeStratum::kSmall: return "small";
    case SizeStratum::kOther: return "other";
  }
  return "other";
}

SizeStratum size_stratum(double phi) {
  if (phi >= 0.30 && phi <= 0.50) return SizeStratum::kLarge;
  if (phi < 0.20) return SizeStratum::kSmall;
  return SizeStratum::kOther;
}

SizeStratum size_strata(const BinaryMask& mask) { return size_stratum(object_fraction(mask)); }

std::string to_string(GroupKey k) {
  switch (k) {
    case GroupKey::kModel: return "model_id";
    case GroupKey::kMethod: return "method";
    case GroupKey::kVariant: return "variant";
    case GroupKey::kCorrectness: return "correctness";
    case GroupKey::kStratum: return "size_stratum";
  }
  return "unknown";
}

namespace {

std::string key_value(const AttributionRecord& r, GroupKey k) {
  switch (k) {
    case GroupKey::kModel: return r.prediction.model_id;
    case GroupKey::kMethod: return r.method;
    case GroupKey::kVariant: return r.prediction.variant;
    case GroupKey::kCorrectness: return r.prediction.correct() ? "correct" : "wrong";
    case GroupKey::kStratum: return to_string(r.stratum);
  }
  return {};
}

}  // namespace

std::vector<GroupStats> aggregate(std::span<const AttributionRecord> records, std::span<const GroupKey> group_by) {
  if (records.empty()) throw EmptyGroupError("no records to aggregate");
  std::map<std::vector<std::string>, MeanAccumulator> groups;
  for (const auto& r : records) {
    std::vector<std::string> key;
    key.reserve(group_by.size());
    for (auto k : group_by) key.push_back(key_value(r, k));
    groups[key].add(r.volume);
  }
  std::vector<GroupStats> out;
  out.reserve(groups.size());
  for (const auto& [key, acc] : groups) {
    GroupStats s;
    s.key = key;
    s.count = acc.count;
    s.mean_object = acc.sum_object / static_cast<double>(acc.count);
    s.mean_context = acc.sum_context / static_cast<double>(acc.count);
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<PredictionRecord>, std::vector<PredictionRecord>> split_by_correctness(
    std::span<const PredictionRecord> preds) {
  std::pair<std::vector<PredictionRecord>, std::vector<PredictionRecord>> out;
  for (const auto& p : preds) (p.correct() ? out.first : out.second).push_back(p);
  return out;
}

std::pair<std::vector<AttributionRecord>, std::vector<AttributionRecord>> split_by_correctness(
    std::span<const AttributionRecord> records) {
  std::pair<std::vector<AttributionRecord>, std::vector<AttributionRecord>> out;
  for (const auto& r : records) (r.prediction.correct() ? out.first : out.second).push_back(r);
  return out;
}

namespace {

std::optional<double> mean_of(const std::map<std::string, VariantAccuracy>& variants,
                              const std::vector<std::string>& names) {
  if (names.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& n : names) {
    auto it = variants.find(n);
    if (it == variants.end()) throw MissingVariantError("variant '" + n + "' has no accuracy");
    sum += it->second.percent;
  }
  return sum / static_cast<double>(names.size());
}

AccuracyTable finish_table(std::map<std::string, VariantAccuracy> variants, const std::vector<std::string>& cc,
                           const std::vector<std::string>& cp) {
  auto orig = variants.find("original");
  if (orig == variants.end()) throw MissingVariantError("variant 'original' has no accuracy");
  AccuracyTable t;
  t.orig = orig->second.percent;
  t.cc_variants = cc;
  t.cp_variants = cp;
  t.mean_cc = mean_of(variants, cc);
  t.mean_cp = mean_of(variants, cp);
  if (t.mean_cc) t.decline_cc = t.orig - *t.mean_cc;
  if (t.mean_cp) t.decline_cp = t.orig - *t.mean_cp;
  t.variants = std::move(variants);
  return t;
}

}  // namespace

AccuracyTable accuracy_table(const std::map<std::string, double>& percent, const std::vector<std::string>& cc,
                             const std::vector<std::string>& cp) {
  std::map<std::string, VariantAccuracy> variants;
  for (const auto& [name, pct] : percent) variants[name].percent = pct;
  return finish_table(std::move(variants), cc, cp);
}

AccuracyTable accuracy_table(std::span<const PredictionRecord> preds, const std::vector<std::string>& cc,
                             const std::vector<std::string>& cp) {
  std::map<std::string, VariantAccuracy> variants;
  for (const auto& p : preds) {
    auto& v = variants[p.variant];
    ++v.total;
    if (p.correct()) ++v.correct;
  }
  for (auto& [name, v] : variants) v.percent = 100.0 * static_cast<double>(v.correct) / static_cast<double>(v.total);
  return finish_table(std::move(variants), cc, cp);
}

FilterResult context_fraction_filter(std::span<const SampleRecord> samples, const MaskLoader& load,
                                     double threshold) {
  FilterResult r;
  for (const auto& s : samples) {
    (context_fraction(load(s)) > threshold ? r.kept : r.dropped).push_back(s);
  }
  r.kept_fraction = samples.empty() ? 0.0 : static_cast<double>(r.kept.size()) / static_cast<double>(samples.size());
  return r;
}

}  // namespace ctxattr::metrics
