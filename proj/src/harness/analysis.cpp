#include <fstream>
#include <map>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

std::string pair_label(const std::string& sample_id, const std::string& variant) {
  return "sample '" + sample_id + "' variant '" + variant + "'";
}

metrics::SizeStratum parse_stratum(const std::string& s) {
  for (auto k : {metrics::SizeStratum::kLarge, metrics::SizeStratum::kSmall, metrics::SizeStratum::kOther}) {
    if (metrics::to_string(k) == s) return k;
  }
  throw SchemaError("unknown size stratum '" + s + "'");
}

nlohmann::json pairs_to_json(const std::vector<std::pair<std::string, std::string>>& pairs) {
  auto out = nlohmann::json::array();
  for (const auto& [id, v] : pairs) out.push_back({{"sample_id", id}, {"variant", v}});
  return out;
}

std::vector<std::pair<std::string, std::string>> pairs_from_json(const nlohmann::json& doc) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : doc) out.emplace_back(e.at("sample_id").get<std::string>(), e.at("variant").get<std::string>());
  return out;
}

}  // namespace

IngestResult ingest_external(const std::filesystem::path& preds, const std::filesystem::path& maps_dir,
                             const Manifest& manifest, std::span<const SampleRecord> samples,
                             std::span<const std::string> variants) {
  std::map<std::string, int> label_of;
  for (const auto& s : manifest.samples) label_of.emplace(s.sample_id, s.class_id);
  std::map<std::string, std::size_t> sample_slot;
  for (std::size_t i = 0; i < samples.size(); ++i) sample_slot.emplace(samples[i].sample_id, i);
  std::map<std::string, std::size_t> variant_slot;
  for (std::size_t j = 0; j < variants.size(); ++j) variant_slot.emplace(variants[j], j);

  IngestResult result;
  auto& rec = result.reconciliation;
  rec.expected = samples.size() * variants.size();
  std::vector<std::optional<PredictionRecord>> slots(rec.expected);

  for (auto& p : read_predictions(preds)) {
    ++rec.prediction_rows;
    auto label = label_of.find(p.sample_id);
    if (label == label_of.end()) {
      throw OrphanRecordError("prediction for " + pair_label(p.sample_id, p.variant) + " has no manifest record");
    }
    if (label->second != p.label_class) {
      throw SchemaError(pair_label(p.sample_id, p.variant) + " has label_class " + std::to_string(p.label_class) +
                        " but the manifest says " + std::to_string(label->second));
    }
    auto s = sample_slot.find(p.sample_id);
    if (s == sample_slot.end()) {
      ++rec.skipped_filtered;
      continue;
    }
    auto v = variant_slot.find(p.variant);
    if (v == variant_slot.end()) {
      ++rec.skipped_variant;
      continue;
    }
    auto& slot = slots[s->second * variants.size() + v->second];
    if (slot) throw SchemaError("duplicate prediction for " + pair_label(p.sample_id, p.variant));
    slot = std::move(p);
  }

  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& sample = samples[k / variants.size()];
    const auto& variant = variants[k % variants.size()];
    if (!slots[k]) throw MissingVariantError("no prediction row for " + pair_label(sample.sample_id, variant));
    auto path = map_path(maps_dir, variant, sample.sample_id);
    if (!std::filesystem::is_regular_file(path)) {
      throw MissingMapError("no map for " + pair_label(sample.sample_id, variant) + " at " + path.string());
    }
    result.records.push_back({std::move(*slots[k]), std::move(path), k / variants.size()});
  }
  rec.joined = result.records.size();
  return result;
}

Analysis analyze(const IngestResult& joined, std::span<const SampleRecord> samples,
                 const std::string& default_method, std::size_t jobs) {
  std::vector<BinaryMask> masks(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) { masks[i] = load_mask(samples[i].mask_path); });

  struct Scored {
    std::string method;
    std::optional<metrics::VolumeAttribution> volume;
    bool resized = false;
  };
  std::vector<Scored> scored(joined.records.size());
  parallel_for(joined.records.size(), jobs, [&](std::size_t k) {
    const auto& r = joined.records[k];
    const auto& mask = masks[r.sample];
    auto& out = scored[k];
    out.method = default_method;
    if (auto side = sidecar_path(r.map); std::filesystem::is_regular_file(side)) {
      std::ifstream in(side);
      const auto meta = nlohmann::json::parse(in, nullptr, false);
      if (meta.is_object() && meta.contains("method") && meta["method"].is_string()) out.method = meta["method"];
    }
    auto map = read_attr_map(r.map);
    if (map.height() != mask.height() || map.width() != mask.width()) {
      map = resize_bilinear(map, mask.height(), mask.width());
      out.resized = true;
    }
    try {
      out.volume = metrics::volume_attribution(map, mask);
    } catch (const ZeroAttributionError&) {
      out.volume.reset();
    } catch (const Error& e) {
      throw DomainError(pair_label(r.prediction.sample_id, r.prediction.variant) + ": " + e.what());
    }
  });

  Analysis a;
  for (std::size_t k = 0; k < joined.records.size(); ++k) {
    const auto& r = joined.records[k];
    const auto& p = r.prediction;
    a.predictions.push_back(p);
    if (scored[k].resized) a.resized.emplace_back(p.sample_id, p.variant);
    if (!scored[k].volume) {
      a.zero_mass.emplace_back(p.sample_id, p.variant);
      continue;
    }
    metrics::AttributionRecord rec;
    rec.prediction = p;
    rec.method = scored[k].method;
    rec.volume = *scored[k].volume;
    rec.object_fraction = object_fraction(masks[r.sample]);
    rec.stratum = metrics::size_stratum(rec.object_fraction);
    rec.resized = scored[k].resized;
    a.records.push_back(std::move(rec));
  }

  const auto& rc = joined.reconciliation;
  a.accounting.push_back({"join", rc.prediction_rows, rc.skipped_filtered + rc.skipped_variant, rc.joined});
  a.accounting.push_back({"metrics", joined.records.size(), a.zero_mass.size(), a.records.size()});
  return a;
}

nlohmann::json to_json(const Analysis& a) {
  nlohmann::json j;
  auto preds = nlohmann::json::array();
  for (const auto& p : a.predictions) preds.push_back(to_json(p));
  j["predictions"] = std::move(preds);
  auto records = nlohmann::json::array();
  for (const auto& r : a.records) {
    auto row = to_json(r.prediction);
    row["correct"] = r.prediction.correct();
    row["method"] = r.method;
    row["v_object"] = r.volume.v_object;
    row["v_context"] = r.volume.v_context;
    row["object_fraction"] = r.object_fraction;
    row["size_stratum"] = metrics::to_string(r.stratum);
    row["resized"] = r.resized;
    records.push_back(std::move(row));
  }
  j["records"] = std::move(records);
  j["zero_mass"] = pairs_to_json(a.zero_mass);
  j["resized"] = pairs_to_json(a.resized);
  auto accounting = nlohmann::json::array();
  for (const auto& s : a.accounting) {
    accounting.push_back({{"stage", s.stage},
                          {"in", s.in},
                          {"filtered_out", s.filtered_out},
                          {"reported", s.reported},
                          {"balanced", s.balanced()}});
  }
  j["accounting"] = std::move(accounting);
  return j;
}

Analysis analysis_from_json(const nlohmann::json& doc) {
  Analysis a;
  try {
    for (const auto& p : doc.at("predictions")) a.predictions.push_back(prediction_from_json(p));
    for (const auto& row : doc.at("records")) {
      metrics::AttributionRecord r;
      r.prediction = prediction_from_json(row);
      r.method = row.at("method").get<std::string>();
      r.volume.v_object = row.at("v_object").get<double>();
      r.volume.v_context = row.at("v_context").get<double>();
      r.object_fraction = row.at("object_fraction").get<double>();
      r.stratum = parse_stratum(row.at("size_stratum").get<std::string>());
      r.resized = row.at("resized").get<bool>();
      a.records.push_back(std::move(r));
    }
    a.zero_mass = pairs_from_json(doc.at("zero_mass"));
    a.resized = pairs_from_json(doc.at("resized"));
    for (const auto& s : doc.at("accounting")) {
      a.accounting.push_back({s.at("stage").get<std::string>(), s.at("in").get<std::size_t>(),
                              s.at("filtered_out").get<std::size_t>(), s.at("reported").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("analysis file: ") + e.what());
  }
  return a;
}

}  // namespace ctxattr::harness
