#include <atomic>
#include <cstring>
#include <fstream>
#include <set>

#include "ctxattr/harness.hpp"
#include "doctest.h"
#include "support/datasets.hpp"
#include "support/temp_dir.hpp"
#include "support/test_nets.hpp"

using namespace ctxattr;
using namespace ctxattr::harness;
using ctxattr::testing::TempDir;
using ctxattr::testing::ToySample;

namespace {

std::vector<ToySample> three_samples() {
  return {{"a", 0}, {"b", 1}, {"c", 2}};
}

// Writes a complete external bundle for every (sample, variant): predictions
// where sample "b" is misclassified, and maps with all mass on pixel (0, 0).
void write_bundle(const std::filesystem::path& dir, const std::vector<ToySample>& samples,
                  const std::vector<std::string>& variants, int map_size = 8) {
  std::vector<PredictionRecord> preds;
  for (const auto& s : samples) {
    for (const auto& v : variants) {
      preds.push_back({s.id, v, "ext", s.id == "b" ? 0 : s.class_id, s.class_id, 0.5});
      AttributionMap m(map_size, map_size);
      m.at(0, 0) = 1.0;
      std::filesystem::create_directories(dir / "maps" / v);
      write_attr_map(m, map_path(dir / "maps", v, s.id));
    }
  }
  write_predictions(preds, dir / "preds.jsonl");
}

RunConfig base_config(const std::filesystem::path& manifest, const std::filesystem::path& out) {
  RunConfig c;
  c.manifest = manifest;
  c.out = out;
  c.jobs = 2;
  return c;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("validate_manifest accepts a well-formed manifest") {
  TempDir dir;
  const auto manifest = testing::write_dataset(dir.path(), three_samples());
  const auto report = validate_manifest(manifest);
  CHECK(report.ok());
  REQUIRE(report.manifest.samples.size() == 3);
  CHECK(report.manifest.class_count == 3);
  CHECK(report.manifest.samples[1].sample_id == "b");
  CHECK(report.manifest.samples[1].image_path == dir / "images/b.png");
  CHECK(report.manifest.lines == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("validate_manifest diagnostics") {
  TempDir dir;
  SUBCASE("duplicate id names both lines") {
    const auto manifest = testing::write_dataset(dir.path(), {{"a", 0}, {"b", 1}, {"a", 1}});
    const auto report = validate_manifest(manifest);
    REQUIRE(report.diagnostics.size() == 1);
    const auto& d = report.diagnostics[0];
    CHECK(d.kind == "DuplicateId");
    CHECK(d.sample_id == "a");
    CHECK(d.line == 3);
    CHECK(d.message.find("line 1") != std::string::npos);
    CHECK(d.message.find("line 3") != std::string::npos);
  }
  SUBCASE("mask dims differ from image") {
    ToySample bad{"bad", 0};
    bad.mask_height = 6;
    const auto manifest = testing::write_dataset(dir.path(), {{"ok", 0}, bad});
    const auto report = validate_manifest(manifest);
    REQUIRE(report.diagnostics.size() == 1);
    CHECK(report.diagnostics[0].kind == "ShapeError");
    CHECK(report.diagnostics[0].sample_id == "bad");
    CHECK(report.diagnostics[0].to_string().find("[bad] ShapeError") != std::string::npos);
  }
  SUBCASE("missing file, bad JSON, missing field, class range") {
    testing::write_dataset(dir.path(), {{"a", 0}});
    testing::write_text(dir / "m.jsonl",
                        testing::manifest_line("a", "images/a.png", "masks/a.png", 0) + "\n" +
                            testing::manifest_line("gone", "images/none.png", "masks/a.png", 1) + "\n" +
                            "{not json\n" + R"({"sample_id": "x", "image_path": "images/a.png"})" + "\n\n" +
                            testing::manifest_line("hi", "images/a.png", "masks/a.png", 7) + "\n");
    const auto report = validate_manifest(dir / "m.jsonl", 4);
    REQUIRE(report.diagnostics.size() == 5);
    CHECK(report.diagnostics[0].kind == "IoError");
    CHECK(report.diagnostics[0].sample_id == "gone");
    CHECK(report.diagnostics[1].kind == "SchemaError");
    CHECK(report.diagnostics[1].line == 3);
    CHECK(report.diagnostics[2].kind == "SchemaError");
    CHECK(report.diagnostics[3].kind == "SchemaError");
    CHECK(report.diagnostics[4].kind == "IndexError");
    CHECK(report.diagnostics[4].line == 6);
    CHECK_THROWS_AS(load_manifest(dir / "m.jsonl", 4), ManifestError);
  }
  SUBCASE("negative class and empty manifest") {
    testing::write_dataset(dir.path(), {{"a", 0}});
    testing::write_text(dir / "neg.jsonl", testing::manifest_line("n", "images/a.png", "masks/a.png", -1) + "\n");
    CHECK(validate_manifest(dir / "neg.jsonl").diagnostics.at(0).kind == "IndexError");
    testing::write_text(dir / "empty.jsonl", "\n");
    CHECK_FALSE(validate_manifest(dir / "empty.jsonl").ok());
  }
  CHECK_THROWS_AS(validate_manifest(dir / "absent.jsonl"), IoError);
}

TEST_CASE("RunConfig validation and hashing") {
  RunConfig c;
  c.manifest = "m.jsonl";
  CHECK_NOTHROW(c.validate());
  CHECK(c.variants.size() == 13);
  CHECK(c.variants.front() == "original");

  auto bad = c;
  bad.variants.clear();
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = c;
  bad.variants = {"original", "sepia"};
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = c;
  bad.variants = {"fog", "fog"};
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = c;
  bad.severity = 6;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = c;
  bad.context_threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = c;
  bad.external_preds = "p.jsonl";
  CHECK_THROWS_AS(bad.validate(), ParamError);

  auto other = c;
  other.out = "elsewhere";
  other.jobs = 8;
  CHECK(other.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  other.seed = 1;
  CHECK(other.hash() != c.hash());
  other = c;
  other.severity = 4;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("RunConfig from JSON") {
  const nlohmann::json doc = {{"manifest", "data/m.jsonl"}, {"variants", {"original", "fog"}}, {"severity", 2},
                              {"method", "scorecam"},      {"target_layer", 3},                {"seed", 99},
                              {"out", "/abs/out"},         {"context_threshold", 0.25},        {"jobs", 3}};
  const auto c = RunConfig::from_json(doc, "/base");
  CHECK(c.manifest == std::filesystem::path("/base/data/m.jsonl"));
  CHECK(c.out == std::filesystem::path("/abs/out"));
  CHECK(c.variants == std::vector<std::string>{"original", "fog"});
  CHECK(c.severity == 2);
  CHECK(c.method.kind == attr::Method::kScoreCam);
  CHECK(c.method.target_layer == std::optional<std::size_t>(3));
  CHECK(c.seed == 99);
  CHECK(c.context_threshold == 0.25);
  CHECK(c.jobs == 3);
  CHECK_THROWS_AS(RunConfig::from_json({{"colour", 1}}, "/"), ParamError);
  CHECK_THROWS_AS(RunConfig::from_json({{"severity", "high"}}, "/"), ParamError);
}

TEST_CASE("parallel_for runs every index once") {
  for (std::size_t jobs : {1, 2, 8}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("called on empty range"); });
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  for (std::size_t jobs : {1, 3, 8}) {
    std::atomic<int> calls{0};
    try {
      parallel_for(50, jobs, [&](std::size_t i) {
        ++calls;
        if (i == 17 || i == 31) throw IndexError("fail " + std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const IndexError& e) {
      CHECK(std::string(e.what()).find("fail 17") != std::string::npos);
    }
    CHECK(calls.load() == 50);
  }
}

TEST_CASE("prediction rows") {
  const PredictionRecord p{"s1", "fog", "m", 2, 3, 0.25};
  const auto back = prediction_from_json(to_json(p));
  CHECK(back.sample_id == "s1");
  CHECK(back.variant == "fog");
  CHECK(back.predicted_class == 2);
  CHECK(back.label_class == 3);
  CHECK(back.score == 0.25);
  CHECK_FALSE(back.correct());

  auto j = to_json(p);
  j["correct"] = true;
  CHECK_FALSE(prediction_from_json(j).correct());
  j.erase("score");
  CHECK_THROWS_AS(prediction_from_json(j), SchemaError);
  j = to_json(p);
  j["predicted_class"] = "2";
  CHECK_THROWS_AS(prediction_from_json(j), SchemaError);

  TempDir dir;
  testing::write_text(dir / "p.jsonl", to_json(p).dump() + "\n{oops\n");
  try {
    read_predictions(dir / "p.jsonl");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("ingest_external joins a complete bundle") {
  TempDir dir;
  const auto samples = three_samples();
  const auto manifest = load_manifest(testing::write_dataset(dir.path(), samples));
  const std::vector<std::string> variants = {"original", "only_fg"};
  write_bundle(dir.path(), samples, variants);

  const auto r = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
  REQUIRE(r.records.size() == 6);
  CHECK(r.reconciliation.prediction_rows == 6);
  CHECK(r.reconciliation.joined == 6);
  CHECK(r.reconciliation.expected == 6);
  CHECK(r.records[0].prediction.sample_id == "a");
  CHECK(r.records[1].prediction.variant == "only_fg");
  CHECK(r.records[5].sample == 2);

  SUBCASE("rows for filtered samples and other variants are skipped") {
    const std::vector<SampleRecord> kept = {manifest.samples[0], manifest.samples[2]};
    const std::vector<std::string> only = {"original"};
    const auto s = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, kept, only);
    CHECK(s.records.size() == 2);
    CHECK(s.reconciliation.skipped_filtered == 2);
    CHECK(s.reconciliation.skipped_variant == 2);
    CHECK(s.reconciliation.prediction_rows ==
          s.reconciliation.joined + s.reconciliation.skipped_filtered + s.reconciliation.skipped_variant);
  }
}

TEST_CASE("ingest_external errors") {
  TempDir dir;
  const auto samples = three_samples();
  const auto manifest = load_manifest(testing::write_dataset(dir.path(), samples));
  const std::vector<std::string> variants = {"original", "only_fg"};
  write_bundle(dir.path(), samples, variants);
  auto rows = read_predictions(dir / "preds.jsonl");

  SUBCASE("unknown sample id") {
    rows.push_back({"zzz", "original", "ext", 0, 0, 0.1});
    write_predictions(rows, dir / "preds.jsonl");
    CHECK_THROWS_AS(ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants),
                    OrphanRecordError);
  }
  SUBCASE("missing map names sample and variant") {
    std::filesystem::remove(map_path(dir / "maps", "only_fg", "b"));
    try {
      ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
      FAIL("expected MissingMapError");
    } catch (const MissingMapError& e) {
      const std::string what = e.what();
      CHECK(what.find("'b'") != std::string::npos);
      CHECK(what.find("'only_fg'") != std::string::npos);
    }
  }
  SUBCASE("missing prediction row") {
    rows.pop_back();
    write_predictions(rows, dir / "preds.jsonl");
    CHECK_THROWS_AS(ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants),
                    MissingVariantError);
  }
  SUBCASE("duplicate row") {
    rows.push_back(rows.front());
    write_predictions(rows, dir / "preds.jsonl");
    CHECK_THROWS_AS(ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants),
                    SchemaError);
  }
  SUBCASE("label disagreeing with the manifest") {
    rows[0].label_class = 2;
    write_predictions(rows, dir / "preds.jsonl");
    CHECK_THROWS_AS(ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants),
                    SchemaError);
  }
}

TEST_CASE("analyze scores, resizes and flags") {
  TempDir dir;
  const auto samples = three_samples();
  const auto manifest = load_manifest(testing::write_dataset(dir.path(), samples));
  const std::vector<std::string> variants = {"original"};
  write_bundle(dir.path(), samples, variants);

  SUBCASE("mass on a context pixel") {
    const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
    const auto a = analyze(joined, manifest.samples, "gradcam", 2);
    REQUIRE(a.records.size() == 3);
    for (const auto& r : a.records) {
      CHECK(r.volume.v_context == 1.0);
      CHECK(r.volume.v_object == 0.0);
      CHECK(r.method == "gradcam");
      CHECK(r.object_fraction == doctest::Approx(9.0 / 64.0));
      CHECK(r.stratum == metrics::SizeStratum::kSmall);
      CHECK_FALSE(r.resized);
    }
    CHECK(a.predictions.size() == 3);
    CHECK(a.accounting.back().stage == "metrics");
    for (const auto& s : a.accounting) CHECK(s.balanced());
  }
  SUBCASE("map at another resolution is resized and flagged") {
    AttributionMap coarse(4, 4, 1.0);
    write_attr_map(coarse, map_path(dir / "maps", "original", "c"));
    const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
    const auto a = analyze(joined, manifest.samples, "gradcam", 1);
    REQUIRE(a.resized.size() == 1);
    CHECK(a.resized[0] == std::pair<std::string, std::string>{"c", "original"});
    CHECK(a.records[2].resized);
    CHECK(a.records[2].volume.v_object == doctest::Approx(9.0 / 64.0));
  }
  SUBCASE("zero-mass map is excluded and listed") {
    write_attr_map(AttributionMap(8, 8), map_path(dir / "maps", "original", "b"));
    const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
    const auto a = analyze(joined, manifest.samples, "gradcam", 1);
    CHECK(a.records.size() == 2);
    CHECK(a.predictions.size() == 3);
    REQUIRE(a.zero_mass.size() == 1);
    CHECK(a.zero_mass[0].first == "b");
    const auto& m = a.accounting.back();
    CHECK(m.in == 3);
    CHECK(m.filtered_out == 1);
    CHECK(m.reported == 2);
  }
  SUBCASE("sidecar names the method") {
    testing::write_text(sidecar_path(map_path(dir / "maps", "original", "a")), R"({"method": "scorecam"})");
    const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
    const auto a = analyze(joined, manifest.samples, "gradcam", 1);
    CHECK(a.records[0].method == "scorecam");
    CHECK(a.records[1].method == "gradcam");
  }
  SUBCASE("negative map entry") {
    // The writer refuses negative values, so craft the file by patching bytes.
    auto bytes = encode_attr_map(AttributionMap(8, 8, 1.0));
    const float minus = -1.0f;
    std::memcpy(bytes.data() + 16 + 4 * (2 * 8 + 2), &minus, 4);
    std::ofstream(map_path(dir / "maps", "original", "a"), std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
    CHECK_THROWS_AS(analyze(joined, manifest.samples, "gradcam", 1), DomainError);
  }
}

TEST_CASE("analysis JSON round trip") {
  TempDir dir;
  const auto samples = three_samples();
  const auto manifest = load_manifest(testing::write_dataset(dir.path(), samples));
  const std::vector<std::string> variants = {"original", "only_fg"};
  write_bundle(dir.path(), samples, variants);
  write_attr_map(AttributionMap(8, 8), map_path(dir / "maps", "only_fg", "a"));
  const auto joined = ingest_external(dir / "preds.jsonl", dir / "maps", manifest, manifest.samples, variants);
  const auto a = analyze(joined, manifest.samples, "fullgrad", 1);
  const auto j = to_json(a);
  const auto back = analysis_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back) == j);
  CHECK(back.records.size() == a.records.size());
  CHECK(back.zero_mass == a.zero_mass);
  CHECK_THROWS_AS(analysis_from_json(nlohmann::json::object()), SchemaError);
}

TEST_CASE("build_reports") {
  Analysis a;
  auto add = [&](const std::string& id, const std::string& variant, bool correct, double v_ctx,
                 metrics::SizeStratum stratum) {
    PredictionRecord p{id, variant, "m", correct ? 1 : 0, 1, 0.9};
    a.predictions.push_back(p);
    metrics::AttributionRecord r;
    r.prediction = p;
    r.method = "gradcam";
    r.volume = {1.0 - v_ctx, v_ctx};
    r.stratum = stratum;
    a.records.push_back(r);
  };
  add("x", "original", true, 0.2, metrics::SizeStratum::kLarge);
  add("y", "original", true, 0.4, metrics::SizeStratum::kSmall);
  add("x", "only_fg", false, 0.6, metrics::SizeStratum::kLarge);
  add("y", "only_fg", true, 0.8, metrics::SizeStratum::kSmall);
  add("x", "fog", true, 0.1, metrics::SizeStratum::kLarge);
  add("y", "fog", false, 0.3, metrics::SizeStratum::kSmall);
  a.accounting.push_back({"metrics", 6, 0, 6});
  const std::vector<std::string> variants = {"original", "only_fg", "fog"};

  const auto b = build_reports(a, variants);
  CHECK(b.accuracy.orig == 100.0);
  CHECK(b.accuracy.cc_variants == std::vector<std::string>{"only_fg"});
  CHECK(b.accuracy.cp_variants == std::vector<std::string>{"fog"});
  REQUIRE(b.accuracy.decline_cc);
  CHECK(*b.accuracy.decline_cc == b.accuracy.orig - *b.accuracy.mean_cc);
  CHECK(*b.accuracy.decline_cc == 50.0);
  CHECK(b.overall.size() == 3);
  CHECK(b.by_correctness.size() == 5);
  CHECK(b.by_strata.size() == 6);
  REQUIRE(b.no_information.size() == 1);
  CHECK(b.no_information[0].key == std::vector<std::string>{"only_fg"});
  CHECK(b.no_information[0].mean_context == doctest::Approx(0.7));

  TempDir dir;
  write_reports(b, dir.path());
  const auto acc = read_text(dir / "accuracy.csv");
  CHECK(acc.find("variant,group,total,correct,accuracy_pct\n") == 0);
  CHECK(acc.find("only_fg,context_change,2,1,50.0\n") != std::string::npos);
  CHECK(acc.find("decline_cc,context_change,,,50.0\n") != std::string::npos);
  const auto nis = read_text(dir / "volume_no_information.csv");
  CHECK(nis == "variant,count,object_pct,context_pct\nonly_fg,2,30.0,70.0\n");
  const auto report = nlohmann::json::parse(read_text(dir / "report.json"));
  CHECK(report["accuracy"]["decline_cc"].get<double>() == 50.0);
  CHECK(report["volume_by_strata"].size() == 6);

  a.accounting.push_back({"broken", 5, 1, 3});
  CHECK_THROWS_AS(build_reports(a, variants), DomainError);
}

TEST_CASE("synthesize_variant keeps object pixels for every kind") {
  TempDir dir;
  const auto manifest =
      load_manifest(testing::write_dataset(dir.path(), {{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}}));
  const RunConfig config;
  const auto specs = config.variant_specs();
  const auto set = synthesize_all(manifest.samples, specs, 2, 5, 2);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto img = load_image(manifest.samples[i].image_path);
    const auto mask = load_mask(manifest.samples[i].mask_path);
    for (std::size_t j = 0; j < specs.size(); ++j) {
      const auto& out = set.at(i, j);
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            if (mask.at(y, x)) CHECK(out.at(c, y, x) == img.at(c, y, x));
          }
        }
      }
    }
  }
}

TEST_CASE("donor backgrounds are resampled to the sample size") {
  TempDir dir;
  ToySample big{"big", 1, 4, 12, 12};
  const auto manifest = load_manifest(testing::write_dataset(dir.path(), {{"small", 0}, big}));
  const auto spec = synth::parse_variant("mixed_next", 3);
  const auto img = load_image(manifest.samples[0].image_path);
  const auto mask = load_mask(manifest.samples[0].mask_path);
  const auto out = synthesize_variant(spec, manifest.samples[0], img, mask, manifest.samples, 2, 1);
  CHECK(out.height() == 8);
  CHECK(out.width() == 8);
}

TEST_CASE("builtin pipeline on a small dataset") {
  TempDir dir;
  std::mt19937_64 rng(31);
  const auto net = testing::random_gap_head_net(rng, 3);
  net.save(dir / "net.json");
  std::vector<ToySample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back({"s" + std::to_string(i), i % 3, 2 + i % 3});
  const auto manifest = testing::write_dataset(dir.path(), samples);

  auto config = base_config(manifest, dir / "out");
  config.network = dir / "net.json";
  config.variants = {"original", "only_fg", "mixed_rand", "fog", "white_noise_bg"};
  config.seed = 4;
  const auto bundle = run_pipeline(config);

  CHECK_FALSE(std::filesystem::exists(dir / "out" / kIncompleteMarker));
  for (const char* f : {"accuracy.csv", "volume_overall.csv", "volume_by_correctness.csv", "volume_by_strata.csv",
                        "volume_no_information.csv", "report.json"}) {
    CHECK(std::filesystem::is_regular_file(dir / "out" / "reports" / f));
  }
  CHECK(std::filesystem::is_regular_file(dir / "out" / "variants" / "fog" / "s3.png"));
  CHECK(std::filesystem::is_regular_file(dir / "out" / "maps" / "fog" / "s3.json"));

  // Images are 8x8 while the network takes 10x10, so every map is resampled.
  const auto prov = nlohmann::json::parse(read_text(dir / "out" / "provenance.json"));
  CHECK(prov["resized_maps"].size() == 30);
  CHECK(prov["accounting_balanced"].get<bool>());
  CHECK(prov["seed"].get<std::uint64_t>() == 4);
  CHECK(prov["config_hash"].get<std::string>() == config.hash());
  CHECK(prov["corruptions"].contains("fog"));
  CHECK(bundle.accounting.front().stage == "filter");
  CHECK(bundle.accounting.front().in == 6);

  const auto sidecar = nlohmann::json::parse(read_text(dir / "out" / "maps" / "original" / "s0.json"));
  CHECK(sidecar["method"] == "gradcam");
  CHECK(sidecar["input_resized"].get<bool>());

  SUBCASE("the bundle re-ingests as an external source with identical reports") {
    auto ext = base_config(manifest, dir / "ext");
    ext.variants = config.variants;
    ext.seed = 4;
    ext.external_preds = dir / "out" / "predictions.jsonl";
    ext.external_maps = dir / "out" / "maps";
    run_pipeline(ext);
    for (const char* f : {"accuracy.csv", "volume_overall.csv", "volume_by_correctness.csv", "volume_by_strata.csv",
                          "volume_no_information.csv", "report.json"}) {
      CHECK(testing::read_bytes(dir / "ext" / "reports" / f) == testing::read_bytes(dir / "out" / "reports" / f));
    }
  }
}

TEST_CASE("pipeline failures are stage-tagged and leave a marker") {
  TempDir dir;
  const auto samples = three_samples();
  const auto manifest = testing::write_dataset(dir.path(), samples);
  const std::vector<std::string> variants = {"original", "only_fg"};
  write_bundle(dir.path(), samples, variants);

  auto config = base_config(manifest, dir / "out");
  config.variants = variants;
  config.external_preds = dir / "preds.jsonl";
  config.external_maps = dir / "maps";

  SUBCASE("external map missing") {
    std::filesystem::remove(map_path(dir / "maps", "only_fg", "c"));
    try {
      run_pipeline(config);
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage() == "ingest");
      CHECK(e.cause() == "MissingMapError");
      CHECK(std::string(e.what()).find("sample 'c' variant 'only_fg'") != std::string::npos);
    }
    const auto marker = read_text(dir / "out" / kIncompleteMarker);
    CHECK(marker.find("stage: ingest") != std::string::npos);
  }
  SUBCASE("filter empties the dataset") {
    config.context_threshold = 0.99;
    try {
      run_pipeline(config);
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage() == "filter");
      CHECK(e.cause() == "FilterEmptied");
    }
    CHECK(std::filesystem::exists(dir / "out" / kIncompleteMarker));
  }
  SUBCASE("a complete external bundle succeeds") {
    const auto b = run_pipeline(config);
    CHECK_FALSE(std::filesystem::exists(dir / "out" / kIncompleteMarker));
    CHECK(b.accuracy.orig == doctest::Approx(200.0 / 3.0));
    REQUIRE(b.by_correctness.size() == 4);
  }
  SUBCASE("invalid manifest") {
    testing::write_text(dir / "dup.jsonl", read_text(manifest) + read_text(manifest));
    config.manifest = dir / "dup.jsonl";
    CHECK_THROWS_AS(run_pipeline(config), ManifestError);
  }
}

TEST_CASE("stage outputs are identical across worker counts") {
  TempDir dir;
  std::mt19937_64 rng(8);
  const auto net = testing::random_gap_head_net(rng, 3);
  net.save(dir / "net.json");
  std::vector<ToySample> samples;
  for (int i = 0; i < 9; ++i) samples.push_back({"s" + std::to_string(i), i % 3, 2 + i % 4, 10, 10});
  const auto manifest = testing::write_dataset(dir.path(), samples, 3);

  std::vector<std::vector<unsigned char>> outputs;
  for (std::size_t jobs : {1, 3}) {
    auto config = base_config(manifest, dir / ("out" + std::to_string(jobs)));
    config.network = dir / "net.json";
    config.method.kind = attr::Method::kScoreCam;
    config.jobs = jobs;
    run_pipeline(config);
    std::vector<unsigned char> all;
    for (const char* f : {"predictions.jsonl", "analysis.json", "provenance.json", "reports/report.json",
                          "reports/volume_by_strata.csv", "variants/mixed_same/s4.png", "maps/snow/s7.attr"}) {
      const auto bytes = testing::read_bytes(config.out / f);
      REQUIRE_FALSE(bytes.empty());
      all.insert(all.end(), bytes.begin(), bytes.end());
    }
    outputs.push_back(std::move(all));
  }
  CHECK(outputs[0] == outputs[1]);
}
