#include <algorithm>
#include <fstream>

#include "ctxattr/harness.hpp"

namespace ctxattr::harness {

namespace {

synth::DonorStrategy donor_strategy(synth::VariantKind kind) {
  switch (kind) {
    case synth::VariantKind::kMixedSame: return synth::DonorStrategy::kSame;
    case synth::VariantKind::kMixedRand: return synth::DonorStrategy::kRand;
    default: return synth::DonorStrategy::kNext;
  }
}

void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

ImageTensor synthesize_variant(const synth::VariantSpec& variant, const SampleRecord& sample,
                               const ImageTensor& img, const BinaryMask& mask,
                               std::span<const SampleRecord> pool, int class_count, std::uint64_t seed) {
  require_same_dims(img, mask);
  const std::uint64_t stream = synth::derive_seed(seed, sample.sample_id, variant.name());
  switch (variant.kind) {
    case synth::VariantKind::kOriginal:
      return img;
    case synth::VariantKind::kOnlyFg:
      return synth::only_fg(img, mask);
    case synth::VariantKind::kMixedSame:
    case synth::VariantKind::kMixedRand:
    case synth::VariantKind::kMixedNext: {
      const auto& donor = synth::pick_donor(donor_strategy(variant.kind), sample, pool, class_count, seed);
      auto bg = synth::make_donor_background(load_image(donor.image_path), load_mask(donor.mask_path));
      if (bg.height() != img.height() || bg.width() != img.width()) {
        bg = resize_bilinear(bg, img.height(), img.width());
      }
      return synth::mixed_composite(img, mask, bg);
    }
    case synth::VariantKind::kGaussianNoiseBg:
      return synth::noise_background(img, mask, synth::NoiseKind::kGaussian, stream);
    case synth::VariantKind::kWhiteNoiseBg:
      return synth::noise_background(img, mask, synth::NoiseKind::kWhite, stream);
    case synth::VariantKind::kMeanNormNoiseBg:
      return synth::noise_background(img, mask, synth::NoiseKind::kMeanNorm, stream);
    case synth::VariantKind::kCorruptContext:
      if (!variant.corruption) throw ParamError("corruption variant without parameters");
      return synth::corrupt_context(img, mask, *variant.corruption, stream);
  }
  throw ParamError("unhandled variant " + variant.name());
}

VariantSet synthesize_all(std::span<const SampleRecord> samples, std::span<const synth::VariantSpec> variants,
                          int class_count, std::uint64_t seed, std::size_t jobs) {
  VariantSet set;
  for (const auto& v : variants) set.variants.push_back(v.name());
  set.samples.assign(samples.begin(), samples.end());
  set.images.resize(samples.size() * variants.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto img = load_image(samples[i].image_path);
    const auto mask = load_mask(samples[i].mask_path);
    for (std::size_t j = 0; j < variants.size(); ++j) {
      set.images[i * variants.size() + j] =
          synthesize_variant(variants[j], samples[i], img, mask, samples, class_count, seed);
    }
  });
  return set;
}

void write_variant_set(const VariantSet& set, const std::filesystem::path& dir, std::size_t jobs) {
  for (const auto& v : set.variants) std::filesystem::create_directories(dir / v);
  parallel_for(set.images.size(), jobs, [&](std::size_t k) {
    const auto& sample = set.samples[k / set.variants.size()];
    const auto& variant = set.variants[k % set.variants.size()];
    save_image(set.images[k], dir / variant / (sample.sample_id + ".png"));
  });
}

// ---- interchange ------------------------------------------------------------

nlohmann::json to_json(const PredictionRecord& p) {
  return {{"sample_id", p.sample_id},           {"variant", p.variant},
          {"model_id", p.model_id},             {"predicted_class", p.predicted_class},
          {"label_class", p.label_class},       {"score", p.score}};
}

PredictionRecord prediction_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("prediction row must be a JSON object");
  auto field = [&](const char* key) -> const nlohmann::json& {
    auto it = doc.find(key);
    if (it == doc.end()) throw SchemaError(std::string("missing field '") + key + "'");
    return *it;
  };
  auto string_field = [&](const char* key) {
    const auto& v = field(key);
    if (!v.is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  };
  auto int_field = [&](const char* key) {
    const auto& v = field(key);
    if (!v.is_number_integer()) throw SchemaError(std::string("field '") + key + "' must be an integer");
    return v.get<int>();
  };
  PredictionRecord p;
  p.sample_id = string_field("sample_id");
  p.variant = string_field("variant");
  p.model_id = string_field("model_id");
  p.predicted_class = int_field("predicted_class");
  p.label_class = int_field("label_class");
  const auto& score = field("score");
  if (!score.is_number()) throw SchemaError("field 'score' must be a number");
  p.score = score.get<double>();
  return p;
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::vector<PredictionRecord> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(text)));
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(path.filename().string() + " line " + std::to_string(line) + ": " + bare_message(e));
    }
  }
  return out;
}

void write_predictions(std::span<const PredictionRecord> preds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  for (const auto& p : preds) out << to_json(p).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path map_path(const std::filesystem::path& maps_dir, const std::string& variant,
                               const std::string& sample_id) {
  return maps_dir / variant / (sample_id + ".attr");
}

std::filesystem::path sidecar_path(const std::filesystem::path& map) {
  auto p = map;
  return p.replace_extension(".json");
}

// ---- builtin model ----------------------------------------------------------

std::vector<PredictionRecord> run_builtin(std::span<const SampleRecord> samples,
                                          std::span<const synth::VariantSpec> variants, const nn::Network& net,
                                          const BuiltinOptions& options, const std::filesystem::path& out) {
  const auto& in_shape = net.input_shape();
  if (in_shape.channels != ImageTensor::kChannels) {
    throw ShapeError("network expects " + std::to_string(in_shape.channels) + " input channels, images have 3");
  }
  attr::resolve_target_layer(net, options.method.target_layer);
  for (const auto& v : variants) {
    std::filesystem::create_directories(out / "maps" / v.name());
    if (options.write_images) std::filesystem::create_directories(out / "variants" / v.name());
  }

  std::vector<PredictionRecord> preds(samples.size() * variants.size());
  parallel_for(samples.size(), options.jobs, [&](std::size_t i) {
    const auto& sample = samples[i];
    const auto img = load_image(sample.image_path);
    const auto mask = load_mask(sample.mask_path);
    for (std::size_t j = 0; j < variants.size(); ++j) {
      const auto name = variants[j].name();
      const auto variant = run_stage("synthesize", [&] {
        auto v = synthesize_variant(variants[j], sample, img, mask, samples, net.class_count(), options.seed);
        if (options.write_images) save_image(v, out / "variants" / name / (sample.sample_id + ".png"));
        return v;
      });

      const bool resized = variant.height() != in_shape.height || variant.width() != in_shape.width;
      const auto x = nn::tensor_from_image(resized ? resize_bilinear(variant, in_shape.height, in_shape.width) : variant);
      const auto logits = run_stage("predict", [&] { return nn::forward(net, x).logits; });
      const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());

      PredictionRecord& p = preds[i * variants.size() + j];
      p.sample_id = sample.sample_id;
      p.variant = name;
      p.model_id = options.model_id;
      p.predicted_class = static_cast<int>(top);
      p.label_class = sample.class_id;
      p.score = nn::softmax(logits)[top];

      const auto map = run_stage("attribute", [&] { return attr::attribute(options.method, net, x, top); });
      const auto path = map_path(out / "maps", name, sample.sample_id);
      write_attr_map(map, path);
      auto meta = attr::method_metadata(options.method, net, top);
      meta["sample_id"] = sample.sample_id;
      meta["variant"] = name;
      meta["model_id"] = options.model_id;
      meta["map_height"] = map.height();
      meta["map_width"] = map.width();
      meta["input_resized"] = resized;
      write_json_file(meta, sidecar_path(path));
    }
  });
  write_predictions(preds, out / "predictions.jsonl");
  return preds;
}

}  // namespace ctxattr::harness
