#include <algorithm>
#include <random>

#include "ctxattr/errors.hpp"
#include "ctxattr/synthesis.hpp"

namespace ctxattr::synth {

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::kFog: return "fog";
    case Corruption::kSnow: return "snow";
    case Corruption::kMotionBlur: return "motion_blur";
    case Corruption::kGaussianNoise: return "gaussian_noise";
    case Corruption::kPixelate: return "pixelate";
  }
  return "unknown";
}

std::optional<Corruption> parse_corruption(const std::string& name) {
  for (auto c : {Corruption::kFog, Corruption::kSnow, Corruption::kMotionBlur, Corruption::kGaussianNoise,
                 Corruption::kPixelate}) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

CorruptionSpec CorruptionSpec::at_severity(Corruption kind, int severity) {
  if (severity < kMinSeverity || severity > kMaxSeverity) {
    throw ParamError("severity " + std::to_string(severity) + " outside 1..5");
  }
  const auto s = static_cast<std::size_t>(severity - 1);
  CorruptionSpec spec;
  spec.kind = kind;
  spec.severity = severity;
  auto& p = spec.params;
  switch (kind) {
    case Corruption::kGaussianNoise: p.sigma = kNoiseSigma[s]; break;
    case Corruption::kMotionBlur: p.length = kBlurLength[s]; break;
    case Corruption::kPixelate: p.factor = kPixelateFactor[s]; break;
    case Corruption::kFog:
      p.fog_strength = kFogStrength[s];
      p.fog_roughness = kFogRoughness[s];
      break;
    case Corruption::kSnow:
      p.snow_threshold = kSnowThreshold[s];
      p.snow_weight = kSnowWeight[s];
      p.length = kBlurLength[s];
      break;
  }
  return spec;
}

nlohmann::json CorruptionSpec::to_json() const {
  nlohmann::json j{{"corruption", to_string(kind)}, {"severity", severity}};
  switch (kind) {
    case Corruption::kGaussianNoise: j["sigma"] = params.sigma; break;
    case Corruption::kMotionBlur: j["length"] = params.length; break;
    case Corruption::kPixelate: j["factor"] = params.factor; break;
    case Corruption::kFog:
      j["strength"] = params.fog_strength;
      j["roughness"] = params.fog_roughness;
      break;
    case Corruption::kSnow:
      j["threshold"] = params.snow_threshold;
      j["weight"] = params.snow_weight;
      j["length"] = params.length;
      break;
  }
  return j;
}

std::string VariantSpec::name() const {
  switch (kind) {
    case VariantKind::kOriginal: return "original";
    case VariantKind::kOnlyFg: return "only_fg";
    case VariantKind::kMixedSame: return "mixed_same";
    case VariantKind::kMixedRand: return "mixed_rand";
    case VariantKind::kMixedNext: return "mixed_next";
    case VariantKind::kGaussianNoiseBg: return "gaussian_noise_bg";
    case VariantKind::kWhiteNoiseBg: return "white_noise_bg";
    case VariantKind::kMeanNormNoiseBg: return "meannorm_noise_bg";
    case VariantKind::kCorruptContext: return corruption ? to_string(corruption->kind) : "corrupt_context";
  }
  return "unknown";
}

bool VariantSpec::stochastic() const {
  switch (kind) {
    case VariantKind::kMixedSame:
    case VariantKind::kMixedRand:
    case VariantKind::kMixedNext:
    case VariantKind::kGaussianNoiseBg:
    case VariantKind::kWhiteNoiseBg:
    case VariantKind::kCorruptContext:
      return true;
    default:
      return false;
  }
}

bool VariantSpec::needs_donor() const {
  return kind == VariantKind::kMixedSame || kind == VariantKind::kMixedRand || kind == VariantKind::kMixedNext;
}

VariantSpec parse_variant(const std::string& name, int severity) {
  static const std::pair<const char*, VariantKind> kFixed[] = {
      {"original", VariantKind::kOriginal},
      {"only_fg", VariantKind::kOnlyFg},
      {"mixed_same", VariantKind::kMixedSame},
      {"mixed_rand", VariantKind::kMixedRand},
      {"mixed_next", VariantKind::kMixedNext},
      {"gaussian_noise_bg", VariantKind::kGaussianNoiseBg},
      {"white_noise_bg", VariantKind::kWhiteNoiseBg},
      {"meannorm_noise_bg", VariantKind::kMeanNormNoiseBg},
  };
  for (const auto& [n, k] : kFixed) {
    if (name == n) return VariantSpec{k, std::nullopt};
  }
  if (auto c = parse_corruption(name)) {
    return VariantSpec{VariantKind::kCorruptContext, CorruptionSpec::at_severity(*c, severity)};
  }
  throw ParamError("unknown variant '" + name + "'");
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view sample_id, std::string_view tag) {
  std::uint64_t h = splitmix64(global_seed);
  h = splitmix64(h ^ fnv1a64(sample_id));
  return splitmix64(h ^ fnv1a64(tag));
}

std::string to_string(DonorStrategy s) {
  switch (s) {
    case DonorStrategy::kSame: return "same";
    case DonorStrategy::kRand: return "rand";
    case DonorStrategy::kNext: return "next";
  }
  return "unknown";
}

const SampleRecord& pick_donor(DonorStrategy strategy, const SampleRecord& sample,
                               std::span<const SampleRecord> pool, int class_count, std::uint64_t seed) {
  if (pool.empty()) throw PoolError("donor pool is empty");
  if (class_count < 1) throw PoolError("class_count must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, sample.sample_id, "donor_" + to_string(strategy)));

  auto members_of = [&](int cls) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i].class_id == cls && pool[i].sample_id != sample.sample_id) out.push_back(i);
    }
    return out;
  };
  auto uniform_pick = [&](const std::vector<std::size_t>& items) -> std::size_t {
    std::uniform_int_distribution<std::size_t> dist(0, items.size() - 1);
    return items[dist(rng)];
  };

  std::vector<std::size_t> candidates;
  switch (strategy) {
    case DonorStrategy::kSame:
      candidates = members_of(sample.class_id);
      if (candidates.empty()) {
        throw PoolError("no other sample of class " + std::to_string(sample.class_id) + " for " + sample.sample_id);
      }
      break;
    case DonorStrategy::kNext: {
      const int next = (sample.class_id + 1) % class_count;
      if (next == sample.class_id) throw PoolError("next-class donor needs at least two classes");
      candidates = members_of(next);
      if (candidates.empty()) {
        throw PoolError("class " + std::to_string(next) + " has no samples to donate to " + sample.sample_id);
      }
      break;
    }
    case DonorStrategy::kRand: {
      std::vector<int> classes;
      for (int c = 0; c < class_count; ++c) {
        if (c != sample.class_id && !members_of(c).empty()) classes.push_back(c);
      }
      if (classes.empty()) throw PoolError("no other class has samples to donate to " + sample.sample_id);
      std::uniform_int_distribution<std::size_t> dist(0, classes.size() - 1);
      candidates = members_of(classes[dist(rng)]);
      break;
    }
  }
  return pool[uniform_pick(candidates)];
}

}  // namespace ctxattr::synth
