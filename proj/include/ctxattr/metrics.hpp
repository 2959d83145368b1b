#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxattr/records.hpp"
#include "ctxattr/tensor.hpp"

namespace ctxattr::metrics {

// Share of attribution mass on object vs context pixels.
struct VolumeAttribution {
  double v_object = 0.0;
  double v_context = 0.0;
};

// v_object = Σ(A ⊙ M) / ΣA, v_context = Σ(A ⊙ (1 - M)) / ΣA, accumulated in
// double. Throws ShapeError, DomainError (negative or non-finite entry), or
// ZeroAttributionError (ΣA = 0).
VolumeAttribution volume_attribution(const AttributionMap& map, const BinaryMask& mask);

enum class SizeStratum { kLarge, kSmall, kOther };

std::string to_string(SizeStratum s);

// large: 0.30 <= φ <= 0.50; small: φ < 0.20; other otherwise.
SizeStratum size_stratum(double object_fraction);
SizeStratum size_strata(const BinaryMask& mask);

// One (sample, variant) after attribution.
struct AttributionRecord {
  PredictionRecord prediction;
  std::string method;
  VolumeAttribution volume;
  double object_fraction = 0.0;
  SizeStratum stratum = SizeStratum::kOther;
  // The map was resampled to the mask resolution before scoring.
  bool resized = false;
};

enum class GroupKey { kModel, kMethod, kVariant, kCorrectness, kStratum };

std::string to_string(GroupKey k);

// Mean accumulator; merging partial (count, sum) pairs is exact in the sense
// that the result depends only on the multiset of merged values' sums.
struct MeanAccumulator {
  std::size_t count = 0;
  double sum_object = 0.0;
  double sum_context = 0.0;

  void add(const VolumeAttribution& v) {
    ++count;
    sum_object += v.v_object;
    sum_context += v.v_context;
  }
  void merge(const MeanAccumulator& other) {
    count += other.count;
    sum_object += other.sum_object;
    sum_context += other.sum_context;
  }
};

struct GroupStats {
  std::vector<std::string> key;  // one value per requested GroupKey
  std::size_t count = 0;
  double mean_object = 0.0;
  double mean_context = 0.0;
};

// Per-group arithmetic means, groups ordered by key. Throws EmptyGroupError on
// empty input.
std::vector<GroupStats> aggregate(std::span<const AttributionRecord> records, std::span<const GroupKey> group_by);

// Partition by the derived `correct` flag; disjoint and exhaustive.
std::pair<std::vector<PredictionRecord>, std::vector<PredictionRecord>> split_by_correctness(
    std::span<const PredictionRecord> preds);
std::pair<std::vector<AttributionRecord>, std::vector<AttributionRecord>> split_by_correctness(
    std::span<const AttributionRecord> records);

struct VariantAccuracy {
  std::size_t total = 0;
  std::size_t correct = 0;
  double percent = 0.0;
};

struct AccuracyTable {
  std::map<std::string, VariantAccuracy> variants;
  double orig = 0.0;
  std::vector<std::string> cc_variants;
  std::vector<std::string> cp_variants;
  // Absent when the corresponding variant list is empty.
  std::optional<double> mean_cc;
  std::optional<double> mean_cp;
  std::optional<double> decline_cc;
  std::optional<double> decline_cp;
};

inline const std::vector<std::string> kContextChangeVariants = {"only_fg", "mixed_next", "mixed_rand", "mixed_same"};
inline const std::vector<std::string> kContextPerturbationVariants = {"fog", "snow", "motion_blur", "gaussian_noise",
                                                                      "pixelate"};
inline const std::vector<std::string> kNoInformationVariants = {"only_fg", "gaussian_noise_bg", "white_noise_bg",
                                                                "meannorm_noise_bg"};

// From percent accuracies keyed by variant name ("original" required).
AccuracyTable accuracy_table(const std::map<std::string, double>& percent, const std::vector<std::string>& cc,
                             const std::vector<std::string>& cp);
// From prediction rows; throws MissingVariantError when "original" or a listed
// variant has no rows.
AccuracyTable accuracy_table(std::span<const PredictionRecord> preds, const std::vector<std::string>& cc,
                             const std::vector<std::string>& cp);

struct FilterResult {
  std::vector<SampleRecord> kept;
  std::vector<SampleRecord> dropped;
  double kept_fraction = 0.0;
};

inline constexpr double kDefaultContextThreshold = 0.30;

using MaskLoader = std::function<BinaryMask(const SampleRecord&)>;

// Keeps samples whose context fraction is strictly above `threshold`.
FilterResult context_fraction_filter(std::span<const SampleRecord> samples, const MaskLoader& load,
                                     double threshold = kDefaultContextThreshold);

}  // namespace ctxattr::metrics
