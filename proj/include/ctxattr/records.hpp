#pragma once

#include <filesystem>
#include <string>

namespace ctxattr {

// One manifest row. Paths are resolved against the manifest's directory.
struct SampleRecord {
  std::string sample_id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  int class_id = 0;
  std::string class_name;
};

// Top-1 output of a model on one (sample, variant). `correct` is always
// derived from the two class fields, never read from input.
struct PredictionRecord {
  std::string sample_id;
  std::string variant;
  std::string model_id;
  int predicted_class = 0;
  int label_class = 0;
  double score = 0.0;

  bool correct() const noexcept { return predicted_class == label_class; }
};

}  // namespace ctxattr
