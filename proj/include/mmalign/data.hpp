#pragma once

// Samples, splits, missing-modality masking, the synthetic parallel-sequence
// generator and JSONL ingestion.
//
// JSONL schema, one sample per line:
//   {"id": string, "m1": [[real,...],...], "m2": [[real,...],...] | null,
//    "y": real | int, "offset": int (optional, synthetic ground truth)}
// Every row of m1 has the same width, likewise m2, and m1/m2 have the same
// number of rows.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmalign/encoder.hpp"
#include "mmalign/model.hpp"

namespace mmalign {

struct Sample {
  std::string id;
  ModalitySequence x1;
  std::optional<ModalitySequence> x2;
  double y = 0.0;
  std::optional<int> offset;  // ground-truth shift of m2 relative to m1
};

using Dataset = std::vector<Sample>;

enum class Setting { kA, kB };
std::string to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.15;  // test takes the rest
  double p = 0.1;              // surviving rate of the victim modality in train
  Setting setting = Setting::kA;
  Modality victim = Modality::kM2;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SplitSpec& spec);
SplitSpec split_spec_from_json(const nlohmann::json& j);

struct SynthConfig {
  Index n = 2000;
  Index length = 20;
  Index dim = 8;
  Index shift_min = 0;
  Index shift_max = 3;
  double mix_noise = 0.05;
  double label_noise = 0.05;
  std::uint64_t seed = 0;
  double smoothness = 0.6;        // AR(1) coefficient of every m1 feature
  bool identity_mixing = false;   // R = I instead of a random rotation
  double label_x1_weight = 1.0;
  double label_x2_weight = 1.5;
  Index num_classes = 0;          // > 0 turns labels into class indices
  double shift_cue = 1.0;         // level added to m1 feature 0, linear in the shift
  Index label_window = 0;         // rows of m2 pooled for the label, centered; 0 = l/4

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);

/// m1: per-feature AR(1) walk. m2_t = R m1_{t-s} + noise with a per-sample
/// shift s uniform in [shift_min, shift_max]. Feature 0 of the walk carries a
/// constant level in [-shift_cue, shift_cue] that grows linearly with s, so
/// the shift is recoverable from m1 content.
/// Timesteps before 0 or after l-1 come from an unobserved extension of the
/// same walk. The label mixes the pooled m1 mean with the m2 mean over a
/// centered window of label_window slots, squashed by tanh.
Dataset synth_generate(const SynthConfig& config);

/// Disjoint, exhaustive train/val/test partition, a pure function of
/// (seed, sample ids).
SplitDataset partition(const Dataset& data, const SplitSpec& spec);

/// Removes the victim modality: exactly round((1-p) n_train) training samples,
/// all val/test samples under Setting A, and each val/test sample with
/// probability 1-p under Setting B. Choices depend only on (seed, id), so a
/// second application is a no-op.
SplitDataset apply_missing(const SplitDataset& data, const SplitSpec& spec);

Dataset ingest(const std::filesystem::path& path);
Dataset ingest(std::istream& in);
void write_jsonl(std::ostream& out, const Dataset& data);

/// Digest of a dataset's canonical JSONL rendering.
std::string dataset_digest(const Dataset& data);

}  // namespace mmalign
