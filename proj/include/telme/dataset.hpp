#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace telme {

enum class Modality { Text = 0, Audio = 1, Visual = 2 };

inline constexpr std::array<Modality, 3> kAllModalities = {Modality::Text, Modality::Audio, Modality::Visual};

const char* to_string(Modality m);
Modality parse_modality(const std::string& s);

/// One utterance of a dialogue with its three modality feature vectors.
struct FeatureRecord {
  std::string dialogue_id;
  std::size_t turn = 0;
  std::string speaker_id;
  std::size_t label = 0;
  std::vector<double> text_feat;
  std::vector<double> audio_feat;
  std::vector<double> visual_feat;

  const std::vector<double>& features(Modality m) const;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDims {
  std::size_t text = 0;
  std::size_t audio = 0;
  std::size_t visual = 0;

  std::size_t of(Modality m) const;
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

enum class SplitName { Train, Dev, Test };
const char* to_string(SplitName s);
SplitName parse_split(const std::string& s);

struct DatasetSplit {
  std::size_t num_classes = 0;
  FeatureDims dims;
  std::vector<FeatureRecord> train;
  std::vector<FeatureRecord> dev;
  std::vector<FeatureRecord> test;

  const std::vector<FeatureRecord>& get(SplitName s) const;
  std::vector<FeatureRecord>& get(SplitName s);
};

struct GeneratorConfig {
  std::size_t num_classes = 4;
  std::size_t train_dialogues = 200;
  std::size_t dev_dialogues = 40;
  std::size_t test_dialogues = 60;
  std::size_t min_utterances = 4;
  std::size_t max_utterances = 8;
  // The text feature carries a trailing speaker one-hot block of num_speakers
  // entries on top of text_dim.
  std::size_t text_dim = 16;
  std::size_t audio_dim = 16;
  std::size_t visual_dim = 16;
  std::size_t num_speakers = 2;
  double sep_text = 2.0;
  double sep_audio = 0.8;
  double sep_visual = 0.3;
  double context_mix = 0.2;
  double noise = 1.0;
  std::vector<double> class_probs;  // empty means uniform
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> effective_class_probs() const;
  FeatureDims dims() const { return {text_dim + num_speakers, audio_dim, visual_dim}; }
};

/// Seeded synthetic conversations. Each modality feature is the class mean
/// (a per-class prototype shared by all modalities, unit norm, scaled by that
/// modality's separation) plus Gaussian noise;
/// text is additionally blended with the mean of the dialogue's earlier text
/// features and tagged with a speaker one-hot block.
DatasetSplit generate(const GeneratorConfig& config);

/// Line-record feature file: a header object then one record object per line.
void save_features(const DatasetSplit& data, const std::filesystem::path& path);
DatasetSplit load_features(const std::filesystem::path& path);

/// Validates record invariants (dims, label range, contiguous turns, split
/// disjointness). Throws Schema errors.
void validate_dataset(const DatasetSplit& data);

using Batch = std::vector<std::size_t>;

/// Seeded shuffle of record indices into batches of `batch_size`; a trailing
/// batch smaller than 2 is dropped.
std::vector<Batch> make_batches(std::size_t num_records, std::size_t batch_size, std::uint64_t seed);

}  // namespace telme
