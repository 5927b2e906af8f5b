#include "telme/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "telme/error.hpp"

namespace telme {

using nlohmann::json;

namespace {
constexpr int kFeatureSchemaVersion = 1;
constexpr const char* kFeatureSchemaName = "telme-features";
}  // namespace

const char* to_string(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Audio: return "audio";
    case Modality::Visual: return "visual";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "text" || s == "T") return Modality::Text;
  if (s == "audio" || s == "A") return Modality::Audio;
  if (s == "visual" || s == "V") return Modality::Visual;
  fail(ErrorKind::Configuration, "unknown modality '" + s + "'");
}

const std::vector<double>& FeatureRecord::features(Modality m) const {
  switch (m) {
    case Modality::Text: return text_feat;
    case Modality::Audio: return audio_feat;
    case Modality::Visual: return visual_feat;
  }
  return text_feat;
}

std::size_t FeatureDims::of(Modality m) const {
  switch (m) {
    case Modality::Text: return text;
    case Modality::Audio: return audio;
    case Modality::Visual: return visual;
  }
  return 0;
}

const char* to_string(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Dev: return "dev";
    case SplitName::Test: return "test";
  }
  return "?";
}

SplitName parse_split(const std::string& s) {
  if (s == "train") return SplitName::Train;
  if (s == "dev") return SplitName::Dev;
  if (s == "test") return SplitName::Test;
  fail(ErrorKind::Configuration, "unknown split '" + s + "'");
}

const std::vector<FeatureRecord>& DatasetSplit::get(SplitName s) const {
  switch (s) {
    case SplitName::Train: return train;
    case SplitName::Dev: return dev;
    case SplitName::Test: return test;
  }
  return train;
}

std::vector<FeatureRecord>& DatasetSplit::get(SplitName s) {
  return const_cast<std::vector<FeatureRecord>&>(std::as_const(*this).get(s));
}

void GeneratorConfig::validate() const {
  if (num_classes == 0) fail(ErrorKind::Configuration, "generator: num_classes must be > 0");
  if (train_dialogues + dev_dialogues + test_dialogues == 0 || train_dialogues == 0)
    fail(ErrorKind::Configuration, "generator: zero dialogues");
  if (min_utterances == 0 || min_utterances > max_utterances)
    fail(ErrorKind::Configuration, "generator: utterance range must satisfy 1 <= min <= max");
  if (num_speakers == 0) fail(ErrorKind::Configuration, "generator: num_speakers must be > 0");
  if (text_dim == 0 || audio_dim == 0 || visual_dim == 0)
    fail(ErrorKind::Configuration, "generator: feature dims must be > 0");
  if (sep_text < 0 || sep_audio < 0 || sep_visual < 0)
    fail(ErrorKind::Configuration, "generator: separations must be >= 0");
  if (!(context_mix >= 0.0 && context_mix < 1.0))
    fail(ErrorKind::Configuration, "generator: context_mix must be in [0, 1)");
  if (!(noise >= 0.0)) fail(ErrorKind::Configuration, "generator: noise must be >= 0");
  if (!class_probs.empty()) {
    if (class_probs.size() != num_classes)
      fail(ErrorKind::Configuration, "generator: class_probs length must equal num_classes");
    double s = 0.0;
    for (double p : class_probs) {
      if (!(p >= 0.0)) fail(ErrorKind::Configuration, "generator: negative class probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) fail(ErrorKind::Configuration, "generator: class_probs must sum to 1");
  }
}

std::vector<double> GeneratorConfig::effective_class_probs() const {
  if (!class_probs.empty()) return class_probs;
  return std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes));
}

namespace {

// One unit prototype per class, shared by all modalities so class geometry is common.
// A modality keeps the leading dim coordinates, renormalized and scaled by its separation.
std::vector<std::vector<double>> class_prototypes(std::size_t classes, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> protos(classes, std::vector<double>(dim));
  for (auto& p : protos)
    for (double& v : p) v = normal(rng);
  return protos;
}

std::vector<std::vector<double>> class_means(const std::vector<std::vector<double>>& protos, std::size_t dim,
                                             double sep) {
  std::vector<std::vector<double>> means;
  for (const auto& p : protos) {
    std::vector<double> m(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(dim));
    double norm = 0.0;
    for (double v : m) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : m) v = norm > 0 ? sep * v / norm : 0.0;
    means.push_back(std::move(m));
  }
  return means;
}

}  // namespace

DatasetSplit generate(const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto protos = class_prototypes(
      config.num_classes, std::max({config.text_dim, config.audio_dim, config.visual_dim}), rng);
  const auto text_means = class_means(protos, config.text_dim, config.sep_text);
  const auto audio_means = class_means(protos, config.audio_dim, config.sep_audio);
  const auto visual_means = class_means(protos, config.visual_dim, config.sep_visual);

  const auto probs = config.effective_class_probs();
  std::discrete_distribution<std::size_t> label_dist(probs.begin(), probs.end());
  std::uniform_int_distribution<std::size_t> length_dist(config.min_utterances, config.max_utterances);
  std::uniform_int_distribution<std::size_t> speaker_dist(0, config.num_speakers - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto noisy = [&](const std::vector<double>& mean) {
    std::vector<double> x(mean);
    for (double& v : x) v += config.noise * normal(rng);
    return x;
  };

  DatasetSplit out;
  out.num_classes = config.num_classes;
  out.dims = config.dims();

  std::size_t dialogue_index = 0;
  auto emit = [&](std::vector<FeatureRecord>& split, std::size_t count) {
    for (std::size_t n = 0; n < count; ++n, ++dialogue_index) {
      char id[32];
      std::snprintf(id, sizeof id, "dlg%05zu", dialogue_index);
      const std::size_t length = length_dist(rng);
      std::vector<std::vector<double>> history;
      for (std::size_t turn = 0; turn < length; ++turn) {
        FeatureRecord r;
        r.dialogue_id = id;
        r.turn = turn;
        const std::size_t speaker = speaker_dist(rng);
        r.speaker_id = "s" + std::to_string(speaker);
        r.label = label_dist(rng);

        std::vector<double> raw_text = noisy(text_means[r.label]);
        r.text_feat = raw_text;
        if (!history.empty()) {
          for (std::size_t i = 0; i < raw_text.size(); ++i) {
            double ctx = 0.0;
            for (const auto& h : history) ctx += h[i];
            ctx /= static_cast<double>(history.size());
            r.text_feat[i] = (1.0 - config.context_mix) * raw_text[i] + config.context_mix * ctx;
          }
        }
        history.push_back(std::move(raw_text));
        for (std::size_t s = 0; s < config.num_speakers; ++s) r.text_feat.push_back(s == speaker ? 1.0 : 0.0);

        r.audio_feat = noisy(audio_means[r.label]);
        r.visual_feat = noisy(visual_means[r.label]);
        split.push_back(std::move(r));
      }
    }
  };
  emit(out.train, config.train_dialogues);
  emit(out.dev, config.dev_dialogues);
  emit(out.test, config.test_dialogues);
  return out;
}

void validate_dataset(const DatasetSplit& data) {
  std::map<std::string, SplitName> owner;
  for (SplitName s : {SplitName::Train, SplitName::Dev, SplitName::Test}) {
    std::map<std::string, std::vector<std::size_t>> turns;
    for (const auto& r : data.get(s)) {
      if (r.label >= data.num_classes)
        fail(ErrorKind::Schema, "record " + r.dialogue_id + "/" + std::to_string(r.turn) + ": label " +
                                    std::to_string(r.label) + " >= num_classes " + std::to_string(data.num_classes));
      for (Modality m : kAllModalities) {
        if (r.features(m).size() != data.dims.of(m))
          fail(ErrorKind::Schema, "record " + r.dialogue_id + "/" + std::to_string(r.turn) + ": " + to_string(m) +
                                      " feature has dim " + std::to_string(r.features(m).size()) + ", expected " +
                                      std::to_string(data.dims.of(m)));
      }
      turns[r.dialogue_id].push_back(r.turn);
      auto [it, inserted] = owner.emplace(r.dialogue_id, s);
      if (!inserted && it->second != s)
        fail(ErrorKind::Schema, "dialogue " + r.dialogue_id + " appears in splits " + to_string(it->second) +
                                    " and " + to_string(s));
    }
    for (auto& [id, t] : turns) {
      std::sort(t.begin(), t.end());
      for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] != i) fail(ErrorKind::Schema, "dialogue " + id + ": turn indices are not contiguous from 0");
    }
  }
}

void save_features(const DatasetSplit& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Configuration, "cannot write " + path.string());
  json header = {{"schema", kFeatureSchemaName},
                 {"version", kFeatureSchemaVersion},
                 {"num_classes", data.num_classes},
                 {"text_dim", data.dims.text},
                 {"audio_dim", data.dims.audio},
                 {"visual_dim", data.dims.visual}};
  os << header.dump() << '\n';
  for (SplitName s : {SplitName::Train, SplitName::Dev, SplitName::Test}) {
    for (const auto& r : data.get(s)) {
      json j = {{"dialogue_id", r.dialogue_id}, {"turn", r.turn},
                {"speaker_id", r.speaker_id},   {"label", r.label},
                {"split", to_string(s)},        {"text_feat", r.text_feat},
                {"audio_feat", r.audio_feat},   {"visual_feat", r.visual_feat}};
      os << j.dump() << '\n';
    }
  }
  if (!os) fail(ErrorKind::Configuration, "failed writing " + path.string());
}

namespace {

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + what);
}

template <class T>
T field(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end()) parse_fail(line_no, std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    parse_fail(line_no, std::string("key '") + key + "' has the wrong type");
  }
}

std::vector<double> feature_field(const json& j, const char* key, std::size_t expected, std::size_t line_no) {
  auto v = field<std::vector<double>>(j, key, line_no);
  for (double x : v)
    if (!std::isfinite(x)) parse_fail(line_no, std::string("non-finite value in ") + key);
  if (v.size() != expected)
    fail(ErrorKind::Schema, "line " + std::to_string(line_no) + ": " + key + " has dim " + std::to_string(v.size()) +
                                ", header declares " + std::to_string(expected));
  return v;
}

}  // namespace

DatasetSplit load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Dependency, "feature file not found: " + path.string());

  DatasetSplit out;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      parse_fail(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) parse_fail(line_no, "expected an object");

    if (!have_header) {
      if (field<std::string>(j, "schema", line_no) != kFeatureSchemaName)
        parse_fail(line_no, "header schema is not telme-features");
      const int version = field<int>(j, "version", line_no);
      if (version != kFeatureSchemaVersion)
        fail(ErrorKind::Schema, "line " + std::to_string(line_no) + ": unsupported schema version " + std::to_string(version));
      out.num_classes = field<std::size_t>(j, "num_classes", line_no);
      out.dims = {field<std::size_t>(j, "text_dim", line_no), field<std::size_t>(j, "audio_dim", line_no),
                  field<std::size_t>(j, "visual_dim", line_no)};
      if (out.num_classes == 0) fail(ErrorKind::Schema, "line " + std::to_string(line_no) + ": num_classes must be > 0");
      have_header = true;
      continue;
    }

    FeatureRecord r;
    r.dialogue_id = field<std::string>(j, "dialogue_id", line_no);
    r.turn = field<std::size_t>(j, "turn", line_no);
    r.speaker_id = field<std::string>(j, "speaker_id", line_no);
    r.label = field<std::size_t>(j, "label", line_no);
    if (r.label >= out.num_classes)
      fail(ErrorKind::Schema, "line " + std::to_string(line_no) + ": label " + std::to_string(r.label) +
                                  " out of range for " + std::to_string(out.num_classes) + " classes");
    SplitName split;
    try {
      split = parse_split(field<std::string>(j, "split", line_no));
    } catch (const Error&) {
      parse_fail(line_no, "split must be train, dev or test");
    }
    r.text_feat = feature_field(j, "text_feat", out.dims.text, line_no);
    r.audio_feat = feature_field(j, "audio_feat", out.dims.audio, line_no);
    r.visual_feat = feature_field(j, "visual_feat", out.dims.visual, line_no);
    out.get(split).push_back(std::move(r));
  }
  if (!have_header) fail(ErrorKind::Parse, "line 1: missing header in " + path.string());
  validate_dataset(out);
  return out;
}

std::vector<Batch> make_batches(std::size_t num_records, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) fail(ErrorKind::Configuration, "batch size must be >= 2");
  std::vector<std::size_t> order(num_records);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < num_records; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, num_records);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace telme
