#include "telme/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "telme/checkpoint.hpp"
#include "telme/error.hpp"
#include "telme/init.hpp"

namespace telme {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::Parse, "config: " + where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, "config: " + sub(key) + ": " + e.what());
    }
  }

  void get(const char* key, std::size_t& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) fail(ErrorKind::Parse, "config: " + sub(key) + " must be a non-negative integer");
    out = it->get<std::size_t>();
  }

  void get(const char* key, double& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number()) fail(ErrorKind::Parse, "config: " + sub(key) + " must be a number");
    out = it->get<double>();
  }

  void modality(const char* key, Modality& out) {
    std::string s = to_string(out);
    get(key, s);
    try {
      out = parse_modality(s);
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "config: " + sub(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(ErrorKind::Parse, "config: unknown key " + sub(key.c_str()));
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json generator_json(const GeneratorConfig& g, bool with_seed) {
  json j = {{"num_classes", g.num_classes},
            {"train_dialogues", g.train_dialogues},
            {"dev_dialogues", g.dev_dialogues},
            {"test_dialogues", g.test_dialogues},
            {"min_utterances", g.min_utterances},
            {"max_utterances", g.max_utterances},
            {"text_dim", g.text_dim},
            {"audio_dim", g.audio_dim},
            {"visual_dim", g.visual_dim},
            {"num_speakers", g.num_speakers},
            {"sep_text", g.sep_text},
            {"sep_audio", g.sep_audio},
            {"sep_visual", g.sep_visual},
            {"context_mix", g.context_mix},
            {"noise", g.noise},
            {"class_probs", g.class_probs}};
  if (with_seed) j["seed"] = g.seed;
  return j;
}

void read_generator(const json& j, GeneratorConfig& g, bool& pinned) {
  ObjectReader r(j, "data");
  r.get("num_classes", g.num_classes);
  r.get("train_dialogues", g.train_dialogues);
  r.get("dev_dialogues", g.dev_dialogues);
  r.get("test_dialogues", g.test_dialogues);
  r.get("min_utterances", g.min_utterances);
  r.get("max_utterances", g.max_utterances);
  r.get("text_dim", g.text_dim);
  r.get("audio_dim", g.audio_dim);
  r.get("visual_dim", g.visual_dim);
  r.get("num_speakers", g.num_speakers);
  r.get("sep_text", g.sep_text);
  r.get("sep_audio", g.sep_audio);
  r.get("sep_visual", g.sep_visual);
  r.get("context_mix", g.context_mix);
  r.get("noise", g.noise);
  r.get("class_probs", g.class_probs);
  if (const json* s = r.child("seed"); s && !s->is_null()) {
    if (!s->is_number_unsigned()) fail(ErrorKind::Parse, "config: data.seed must be a non-negative integer");
    g.seed = s->get<std::uint64_t>();
    pinned = true;
  }
  r.finish();
}

json train_json(const TrainConfig& t) {
  return {{"embed_dim", t.embed_dim},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"warmup_fraction", t.warmup_fraction},
          {"teacher_epochs", t.teacher_epochs},
          {"student_epochs", t.student_epochs},
          {"fusion_epochs", t.fusion_epochs},
          {"teacher", to_string(t.teacher)}};
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.get("embed_dim", t.embed_dim);
  r.get("batch_size", t.batch_size);
  r.get("learning_rate", t.learning_rate);
  r.get("weight_decay", t.weight_decay);
  r.get("warmup_fraction", t.warmup_fraction);
  r.get("teacher_epochs", t.teacher_epochs);
  r.get("student_epochs", t.student_epochs);
  r.get("fusion_epochs", t.fusion_epochs);
  r.modality("teacher", t.teacher);
  r.finish();
}

void read_kd(const json& j, KDConfig& kd) {
  ObjectReader r(j, "kd");
  r.get("alpha", kd.alpha);
  r.get("beta", kd.beta);
  r.get("tau_response", kd.tau_response);
  r.get("tau_feature", kd.tau_feature);
  r.finish();
}

void read_fusion(const json& j, FusionHyper& f) {
  ObjectReader r(j, "fusion");
  r.get("heads", f.heads);
  r.get("theta", f.theta);
  r.get("dropout", f.dropout);
  r.finish();
}

void read_paths(const json& j, PathsConfig& p) {
  ObjectReader r(j, "paths");
  r.get("data_file", p.data_file);
  r.get("checkpoint_dir", p.checkpoint_dir);
  r.get("out_dir", p.out_dir);
  r.finish();
}

json hashed_json(const RunConfig& c) {
  json j = to_json(c);
  j.erase("paths");
  return j;
}

}  // namespace

void RunConfig::validate() const {
  generator().validate();
  train.validate();
  if (paths.out_dir.empty()) fail(ErrorKind::Configuration, "config: paths.out_dir must not be empty");
}

GeneratorConfig RunConfig::generator() const {
  GeneratorConfig g = data;
  if (!data_seed_pinned) g.seed = derive_seed(seed, "data");
  return g;
}

TrainConfig RunConfig::training() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::filesystem::path RunConfig::data_path() const {
  const std::filesystem::path p = paths.data_file;
  return p.is_absolute() ? p : out_dir() / p;
}

std::filesystem::path RunConfig::checkpoint_dir() const {
  const std::filesystem::path p = paths.checkpoint_dir;
  return p.is_absolute() ? p : out_dir() / p;
}

json to_json(const RunConfig& c) {
  const KDConfig& kd = c.train.kd;
  const FusionHyper& f = c.train.fusion;
  return {{"seed", c.seed},
          {"data", generator_json(c.data, c.data_seed_pinned)},
          {"train", train_json(c.train)},
          {"kd", {{"alpha", kd.alpha}, {"beta", kd.beta}, {"tau_response", kd.tau_response}, {"tau_feature", kd.tau_feature}}},
          {"fusion", {{"heads", f.heads}, {"theta", f.theta}, {"dropout", f.dropout}}},
          {"paths", {{"data_file", c.paths.data_file}, {"checkpoint_dir", c.paths.checkpoint_dir}, {"out_dir", c.paths.out_dir}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  if (const json* s = r.child("seed")) {
    if (!s->is_number_unsigned()) fail(ErrorKind::Parse, "config: seed must be a non-negative integer");
    c.seed = s->get<std::uint64_t>();
  }
  if (const json* d = r.child("data")) read_generator(*d, c.data, c.data_seed_pinned);
  if (const json* t = r.child("train")) read_train(*t, c.train);
  if (const json* k = r.child("kd")) read_kd(*k, c.train.kd);
  if (const json* f = r.child("fusion")) read_fusion(*f, c.train.fusion);
  if (const json* p = r.child("paths")) read_paths(*p, c.paths);
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json_file(path));
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) { write_json_file(path, to_json(c)); }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::Configuration, "override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorKind::Configuration, "override key '" + key + "' has an empty component");
    if (!node->is_object()) fail(ErrorKind::Configuration, "override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig with_overrides(const RunConfig& c, const std::vector<std::string>& assignments) {
  if (assignments.empty()) return c;
  json j = to_json(c);
  for (const auto& a : assignments) apply_override(j, a);
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  const std::string text = hashed_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace telme
