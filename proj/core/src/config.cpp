#include "mv3d/config.hpp"

#include <fstream>
#include <functional>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mv3d/error.hpp"

namespace mv3d {

using nlohmann::json;

namespace {

// Typed field access with path-qualified errors.
class Object {
 public:
  Object(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<V, std::size_t> || std::is_same_v<V, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError(at(key) + " must be a non-negative integer");
      } else if constexpr (std::is_same_v<V, double>) {
        if (!it->is_number()) throw ConfigError(at(key) + " must be a number");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError(at(key) + " must be true or false");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError(at(key) + " must be a string");
      }
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(at(key) + ": " + e.what());
    }
  }

  void child(const char* key, const std::function<void(Object&)>& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Object sub(*it, at(key));
    fn(sub);
    sub.finish();
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + at(key) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_world(Object& o, WorldConfig& w) {
  o.get("regions", w.regions);
  if (const auto* v = o.raw("volume_shape")) {
    if (!v->is_array() || v->size() != 3) throw ConfigError(o.at("volume_shape") + " must be [D, H, W]");
    for (std::size_t a = 0; a < 3; ++a) {
      if (!(*v)[a].is_number_unsigned()) throw ConfigError(o.at("volume_shape") + " entries must be integers");
      w.volume_shape[a] = (*v)[a].get<std::size_t>();
    }
  }
  o.get("anomaly_prob", w.anomaly_prob);
  if (const auto* v = o.raw("anomaly_types")) {
    if (!v->is_array()) throw ConfigError(o.at("anomaly_types") + " must be a list of names");
    w.anomaly_types.clear();
    for (const auto& e : *v) {
      if (!e.is_string()) throw ConfigError(o.at("anomaly_types") + " entries must be strings");
      w.anomaly_types.push_back(e.get<std::string>());
    }
  }
  if (const auto* v = o.raw("blobs")) {
    if (!v->is_array()) throw ConfigError(o.at("blobs") + " must be a list");
    w.blobs.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      Object b((*v)[i], o.at("blobs") + "[" + std::to_string(i) + "]");
      BlobSpec spec;
      b.get("sigma", spec.sigma);
      b.get("amplitude", spec.amplitude);
      b.finish();
      w.blobs.push_back(spec);
    }
  }
  o.get("filler_sentence_count", w.filler_sentence_count);
  o.get("noise_sigma", w.noise_sigma);
  o.get("smooth_amplitude", w.smooth_amplitude);
  o.get("rng_seed", w.rng_seed);
}

json write_world(const WorldConfig& w) {
  json blobs = json::array();
  for (const auto& b : w.blobs) blobs.push_back({{"sigma", b.sigma}, {"amplitude", b.amplitude}});
  return {{"regions", w.regions},
          {"volume_shape", {w.volume_shape[0], w.volume_shape[1], w.volume_shape[2]}},
          {"anomaly_prob", w.anomaly_prob},
          {"anomaly_types", w.anomaly_types},
          {"blobs", blobs},
          {"filler_sentence_count", w.filler_sentence_count},
          {"noise_sigma", w.noise_sigma},
          {"smooth_amplitude", w.smooth_amplitude},
          {"rng_seed", w.rng_seed}};
}

void read_extent(Object& o, const char* key, Extent3& out) {
  if (const auto* v = o.raw(key)) {
    if (!v->is_array() || v->size() != 3) throw ConfigError(o.at(key) + " must be a 3-element list");
    for (std::size_t a = 0; a < 3; ++a) {
      if (!(*v)[a].is_number_unsigned()) throw ConfigError(o.at(key) + " entries must be integers");
      out[a] = (*v)[a].get<std::size_t>();
    }
  }
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  if (data.n_train == 0 || data.n_test == 0) throw ConfigError("data.n_train and data.n_test must be at least 1");
  model_config().validate();
  train.validate();
  if (model.vision.volume_shape != world.volume_shape)
    throw ConfigError("model.vision.volume_shape must equal world.volume_shape");
  for (const auto* ks : {&eval.retrieval_ks, &eval.grounding_ks})
    for (auto k : *ks)
      if (k == 0) throw ConfigError("eval K values must be positive");
}

ModelConfig RunConfig::model_config() const {
  auto m = model;
  m.seed = derive_seed(seed, 1);
  return m;
}

TrainConfig RunConfig::train_config() const {
  auto t = train;
  t.seed = derive_seed(seed, 2);
  return t;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json root = parse_text(json_text);
  RunConfig cfg;
  Object o(root, "");
  o.get("seed", cfg.seed);
  o.child("world", [&](Object& w) { read_world(w, cfg.world); });
  o.child("data", [&](Object& d) {
    d.get("n_train", cfg.data.n_train);
    d.get("n_test", cfg.data.n_test);
  });
  o.child("model", [&](Object& m) {
    m.child("vision", [&](Object& v) {
      auto& c = cfg.model.vision;
      read_extent(v, "volume_shape", c.volume_shape);
      read_extent(v, "patch_size", c.patch_size);
      v.get("embed_dim", c.embed_dim);
      v.get("depth", c.depth);
      v.get("heads", c.heads);
      v.get("proj_dim", c.proj_dim);
      v.get("mlp_hidden", c.mlp_hidden);
    });
    m.child("text", [&](Object& t) {
      auto& c = cfg.model.text;
      t.get("vocab_size", c.vocab_size);
      t.get("max_len", c.max_len);
      t.get("embed_dim", c.embed_dim);
      t.get("depth", c.depth);
      t.get("heads", c.heads);
      t.get("proj_dim", c.proj_dim);
      t.get("mlp_hidden", c.mlp_hidden);
    });
  });
  o.child("train", [&](Object& t) {
    auto& c = cfg.train;
    t.get("batch_size", c.batch_size);
    t.get("steps", c.steps);
    t.get("lr", c.lr);
    t.get("warmup_steps", c.warmup_steps);
    t.get("weight_decay", c.weight_decay);
    t.get("beta1", c.beta1);
    t.get("beta2", c.beta2);
    t.get("eps", c.eps);
    std::string mode = to_string(c.mode);
    t.get("mode", mode);
    c.mode = parse_loss_mode(mode);
    t.get("bank_capacity", c.bank_capacity);
    t.get("bank_full_wrap", c.bank_full_wrap);
    t.get("semantic_weight", c.semantic_weight);
    t.get("symmetric_semantic", c.loss.symmetric_semantic);
    t.get("cross_region_negatives", c.loss.cross_region_negatives);
    t.get("freeze_text", c.freeze_text);
  });
  o.child("eval", [&](Object& e) {
    e.get("retrieval_ks", cfg.eval.retrieval_ks);
    e.get("grounding_ks", cfg.eval.grounding_ks);
  });
  o.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  const auto& v = cfg.model.vision;
  const auto& t = cfg.model.text;
  const auto& tr = cfg.train;
  json j = {
      {"seed", cfg.seed},
      {"world", write_world(cfg.world)},
      {"data", {{"n_train", cfg.data.n_train}, {"n_test", cfg.data.n_test}}},
      {"model",
       {{"vision",
         {{"volume_shape", {v.volume_shape[0], v.volume_shape[1], v.volume_shape[2]}},
          {"patch_size", {v.patch_size[0], v.patch_size[1], v.patch_size[2]}},
          {"embed_dim", v.embed_dim},
          {"depth", v.depth},
          {"heads", v.heads},
          {"proj_dim", v.proj_dim},
          {"mlp_hidden", v.mlp_hidden}}},
        {"text",
         {{"vocab_size", t.vocab_size},
          {"max_len", t.max_len},
          {"embed_dim", t.embed_dim},
          {"depth", t.depth},
          {"heads", t.heads},
          {"proj_dim", t.proj_dim},
          {"mlp_hidden", t.mlp_hidden}}}}},
      {"train",
       {{"batch_size", tr.batch_size},
        {"steps", tr.steps},
        {"lr", tr.lr},
        {"warmup_steps", tr.warmup_steps},
        {"weight_decay", tr.weight_decay},
        {"beta1", tr.beta1},
        {"beta2", tr.beta2},
        {"eps", tr.eps},
        {"mode", to_string(tr.mode)},
        {"bank_capacity", tr.bank_capacity},
        {"bank_full_wrap", tr.bank_full_wrap},
        {"semantic_weight", tr.semantic_weight},
        {"symmetric_semantic", tr.loss.symmetric_semantic},
        {"cross_region_negatives", tr.loss.cross_region_negatives},
        {"freeze_text", tr.freeze_text}}},
      {"eval", {{"retrieval_ks", cfg.eval.retrieval_ks}, {"grounding_ks", cfg.eval.grounding_ks}}}};
  return j.dump(2) + "\n";
}

std::string world_to_json(const WorldConfig& cfg) { return write_world(cfg).dump(); }

WorldConfig world_from_json(const std::string& json_text) {
  const json root = parse_text(json_text);
  WorldConfig w;
  Object o(root, "world");
  read_world(o, w);
  o.finish();
  w.validate();
  return w;
}

}  // namespace mv3d
