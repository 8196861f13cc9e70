#include "ciess/run_io.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

namespace ciess {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ", ";
    out += parts[i];
  }
  return out;
}

/// Tracks which keys a section is allowed to contain; finish() reports
/// every unexpected key at once.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string scope) : j_(&j), scope_(std::move(scope)) {
    if (!j.is_object()) throw InputError(scope_ + " must be a JSON object");
  }

  bool has(const std::string& key) {
    allowed_.insert(key);
    return j_->contains(key);
  }

  const json* field(const std::string& key) {
    allowed_.insert(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (!f->is_number()) throw InputError(path(key) + " must be a number");
    return f->get<double>();
  }

  int integer(const std::string& key, int fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (!f->is_number_integer()) throw InputError(path(key) + " must be an integer");
    if (f->is_number_unsigned() &&
        f->get<uint64_t>() >
            static_cast<uint64_t>(std::numeric_limits<int>::max())) {
      throw InputError(path(key) + " is out of range");
    }
    const int64_t v = f->get<int64_t>();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      throw InputError(path(key) + " is out of range");
    }
    return static_cast<int>(v);
  }

  uint64_t unsigned64(const std::string& key, uint64_t fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (f->is_number_unsigned()) return f->get<uint64_t>();
    if (f->is_number_integer() && f->get<int64_t>() >= 0) {
      return static_cast<uint64_t>(f->get<int64_t>());
    }
    throw InputError(path(key) + " must be a non-negative integer");
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (!f->is_boolean()) throw InputError(path(key) + " must be a boolean");
    return f->get<bool>();
  }

  std::string text(const std::string& key, std::string fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (!f->is_string()) throw InputError(path(key) + " must be a string");
    return f->get<std::string>();
  }

  std::vector<double> number_array(const std::string& key, std::vector<double> fallback) {
    const json* f = field(key);
    if (!f) return fallback;
    if (!f->is_array()) throw InputError(path(key) + " must be an array of numbers");
    std::vector<double> out;
    out.reserve(f->size());
    for (const auto& item : *f) {
      if (!item.is_number()) throw InputError(path(key) + " must be an array of numbers");
      out.push_back(item.get<double>());
    }
    return out;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!allowed_.count(it.key())) unknown.push_back(it.key());
    }
    if (unknown.empty()) return;
    std::vector<std::string> allowed(allowed_.begin(), allowed_.end());
    std::string msg = scope_ + ": unknown key";
    if (unknown.size() > 1) msg += "s";
    msg += ": " + join(unknown) + " (allowed: " + join(allowed) + ")";
    throw InputError(msg);
  }

 private:
  std::string path(const std::string& key) const { return scope_ + "." + key; }

  const json* j_;
  std::string scope_;
  std::set<std::string> allowed_;
};

void read_backbone(const json& j, RecommenderConfig& out) {
  ObjectReader r(j, "backbone");
  out.backbone = parse_backbone(r.text("kind", backbone_name(out.backbone)));
  out.d_max = r.integer("d_max", out.d_max);
  const bool lr_given = r.has("learning_rate");
  out.learning_rate = r.number("learning_rate", out.learning_rate);
  if (!lr_given && out.backbone == Backbone::lightgcn_lite) {
    out.learning_rate = 5e-3;
  }
  out.l2_weight = r.number("l2_weight", out.l2_weight);
  out.batch_size = r.integer("batch_size", out.batch_size);
  out.init_scale = r.number("init_scale", out.init_scale);
  if (r.has("num_layers")) {
    if (out.backbone != Backbone::lightgcn_lite) {
      throw InputError("backbone.num_layers only applies to lightgcn-lite");
    }
    out.num_layers = r.integer("num_layers", out.num_layers);
    if (out.num_layers < 1 || out.num_layers > 3) {
      throw InputError("backbone.num_layers must lie in [1, 3]");
    }
  }
  r.finish();
}

void read_search(const json& j, SearchConfig& out) {
  ObjectReader r(j, "search");
  out.episodes = r.integer("episodes", out.episodes);
  out.iterations = r.integer("iterations", out.iterations);
  out.lambda = r.number("lambda", out.lambda);
  out.noise = parse_noise(r.text("noise", noise_name(out.noise)));
  out.sigma = r.number("sigma", out.sigma);
  out.random_walk = r.boolean("random_walk", out.random_walk);
  out.walk_threshold = r.integer("walk_threshold", out.walk_threshold);
  out.walk_length = r.integer("walk_length", out.walk_length);
  out.epochs_per_iter = r.integer("epochs_per_iter", out.epochs_per_iter);
  out.top_l = r.integer("top_l", out.top_l);
  out.targets = r.number_array("targets", out.targets);
  out.warm_start = r.boolean("warm_start", out.warm_start);
  r.finish();
}

void read_td3(const json& j, TD3Config& out) {
  ObjectReader r(j, "td3");
  out.gamma = r.number("gamma", out.gamma);
  out.tau = r.number("tau", out.tau);
  out.policy_delay = r.integer("policy_delay", out.policy_delay);
  out.batch_size = r.integer("batch_size", out.batch_size);
  out.buffer_capacity =
      static_cast<size_t>(r.unsigned64("buffer_capacity", out.buffer_capacity));
  out.max_updates_per_iter = r.integer("max_updates_per_iter", out.max_updates_per_iter);
  out.smoothing_std = r.number("smoothing_std", out.smoothing_std);
  out.smoothing_clip = r.number("smoothing_clip", out.smoothing_clip);
  out.actor_lr = r.number("actor_lr", out.actor_lr);
  out.critic_lr = r.number("critic_lr", out.critic_lr);
  r.finish();
}

void read_retrain(const json& j, RetrainConfig& out) {
  ObjectReader r(j, "retrain");
  out.max_epochs = r.integer("max_epochs", out.max_epochs);
  out.patience = r.integer("patience", out.patience);
  r.finish();
}

}  // namespace

EngineConfig engine_config_from_json(const nlohmann::json& j) {
  ObjectReader root(j, "config");
  const int version = root.integer("version", 1);
  if (version != 1) {
    throw InputError("config.version must be 1, got " + std::to_string(version));
  }
  EngineConfig cfg;
  cfg.seed = root.unsigned64("seed", cfg.seed);
  cfg.threads = root.integer("threads", cfg.threads);
  if (const json* b = root.field("backbone")) read_backbone(*b, cfg.backbone);
  if (const json* s = root.field("search")) read_search(*s, cfg.search);
  if (const json* t = root.field("td3")) read_td3(*t, cfg.td3);
  if (const json* r = root.field("retrain")) read_retrain(*r, cfg.retrain);
  root.finish();
  cfg.validate();
  return cfg;
}

EngineConfig load_engine_config(const std::string& path) {
  return engine_config_from_json(load_json_file(path));
}

nlohmann::json engine_config_to_json(const EngineConfig& c) {
  json backbone{
      {"kind", backbone_name(c.backbone.backbone)},
      {"d_max", c.backbone.d_max},
      {"learning_rate", c.backbone.learning_rate},
      {"l2_weight", c.backbone.l2_weight},
      {"batch_size", c.backbone.batch_size},
      {"init_scale", c.backbone.init_scale},
  };
  if (c.backbone.backbone == Backbone::lightgcn_lite) {
    backbone["num_layers"] = c.backbone.num_layers;
  }
  const json search{
      {"episodes", c.search.episodes},
      {"iterations", c.search.iterations},
      {"lambda", c.search.lambda},
      {"noise", noise_name(c.search.noise)},
      {"sigma", c.search.sigma},
      {"random_walk", c.search.random_walk},
      {"walk_threshold", c.search.walk_threshold},
      {"walk_length", c.search.walk_length},
      {"epochs_per_iter", c.search.epochs_per_iter},
      {"top_l", c.search.top_l},
      {"targets", c.search.targets},
      {"warm_start", c.search.warm_start},
  };
  const json td3{
      {"gamma", c.td3.gamma},
      {"tau", c.td3.tau},
      {"policy_delay", c.td3.policy_delay},
      {"batch_size", c.td3.batch_size},
      {"buffer_capacity", static_cast<uint64_t>(c.td3.buffer_capacity)},
      {"max_updates_per_iter", c.td3.max_updates_per_iter},
      {"smoothing_std", c.td3.smoothing_std},
      {"smoothing_clip", c.td3.smoothing_clip},
      {"actor_lr", c.td3.actor_lr},
      {"critic_lr", c.td3.critic_lr},
  };
  const json retrain{
      {"max_epochs", c.retrain.max_epochs},
      {"patience", c.retrain.patience},
  };
  return json{
      {"version", 1},   {"seed", c.seed}, {"threads", c.threads},
      {"backbone", backbone}, {"search", search}, {"td3", td3},
      {"retrain", retrain},
  };
}

nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(origin + ": " + e.what());
  }
}

nlohmann::json load_json_file(const std::string& path) {
  return parse_json_text(read_text_file(path), path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw InputError("cannot read " + path);
  return std::move(buf).str();
}

void atomic_write_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw StateError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw StateError("cannot move " + tmp + " into place: " + ec.message());
}

void save_json(const std::string& path, const nlohmann::json& j) {
  atomic_write_text(path, j.dump(2) + "\n");
}

JsonlWriter::JsonlWriter(const std::string& path) : path_(path) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw StateError("cannot write " + path);
}

void JsonlWriter::write(const nlohmann::json& object) {
  out_ << object.dump() << '\n';
  out_.flush();
  if (!out_) throw StateError("failed writing " + path_);
}

nlohmann::json trace_line(const IterationRecord& r) {
  return json{
      {"episode", r.episode},
      {"iter", r.iteration},
      {"mean_action_users", r.mean_action_users},
      {"mean_action_items", r.mean_action_items},
      {"mean_reward", r.mean_reward},
      {"critic_loss", r.critic_loss},
      {"actor_loss", r.actor_loss},
      {"buffer_len", r.buffer_len},
      {"aborted", r.aborted},
  };
}

std::vector<nlohmann::json> metrics_log_lines(const IterationRecord& r) {
  const auto line = [&](const char* scope, double mean_q) {
    return json{
        {"episode", r.episode},
        {"iteration", r.iteration},
        {"entity_scope", scope},
        {"recall@5", r.val_summary.recall5},
        {"recall@20", r.val_summary.recall20},
        {"ndcg@5", r.val_summary.ndcg5},
        {"ndcg@20", r.val_summary.ndcg20},
        {"mean_q", mean_q},
        {"sparsity", r.sparsity},
    };
  };
  return {line("users", r.mean_q_users), line("items", r.mean_q_items)};
}

}  // namespace ciess
