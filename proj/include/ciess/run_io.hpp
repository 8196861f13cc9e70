#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

#include "ciess/search.hpp"

namespace ciess {

/// Engine configuration as a versioned JSON document. Every section and
/// field is optional and falls back to its default; unknown keys are
/// rejected with an exhaustive listing so typos cannot silently change a
/// run. The learning-rate default depends on the backbone (mf-dot 1e-2,
/// lightgcn-lite 5e-3).
EngineConfig engine_config_from_json(const nlohmann::json& j);
EngineConfig load_engine_config(const std::string& path);

/// Fully materialized form: every field explicit, defaults resolved.
nlohmann::json engine_config_to_json(const EngineConfig& config);

/// Parse text as JSON; wraps parser failures in InputError with `origin`
/// in the message.
nlohmann::json parse_json_text(const std::string& text, const std::string& origin);
nlohmann::json load_json_file(const std::string& path);

std::string read_text_file(const std::string& path);

/// Write-then-rename so readers never observe a half-written file.
void atomic_write_text(const std::string& path, const std::string& content);

/// Pretty-printed with a trailing newline. Object keys serialize in
/// lexicographic order, which keeps byte-for-byte reruns possible.
void save_json(const std::string& path, const nlohmann::json& j);

/// Append-style writer for one-JSON-object-per-line logs.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path);

  void write(const nlohmann::json& object);

 private:
  std::ofstream out_;
  std::string path_;
};

/// rl_trace.jsonl line for one search iteration.
nlohmann::json trace_line(const IterationRecord& record);

/// metrics_log.jsonl lines for one search iteration (one per entity side).
std::vector<nlohmann::json> metrics_log_lines(const IterationRecord& record);

}  // namespace ciess
