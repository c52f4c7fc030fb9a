#pragma once

// Rollout log records (one JSON object per line).

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laser/errors.hpp"
#include "laser/task.hpp"

namespace laser {

struct RolloutRecord {
  std::int64_t step = 0;
  std::uint64_t problem_id = 0;
  TokenSequence prompt_ids;
  TokenSequence response_ids;
  std::optional<std::string> answer;
  std::string gt;
  double r_v = 0.0;
  double r_s = 0.0;
  double total_logprob = 0.0;
  bool terminated = false;

  bool operator==(const RolloutRecord&) const = default;
};

inline nlohmann::json record_to_json(const RolloutRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"problem_id", r.problem_id},
                      {"prompt_ids", r.prompt_ids},
                      {"response_ids", r.response_ids},
                      {"answer", nullptr},
                      {"gt", r.gt},
                      {"r_v", r.r_v},
                      {"r_s", r.r_s},
                      {"total_logprob", r.total_logprob},
                      {"terminated", r.terminated}};
  if (r.answer) j["answer"] = *r.answer;
  return j;
}

inline RolloutRecord record_from_json(const nlohmann::json& j) {
  RolloutRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.problem_id = j.at("problem_id").get<std::uint64_t>();
  r.prompt_ids = j.at("prompt_ids").get<TokenSequence>();
  r.response_ids = j.at("response_ids").get<TokenSequence>();
  if (!j.at("answer").is_null()) r.answer = j.at("answer").get<std::string>();
  r.gt = j.at("gt").get<std::string>();
  r.r_v = j.at("r_v").get<double>();
  r.r_s = j.at("r_s").get<double>();
  r.total_logprob = j.at("total_logprob").get<double>();
  r.terminated = j.at("terminated").get<bool>();
  if (r.r_v != 0.0 && r.r_v != 1.0) throw InputError("r_v must be 0 or 1");
  for (TokenId t : r.prompt_ids)
    if (!Vocab::valid(t)) throw InputError("prompt id out of vocabulary");
  for (TokenId t : r.response_ids)
    if (!Vocab::valid(t)) throw InputError("response id out of vocabulary");
  return r;
}

inline std::string record_to_line(const RolloutRecord& r) {
  return record_to_json(r).dump();
}

// Parses a JSONL stream; errors carry the 1-based line number.
inline std::vector<RolloutRecord> read_records(std::istream& in) {
  std::vector<RolloutRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace laser
