#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "sira/engine.hpp"

namespace sira {

namespace {

using nlohmann::json;

/// Token ids ranked by z_cd (descending, ties toward the lower id), capped at 8.
std::vector<int> top8_by_zcd(const StepRecord& rec) {
  std::vector<int> idx(rec.z_cd.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const size_t k = std::min<size_t>(8, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(), [&](int a, int b) {
    const float za = rec.z_cd[static_cast<size_t>(a)];
    const float zb = rec.z_cd[static_cast<size_t>(b)];
    if (za != zb) return za > zb;
    return a < b;
  });
  idx.resize(k);
  return idx;
}

json pairs_at(const std::vector<float>& values, const std::vector<int>& tokens) {
  json out = json::array();
  for (const int t : tokens) out.push_back({t, values[static_cast<size_t>(t)]});
  return out;
}

json header_json(const TraceHeader& h) {
  return json{{"model_checksum", h.model_checksum},
              {"S", h.prompt_len},
              {"P_img", h.image_positions},
              {"L", h.num_layers},
              {"K", h.post_boundary_layers},
              {"alpha", h.alpha},
              {"T", h.max_tokens},
              {"seed", h.seed}};
}

TraceHeader header_from_json(const json& j) {
  TraceHeader h;
  h.model_checksum = j.at("model_checksum").get<uint64_t>();
  h.prompt_len = j.at("S").get<int>();
  h.image_positions = j.at("P_img").get<std::vector<int>>();
  h.num_layers = j.at("L").get<int>();
  h.post_boundary_layers = j.at("K").get<int>();
  h.alpha = j.at("alpha").get<float>();
  h.max_tokens = j.at("T").get<int>();
  h.seed = j.at("seed").get<uint64_t>();
  return h;
}

std::vector<std::pair<int, float>> pairs_from_json(const json& j) {
  std::vector<std::pair<int, float>> out;
  for (const auto& e : j) out.emplace_back(e.at(0).get<int>(), e.at(1).get<float>());
  return out;
}

}  // namespace

void write_trace_jsonl(std::ostream& out, const DecodeTrace& trace, bool include_timing) {
  out << header_json(trace.header).dump() << '\n';
  for (const StepRecord& rec : trace.steps) {
    const std::vector<int> tokens = top8_by_zcd(rec);
    json line{{"step", rec.step},
              {"chosen_token", rec.chosen_token},
              {"z_full_top8", pairs_at(rec.z_full, tokens)},
              {"z_cf_top8", pairs_at(rec.z_cf, tokens)},
              {"z_cd_top8", pairs_at(rec.z_cd, tokens)},
              {"delta_top8", pairs_at(rec.delta, tokens)},
              {"layer_evals", rec.layer_evals}};
    if (include_timing) line["step_ms"] = rec.step_ms;
    out << line.dump() << '\n';
  }
}

std::vector<TraceSummary> read_trace_jsonl(std::istream& in) {
  std::vector<TraceSummary> runs;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("trace: invalid JSON: ") + e.what(), line_no);
    }
    try {
      if (j.contains("model_checksum")) {
        TraceSummary run;
        run.header = header_from_json(j);
        runs.push_back(std::move(run));
        continue;
      }
      if (runs.empty()) throw ParseError("trace: step line before any run header", line_no);
      TraceStepSummary s;
      s.step = j.at("step").get<int>();
      s.chosen_token = j.at("chosen_token").get<int>();
      s.z_full_top8 = pairs_from_json(j.at("z_full_top8"));
      s.z_cf_top8 = pairs_from_json(j.at("z_cf_top8"));
      s.z_cd_top8 = pairs_from_json(j.at("z_cd_top8"));
      s.delta_top8 = pairs_from_json(j.at("delta_top8"));
      s.layer_evals = j.at("layer_evals").get<long>();
      if (j.contains("step_ms")) s.step_ms = j.at("step_ms").get<double>();
      runs.back().steps.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(std::string("trace: missing or mistyped field: ") + e.what(), line_no);
    }
  }
  return runs;
}

}  // namespace sira
