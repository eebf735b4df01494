#pragma once

#include <string>

#include <json.hpp>

#include "ctrepair/pipeline.hpp"

namespace ctrepair {

using Json = nlohmann::json;

// JSON schemas are versioned; consumers check `schema`.
inline constexpr int kschema_version = 1;

Json site_json(const Module& m, const SiteId& site);
Json leak_report_json(const Module& m, const LeakReport& rep);
Json classification_json(const Module& m, const CacheAnalysis& a);
Json plan_json(const Module& m, const MitigationPlan& plan);
Json trace_json(const TimingTrace& tr, const Module& m, bool with_memory);
Json verdict_json(const LeakVerdict& v);
Json analysis_report_json(const Module& m, const AnalysisResult& r);
Json predict_json(uint64_t k, uint64_t n, uint32_t cls);

// Human-readable tables.
std::string leak_table_text(const LeakReport& rep);
std::string predict_table_text(uint64_t k, uint64_t n, uint32_t cls);

// Inputs as {"param": value | [values] | {"field": [values]}}.
Inputs inputs_from_json(const Json& j);
Json inputs_to_json(const Inputs& in);

}  // namespace ctrepair
