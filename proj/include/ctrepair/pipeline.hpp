#pragma once

#include "ctrepair/branch_repair.hpp"
#include "ctrepair/lut_repair.hpp"
#include "ctrepair/must_hit.hpp"
#include "ctrepair/sim.hpp"

namespace ctrepair {

struct PipelineConfig {
  CacheConfig cache;
  CostModel cost;
  Strategy strategy = Strategy::PreloadFirstIter;
  CtselMode ctsel_mode = CtselMode::Native;
  bool optimize = true;  // skip accesses the cache analysis proves safe
  uint64_t seed = 1;
  uint32_t trials = 1000;

  SimConfig sim() const {
    SimConfig s;
    s.cost = cost;
    s.cache = cache;
    return s;
  }
};

// Parse + validate, throwing PassError with the first diagnostic.
Module load_module(const std::string& text);

// Inline every call and drop the now-dead helper functions; analyses and
// simulation run on the entry function alone.
Module flatten(const Module& m);

struct AnalysisResult {
  Module flattened;
  SensitivityMap taint;
  LeakReport leaks;
  CacheAnalysis classification;
  bool instruction_leaks = false;
  // Sensitive accesses that are neither proven hits nor single-line.
  bool cache_leaks = false;
  bool clean() const { return !instruction_leaks && !cache_leaks; }
};

AnalysisResult analyze_program(const Module& m, const PipelineConfig& cfg);

struct MitigationResult {
  Module mitigated;
  MitigationPlan plan;
  LeakReport leaks_before;
};

// flatten -> branch repair -> ctsel folding -> table access repair ->
// ctsel lowering. The result validates and is leak-free under re-analysis.
MitigationResult mitigate_program(const Module& m, const PipelineConfig& cfg);

// Bundled benchmark corpus on disk.
struct CorpusEntry {
  std::string name;
  std::string path;
  std::string description;
};
std::vector<CorpusEntry> corpus_entries(const std::string& dir = {});
std::string corpus_dir();
Module load_corpus_module(const std::string& name, const std::string& dir = {});

}  // namespace ctrepair
