#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctrepair/layout.hpp"
#include "ctrepair/taint.hpp"

namespace ctrepair {

// Per-opcode cycle costs plus the memory hierarchy costs. Every instruction
// pays its cpu cost; loads and stores additionally pay hit or miss cost.
struct CostModel {
  uint64_t alu = 1;        // binop, icmp, zext
  uint64_t constant = 0;   // const (materialized immediately)
  uint64_t phi = 1;        // per phi resolved on block entry
  uint64_t branch = 1;     // br, condbr, ret
  uint64_t ctsel = 3;      // native constant-time select
  uint64_t mem_cpu = 1;    // cpu part of load/store/loadfield/storefield
  uint64_t call = 0;       // calls are inlined away before simulation
  uint64_t hit = 1;
  uint64_t miss = 100;
};

// Concrete input assignment for the entry function's parameters.
struct Inputs {
  std::map<std::string, uint64_t> scalars;
  std::map<std::string, std::vector<uint64_t>> arrays;
  std::map<std::string, std::map<std::string, std::vector<uint64_t>>> records;

  bool operator==(const Inputs&) const = default;
};

struct SiteTally {
  uint64_t hits = 0, misses = 0;
  bool first_is_miss = false;
  uint64_t misses_after_first = 0;
  bool operator==(const SiteTally&) const = default;
};

struct TimingTrace {
  uint64_t cycles = 0;
  uint64_t cpu_cycles = 0;
  uint64_t hits = 0, misses = 0;
  uint64_t steps = 0;
  std::map<SiteId, SiteTally> site_tallies;
  std::vector<int> block_seq;
  std::optional<uint64_t> ret;
  std::map<std::string, std::vector<uint64_t>> array_memory;
  std::map<std::string, std::map<std::string, std::vector<uint64_t>>> record_memory;
  bool trapped = false;
  std::string trap_reason;
  SiteId trap_site;
};

// Aggregate tallies over all sites of the entry function that access the
// named region ("base" or "base.field").
SiteTally region_tally(const Module& m, const TimingTrace& tr,
                       const std::string& region);

struct SimConfig {
  CostModel cost;
  CacheConfig cache;
  uint64_t max_steps = 50'000'000;
};

// Deterministic interpretation of the entry function with a cold
// fully-associative LRU cache. The module must be validated and inlined.
TimingTrace run(const Module& m, const Inputs& inputs, const SimConfig& cfg);

// Reusable prepared program: prepare once, run many times.
class PreparedModule {
 public:
  PreparedModule(const Module& m, const SimConfig& cfg);
  ~PreparedModule();
  PreparedModule(PreparedModule&&) noexcept;
  PreparedModule& operator=(PreparedModule&&) noexcept = delete;
  TimingTrace run(const Inputs& inputs) const;
  const Function& entry() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct SecretSampler {
  enum class Kind { Exhaustive, Random } kind = Kind::Random;
  uint64_t seed = 1;
  uint32_t trials = 1000;

  static SecretSampler exhaustive();
  static SecretSampler random(uint64_t seed, uint32_t trials);
};

struct LeakVerdict {
  bool constant_time = true;
  uint64_t max_cycle_delta = 0;
  uint64_t min_cycles = 0, max_cycles = 0;
  uint64_t trials = 0;
  bool block_seqs_equal = true;
  bool site_tallies_equal = true;
  std::optional<std::pair<Inputs, Inputs>> witness;  // differing secret pair
};

// Simulates the module over sampled secret inputs with the public inputs
// held fixed; constant-time iff all traces take the same number of cycles.
LeakVerdict check_constant_time(const Module& m, const Inputs& public_inputs,
                                const SecretSampler& sampler, const SimConfig& cfg);

enum class SiteBehavior { AlwaysHit, AlwaysMiss, Mixed, FirstMissThenHit, NotAccessed };

std::map<SiteId, SiteBehavior> classify_site_behavior(
    const std::vector<TimingTrace>& traces);

// Secret-space size in bits, if every secret parameter is enumerable.
std::optional<uint32_t> secret_space_bits(const Function& f);

// Uniformly random values for all (or only secret) parameters.
Inputs random_inputs(const Function& f, std::mt19937_64& rng, bool secret_only);

// Zero values for every parameter.
Inputs zero_inputs(const Function& f);

// Overlay: values from `over` replace those in `base`.
Inputs merge_inputs(const Inputs& base, const Inputs& over);

}  // namespace ctrepair
