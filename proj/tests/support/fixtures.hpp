#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qarefine/core.hpp"
#include "qarefine/pipeline.hpp"

namespace fixtures {

using qarefine::Band;
using qarefine::Dataset;
using qarefine::QASample;
using qarefine::Taxonomy;

// Latent levels the generator plants for each band; the mock judge compares
// these against the seed exemplars.
inline constexpr double kEasyLevel = 700.0;
inline constexpr double kMediumLevel = 1000.0;
inline constexpr double kHardLevel = 1300.0;
double level_of(Band b);

// alg and geo are arithmetic (code route), hist and bio are factual.
Taxonomy taxonomy();

struct ItemSpec {
  std::string id;
  std::string topic;
  Band band = Band::Medium;
  bool numeric = false;
  std::size_t truth = 0;           // index of the actually correct choice
  std::size_t claimed = 0;         // answer_index written to the file
  bool trap = false;
  bool rated = true;               // write the band into the record
  std::uint64_t salt = 0;
};

// One four-choice item with the hidden tag block the mock reads.
QASample make_item(const ItemSpec& spec);

struct SkewSpec {
  std::vector<std::pair<std::string, std::size_t>> topic_counts;
  std::size_t easy = 0, medium = 0, hard = 0;  // band counts, assigned round-robin over topics
  std::uint64_t salt = 0;
};

Dataset skewed_dataset(const SkewSpec& spec);

// 300 samples: topics 225/45/30/0 and bands 60/150/90.
SkewSpec end_to_end_skew();
// A smaller skewed set for strategy comparisons.
SkewSpec strategy_skew();

// Rated exemplars, three per band, at the planted levels.
Dataset seed_set();

// 20 items whose written answer is wrong: ten arithmetic, ten factual. The
// first two arithmetic items are traps an unreliable validator misses.
Dataset planted_errors();
inline constexpr std::size_t kPlantedErrors = 20;
inline constexpr std::size_t kPlantedTraps = 2;

// Passages for every factual item in `d`, keyed the way the offline
// retriever looks them up.
nlohmann::json retrieval_cache_for(const Dataset& d);
// Union of the caches for every shipped fixture; tests/data/retrieval_cache.json
// holds exactly this.
nlohmann::json shipped_retrieval_cache();

// Writes dataset, seeds and config under `dir`; returns the config path.
std::string write_run(const std::string& dir, const Dataset& data, const nlohmann::json& overrides = {});

// Baseline config body (paths relative to the config file).
nlohmann::json base_config();

// Scratch directory under the system temp dir, unique per call.
std::string scratch_dir(const std::string& tag);

std::string data_path(const std::string& name);

}  // namespace fixtures
