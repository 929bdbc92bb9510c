#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "qarefine/core.hpp"
#include "qarefine/provider.hpp"
#include "qarefine/rng.hpp"

namespace qarefine {

// Memoizes embeddings by exact text; safe to share between threads.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(Provider& p) : provider_(p) {}
  Embedding get(const std::string& text);
  Provider& provider() { return provider_; }

 private:
  Provider& provider_;
  std::unordered_map<std::string, Embedding> cache_;
  std::mutex mu_;
};

// Unit-normalized question embeddings for near-duplicate checks.
class DedupIndex {
 public:
  explicit DedupIndex(EmbeddingCache& cache) : cache_(cache) {}
  void add(const std::string& text);
  void add_dataset(const Dataset& d);
  double max_similarity(const Embedding& e) const;
  std::size_t size() const { return rows_; }

 private:
  EmbeddingCache& cache_;
  std::vector<double> data_;
  std::size_t dim_ = 0;
  std::size_t rows_ = 0;
};

struct OpContext {
  Provider& provider;
  EmbeddingCache& embeddings;
  const Taxonomy& taxonomy;
  std::string domain;
};

struct ClassifyResult {
  std::string topic;
  bool called_provider = false;
  std::string warning;
};

ClassifyResult classify_topic(const QASample& s, const Taxonomy& taxonomy, Provider& provider);

double removal_probability(const std::string& category, const Distribution& empirical,
                           const Distribution& target);

struct RemovalDecision {
  std::string sample_id;
  double probability = 0.0;
  double draw = 0.0;
  bool dropped = false;
};

RemovalDecision apply_removal(const QASample& s, double probability, Rng& rng);

struct ExpansionCandidate {
  std::string source_id;
  QASample sample;
  double similarity_to_source = 0.0;
  bool accepted = false;
  std::string reject_reason;
};

struct ExpansionResult {
  std::vector<ExpansionCandidate> candidates;  // parsed and structurally valid
  std::vector<std::string> warnings;
  bool failed = false;  // no candidate could be parsed at all
};

inline constexpr double kDedupThreshold = 0.95;
inline constexpr std::size_t kExpansionCandidates = 3;

ExpansionResult expand(const QASample& source, const std::string& topic_target, std::size_t count,
                       OpContext& ctx);

// Marks each candidate accepted or rejected in place and returns the accepted
// ones in their original order. Rejects blank questions, near-duplicates of
// the source, of anything in `existing`, and of earlier candidates.
std::vector<ExpansionCandidate> filter_candidates(std::vector<ExpansionCandidate>& candidates,
                                                  const DedupIndex& existing, EmbeddingCache& cache,
                                                  double threshold = kDedupThreshold);
std::vector<ExpansionCandidate> filter_candidates(std::vector<ExpansionCandidate>& candidates,
                                                  const Dataset& existing, EmbeddingCache& cache,
                                                  double threshold = kDedupThreshold);

// Parses one question in the question-writing output format.
QASample parse_written_item(const nlohmann::json& j, const std::string& id);

}  // namespace qarefine
