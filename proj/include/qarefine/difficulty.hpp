#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qarefine/core.hpp"
#include "qarefine/coverage.hpp"

namespace qarefine {

struct EloConfig {
  double k = 64.0;
  double eta = 400.0;
  double easy_below = 900.0;   // rating < easy_below        -> easy
  double hard_above = 1100.0;  // rating > hard_above        -> hard, else medium
  int rounds = 7;
  double seed_easy = 800.0;
  double seed_medium = 1000.0;
  double seed_hard = 1200.0;
  double initial = 1000.0;

  void validate() const;
  double seed_rating(Band b) const;
};

struct EloRound {
  double exemplar = 0.0;
  double outcome = 0.0;
  double expected = 0.0;
};

struct EloState {
  double rating = 1000.0;
  std::vector<EloRound> history;
};

double elo_expected(double e_i, double e_ex, double eta);
EloState elo_update(const EloState& state, double e_ex, double r, const EloConfig& cfg);
Band band_for(double rating, const EloConfig& cfg);

// Fixed-rating exemplar used as the reference side of pairwise judgments.
struct SeedExemplar {
  QASample sample;
  double rating = 1000.0;
};

std::vector<SeedExemplar> seeds_from_dataset(const Dataset& d, const EloConfig& cfg);

// The m seeds most similar to the sample, ties broken by seed id.
std::vector<const SeedExemplar*> select_exemplars(const QASample& s, const std::vector<SeedExemplar>& seeds,
                                                  std::size_t m, EmbeddingCache& cache);

struct RatingResult {
  EloState state;
  Band band = Band::Unrated;
  int rounds_ok = 0;
  int rounds_failed = 0;
  bool ok() const { return band != Band::Unrated; }
};

// Runs cfg.rounds pairwise judgments and stores the rating and band on `s`.
// When every round fails the sample is left unrated and ok() is false.
RatingResult rate_difficulty(QASample& s, const std::vector<SeedExemplar>& seeds, const EloConfig& cfg,
                             OpContext& ctx);

struct GenerationResult {
  std::optional<QASample> sample;  // the candidate, rated, when it parsed
  bool retained = false;
  std::string error;
};

GenerationResult generate_at_difficulty(const std::string& topic, Band target, const QASample* source,
                                        const std::string& new_id, const std::vector<SeedExemplar>& seeds,
                                        const EloConfig& cfg, OpContext& ctx);

struct MistakeType {
  std::string label;
  std::string description;
};

struct MiningResult {
  std::vector<MistakeType> types;
  std::vector<std::string> warnings;
};

// Throws OperationError when no usable type comes back even after a retry.
MiningResult mine_mistake_types(const QASample& s, std::size_t k, OpContext& ctx);

struct ScoredDistractor {
  std::string text;
  std::string mistake_type;
  double plausibility = 0.0;
  double distinctiveness = 0.0;  // 1 - cosine to the correct answer, in [0, 2]
  double combined = 0.0;
};

inline constexpr double kDistractorAlpha = 0.5;

double combined_score(double plausibility, double distinctiveness, double alpha);

ScoredDistractor score_distractor(const std::string& candidate, const std::string& mistake_type,
                                  const QASample& s, OpContext& ctx, double alpha = kDistractorAlpha);

// Indices of the n candidates with the largest total score subject to every
// type in `types` being represented at least once (as far as n allows).
// `minimize` selects the n weakest instead, under the same constraint.
std::vector<std::size_t> select_covering(const std::vector<double>& scores,
                                         const std::vector<std::string>& types, std::size_t n,
                                         bool minimize = false);

enum class RewriteDirection { Harden, Ease };

struct RewriteResult {
  QASample sample;
  bool aborted = false;
  std::string error;
  std::vector<ScoredDistractor> scored;
};

inline constexpr std::size_t kTopDistractors = 3;

// Incorrect-choice indices ordered by similarity to the correct answer, the
// most confusable first.
std::vector<std::size_t> easing_order(const QASample& s, EmbeddingCache& cache);

RewriteResult rewrite_distractors(const QASample& s, RewriteDirection dir, std::size_t n, OpContext& ctx,
                                  double alpha = kDistractorAlpha);

double removal_probability_difficulty(Band band, const Distribution& empirical, const Distribution& target);

std::string subject_of(const QASample& s, const OpContext& ctx);

}  // namespace qarefine
