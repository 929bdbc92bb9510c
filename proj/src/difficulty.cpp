#include "qarefine/difficulty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "qarefine/qa_text.hpp"

namespace qarefine {

using nlohmann::json;

void EloConfig::validate() const {
  if (!(k > 0)) throw ConfigError("Elo step size must be positive");
  if (!(eta > 0)) throw ConfigError("Elo scale must be positive");
  if (!(easy_below < hard_above)) throw ConfigError("Elo band thresholds must increase");
  if (rounds < 1) throw ConfigError("Elo rounds must be at least 1");
}

double EloConfig::seed_rating(Band b) const {
  switch (b) {
    case Band::Easy: return seed_easy;
    case Band::Medium: return seed_medium;
    case Band::Hard: return seed_hard;
    default: throw ArgumentError("unrated band has no seed rating");
  }
}

double elo_expected(double e_i, double e_ex, double eta) {
  return 1.0 / (1.0 + std::pow(10.0, (e_ex - e_i) / eta));
}

EloState elo_update(const EloState& state, double e_ex, double r, const EloConfig& cfg) {
  if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("comparison outcome must lie in [0, 1]");
  EloState next = state;
  double p = elo_expected(state.rating, e_ex, cfg.eta);
  next.rating = state.rating + cfg.k * (r - p);
  next.history.push_back({e_ex, r, p});
  return next;
}

Band band_for(double rating, const EloConfig& cfg) {
  if (rating < cfg.easy_below) return Band::Easy;
  if (rating > cfg.hard_above) return Band::Hard;
  return Band::Medium;
}

std::vector<SeedExemplar> seeds_from_dataset(const Dataset& d, const EloConfig& cfg) {
  std::vector<SeedExemplar> seeds;
  std::set<Band> bands;
  for (const auto& s : d.samples) {
    if (!s.rated()) throw ConfigError("seed exemplar '" + s.id + "' has no difficulty band");
    seeds.push_back({s, s.elo ? *s.elo : cfg.seed_rating(s.difficulty)});
    bands.insert(s.difficulty);
  }
  if (bands.size() < 3) throw ConfigError("seed exemplars must cover easy, medium and hard");
  return seeds;
}

std::vector<const SeedExemplar*> select_exemplars(const QASample& s, const std::vector<SeedExemplar>& seeds,
                                                  std::size_t m, EmbeddingCache& cache) {
  if (seeds.empty()) throw ConfigError("no seed exemplars configured");
  Embedding q = cache.get(s.question);
  std::vector<std::pair<double, const SeedExemplar*>> ranked;
  ranked.reserve(seeds.size());
  for (const auto& seed : seeds) ranked.emplace_back(cosine(q, cache.get(seed.sample.question)), &seed);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->sample.id < b.second->sample.id;
  });
  std::vector<const SeedExemplar*> out;
  for (std::size_t i = 0; i < ranked.size() && i < m; ++i) out.push_back(ranked[i].second);
  return out;
}

RatingResult rate_difficulty(QASample& s, const std::vector<SeedExemplar>& seeds, const EloConfig& cfg,
                             OpContext& ctx) {
  auto exemplars = select_exemplars(s, seeds, static_cast<std::size_t>(cfg.rounds), ctx.embeddings);
  RatingResult res;
  res.state.rating = cfg.initial;
  const std::string rendered = question_with_choices(s);
  for (int j = 0; j < cfg.rounds; ++j) {
    const SeedExemplar& ex = *exemplars[static_cast<std::size_t>(j) % exemplars.size()];
    CompletionRequest req{tmpl::kPairwise,
                          {{"new_question", rendered},
                           {"seed_question", question_with_choices(ex.sample)},
                           {"seed_difficulty", std::string(band_name(ex.sample.difficulty))}},
                          0.0,
                          8,
                          Format::Number};
    try {
      double r = ctx.provider.complete(req).parsed->get<double>();
      res.state = elo_update(res.state, ex.rating, r, cfg);
      ++res.rounds_ok;
    } catch (const FormatError& e) {
      ++res.rounds_failed;
      spdlog::debug("judge round {} for '{}' unparseable: {}", j, s.id, e.raw());
    } catch (const ArgumentError&) {
      ++res.rounds_failed;
    }
  }
  if (res.rounds_ok == 0) {
    s.difficulty = Band::Unrated;
    s.elo.reset();
    res.band = Band::Unrated;
    return res;
  }
  res.band = band_for(res.state.rating, cfg);
  s.elo = res.state.rating;
  s.difficulty = res.band;
  return res;
}

std::string subject_of(const QASample& s, const OpContext& ctx) {
  if (const Topic* t = ctx.taxonomy.find(s.topic)) return t->name;
  return ctx.domain;
}

GenerationResult generate_at_difficulty(const std::string& topic, Band target, const QASample* source,
                                        const std::string& new_id, const std::vector<SeedExemplar>& seeds,
                                        const EloConfig& cfg, OpContext& ctx) {
  GenerationResult out;
  std::string example;
  if (source) {
    example = qa_block(*source);
  } else {
    const Topic* t = ctx.taxonomy.find(topic);
    example = "Domain: " + ctx.domain + "\nTopic: " + (t ? t->name : topic);
  }
  CompletionRequest req{tmpl::kGeneration,
                        {{"target_difficulty", std::string(band_name(target))},
                         {"(q_example, a_example)", example}},
                        0.8,
                        1024,
                        Format::Json};
  json parsed;
  try {
    parsed = *ctx.provider.complete(req).parsed;
  } catch (const FormatError&) {
    out.error = "generation-failed: output is not JSON";
    return out;
  }
  QASample cand;
  try {
    cand = parse_written_item(parsed, new_id);
  } catch (const SchemaError& e) {
    out.error = std::string("generation-failed: ") + e.what();
    return out;
  }
  cand.topic = topic;
  cand.provenance = Provenance::Generated;
  RatingResult r = rate_difficulty(cand, seeds, cfg, ctx);
  out.retained = r.ok() && r.band == target;
  if (!r.ok()) out.error = "generated item could not be rated";
  out.sample = std::move(cand);
  return out;
}

MiningResult mine_mistake_types(const QASample& s, std::size_t k, OpContext& ctx) {
  if (k == 0) throw ArgumentError("mistake type count must be at least 1");
  MiningResult out;
  std::set<std::string> seen;
  for (int attempt = 0; attempt < 2 && out.types.size() < k; ++attempt) {
    CompletionRequest req{tmpl::kMistakeMining,
                          {{"subject", subject_of(s, ctx)},
                           {"num_choices", std::to_string(k)},
                           {"question", s.question},
                           {"correct_answer", s.correct_choice},
                           {"_attempt", std::to_string(attempt)}},
                          0.0,
                          1024,
                          Format::Json};
    json parsed;
    try {
      parsed = *ctx.provider.complete(req).parsed;
    } catch (const FormatError&) {
      out.warnings.push_back("mistake mining output unparseable");
      continue;
    }
    if (!parsed.is_object() || !parsed.contains("mistake_types") || !parsed["mistake_types"].is_array()) {
      out.warnings.push_back("mistake mining output lacks mistake_types");
      continue;
    }
    for (const auto& m : parsed["mistake_types"]) {
      if (!m.is_object() || !m.contains("type") || !m["type"].is_string()) continue;
      std::string label = m["type"].get<std::string>();
      if (label.empty()) continue;
      if (!seen.insert(label).second) {
        out.warnings.push_back("duplicate mistake type '" + label + "' dropped");
        continue;
      }
      out.types.push_back({label, m.value("description", std::string())});
      if (out.types.size() == k) break;
    }
  }
  if (out.types.empty()) throw OperationError("mining-failed for '" + s.id + "'");
  if (out.types.size() < k)
    out.warnings.push_back("only " + std::to_string(out.types.size()) + " of " + std::to_string(k) +
                           " mistake types mined");
  return out;
}

double combined_score(double plausibility, double distinctiveness, double alpha) {
  return alpha * plausibility + (1.0 - alpha) * (distinctiveness / 2.0);
}

ScoredDistractor score_distractor(const std::string& candidate, const std::string& mistake_type,
                                  const QASample& s, OpContext& ctx, double alpha) {
  ScoredDistractor d;
  d.text = candidate;
  d.mistake_type = mistake_type;
  CompletionRequest req{tmpl::kPlausibility,
                        {{"subject", subject_of(s, ctx)},
                         {"question", s.question},
                         {"correct_answer", s.correct_choice},
                         {"distractor", candidate},
                         {"mistake_type", mistake_type}},
                        0.0,
                        8,
                        Format::Number};
  try {
    d.plausibility = std::clamp(ctx.provider.complete(req).parsed->get<double>(), 0.0, 1.0);
  } catch (const FormatError&) {
    spdlog::warn("plausibility for a distractor of '{}' unparseable; scored 0", s.id);
    d.plausibility = 0.0;
  }
  double cos = 0.0;
  try {
    cos = cosine(ctx.embeddings.get(candidate), ctx.embeddings.get(s.correct_choice));
  } catch (const ArgumentError&) {
    cos = 0.0;
  }
  d.distinctiveness = std::clamp(1.0 - cos, 0.0, 2.0);
  d.combined = combined_score(d.plausibility, d.distinctiveness, alpha);
  return d;
}

std::vector<std::size_t> select_covering(const std::vector<double>& scores, const std::vector<std::string>& types,
                                         std::size_t n, bool minimize) {
  if (scores.size() != types.size()) throw ArgumentError("scores and types differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return minimize ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  // The best candidate of every type first, then the best of the rest. With
  // n at least the number of types this maximizes the total.
  std::vector<std::size_t> picked;
  std::set<std::string> covered;
  std::vector<bool> used(scores.size(), false);
  for (std::size_t idx : order) {
    if (picked.size() == n) break;
    if (covered.insert(types[idx]).second) {
      picked.push_back(idx);
      used[idx] = true;
    }
  }
  for (std::size_t idx : order) {
    if (picked.size() == n) break;
    if (!used[idx]) {
      picked.push_back(idx);
      used[idx] = true;
    }
  }
  std::stable_sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
    return minimize ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  return picked;
}

std::vector<std::size_t> easing_order(const QASample& s, EmbeddingCache& cache) {
  std::vector<std::pair<double, std::size_t>> sims;
  Embedding correct = cache.get(s.correct_choice);
  for (std::size_t i = 0; i < s.choices.size(); ++i) {
    if (i == s.answer_index) continue;
    double c = 0.0;
    try {
      c = cosine(cache.get(s.choices[i]), correct);
    } catch (const ArgumentError&) {
    }
    sims.emplace_back(c, i);
  }
  std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (const auto& p : sims) out.push_back(p.second);
  return out;
}

RewriteResult rewrite_distractors(const QASample& s, RewriteDirection dir, std::size_t n, OpContext& ctx,
                                  double alpha) {
  RewriteResult out;
  out.sample = s;
  if (s.choices.size() < 3) {
    out.aborted = true;
    out.error = "fewer than two incorrect choices";
    return out;
  }
  MiningResult mined;
  try {
    mined = mine_mistake_types(s, n, ctx);
  } catch (const OperationError& e) {
    out.aborted = true;
    out.error = e.what();
    return out;
  }

  std::vector<std::string> cand_text, cand_type;
  std::set<std::string> seen(s.choices.begin(), s.choices.end());
  for (int attempt = 0; attempt < 2; ++attempt) {
    Vars v{{"subject", subject_of(s, ctx)},
           {"question", s.question},
           {"correct_answer", s.correct_choice},
           {"_attempt", std::to_string(attempt)}};
    for (std::size_t i = 0; i < 4; ++i)
      v["original_choices[" + std::to_string(i) + "]"] = i < s.choices.size() ? s.choices[i] : "-";
    for (std::size_t i = 0; i < 3; ++i) {
      const MistakeType& t = mined.types[i % mined.types.size()];
      v["type_" + std::to_string(i + 1)] = t.label;
      v["description_" + std::to_string(i + 1)] = t.description;
    }
    json parsed;
    try {
      parsed = *ctx.provider.complete({tmpl::kDistractorRewritingJson, v, 0.8, 1024, Format::Json}).parsed;
    } catch (const FormatError&) {
      continue;
    }
    if (!parsed.contains("distractors") || !parsed["distractors"].is_array()) continue;
    for (const auto& d : parsed["distractors"]) {
      if (!d.is_object() || !d.contains("text") || !d["text"].is_string()) continue;
      std::string text = d["text"].get<std::string>();
      if (text.find_first_not_of(" \t\r\n") == std::string::npos || !seen.insert(text).second) continue;
      std::string type = d.value("type", std::string());
      bool known = false;
      for (const auto& t : mined.types) known = known || t.label == type;
      if (!known) type = mined.types[cand_text.size() % mined.types.size()].label;
      cand_text.push_back(std::move(text));
      cand_type.push_back(std::move(type));
    }
  }
  if (cand_text.empty()) {
    out.aborted = true;
    out.error = "no distractor candidates";
    return out;
  }

  std::vector<double> scores;
  for (std::size_t i = 0; i < cand_text.size(); ++i) {
    out.scored.push_back(score_distractor(cand_text[i], cand_type[i], s, ctx, alpha));
    scores.push_back(out.scored.back().combined);
  }
  auto chosen = select_covering(scores, cand_type, n, dir == RewriteDirection::Ease);

  // Replacement order over existing distractor slots: the most confusable
  // slot first, so it is the one replaced by the weakest pick when easing or
  // dropped when there are fewer picks than slots.
  std::vector<std::size_t> slots = easing_order(s, ctx.embeddings);
  std::vector<std::string> new_text(s.choices.size());
  std::vector<bool> keep(s.choices.size(), true);
  for (std::size_t j = 0; j < slots.size(); ++j) {
    if (j < chosen.size()) new_text[slots[j]] = cand_text[chosen[j]];
    else keep[slots[j]] = false;
  }
  QASample r = s;
  r.choices.clear();
  r.distractor_types.clear();
  std::map<std::string, std::string> type_of;
  for (std::size_t c : chosen) type_of[cand_text[c]] = cand_type[c];
  for (std::size_t i = 0; i < s.choices.size(); ++i) {
    if (i == s.answer_index) {
      r.answer_index = r.choices.size();
      r.choices.push_back(s.correct_choice);
    } else if (keep[i]) {
      r.choices.push_back(new_text[i]);
      r.distractor_types.push_back(type_of[new_text[i]]);
    }
  }
  for (std::size_t j = slots.size(); j < chosen.size() && r.choices.size() < 8; ++j) {
    r.choices.push_back(cand_text[chosen[j]]);
    r.distractor_types.push_back(cand_type[chosen[j]]);
  }
  r.correct_choice = s.correct_choice;
  r.provenance = Provenance::Rewritten;
  validate_sample(r);
  out.sample = std::move(r);
  return out;
}

double removal_probability_difficulty(Band band, const Distribution& empirical, const Distribution& target) {
  return removal_probability(std::string(band_name(band)), empirical, target);
}

}  // namespace qarefine
