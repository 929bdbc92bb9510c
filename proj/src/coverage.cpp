#include "qarefine/coverage.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <spdlog/spdlog.h>

#include "qarefine/qa_text.hpp"

namespace qarefine {

using nlohmann::json;

Embedding EmbeddingCache::get(const std::string& text) {
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
  }
  Embedding e = provider_.embed(text);
  std::lock_guard lock(mu_);
  return cache_.emplace(text, std::move(e)).first->second;
}

void DedupIndex::add(const std::string& text) {
  Embedding e = cache_.get(text);
  if (dim_ == 0) dim_ = e.vector.size();
  if (e.vector.size() != dim_) throw ArgumentError("embedding dimension mismatch in dedup index");
  double norm = 0.0;
  for (double v : e.vector) norm += v * v;
  norm = std::sqrt(norm);
  for (double v : e.vector) data_.push_back(norm > 0 ? v / norm : 0.0);
  ++rows_;
}

void DedupIndex::add_dataset(const Dataset& d) {
  for (const auto& s : d.samples) add(s.question);
}

double DedupIndex::max_similarity(const Embedding& e) const {
  if (rows_ == 0) return -1.0;
  double norm = 0.0;
  for (double v : e.vector) norm += v * v;
  if (norm == 0.0) return 0.0;
  norm = std::sqrt(norm);
  double best = -1.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* row = &data_[r * dim_];
    double dot = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) dot += row[i] * e.vector[i];
    best = std::max(best, dot / norm);
  }
  return best;
}

ClassifyResult classify_topic(const QASample& s, const Taxonomy& taxonomy, Provider& provider) {
  ClassifyResult r;
  if (s.labeled()) {
    r.topic = s.topic;
    return r;
  }
  std::string list, choices;
  for (const auto& t : taxonomy.topics) list += "- " + t.id + ": " + t.name + (t.description.empty() ? "" : " (" + t.description + ")") + "\n";
  for (std::size_t i = 0; i < s.choices.size(); ++i) choices += (i ? "; " : "") + choice_letter(i) + ") " + s.choices[i];
  r.called_provider = true;
  std::string answer;
  try {
    auto c = provider.complete({tmpl::kTopicClassification,
                                {{"topic_list", list}, {"question", s.question}, {"choices", choices}},
                                0.0, 32, Format::Text});
    answer = c.parsed->get<std::string>();
  } catch (const FormatError&) {
    r.topic = kOtherTopic;
    r.warning = "topic classification unparseable for '" + s.id + "'";
    return r;
  }
  // Accept the id verbatim or as the first word of a longer reply.
  std::string word;
  for (char c : answer) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == ',') {
      if (!word.empty()) break;
      continue;
    }
    word += c;
  }
  for (const auto& t : taxonomy.topics) {
    if (answer == t.id || word == t.id || answer == t.name) {
      r.topic = t.id;
      return r;
    }
  }
  r.topic = kOtherTopic;
  r.warning = "topic classification for '" + s.id + "' matched no taxonomy id";
  return r;
}

double removal_probability(const std::string& category, const Distribution& empirical,
                           const Distribution& target) {
  double p = empirical.at(category);
  double t = target.at(category);
  if (p <= 0.0) return 0.0;
  return std::clamp((p - t) / p, 0.0, 1.0);
}

RemovalDecision apply_removal(const QASample& s, double probability, Rng& rng) {
  RemovalDecision d;
  d.sample_id = s.id;
  d.probability = std::clamp(probability, 0.0, 1.0);
  d.draw = rng.uniform();
  d.dropped = d.draw < d.probability;
  return d;
}

QASample parse_written_item(const json& j, const std::string& id) {
  QASample s;
  s.id = id;
  try {
    s.question = j.at("question").get<std::string>();
    s.choices = j.at("choices").get<std::vector<std::string>>();
    const auto& a = j.at("answer");
    if (a.is_number_integer()) {
      if (a.get<long long>() < 0) throw SchemaError(0, "negative answer index");
      s.answer_index = a.get<std::size_t>();
    } else if (a.is_string()) {
      auto idx = resolve_choice(a.get<std::string>(), s);
      if (!idx) throw SchemaError(0, "answer names no choice");
      s.answer_index = *idx;
    } else {
      throw SchemaError(0, "answer has the wrong type");
    }
    s.correct_choice = j.value("correct_choice", std::string());
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("malformed item: ") + e.what());
  }
  bool repaired = false;
  validate_sample(s, 0, &repaired);
  return s;
}

ExpansionResult expand(const QASample& source, const std::string& topic_target, std::size_t count,
                       OpContext& ctx) {
  if (count == 0) throw ArgumentError("expansion count must be at least 1");
  const Topic* topic = ctx.taxonomy.find(topic_target);
  if (!topic) throw ArgumentError("expansion target '" + topic_target + "' is not a topic");
  ExpansionResult out;
  std::size_t unparseable = 0;
  for (std::size_t j = 0; j < count; ++j) {
    CompletionRequest req{tmpl::kExpansion,
                          {{"domain", ctx.domain},
                           {"topic", topic->name},
                           {"(q_example, a_example)", qa_block(source)},
                           {"_topic_id", topic_target},
                           {"_attempt", std::to_string(j)}},
                          0.8,
                          1024,
                          Format::Json};
    json parsed;
    try {
      parsed = *ctx.provider.complete(req).parsed;
    } catch (const FormatError&) {
      ++unparseable;
      out.warnings.push_back("expansion of '" + source.id + "' returned unparseable output");
      continue;
    }
    ExpansionCandidate c;
    c.source_id = source.id;
    try {
      c.sample = parse_written_item(parsed, source.id + "~x" + std::to_string(j));
      if (c.sample.choices.size() != 4)
        throw SchemaError(0, std::to_string(c.sample.choices.size()) + " choices instead of 4");
    } catch (const SchemaError& e) {
      out.warnings.push_back("expansion candidate of '" + source.id + "' discarded: " + e.what());
      continue;
    }
    c.sample.topic = topic_target;
    c.sample.difficulty = source.difficulty;  // provisional until re-rated
    c.sample.elo = source.elo;
    c.sample.provenance = Provenance::Expanded;
    try {
      c.similarity_to_source =
          cosine(ctx.embeddings.get(c.sample.question), ctx.embeddings.get(source.question));
    } catch (const ArgumentError&) {
      c.similarity_to_source = 0.0;
    }
    out.candidates.push_back(std::move(c));
  }
  out.failed = unparseable == count;
  for (const auto& w : out.warnings) spdlog::warn(w);
  return out;
}

std::vector<ExpansionCandidate> filter_candidates(std::vector<ExpansionCandidate>& candidates,
                                                  const DedupIndex& existing, EmbeddingCache& cache,
                                                  double threshold) {
  std::vector<ExpansionCandidate> accepted;
  std::vector<Embedding> batch;
  for (auto& c : candidates) {
    c.accepted = false;
    if (c.sample.question.find_first_not_of(" \t\r\n") == std::string::npos) {
      c.reject_reason = "empty question";
      continue;
    }
    Embedding e;
    try {
      e = cache.get(c.sample.question);
    } catch (const ArgumentError&) {
      c.reject_reason = "empty question";
      continue;
    }
    double worst = existing.max_similarity(e);
    bool dup_batch = false;
    for (const auto& b : batch)
      if (cosine(e, b) >= threshold) dup_batch = true;
    if (c.similarity_to_source >= threshold) {
      c.reject_reason = "near-duplicate of its source";
    } else if (worst >= threshold) {
      c.reject_reason = "near-duplicate of an existing question";
    } else if (dup_batch) {
      c.reject_reason = "near-duplicate within the batch";
    } else {
      c.accepted = true;
      batch.push_back(e);
      accepted.push_back(c);
    }
  }
  return accepted;
}

std::vector<ExpansionCandidate> filter_candidates(std::vector<ExpansionCandidate>& candidates,
                                                  const Dataset& existing, EmbeddingCache& cache,
                                                  double threshold) {
  DedupIndex index(cache);
  index.add_dataset(existing);
  return filter_candidates(candidates, index, cache, threshold);
}

}  // namespace qarefine
