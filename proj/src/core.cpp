#include "qarefine/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace qarefine {

using nlohmann::json;

std::string_view band_name(Band b) {
  switch (b) {
    case Band::Easy: return "easy";
    case Band::Medium: return "medium";
    case Band::Hard: return "hard";
    case Band::Unrated: return "unrated";
  }
  return "unrated";
}

Band parse_band(std::string_view s) {
  if (s == "easy") return Band::Easy;
  if (s == "medium") return Band::Medium;
  if (s == "hard") return Band::Hard;
  if (s == "unrated" || s.empty()) return Band::Unrated;
  throw ArgumentError("unknown difficulty band '" + std::string(s) + "'");
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Original: return "original";
    case Provenance::Expanded: return "expanded";
    case Provenance::Generated: return "generated";
    case Provenance::Rewritten: return "rewritten";
    case Provenance::Corrected: return "corrected";
  }
  return "original";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "original" || s.empty()) return Provenance::Original;
  if (s == "expanded") return Provenance::Expanded;
  if (s == "generated") return Provenance::Generated;
  if (s == "rewritten") return Provenance::Rewritten;
  if (s == "corrected") return Provenance::Corrected;
  throw ArgumentError("unknown provenance '" + std::string(s) + "'");
}

std::string_view axis_name(Axis a) { return a == Axis::Topic ? "topic" : "difficulty"; }

const Topic* Taxonomy::find(std::string_view id) const {
  for (const auto& t : topics)
    if (t.id == id) return &t;
  return nullptr;
}

std::vector<std::string> Taxonomy::topic_ids() const {
  std::vector<std::string> ids;
  ids.reserve(topics.size());
  for (const auto& t : topics) ids.push_back(t.id);
  return ids;
}

void Taxonomy::validate() const {
  if (topics.empty()) throw SchemaError(0, "taxonomy has no topics");
  std::set<std::string> seen;
  for (const auto& t : topics) {
    if (t.id.empty()) throw SchemaError(0, "taxonomy topic with empty id");
    if (t.id == kOtherTopic) throw SchemaError(0, "topic id OTHER is reserved");
    if (!seen.insert(t.id).second) throw SchemaError(0, "duplicate topic id '" + t.id + "'");
  }
}

const QASample* Dataset::find(std::string_view id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

double Distribution::at(const std::string& c) const {
  auto it = weights.find(c);
  return it == weights.end() ? 0.0 : it->second;
}

void Distribution::validate(const Taxonomy* taxonomy) const {
  double total = 0.0;
  for (const auto& [c, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw DistributionError("negative or non-finite weight for '" + c + "'");
    total += w;
    if (axis == Axis::Difficulty) {
      Band b = Band::Unrated;
      try {
        b = parse_band(c);
      } catch (const ArgumentError&) {
      }
      if (b == Band::Unrated) throw DistributionError("'" + c + "' is not a difficulty band");
    } else if (taxonomy && c != kOtherTopic && !taxonomy->has(c)) {
      throw DistributionError("'" + c + "' is not a taxonomy topic");
    }
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw DistributionError("weights sum to " + std::to_string(total) + ", expected 1");
}

void TargetSpec::validate(const Taxonomy& taxonomy) const {
  if (topic_target.axis != Axis::Topic || difficulty_target.axis != Axis::Difficulty)
    throw DistributionError("target axes are swapped");
  topic_target.validate(&taxonomy);
  difficulty_target.validate(&taxonomy);
  if (topic_target.at(kOtherTopic) > 0.0)
    throw DistributionError("targets may not put mass on OTHER");
}

void validate_sample(QASample& s, std::size_t line, bool* repaired) {
  if (repaired) *repaired = false;
  if (s.id.empty()) throw SchemaError(line, "empty id");
  if (s.choices.size() < 2 || s.choices.size() > 8)
    throw SchemaError(line, "sample '" + s.id + "' has " + std::to_string(s.choices.size()) +
                                " choices, expected 2-8");
  if (s.answer_index >= s.choices.size())
    throw SchemaError(line, "answer index " + std::to_string(s.answer_index) +
                                " out of range for " + std::to_string(s.choices.size()) + " choices");
  std::set<std::string> distinct(s.choices.begin(), s.choices.end());
  if (distinct.size() != s.choices.size())
    throw SchemaError(line, "sample '" + s.id + "' repeats a choice text");
  if (!s.distractor_types.empty() && s.distractor_types.size() != s.choices.size() - 1)
    throw SchemaError(line, "distractor_types length does not match the incorrect choices");
  if (s.correct_choice != s.choices[s.answer_index]) {
    s.correct_choice = s.choices[s.answer_index];
    if (repaired) *repaired = true;
  }
}

std::string sample_to_jsonl(const QASample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["question"] = s.question;
  j["choices"] = s.choices;
  j["answer"] = s.answer_index;
  j["correct_choice"] = s.correct_choice;
  if (s.labeled()) j["topic"] = s.topic;
  if (s.rated()) j["difficulty"] = band_name(s.difficulty);
  if (s.elo) j["elo"] = *s.elo;
  j["provenance"] = provenance_name(s.provenance);
  if (!s.distractor_types.empty()) j["distractor_types"] = s.distractor_types;
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

QASample sample_from_jsonl(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record is not an object");
  QASample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.question = j.at("question").get<std::string>();
    s.choices = j.at("choices").get<std::vector<std::string>>();
    const auto& ans = j.at("answer");
    if (!ans.is_number_integer() || ans.get<long long>() < 0)
      throw SchemaError(line_no, "answer must be a nonnegative integer");
    s.answer_index = ans.get<std::size_t>();
    s.correct_choice = j.value("correct_choice", std::string());
    s.topic = j.value("topic", std::string());
    s.difficulty = parse_band(j.value("difficulty", std::string()));
    if (j.contains("elo") && !j["elo"].is_null()) s.elo = j["elo"].get<double>();
    s.provenance = parse_provenance(j.value("provenance", std::string()));
    if (j.contains("distractor_types"))
      s.distractor_types = j["distractor_types"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(line_no, e.what());
  } catch (const ArgumentError& e) {
    throw SchemaError(line_no, e.what());
  }
  return s;
}

Dataset parse_dataset(std::string_view jsonl, const Taxonomy& taxonomy,
                      std::vector<std::string>* warnings) {
  taxonomy.validate();
  Dataset d;
  d.taxonomy = taxonomy;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    QASample s = sample_from_jsonl(line, line_no);
    bool repaired = false;
    validate_sample(s, line_no, &repaired);
    if (repaired) {
      std::string msg = "line " + std::to_string(line_no) + ": correct_choice rewritten from answer index";
      spdlog::warn(msg);
      if (warnings) warnings->push_back(msg);
    }
    if (s.labeled() && s.topic != kOtherTopic && !taxonomy.has(s.topic))
      throw SchemaError(line_no, "topic '" + s.topic + "' is not in the taxonomy");
    if (!ids.insert(s.id).second)
      throw ConflictError("line " + std::to_string(line_no) + ": duplicate id '" + s.id + "'");
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LoadResult load_dataset_with_warnings(const std::string& path, const Taxonomy& taxonomy) {
  LoadResult r;
  r.dataset = parse_dataset(read_file(path), taxonomy, &r.warnings);
  return r;
}

Dataset load_dataset(const std::string& path, const Taxonomy& taxonomy) {
  return load_dataset_with_warnings(path, taxonomy).dataset;
}

std::string serialize_dataset(const Dataset& d) {
  std::string out;
  for (const auto& s : d.samples) {
    QASample copy = s;
    validate_sample(copy);
    if (copy.correct_choice != s.correct_choice)
      throw SchemaError(0, "sample '" + s.id + "' has an inconsistent correct_choice");
    out += sample_to_jsonl(s);
    out += '\n';
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArgumentError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw ArgumentError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

void save_dataset(const std::string& path, const Dataset& d) {
  write_file_atomic(path, serialize_dataset(d));
}

std::vector<std::string> axis_categories(const Taxonomy& t, Axis axis, bool with_other) {
  if (axis == Axis::Difficulty) return {"easy", "medium", "hard"};
  auto ids = t.topic_ids();
  if (with_other) ids.push_back(kOtherTopic);
  return ids;
}

std::string sample_category(const QASample& s, Axis axis) {
  if (axis == Axis::Difficulty) return std::string(band_name(s.difficulty));
  return s.labeled() ? s.topic : kOtherTopic;
}

std::map<std::string, double> category_counts(const Dataset& d, Axis axis) {
  std::map<std::string, double> counts;
  for (const auto& c : axis_categories(d.taxonomy, axis, false)) counts[c] = 0.0;
  for (const auto& s : d.samples) {
    if (axis == Axis::Difficulty && !s.rated())
      throw DistributionError("sample '" + s.id + "' is not rated");
    counts[sample_category(s, axis)] += 1.0;
  }
  return counts;
}

Distribution distribution_from_counts(Axis axis, const std::map<std::string, double>& counts) {
  double n = 0.0;
  for (const auto& kv : counts) n += kv.second;
  if (n <= 0.0) throw DistributionError("distribution over an empty dataset is undefined");
  Distribution p;
  p.axis = axis;
  for (const auto& [c, k] : counts) p.weights[c] = k / n;
  return p;
}

Distribution empirical_distribution(const Dataset& d, Axis axis) {
  if (d.samples.empty()) throw DistributionError("distribution over an empty dataset is undefined");
  return distribution_from_counts(axis, category_counts(d, axis));
}

std::map<std::string, double> gap_vector(const Distribution& empirical, const Distribution& target) {
  if (empirical.axis != target.axis) throw ArgumentError("gap_vector across different axes");
  std::map<std::string, double> gap;
  for (const auto& kv : empirical.weights) gap[kv.first] = 0.0;
  for (const auto& kv : target.weights) gap[kv.first] = 0.0;
  for (auto& [c, g] : gap) g = target.at(c) - empirical.at(c);
  return gap;
}

}  // namespace qarefine
