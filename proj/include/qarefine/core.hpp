#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qarefine/errors.hpp"

namespace qarefine {

enum class Band { Easy = 0, Medium = 1, Hard = 2, Unrated = 3 };
enum class Provenance { Original, Expanded, Generated, Rewritten, Corrected };
enum class Axis { Topic, Difficulty };

inline constexpr std::array<Band, 3> kBands = {Band::Easy, Band::Medium, Band::Hard};

// Samples without a topic label are counted here so empirical distributions
// stay total. Targets never put mass on it.
inline const std::string kOtherTopic = "OTHER";

std::string_view band_name(Band b);
Band parse_band(std::string_view s);  // throws ArgumentError
std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view s);
std::string_view axis_name(Axis a);

struct QASample {
  std::string id;
  std::string question;
  std::vector<std::string> choices;
  std::size_t answer_index = 0;
  std::string correct_choice;
  std::string topic;  // empty means unlabeled
  Band difficulty = Band::Unrated;
  std::optional<double> elo;
  Provenance provenance = Provenance::Original;
  std::vector<std::string> distractor_types;

  bool labeled() const { return !topic.empty(); }
  bool rated() const { return difficulty != Band::Unrated; }
  bool operator==(const QASample&) const = default;
};

struct Topic {
  std::string id;
  std::string name;
  std::string description;
  // Optional routing hint for validation: "code" or "retrieval".
  std::string route;
  bool operator==(const Topic&) const = default;
};

struct Taxonomy {
  std::vector<Topic> topics;

  const Topic* find(std::string_view id) const;
  bool has(std::string_view id) const { return find(id) != nullptr; }
  // Topic ids in declaration order, without OTHER.
  std::vector<std::string> topic_ids() const;
  void validate() const;  // throws SchemaError
};

struct Dataset {
  std::vector<QASample> samples;
  Taxonomy taxonomy;

  std::size_t size() const { return samples.size(); }
  const QASample* find(std::string_view id) const;
};

struct Distribution {
  Axis axis = Axis::Topic;
  std::map<std::string, double> weights;

  double at(const std::string& c) const;
  // Checks nonnegativity and unit mass; support is checked against the
  // taxonomy when one is given.
  void validate(const Taxonomy* taxonomy = nullptr) const;
};

struct TargetSpec {
  Distribution topic_target;
  Distribution difficulty_target;
  std::optional<std::size_t> min_dataset_size;
  void validate(const Taxonomy& taxonomy) const;
};

// Enforces the sample invariants. A correct_choice that disagrees with
// choices[answer_index] is rewritten and reported through `repaired`.
void validate_sample(QASample& s, std::size_t line = 0, bool* repaired = nullptr);

struct LoadResult {
  Dataset dataset;
  std::vector<std::string> warnings;
};

LoadResult load_dataset_with_warnings(const std::string& path, const Taxonomy& taxonomy);
Dataset load_dataset(const std::string& path, const Taxonomy& taxonomy);
Dataset parse_dataset(std::string_view jsonl, const Taxonomy& taxonomy,
                      std::vector<std::string>* warnings = nullptr);
std::string serialize_dataset(const Dataset& d);
// Writes through a temporary file and renames, so readers never observe a
// partially written dataset.
void save_dataset(const std::string& path, const Dataset& d);
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

std::string sample_to_jsonl(const QASample& s);
QASample sample_from_jsonl(std::string_view line, std::size_t line_no);

// Category list for an axis: topic ids (plus OTHER when present) or bands.
std::vector<std::string> axis_categories(const Taxonomy& t, Axis axis, bool with_other);
std::string sample_category(const QASample& s, Axis axis);

Distribution empirical_distribution(const Dataset& d, Axis axis);
Distribution distribution_from_counts(Axis axis, const std::map<std::string, double>& counts);
std::map<std::string, double> category_counts(const Dataset& d, Axis axis);

std::map<std::string, double> gap_vector(const Distribution& empirical, const Distribution& target);

}  // namespace qarefine
