#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <set>

#include <unistd.h>

#include "qarefine/mock_provider.hpp"
#include "qarefine/rng.hpp"
#include "qarefine/validator.hpp"

namespace fixtures {

namespace fs = std::filesystem;
using namespace qarefine;

double level_of(Band b) {
  switch (b) {
    case Band::Easy: return kEasyLevel;
    case Band::Hard: return kHardLevel;
    default: return kMediumLevel;
  }
}

Taxonomy taxonomy() {
  Taxonomy t;
  t.topics = {{"alg", "Algebra", "equations and arithmetic", "code"},
              {"geo", "Geometry", "lengths, areas and angles", "code"},
              {"hist", "History", "events and people", "retrieval"},
              {"bio", "Biology", "living things", "retrieval"}};
  return t;
}

QASample make_item(const ItemSpec& spec) {
  const std::uint64_t h = stable_hash(spec.id, spec.salt);
  QASample s;
  s.id = spec.id;
  mockworld::Tags tags{{"topic", spec.topic},
                       {"lv", std::to_string(static_cast<long>(level_of(spec.band)))},
                       {"truth", std::to_string(spec.truth)}};
  if (spec.trap) tags["trap"] = "1";
  s.question = mockworld::pseudo_sentence(h, 9) + "? " + mockworld::tag_block(tags);
  if (spec.numeric) {
    std::set<long> used;
    long base = 20 + static_cast<long>(mix64(h ^ 7) % 500);
    for (std::uint64_t i = 0; s.choices.size() < 4; ++i) {
      long v = base + static_cast<long>(mix64(h + 3 * i) % 61) - 30;
      if (used.insert(v).second) s.choices.push_back(std::to_string(v));
    }
  } else {
    for (std::uint64_t i = 0; i < 4; ++i) s.choices.push_back(mockworld::pseudo_sentence(h + 101 * (i + 1), 2));
  }
  s.answer_index = spec.claimed;
  s.correct_choice = s.choices[spec.claimed];
  s.topic = spec.topic;
  if (spec.rated) s.difficulty = spec.band;
  return s;
}

Dataset skewed_dataset(const SkewSpec& spec) {
  Dataset d;
  d.taxonomy = taxonomy();
  std::vector<std::string> topics;
  for (const auto& [t, n] : spec.topic_counts) topics.insert(topics.end(), n, t);
  std::vector<Band> bands;
  bands.insert(bands.end(), spec.easy, Band::Easy);
  bands.insert(bands.end(), spec.medium, Band::Medium);
  bands.insert(bands.end(), spec.hard, Band::Hard);
  if (bands.size() != topics.size()) throw ArgumentError("band and topic counts differ");
  Rng rng(spec.salt + 17);
  rng.shuffle(bands);
  for (std::size_t i = 0; i < topics.size(); ++i) {
    ItemSpec it;
    it.id = "q" + std::to_string(i + 1);
    it.topic = topics[i];
    it.band = bands[i];
    it.numeric = topics[i] == "alg" || topics[i] == "geo";
    it.truth = it.claimed = static_cast<std::size_t>(mix64(i + spec.salt) % 4);
    it.salt = spec.salt;
    d.samples.push_back(make_item(it));
  }
  return d;
}

SkewSpec end_to_end_skew() {
  return {{{"alg", 225}, {"geo", 45}, {"hist", 30}, {"bio", 0}}, 60, 150, 90, 1};
}

SkewSpec strategy_skew() {
  return {{{"alg", 36}, {"geo", 8}, {"hist", 4}, {"bio", 0}}, 12, 24, 12, 2};
}

Dataset seed_set() {
  Dataset d;
  d.taxonomy = taxonomy();
  const char* topics[] = {"alg", "hist", "geo"};
  for (Band b : kBands) {
    for (int k = 0; k < 3; ++k) {
      ItemSpec it;
      it.id = "seed-" + std::string(band_name(b)) + "-" + std::to_string(k + 1);
      it.topic = topics[k];
      it.band = b;
      it.numeric = it.topic != "hist";
      it.truth = it.claimed = static_cast<std::size_t>(k);
      it.salt = 99;
      d.samples.push_back(make_item(it));
    }
  }
  return d;
}

Dataset planted_errors() {
  Dataset d;
  d.taxonomy = taxonomy();
  for (std::size_t i = 0; i < kPlantedErrors; ++i) {
    bool math = i < kPlantedErrors / 2;
    ItemSpec it;
    it.id = std::string(math ? "m" : "f") + std::to_string(i + 1);
    it.topic = math ? (i % 2 ? "geo" : "alg") : (i % 2 ? "bio" : "hist");
    it.band = kBands[i % 3];
    it.numeric = math;
    it.truth = i % 4;
    it.claimed = (it.truth + 1 + i % 3) % 4;
    it.trap = math && i < kPlantedTraps;
    it.salt = 7;
    d.samples.push_back(make_item(it));
  }
  return d;
}

nlohmann::json retrieval_cache_for(const Dataset& d) {
  nlohmann::json cache = nlohmann::json::object();
  for (const auto& s : d.samples) {
    if (s.topic != "hist" && s.topic != "bio") continue;
    // Same keyword rule the mock applies: first five distinct tokens of at
    // least four letters.
    std::vector<std::string> kws;
    for (const auto& tok : mockworld::tokenize(s.question)) {
      if (tok.size() < 4 || std::find(kws.begin(), kws.end(), tok) != kws.end()) continue;
      kws.push_back(tok);
      if (kws.size() == 5) break;
    }
    cache[keyword_key(kws)] = nlohmann::json::array(
        {{{"title", "Notes on " + kws.front()}, {"text", "Reference text for item " + s.id + "."}}});
  }
  return cache;
}

nlohmann::json shipped_retrieval_cache() {
  nlohmann::json cache = retrieval_cache_for(planted_errors());
  cache.update(retrieval_cache_for(skewed_dataset(end_to_end_skew())));
  cache.update(retrieval_cache_for(skewed_dataset(strategy_skew())));
  return cache;
}

nlohmann::json base_config() {
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& t : taxonomy().topics)
    topics.push_back({{"id", t.id}, {"name", t.name}, {"description", t.description}, {"route", t.route}});
  return {{"dataset", "dataset.jsonl"},
          {"seeds", "seeds.jsonl"},
          {"seed", 7},
          {"domain", "school quiz"},
          {"taxonomy", {{"topics", topics}}},
          {"targets",
           {{"topic", {{"alg", 0.25}, {"geo", 0.25}, {"hist", 0.25}, {"bio", 0.25}}},
            {"difficulty", {{"easy", 0.0}, {"medium", 0.4}, {"hard", 0.6}}}}},
          {"budget", {{"fraction", 1.0}}},
          {"provider", {{"kind", "mock"}}},
          {"offline", true}};
}

std::string write_run(const std::string& dir, const Dataset& data, const nlohmann::json& overrides) {
  fs::create_directories(dir);
  save_dataset((fs::path(dir) / "dataset.jsonl").string(), data);
  save_dataset((fs::path(dir) / "seeds.jsonl").string(), seed_set());
  nlohmann::json cfg = base_config();
  if (!overrides.is_null()) cfg.merge_patch(overrides);
  std::string path = (fs::path(dir) / "config.json").string();
  write_file_atomic(path, cfg.dump(2) + "\n");
  return path;
}

std::string scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  fs::path p = fs::temp_directory_path() /
               ("qarefine-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string data_path(const std::string& name) { return (fs::path(QAREFINE_TEST_DATA) / name).string(); }

}  // namespace fixtures
