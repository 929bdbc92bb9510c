#include "qarefine/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>

#include <spdlog/spdlog.h>

#include "qarefine/coverage.hpp"
#include "qarefine/http_provider.hpp"
#include "qarefine/metrics.hpp"
#include "qarefine/mock_provider.hpp"
#include "qarefine/validator.hpp"

namespace qarefine {

using nlohmann::json;
using oj = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::RefineLab: return "refinelab";
    case Strategy::Greedy: return "greedy";
    case Strategy::Uniform: return "uniform";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "refinelab") return Strategy::RefineLab;
  if (s == "greedy") return Strategy::Greedy;
  if (s == "uniform") return Strategy::Uniform;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (refinelab, greedy or uniform)");
}

std::string_view validation_mode_name(ValidationMode m) {
  switch (m) {
    case ValidationMode::Off: return "off";
    case ValidationMode::On: return "on";
    case ValidationMode::InBudget: return "in-budget";
  }
  return "?";
}

// ---- configuration ---------------------------------------------------------

namespace {

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

Distribution distribution_from(const json& j, Axis axis, const std::string& where) {
  Distribution d;
  d.axis = axis;
  if (!j.is_object()) throw ConfigError(where + " must map categories to weights");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number()) throw ConfigError(where + "." + it.key() + " must be a number");
    d.weights[it.key()] = it.value().get<double>();
  }
  return d;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::string& base_dir) {
  try {
    only_keys(j, {"dataset", "seeds", "seed", "domain", "taxonomy", "targets", "budget", "strategy", "elo",
                  "provider", "pilot_batch", "validation", "retrieval", "sandbox", "expansion", "distractors",
                  "prompts_dir", "exact_cap", "offline", "validation_workers"},
              "config");
    RunConfig c;
    if (!j.contains("dataset")) throw ConfigError("config needs 'dataset'");
    if (!j.contains("seed")) throw ConfigError("config needs 'seed'; runs must be reproducible");
    if (!j.contains("seeds")) throw ConfigError("config needs 'seeds' (rated exemplars for difficulty scoring)");
    c.dataset_path = resolve_path(j.at("dataset").get<std::string>(), base_dir);
    c.seeds_path = resolve_path(j.at("seeds").get<std::string>(), base_dir);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.domain = j.value("domain", c.domain);

    const json& tax = j.at("taxonomy");
    only_keys(tax, {"topics"}, "taxonomy");
    for (const auto& t : tax.at("topics")) {
      only_keys(t, {"id", "name", "description", "route"}, "taxonomy topic");
      Topic topic{t.at("id").get<std::string>(), t.value("name", t.at("id").get<std::string>()),
                  t.value("description", std::string()), t.value("route", std::string())};
      if (!topic.route.empty() && topic.route != "code" && topic.route != "retrieval")
        throw ConfigError("topic '" + topic.id + "' has route '" + topic.route + "' (code or retrieval)");
      c.taxonomy.topics.push_back(std::move(topic));
    }

    json targets = j.value("targets", json::object());
    only_keys(targets, {"topic", "difficulty", "min_dataset_size"}, "targets");
    if (targets.contains("topic")) {
      c.targets.topic_target = distribution_from(targets["topic"], Axis::Topic, "targets.topic");
    } else {
      c.targets.topic_target.axis = Axis::Topic;
      for (const auto& t : c.taxonomy.topics)
        c.targets.topic_target.weights[t.id] = 1.0 / static_cast<double>(c.taxonomy.topics.size());
    }
    if (targets.contains("difficulty")) {
      c.targets.difficulty_target = distribution_from(targets["difficulty"], Axis::Difficulty, "targets.difficulty");
    } else {
      c.targets.difficulty_target.axis = Axis::Difficulty;
      c.targets.difficulty_target.weights = {{"easy", 0.0}, {"medium", 0.4}, {"hard", 0.6}};
    }
    if (targets.contains("min_dataset_size")) c.targets.min_dataset_size = targets["min_dataset_size"].get<std::size_t>();

    if (j.contains("budget")) {
      const json& b = j["budget"];
      only_keys(b, {"fraction", "tokens"}, "budget");
      if (b.contains("fraction") == b.contains("tokens"))
        throw ConfigError("budget takes exactly one of 'fraction' or 'tokens'");
      if (b.contains("fraction")) c.budget_fraction = b["fraction"].get<double>();
      if (b.contains("tokens")) c.budget_tokens = b["tokens"].get<double>();
    } else {
      c.budget_fraction = 1.0;
    }
    c.strategy = parse_strategy(j.value("strategy", std::string("refinelab")));

    if (j.contains("elo")) {
      const json& e = j["elo"];
      only_keys(e, {"k", "eta", "rounds", "easy_below", "hard_above", "seed_ratings", "initial"}, "elo");
      c.elo.k = e.value("k", c.elo.k);
      c.elo.eta = e.value("eta", c.elo.eta);
      c.elo.rounds = e.value("rounds", c.elo.rounds);
      c.elo.easy_below = e.value("easy_below", c.elo.easy_below);
      c.elo.hard_above = e.value("hard_above", c.elo.hard_above);
      c.elo.initial = e.value("initial", c.elo.initial);
      if (e.contains("seed_ratings")) {
        const json& s = e["seed_ratings"];
        only_keys(s, {"easy", "medium", "hard"}, "elo.seed_ratings");
        c.elo.seed_easy = s.value("easy", c.elo.seed_easy);
        c.elo.seed_medium = s.value("medium", c.elo.seed_medium);
        c.elo.seed_hard = s.value("hard", c.elo.seed_hard);
      }
    }

    if (j.contains("provider")) {
      const json& p = j["provider"];
      only_keys(p, {"kind", "mock_seed", "reliability", "base_url", "model", "embedding_model", "api_key_env",
                    "replay", "max_retries", "max_in_flight"},
                "provider");
      auto& s = c.provider;
      s.kind = p.value("kind", s.kind);
      s.mock_seed = p.value("mock_seed", c.seed);
      s.mock_reliability = p.value("reliability", s.mock_reliability);
      s.base_url = p.value("base_url", s.base_url);
      s.model = p.value("model", s.model);
      s.embedding_model = p.value("embedding_model", s.embedding_model);
      s.api_key_env = p.value("api_key_env", s.api_key_env);
      s.replay = resolve_path(p.value("replay", s.replay), base_dir);
      s.max_retries = p.value("max_retries", s.max_retries);
      s.max_in_flight = p.value("max_in_flight", s.max_in_flight);
    } else {
      c.provider.mock_seed = c.seed;
    }

    c.pilot_batch = j.value("pilot_batch", c.pilot_batch);
    std::string v = j.value("validation", std::string("off"));
    if (v == "off") c.validation = ValidationMode::Off;
    else if (v == "on") c.validation = ValidationMode::On;
    else if (v == "in-budget") c.validation = ValidationMode::InBudget;
    else throw ConfigError("validation must be off, on or in-budget, not '" + v + "'");

    if (j.contains("retrieval")) {
      const json& r = j["retrieval"];
      only_keys(r, {"cache", "base_url"}, "retrieval");
      c.retrieval_cache = resolve_path(r.value("cache", std::string()), base_dir);
      c.retrieval_url = r.value("base_url", std::string());
    }
    if (j.contains("sandbox")) {
      const json& s = j["sandbox"];
      only_keys(s, {"interpreter", "timeout_s", "memory_mb"}, "sandbox");
      c.sandbox.interpreter = s.value("interpreter", c.sandbox.interpreter);
      c.sandbox.timeout_s = s.value("timeout_s", c.sandbox.timeout_s);
      c.sandbox.memory_mb = s.value("memory_mb", c.sandbox.memory_mb);
    }
    if (j.contains("expansion")) {
      const json& e = j["expansion"];
      only_keys(e, {"candidates", "dedup_threshold"}, "expansion");
      c.expansion_candidates = e.value("candidates", c.expansion_candidates);
      c.dedup_threshold = e.value("dedup_threshold", c.dedup_threshold);
    }
    if (j.contains("distractors")) {
      const json& d = j["distractors"];
      only_keys(d, {"n", "alpha"}, "distractors");
      c.distractors = d.value("n", c.distractors);
      c.alpha = d.value("alpha", c.alpha);
    }
    c.prompts_dir = resolve_path(j.value("prompts_dir", std::string()), base_dir);
    c.exact_cap = j.value("exact_cap", c.exact_cap);
    c.validation_workers = j.value("validation_workers", c.validation_workers);
    c.offline = j.value("offline", false);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

RunConfig RunConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

void RunConfig::validate() const {
  try {
    taxonomy.validate();
    targets.validate(taxonomy);
    elo.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (budget_fraction && !(*budget_fraction > 0.0 && *budget_fraction <= 1.0))
    throw ConfigError("budget fraction must lie in (0, 1]");
  if (budget_tokens && !(*budget_tokens >= 0.0)) throw ConfigError("budget tokens must be nonnegative");
  if (pilot_batch == 0) throw ConfigError("pilot batch size must be at least 1");
  if (expansion_candidates == 0) throw ConfigError("expansion needs at least one candidate");
  if (distractors == 0) throw ConfigError("distractor count must be at least 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(dedup_threshold > 0.0 && dedup_threshold <= 1.0)) throw ConfigError("dedup threshold must lie in (0, 1]");
  if (!(sandbox.timeout_s > 0.0)) throw ConfigError("sandbox timeout must be positive");
  if (provider.kind != "mock" && provider.kind != "http")
    throw ConfigError("provider kind must be mock or http, not '" + provider.kind + "'");
  if (provider.kind == "http" && provider.replay.empty() && offline)
    throw ConfigError("offline runs cannot use a live HTTP provider");
  if (provider.kind == "http" && provider.replay.empty() && provider.base_url.empty())
    throw ConfigError("http provider needs base_url");
  if (validation != ValidationMode::Off && !retrieval_url.empty() && offline)
    throw ConfigError("offline runs cannot use live retrieval");
}

std::unique_ptr<Provider> make_provider(const RunConfig& cfg) {
  PromptLibrary prompts = cfg.prompts_dir.empty() ? PromptLibrary::load_default() : PromptLibrary::load(cfg.prompts_dir);
  std::unique_ptr<Provider> p;
  if (cfg.provider.kind == "mock") {
    MockOptions o;
    o.seed = cfg.provider.mock_seed;
    o.reliability = cfg.provider.mock_reliability;
    p = std::make_unique<MockProvider>(std::move(prompts), o);
  } else {
    HttpProviderConfig hc;
    hc.model = cfg.provider.model;
    hc.embedding_model = cfg.provider.embedding_model;
    hc.api_key_env = cfg.provider.api_key_env;
    std::shared_ptr<Transport> t;
    if (!cfg.provider.replay.empty())
      t = ReplayTransport::from_file(cfg.provider.replay);
    else if (cfg.offline)
      throw ConfigError("offline runs cannot use a live HTTP provider");
    else
      t = make_httplib_transport(cfg.provider.base_url);
    p = std::make_unique<HttpProvider>(std::move(prompts), hc, std::move(t));
    p->set_retry({cfg.provider.max_retries, 200});
  }
  p->set_max_in_flight(cfg.provider.max_in_flight);
  return p;
}

// ---- metrics ---------------------------------------------------------------

namespace {

Dataset rated_only(const Dataset& d) {
  Dataset r;
  r.taxonomy = d.taxonomy;
  for (const auto& s : d.samples)
    if (s.rated()) r.samples.push_back(s);
  return r;
}

struct Snapshot {
  std::map<std::string, double> topic, band;
  double topic_jsd = 1.0, band_jsd = 1.0, entropy = 0.0;
};

Snapshot snapshot_of(const Dataset& d, const TargetSpec& targets, std::vector<std::string>* warnings) {
  Snapshot s;
  if (!d.samples.empty()) {
    Distribution p = empirical_distribution(d, Axis::Topic);
    s.topic = p.weights;
    s.topic_jsd = jsd(p, targets.topic_target);
  }
  Dataset rated = rated_only(d);
  if (!rated.samples.empty()) {
    Distribution p = empirical_distribution(rated, Axis::Difficulty);
    s.band = p.weights;
    s.band_jsd = jsd(p, targets.difficulty_target);
  }
  try {
    s.entropy = distractor_entropy(d);
  } catch (const DistributionError& e) {
    if (warnings) warnings->push_back(std::string("distractor entropy undefined: ") + e.what());
  }
  return s;
}

}  // namespace

RefinementReport measure(const Dataset& d, const TargetSpec& targets) {
  RefinementReport r;
  Snapshot s = snapshot_of(d, targets, &r.warnings);
  r.size_before = r.size_after = d.size();
  r.topic.target = targets.topic_target.weights;
  r.difficulty.target = targets.difficulty_target.weights;
  r.topic.before = r.topic.after = s.topic;
  r.difficulty.before = r.difficulty.after = s.band;
  r.topic.jsd_before = r.topic.jsd_after = s.topic_jsd;
  r.difficulty.jsd_before = r.difficulty.jsd_after = s.band_jsd;
  r.distractor_entropy_before = r.distractor_entropy_after = s.entropy;
  return r;
}

// ---- the refinement round ----------------------------------------------------

namespace {

Effect add_effect(const Objective& obj, const QASample& s, double sign) {
  Effect e = zero_effect(obj);
  e.topic[obj.topic_index(s.topic)] = sign;
  if (s.rated()) e.band[static_cast<std::size_t>(s.difficulty)] = sign;
  return e;
}

void apply(AxisCounts& c, const Effect& e) {
  for (std::size_t i = 0; i < c.topic.size(); ++i) c.topic[i] = std::max(0.0, c.topic[i] + e.topic[i]);
  for (std::size_t i = 0; i < c.band.size(); ++i) c.band[i] = std::max(0.0, c.band[i] + e.band[i]);
}

// Output of one operator invocation, before anything is committed.
struct Attempt {
  std::vector<QASample> added;        // r2 accepted candidates, r4 retained item
  std::optional<QASample> replaced;   // r5 rewritten item
  bool failed = false;
  std::string detail;
};

class Engine : public TrialRunner {
 public:
  Engine(const RunConfig& cfg, Provider& p, const std::vector<SeedExemplar>& seeds)
      : cfg_(cfg), provider_(p), cache_(p), ctx_{p, cache_, cfg.taxonomy, cfg.domain}, seeds_(seeds) {}

  OpContext& ctx() { return ctx_; }
  EmbeddingCache& cache() { return cache_; }

  void set_pilot_view(const DedupIndex* dedup, const Objective* obj) {
    pilot_dedup_ = dedup;
    pilot_obj_ = obj;
  }

  Attempt attempt(const QASample& s, Op op, const Target& z, const DedupIndex& dedup) {
    Attempt a;
    switch (op) {
      case Op::R2: {
        ExpansionResult ex = expand(s, z.topic, cfg_.expansion_candidates, ctx_);
        if (ex.failed) {
          a.failed = true;
          a.detail = "no parseable expansion";
          return a;
        }
        auto accepted = filter_candidates(ex.candidates, dedup, cache_, cfg_.dedup_threshold);
        for (auto& c : accepted) {
          QASample n = c.sample;
          rate_difficulty(n, seeds_, cfg_.elo, ctx_);
          a.added.push_back(std::move(n));
        }
        a.detail = std::to_string(accepted.size()) + " of " + std::to_string(ex.candidates.size()) + " candidates kept";
        return a;
      }
      case Op::R4: {
        Band target = parse_band(z.band);
        GenerationResult g = generate_at_difficulty(s.topic, target, &s, s.id + "~g", seeds_, cfg_.elo, ctx_);
        if (!g.sample) {
          a.failed = true;
          a.detail = g.error;
          return a;
        }
        if (g.retained) {
          Embedding e = cache_.get(g.sample->question);
          if (dedup.max_similarity(e) >= cfg_.dedup_threshold) {
            a.detail = "generated item duplicates an existing question";
            return a;
          }
          a.added.push_back(*g.sample);
          a.detail = "generated at " + z.band;
        } else {
          a.detail = "generated item rated " + std::string(band_name(g.sample->difficulty)) + ", not " + z.band;
        }
        return a;
      }
      case Op::R5: {
        auto dir = parse_band(z.band) > s.difficulty ? RewriteDirection::Harden : RewriteDirection::Ease;
        RewriteResult rw = rewrite_distractors(s, dir, cfg_.distractors, ctx_, cfg_.alpha);
        if (rw.aborted) {
          a.failed = true;
          a.detail = rw.error;
          return a;
        }
        QASample r = rw.sample;
        RatingResult rr = rate_difficulty(r, seeds_, cfg_.elo, ctx_);
        if (!rr.ok()) {
          a.failed = true;
          a.detail = "rewritten item could not be rated";
          return a;
        }
        a.detail = std::string(dir == RewriteDirection::Harden ? "hardened" : "eased") + " to " +
                   std::string(band_name(r.difficulty));
        a.replaced = std::move(r);
        return a;
      }
      default:
        throw ArgumentError("removal has no operator call");
    }
  }

  Effect effect_of(const Objective& obj, const QASample& s, Op op, const Attempt& a) const {
    Effect e = zero_effect(obj);
    if (op == Op::R5) {
      if (a.replaced) {
        e += add_effect(obj, s, -1.0);
        e += add_effect(obj, *a.replaced, 1.0);
      }
      return e;
    }
    for (const auto& n : a.added) e += add_effect(obj, n, 1.0);
    return e;
  }

  TrialOutcome trial(const QASample& s, Op op, const Target& z) override {
    Usage before = provider_.usage();
    TrialOutcome out;
    Attempt a = attempt(s, op, z, *pilot_dedup_);
    out.failed = a.failed;
    out.effect = effect_of(*pilot_obj_, s, op, a);
    out.tokens = static_cast<double>((provider_.usage() - before).total());
    return out;
  }

 private:
  const RunConfig& cfg_;
  Provider& provider_;
  EmbeddingCache cache_;
  OpContext ctx_;
  const std::vector<SeedExemplar>& seeds_;
  const DedupIndex* pilot_dedup_ = nullptr;
  const Objective* pilot_obj_ = nullptr;
};

class StageClock {
 public:
  explicit StageClock(oj& timing) : timing_(timing), start_(std::chrono::steady_clock::now()) {}
  void begin(const std::string& name) {
    name_ = name;
    t0_ = std::chrono::steady_clock::now();
  }
  void end() {
    timing_["stages"][name_] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }
  void total() {
    timing_["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  const std::string& stage() const { return name_; }

 private:
  oj& timing_;
  std::chrono::steady_clock::time_point start_, t0_;
  std::string name_;
};

std::string unique_id(std::string id, std::set<std::string>& used) {
  std::string base = id;
  for (int k = 2; used.count(id); ++k) id = base + "-" + std::to_string(k);
  used.insert(id);
  return id;
}

}  // namespace

RunOutcome run(const RunConfig& cfg, Provider* provider_in) {
  cfg.validate();
  RunOutcome out;
  RefinementReport& rep = out.report;
  rep.strategy = strategy_name(cfg.strategy);
  rep.seed = cfg.seed;
  rep.budget_fraction = cfg.budget_fraction;
  rep.validation.mode = validation_mode_name(cfg.validation);
  rep.topic.target = cfg.targets.topic_target.weights;
  rep.difficulty.target = cfg.targets.difficulty_target.weights;
  out.timing = oj::object();
  out.timing["stages"] = oj::object();
  StageClock clock(out.timing);

  std::unique_ptr<Provider> owned;
  Provider* provider = provider_in;
  if (!provider) {
    owned = make_provider(cfg);
    provider = owned.get();
  }
  auto tokens_since = [&](const Usage& u) { return (provider->usage() - u).total(); };

  try {
    // load
    clock.begin("load");
    LoadResult loaded = load_dataset_with_warnings(cfg.dataset_path, cfg.taxonomy);
    Dataset data = std::move(loaded.dataset);
    for (auto& w : loaded.warnings) rep.warnings.push_back(std::move(w));
    Dataset seed_set = load_dataset(cfg.seeds_path, cfg.taxonomy);
    std::vector<SeedExemplar> seeds = seeds_from_dataset(seed_set, cfg.elo);
    rep.size_before = data.size();
    if (data.samples.empty()) throw ConfigError("dataset '" + cfg.dataset_path + "' is empty");
    clock.end();

    Engine engine(cfg, *provider, seeds);

    // label and rate whatever arrives without a topic or band
    clock.begin("label");
    Usage u0 = provider->usage();
    for (auto& s : data.samples) {
      if (!s.labeled()) {
        ClassifyResult c = classify_topic(s, cfg.taxonomy, *provider);
        s.topic = c.topic == kOtherTopic ? "" : c.topic;
        if (!c.warning.empty()) rep.warnings.push_back(c.warning);
        rep.audit.push_back({s.id, "label", c.topic == kOtherTopic ? "unmatched" : "labeled", c.topic});
      }
      if (!s.rated()) {
        RatingResult r = rate_difficulty(s, seeds, cfg.elo, engine.ctx());
        rep.audit.push_back({s.id, "rate", r.ok() ? "rated" : "failed",
                             r.ok() ? std::string(band_name(r.band)) : "all judge rounds failed"});
        if (!r.ok()) rep.warnings.push_back("sample '" + s.id + "' could not be rated");
      }
    }
    rep.tokens.labeling = tokens_since(u0);
    Snapshot before = snapshot_of(data, cfg.targets, &rep.warnings);
    rep.topic.before = before.topic;
    rep.difficulty.before = before.band;
    rep.topic.jsd_before = before.topic_jsd;
    rep.difficulty.jsd_before = before.band_jsd;
    rep.distractor_entropy_before = before.entropy;
    clock.end();

    // gaps, targets, pilots
    clock.begin("pilot");
    u0 = provider->usage();
    Rng master(cfg.seed);
    Rng target_rng = master.fork(1), exec_rng = master.fork(2), uniform_rng = master.fork(3);
    const std::vector<QASample>& samples = data.samples;
    Objective probe_obj;
    probe_obj.topic_categories = cfg.taxonomy.topic_ids();
    probe_obj.topic_categories.push_back(kOtherTopic);
    AxisCounts start = counts_of(samples, probe_obj);
    Objective obj = Objective::make(cfg.taxonomy, cfg.targets, start);

    auto topic_gaps = gap_vector(empirical_distribution(data, Axis::Topic), cfg.targets.topic_target);
    std::map<std::string, double> band_gaps;
    if (Dataset rated = rated_only(data); !rated.samples.empty())
      band_gaps = gap_vector(empirical_distribution(rated, Axis::Difficulty), cfg.targets.difficulty_target);
    std::vector<Target> targets = sample_targets(topic_gaps, band_gaps, samples.size(), target_rng);
    if (targets.empty()) targets.assign(samples.size(), Target{});

    std::vector<AdmissibleOps> ops(samples.size());
    std::map<PilotKey, Target> keys;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      ops[i] = admissible(samples[i], targets[i], topic_gaps, band_gaps);
      for (Op op : ops[i].ops) keys.emplace(pilot_key(samples[i], op, targets[i]), targets[i]);
    }
    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < samples.size(); ++i)
      strata[pilot_key(samples[i], Op::R1, Target{}).stratum].push_back(i);

    DedupIndex snapshot_dedup(engine.cache());
    snapshot_dedup.add_dataset(data);
    engine.set_pilot_view(&snapshot_dedup, &obj);
    EstimationContext ectx{obj, start, samples, cfg.expansion_candidates};
    std::map<PilotKey, PilotEstimate> estimates;
    for (const auto& [key, z] : keys) {
      std::vector<std::size_t> pool;
      for (std::size_t i : strata[key.stratum])
        if (key.op != Op::R5 || samples[i].choices.size() >= 3) pool.push_back(i);
      // Each key draws from its own stream, so adding or dropping one key
      // leaves every other batch unchanged.
      Rng batch_rng(mix64(cfg.seed ^ stable_hash(std::string(op_name(key.op)) + "/" + key.target + "/" + key.stratum)));
      batch_rng.shuffle(pool);
      if (pool.size() > cfg.pilot_batch) pool.resize(cfg.pilot_batch);
      Target kz;
      if (key.op == Op::R2) kz.topic = key.target;
      if (key.op == Op::R4 || key.op == Op::R5) kz.band = key.target;
      PilotEstimate est = estimate(key, kz, pool, engine, ectx);
      if (est.flagged)
        rep.warnings.push_back("pilot for " + std::string(op_name(key.op)) + " toward " + key.target + " on " +
                               key.stratum + " failed on every batch member");
      estimates.emplace(key, std::move(est));
    }

    // In-budget validation sets aside its estimated cost before planning.
    double validation_unit = 0.0;
    std::unique_ptr<Sandbox> sandbox;
    std::unique_ptr<Retriever> retriever;
    if (cfg.validation != ValidationMode::Off) {
      sandbox = std::make_unique<Sandbox>(cfg.sandbox);
      if (!cfg.retrieval_url.empty())
        retriever = std::make_unique<HttpRetriever>(make_httplib_transport(cfg.retrieval_url));
      else if (!cfg.retrieval_cache.empty())
        retriever = FixtureCacheRetriever::from_file(cfg.retrieval_cache);
      else
        retriever = std::make_unique<FixtureCacheRetriever>(json::object());
    }
    if (cfg.validation == ValidationMode::InBudget) {
      ValidatorContext vctx{*provider, cfg.taxonomy, *sandbox, *retriever, cfg.domain};
      std::vector<QASample> probe(samples.begin(), samples.begin() + std::min(cfg.pilot_batch, samples.size()));
      Usage v0 = provider->usage();
      validate_all(probe, vctx, 1);
      validation_unit = static_cast<double>(tokens_since(v0)) / static_cast<double>(probe.size());
    }
    rep.tokens.probe = tokens_since(u0);
    clock.end();

    // plan
    clock.begin("plan");
    AssignmentInstance inst = build_instance(samples, targets, ops, estimates, 0.0);
    rep.plan.full_cost = compute_C(inst);
    double budget = cfg.budget_tokens ? *cfg.budget_tokens : *cfg.budget_fraction * rep.plan.full_cost;
    double validation_reserve = 0.0;
    if (cfg.validation == ValidationMode::InBudget) {
      validation_reserve = std::min(budget, validation_unit * static_cast<double>(samples.size()));
      budget -= validation_reserve;
    }
    inst.budget = budget;
    Plan plan;
    switch (cfg.strategy) {
      case Strategy::RefineLab:
        if (inst.entries.size() <= cfg.exact_cap)
          plan = solve_exact(inst, cfg.exact_cap);
        else
          plan = round_lp(inst, solve_lp_greedy(inst));
        break;
      case Strategy::Greedy: plan = baseline_greedy(inst); break;
      case Strategy::Uniform: plan = baseline_uniform(inst, uniform_rng); break;
    }
    plan.check(inst);
    rep.plan.solver = solver_name(plan.solver);
    rep.plan.variables = inst.entries.size();
    rep.plan.objective = plan.objective;
    rep.plan.spent = plan.spent;
    rep.plan.budget = inst.budget;
    rep.plan.lp_bound = plan.lp_bound;
    rep.plan.delta_max = plan.delta_max;
    for (Op op : kOps) rep.plan.counts[std::string(op_name(op))] = 0;
    for (long c : plan.choice)
      if (c >= 0) ++rep.plan.counts[std::string(op_name(inst.entries[c].op))];
    rep.decisions = plan_to_json(inst, plan)["decisions"];
    clock.end();

    // execute
    clock.begin("execute");
    u0 = provider->usage();
    std::vector<QASample> working = samples;
    std::vector<bool> alive(working.size(), true);
    std::vector<QASample> added;
    std::set<std::string> used_ids;
    for (const auto& s : working) used_ids.insert(s.id);
    AxisCounts counts = start;
    std::size_t alive_count = working.size();
    DedupIndex live_dedup(engine.cache());
    live_dedup.add_dataset(data);
    for (Op op : kOps) {
      rep.execution.applied[std::string(op_name(op))] = 0;
      rep.execution.skipped[std::string(op_name(op))] = 0;
    }

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < plan.choice.size(); ++i)
      if (plan.choice[i] >= 0) order.push_back(i);
    exec_rng.shuffle(order);
    for (std::size_t i : order) {
      const Entry& entry = inst.entries[plan.choice[i]];
      const Op op = entry.op;
      const std::string name(op_name(op));
      const Target& z = targets[i];
      QASample& s = working[i];
      auto skip = [&](const std::string& why) {
        ++rep.execution.skipped[name];
        rep.audit.push_back({s.id, name, "skipped", why});
      };

      if (op == Op::R1 || op == Op::R3) {
        Effect e = add_effect(obj, s, -1.0);
        const double n = counts.total();
        double p = 0.0, t = 0.0;
        if (op == Op::R1) {
          std::size_t c = obj.topic_index(s.topic);
          p = n > 0 ? counts.topic[c] / n : 0.0;
          t = obj.topic_target[c];
        } else {
          double bn = counts.band[0] + counts.band[1] + counts.band[2];
          std::size_t b = static_cast<std::size_t>(s.difficulty);
          p = bn > 0 ? counts.band[b] / bn : 0.0;
          t = obj.band_target[b];
        }
        RemovalDecision d = apply_removal(s, p > 0 ? std::clamp((p - t) / p, 0.0, 1.0) : 0.0, exec_rng);
        if (cfg.targets.min_dataset_size && alive_count <= *cfg.targets.min_dataset_size) {
          skip("dataset at its minimum size");
        } else if (!d.dropped) {
          skip("kept by the removal draw");
        } else if (!improves(obj, counts, e, axis_of(op))) {
          skip("removal would not improve alignment");
        } else {
          alive[i] = false;
          --alive_count;
          apply(counts, e);
          ++rep.execution.applied[name];
          ++rep.execution.removed;
          char buf[64];
          std::snprintf(buf, sizeof buf, "p=%.4f draw=%.4f", d.probability, d.draw);
          rep.audit.push_back({s.id, name, "applied", buf});
        }
        continue;
      }

      // Cheap check with the predicted effect before spending tokens.
      Effect predicted = zero_effect(obj);
      if (op == Op::R2) {
        QASample p = s;
        p.topic = z.topic;
        predicted = add_effect(obj, p, 1.0);
      } else if (op == Op::R4) {
        QASample p = s;
        p.difficulty = parse_band(z.band);
        predicted = add_effect(obj, p, 1.0);
      } else {
        QASample p = s;
        int step = parse_band(z.band) > s.difficulty ? 1 : -1;
        p.difficulty = static_cast<Band>(static_cast<int>(s.difficulty) + step);
        predicted = add_effect(obj, s, -1.0);
        predicted += add_effect(obj, p, 1.0);
      }
      if (!improves(obj, counts, predicted, axis_of(op))) {
        skip("predicted effect would not improve alignment");
        continue;
      }

      Attempt a = engine.attempt(s, op, z, live_dedup);
      if (a.failed) {
        ++rep.execution.skipped[name];
        rep.audit.push_back({s.id, name, "failed", a.detail});
        continue;
      }
      if (op == Op::R5) {
        if (!a.replaced || a.replaced->difficulty == s.difficulty) {
          skip(a.detail + "; band unchanged");
          continue;
        }
        Effect e = engine.effect_of(obj, s, op, a);
        if (!improves(obj, counts, e, axis_of(op))) {
          skip(a.detail + "; would not improve alignment");
          continue;
        }
        apply(counts, e);
        s = std::move(*a.replaced);
        ++rep.execution.applied[name];
        ++rep.execution.rewritten;
        rep.audit.push_back({s.id, name, "applied", a.detail});
        continue;
      }
      std::size_t kept = 0;
      for (auto& n : a.added) {
        Effect e = add_effect(obj, n, 1.0);
        if (!n.rated() || !improves(obj, counts, e, axis_of(op))) continue;
        n.id = unique_id(n.id, used_ids);
        apply(counts, e);
        live_dedup.add(n.question);
        rep.audit.push_back({n.id, name, "added", "from " + s.id});
        added.push_back(std::move(n));
        ++kept;
      }
      if (kept == 0) {
        skip(a.detail + "; nothing committed");
      } else {
        ++rep.execution.applied[name];
        rep.execution.added += kept;
        rep.audit.push_back({s.id, name, "applied", a.detail + ", " + std::to_string(kept) + " committed"});
      }
    }

    Dataset refined;
    refined.taxonomy = data.taxonomy;
    for (std::size_t i = 0; i < working.size(); ++i)
      if (alive[i]) refined.samples.push_back(std::move(working[i]));
    for (auto& n : added) refined.samples.push_back(std::move(n));
    rep.tokens.refinement = tokens_since(u0);
    clock.end();

    // validate
    if (cfg.validation != ValidationMode::Off) {
      clock.begin("validate");
      u0 = provider->usage();
      ValidatorContext vctx{*provider, cfg.taxonomy, *sandbox, *retriever, cfg.domain};
      std::vector<QASample> batch = refined.samples;
      if (cfg.validation == ValidationMode::InBudget && validation_unit > 0.0) {
        auto n = static_cast<std::size_t>(std::floor(validation_reserve / validation_unit));
        if (batch.size() > n) batch.resize(n);
      }
      auto results = validate_all(batch, vctx, cfg.validation_workers);
      std::vector<std::string> log;
      CorrectionTally t = apply_corrections(refined.samples, results, &log);
      for (const auto& r : results) {
        if (r.verdict == Verdict::Pass) continue;
        std::string detail(route_name(r.route));
        if (r.corrected_answer_index) detail += " -> " + std::to_string(*r.corrected_answer_index);
        rep.audit.push_back({r.sample_id, "validate", std::string(verdict_name(r.verdict)), detail});
      }
      for (auto& l : log) rep.warnings.push_back(std::move(l));
      rep.validation.validated = t.validated();
      rep.validation.pass = t.pass;
      rep.validation.corrected = t.corrected;
      rep.validation.fail = t.fail;
      rep.validation.inconclusive = t.inconclusive;
      rep.validation.rejected = t.rejected;
      rep.validation.correction_ratio = t.correction_ratio();
      rep.validation.residual_error_rate = t.residual_error_rate();
      rep.tokens.validation = tokens_since(u0);
      clock.end();
    }

    // report
    clock.begin("report");
    for (auto& s : refined.samples) validate_sample(s);
    Snapshot after = snapshot_of(refined, cfg.targets, &rep.warnings);
    rep.size_after = refined.size();
    rep.topic.after = after.topic;
    rep.difficulty.after = after.band;
    rep.topic.jsd_after = after.topic_jsd;
    rep.difficulty.jsd_after = after.band_jsd;
    rep.distractor_entropy_after = after.entropy;
    rep.tokens.calls = provider->ledger().calls();
    out.refined = std::move(refined);
    clock.end();
  } catch (const Error& e) {
    rep.status = "failed";
    rep.failed_stage = clock.stage();
    rep.error = e.what();
    if (dynamic_cast<const ProviderUnavailable*>(&e) || dynamic_cast<const ProviderRejected*>(&e))
      out.failure_kind = "provider";
    else if (dynamic_cast<const ConfigError*>(&e))
      out.failure_kind = "config";
    else
      out.failure_kind = "stage";
    out.refined.reset();
    spdlog::error("stage '{}' failed: {}", rep.failed_stage, e.what());
  }
  clock.total();
  return out;
}

void write_outputs(const RunOutcome& outcome, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw EnvironmentError("cannot create output directory '" + out_dir + "': " + ec.message());
  if (outcome.refined) save_dataset((fs::path(out_dir) / "dataset.jsonl").string(), *outcome.refined);
  write_file_atomic((fs::path(out_dir) / "report.json").string(), render_json(outcome.report));
  write_file_atomic((fs::path(out_dir) / "report.txt").string(), render_table(outcome.report));
  write_file_atomic((fs::path(out_dir) / "timing.json").string(), outcome.timing.dump(2) + "\n");
}

}  // namespace qarefine
