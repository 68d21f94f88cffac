#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mipl/analysis.hpp"
#include "mipl/corpus.hpp"
#include "mipl/dsi.hpp"
#include "mipl/errors.hpp"
#include "mipl/game.hpp"
#include "mipl/mitests.hpp"
#include "mipl/model.hpp"
#include "mipl/neighborhood.hpp"
#include "mipl/parallel.hpp"
#include "mipl/poison.hpp"
#include "mipl/rng.hpp"

namespace mipl {

inline constexpr const char* kFileVersion = "mipl-v1";

/// Configuration-schema violation; the CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Errc::bad_param, what) {}
};

// ------------------------------------------------------------- configuration

struct CorpusSection {
  std::vector<std::string> background_files;  // empty -> synthetic word soup
  int background_sequences = 5000;
  int sequence_length = 64;
  double noise_fraction = 0.05;
  int aux_sequences = 1000;  // held-out background; the attack's aux corpus
  int canaries = 250;        // injected
  int holdout = 250;
  int reference_canaries = 125;  // known non-members for dataset inference
  int canary_length = 80;
};

struct AttackSection {
  int b1 = 1;
  int b2 = 10;
  int max_iters = 0;  // 0 -> 20 * |x|
  std::string candidate_policy = "full";  // or "sampled"
  int candidate_sample_size = 64;
};

struct BaselineSection {
  std::vector<double> dropout_rates = {0.05, 0.1, 0.125, 0.1429, 0.2, 0.25, 0.5};
  std::vector<double> case_flip_ps = {0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.8};
  std::vector<int> chunk_lens = {6, 5, 4, 3};  // least destructive first
};

struct GameSection {
  int trials = 200;
  int dataset_size = 300;
  int gamma_points = 201;
  std::string spec = "ngram";  // which neighborhood the game cell uses
  int ngram_k = 7;
  std::string test = "loss";
};

struct VerifySection {
  int trials = 50;
  int dataset_size = 300;
  double grid_step = 1e-3;
  int lemma1_pairs = 10;
  int lemma1_samples = 10000;
  double lemma1_tolerance = 0.01;
  int fixed_b2 = 10;
};

struct DsiSection {
  double fit_fraction = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "out";
  int jobs = 1;
  CorpusSection corpus;
  ModelConfig model;  // model.seed is derived from `seed` at run time
  std::vector<NeighborhoodSpec> specs = {NeighborhoodSpec::exact(), NeighborhoodSpec::ngram(7),
                                         NeighborhoodSpec::embedding(0.9)};
  std::vector<TestKind> tests = all_tests();
  ScoreConfig scoring;
  AttackSection attack;
  BaselineSection baselines;
  GameSection game;
  VerifySection verify;
  DsiSection dsi;
  std::vector<int> sweep_ks = {5, 7, 9, 11};
};

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const std::string& path, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + "." + field + ": " + e.what());
  }
}

inline TestKind test_from_name(const std::string& name, const std::string& path) {
  for (TestKind t : all_tests()) {
    if (test_name(t) == name) return t;
  }
  throw ConfigError("config: " + path + ": unknown test '" + name + "'");
}

inline NeighborhoodSpec spec_from_json(const nlohmann::json& j, const std::string& path) {
  const std::string kind = json_get<std::string>(j, path, "kind", "");
  if (kind == "ngram") return NeighborhoodSpec::ngram(json_get<int>(j, path, "k", 7));
  if (kind == "exact") return NeighborhoodSpec::exact();
  if (kind == "edit") return NeighborhoodSpec::edit(json_get<double>(j, path, "l", 0.48));
  if (kind == "embedding") {
    EmbedderConfig ec;
    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      const std::string mode = json_get<std::string>(e, path + ".embedder", "mode", "hashed");
      if (mode == "external") {
        ec.mode = EmbedderConfig::Mode::external_table;
        ec.table_path = json_get<std::string>(e, path + ".embedder", "table_path", "");
        if (ec.table_path.empty()) {
          throw ConfigError("config: " + path + ".embedder.table_path: required for external mode");
        }
      } else if (mode != "hashed") {
        throw ConfigError("config: " + path + ".embedder.mode: unknown mode '" + mode + "'");
      }
      ec.dim = json_get<int>(e, path + ".embedder", "dim", 64);
      ec.seed = json_get<std::uint64_t>(e, path + ".embedder", "seed", 0);
      ec.char_n = json_get<int>(e, path + ".embedder", "char_n", 3);
    }
    return NeighborhoodSpec::embedding(json_get<double>(j, path, "c", 0.9), ec);
  }
  throw ConfigError("config: " + path + ".kind: unknown neighborhood kind '" + kind + "'");
}

inline nlohmann::json spec_to_json(const NeighborhoodSpec& s) {
  nlohmann::json j;
  switch (s.kind) {
    case NeighborhoodKind::ngram:
      j["kind"] = "ngram";
      j["k"] = s.k;
      break;
    case NeighborhoodKind::exact_match:
      j["kind"] = "exact";
      break;
    case NeighborhoodKind::edit_distance:
      j["kind"] = "edit";
      j["l"] = s.l;
      break;
    case NeighborhoodKind::embedding:
      j["kind"] = "embedding";
      j["c"] = s.c;
      j["embedder"] = {{"mode", s.embedder.mode == EmbedderConfig::Mode::external_table
                                    ? "external"
                                    : "hashed"},
                       {"dim", s.embedder.dim},
                       {"seed", s.embedder.seed},
                       {"char_n", s.embedder.char_n}};
      if (!s.embedder.table_path.empty()) j["embedder"]["table_path"] = s.embedder.table_path;
      break;
  }
  return j;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::json_get;
  ExperimentConfig cfg;
  cfg.seed = json_get<std::uint64_t>(j, "", "seed", cfg.seed);
  cfg.out_dir = json_get<std::string>(j, "", "out_dir", cfg.out_dir);
  cfg.jobs = json_get<int>(j, "", "jobs", cfg.jobs);
  if (cfg.jobs < 1) throw ConfigError("config: jobs: must be >= 1");

  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    cfg.corpus.background_files =
        json_get<std::vector<std::string>>(c, "corpus", "background_files", {});
    cfg.corpus.background_sequences =
        json_get<int>(c, "corpus", "background_sequences", cfg.corpus.background_sequences);
    cfg.corpus.sequence_length =
        json_get<int>(c, "corpus", "sequence_length", cfg.corpus.sequence_length);
    cfg.corpus.noise_fraction =
        json_get<double>(c, "corpus", "noise_fraction", cfg.corpus.noise_fraction);
    cfg.corpus.aux_sequences =
        json_get<int>(c, "corpus", "aux_sequences", cfg.corpus.aux_sequences);
    cfg.corpus.canaries = json_get<int>(c, "corpus", "canaries", cfg.corpus.canaries);
    cfg.corpus.holdout = json_get<int>(c, "corpus", "holdout", cfg.corpus.holdout);
    cfg.corpus.reference_canaries =
        json_get<int>(c, "corpus", "reference_canaries", cfg.corpus.reference_canaries);
    cfg.corpus.canary_length =
        json_get<int>(c, "corpus", "canary_length", cfg.corpus.canary_length);
    for (const std::string& f : cfg.corpus.background_files) {
      if (!std::filesystem::exists(f)) {
        throw ConfigError("config: corpus.background_files: no such file " + f);
      }
    }
    if (cfg.corpus.canary_length < 16) {
      throw ConfigError("config: corpus.canary_length: must be >= 16");
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    cfg.model.vocab = json_get<int>(m, "model", "vocab", cfg.model.vocab);
    cfg.model.context = json_get<int>(m, "model", "context", cfg.model.context);
    cfg.model.embed_dim = json_get<int>(m, "model", "embed_dim", cfg.model.embed_dim);
    cfg.model.learning_rate =
        json_get<double>(m, "model", "learning_rate", cfg.model.learning_rate);
    cfg.model.epochs = json_get<int>(m, "model", "epochs", cfg.model.epochs);
    cfg.model.batch_size = json_get<int>(m, "model", "batch_size", cfg.model.batch_size);
    if (cfg.model.vocab < 2 || cfg.model.context < 1 || cfg.model.embed_dim < 1 ||
        cfg.model.epochs < 0 || cfg.model.batch_size < 1 || cfg.model.learning_rate <= 0.0) {
      throw ConfigError("config: model: all fields must be positive");
    }
  }

  if (j.contains("specs")) {
    cfg.specs.clear();
    const auto& arr = j.at("specs");
    if (!arr.is_array() || arr.empty()) throw ConfigError("config: specs: non-empty array required");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      cfg.specs.push_back(detail::spec_from_json(arr[i], "specs[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("tests")) {
    cfg.tests.clear();
    for (const auto& name : j.at("tests")) {
      cfg.tests.push_back(detail::test_from_name(name.get<std::string>(), "tests"));
    }
    if (cfg.tests.empty()) throw ConfigError("config: tests: must not be empty");
  }

  if (j.contains("scoring")) {
    const auto& s = j.at("scoring");
    cfg.scoring.mink_k = json_get<double>(s, "scoring", "mink_k", cfg.scoring.mink_k);
    cfg.scoring.zlib_level = json_get<int>(s, "scoring", "zlib_level", cfg.scoring.zlib_level);
    cfg.scoring.perturb.flip_prob =
        json_get<double>(s, "scoring", "perturb_flip_prob", cfg.scoring.perturb.flip_prob);
    cfg.scoring.perturb.n_perturb =
        json_get<int>(s, "scoring", "perturb_count", cfg.scoring.perturb.n_perturb);
    if (cfg.scoring.mink_k <= 0.0 || cfg.scoring.mink_k > 1.0) {
      throw ConfigError("config: scoring.mink_k: must be in (0,1]");
    }
  }

  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    cfg.attack.b1 = json_get<int>(a, "attack", "b1", cfg.attack.b1);
    cfg.attack.b2 = json_get<int>(a, "attack", "b2", cfg.attack.b2);
    cfg.attack.max_iters = json_get<int>(a, "attack", "max_iters", cfg.attack.max_iters);
    cfg.attack.candidate_policy =
        json_get<std::string>(a, "attack", "candidate_policy", cfg.attack.candidate_policy);
    cfg.attack.candidate_sample_size =
        json_get<int>(a, "attack", "candidate_sample_size", cfg.attack.candidate_sample_size);
    if (cfg.attack.b1 < 0 || cfg.attack.b2 < 0) {
      throw ConfigError("config: attack: budgets must be >= 0");
    }
    if (cfg.attack.candidate_policy != "full" && cfg.attack.candidate_policy != "sampled") {
      throw ConfigError("config: attack.candidate_policy: 'full' or 'sampled'");
    }
  }

  if (j.contains("baselines")) {
    const auto& b = j.at("baselines");
    cfg.baselines.dropout_rates =
        json_get<std::vector<double>>(b, "baselines", "dropout_rates", cfg.baselines.dropout_rates);
    cfg.baselines.case_flip_ps =
        json_get<std::vector<double>>(b, "baselines", "case_flip_ps", cfg.baselines.case_flip_ps);
    cfg.baselines.chunk_lens =
        json_get<std::vector<int>>(b, "baselines", "chunk_lens", cfg.baselines.chunk_lens);
  }

  if (j.contains("game")) {
    const auto& g = j.at("game");
    cfg.game.trials = json_get<int>(g, "game", "trials", cfg.game.trials);
    cfg.game.dataset_size = json_get<int>(g, "game", "dataset_size", cfg.game.dataset_size);
    cfg.game.gamma_points = json_get<int>(g, "game", "gamma_points", cfg.game.gamma_points);
    cfg.game.spec = json_get<std::string>(g, "game", "spec", cfg.game.spec);
    cfg.game.ngram_k = json_get<int>(g, "game", "ngram_k", cfg.game.ngram_k);
    cfg.game.test = json_get<std::string>(g, "game", "test", cfg.game.test);
    if (cfg.game.trials < 1) throw ConfigError("config: game.trials: must be >= 1");
  }

  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    cfg.verify.trials = json_get<int>(v, "verify", "trials", cfg.verify.trials);
    cfg.verify.dataset_size = json_get<int>(v, "verify", "dataset_size", cfg.verify.dataset_size);
    cfg.verify.grid_step = json_get<double>(v, "verify", "grid_step", cfg.verify.grid_step);
    cfg.verify.lemma1_pairs = json_get<int>(v, "verify", "lemma1_pairs", cfg.verify.lemma1_pairs);
    cfg.verify.lemma1_samples =
        json_get<int>(v, "verify", "lemma1_samples", cfg.verify.lemma1_samples);
    cfg.verify.lemma1_tolerance =
        json_get<double>(v, "verify", "lemma1_tolerance", cfg.verify.lemma1_tolerance);
    cfg.verify.fixed_b2 = json_get<int>(v, "verify", "fixed_b2", cfg.verify.fixed_b2);
  }

  if (j.contains("dsi")) {
    cfg.dsi.fit_fraction =
        json_get<double>(j.at("dsi"), "dsi", "fit_fraction", cfg.dsi.fit_fraction);
    if (cfg.dsi.fit_fraction <= 0.0 || cfg.dsi.fit_fraction >= 1.0) {
      throw ConfigError("config: dsi.fit_fraction: must be in (0,1)");
    }
  }

  if (j.contains("sweep_ks")) {
    cfg.sweep_ks = detail::json_get<std::vector<int>>(j, "", "sweep_ks", cfg.sweep_ks);
  }
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["jobs"] = cfg.jobs;
  j["corpus"] = {{"background_files", cfg.corpus.background_files},
                 {"background_sequences", cfg.corpus.background_sequences},
                 {"sequence_length", cfg.corpus.sequence_length},
                 {"noise_fraction", cfg.corpus.noise_fraction},
                 {"aux_sequences", cfg.corpus.aux_sequences},
                 {"canaries", cfg.corpus.canaries},
                 {"holdout", cfg.corpus.holdout},
                 {"reference_canaries", cfg.corpus.reference_canaries},
                 {"canary_length", cfg.corpus.canary_length}};
  j["model"] = {{"vocab", cfg.model.vocab},
                {"context", cfg.model.context},
                {"embed_dim", cfg.model.embed_dim},
                {"learning_rate", cfg.model.learning_rate},
                {"epochs", cfg.model.epochs},
                {"batch_size", cfg.model.batch_size}};
  j["specs"] = nlohmann::json::array();
  for (const auto& s : cfg.specs) j["specs"].push_back(detail::spec_to_json(s));
  j["tests"] = nlohmann::json::array();
  for (TestKind t : cfg.tests) j["tests"].push_back(test_name(t));
  j["scoring"] = {{"mink_k", cfg.scoring.mink_k},
                  {"zlib_level", cfg.scoring.zlib_level},
                  {"perturb_flip_prob", cfg.scoring.perturb.flip_prob},
                  {"perturb_count", cfg.scoring.perturb.n_perturb}};
  j["attack"] = {{"b1", cfg.attack.b1},
                 {"b2", cfg.attack.b2},
                 {"max_iters", cfg.attack.max_iters},
                 {"candidate_policy", cfg.attack.candidate_policy},
                 {"candidate_sample_size", cfg.attack.candidate_sample_size}};
  j["baselines"] = {{"dropout_rates", cfg.baselines.dropout_rates},
                    {"case_flip_ps", cfg.baselines.case_flip_ps},
                    {"chunk_lens", cfg.baselines.chunk_lens}};
  j["game"] = {{"trials", cfg.game.trials},
               {"dataset_size", cfg.game.dataset_size},
               {"gamma_points", cfg.game.gamma_points},
               {"spec", cfg.game.spec},
               {"ngram_k", cfg.game.ngram_k},
               {"test", cfg.game.test}};
  j["verify"] = {{"trials", cfg.verify.trials},
                 {"dataset_size", cfg.verify.dataset_size},
                 {"grid_step", cfg.verify.grid_step},
                 {"lemma1_pairs", cfg.verify.lemma1_pairs},
                 {"lemma1_samples", cfg.verify.lemma1_samples},
                 {"lemma1_tolerance", cfg.verify.lemma1_tolerance},
                 {"fixed_b2", cfg.verify.fixed_b2}};
  j["dsi"] = {{"fit_fraction", cfg.dsi.fit_fraction}};
  j["sweep_ks"] = cfg.sweep_ks;
  return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Experiment identity: the config with the output location and worker count
/// stripped, so reruns into different directories compare equal.
inline std::string config_hash_hex(const ExperimentConfig& cfg) {
  nlohmann::json j = config_to_json(cfg);
  j.erase("out_dir");
  j.erase("jobs");
  std::ostringstream os;
  os << std::hex << fnv1a64(j.dump());
  return os.str();
}

inline std::string report_header(const ExperimentConfig& cfg) {
  return "config_hash=" + config_hash_hex(cfg) + " seed=" + std::to_string(cfg.seed) +
         " version=" + kFileVersion;
}

// ------------------------------------------------------------------- corpus

struct CorpusBundle {
  Dataset background;          // trained on
  Dataset aux;                 // held-out background; attack sampling corpus
  Dataset canaries;            // inject + holdout pool
  Dataset reference_canaries;  // never injected; dsi reference set
  MixResult mixed;             // train = background + injected; eval list
};

/// Canary-generation constraint set: the configured specs minus the edit kind
/// (the l=0.48 ball makes mutual avoidance infeasible at scale; see README),
/// with the n-gram k tightened to the smallest radius the sweep will label.
inline std::vector<NeighborhoodSpec> canary_check_specs(const ExperimentConfig& cfg) {
  int min_k = std::numeric_limits<int>::max();
  for (int k : cfg.sweep_ks) min_k = std::min(min_k, k);
  std::vector<NeighborhoodSpec> out;
  bool saw_ngram = false;
  for (const auto& s : cfg.specs) {
    if (s.kind == NeighborhoodKind::edit_distance) continue;
    if (s.kind == NeighborhoodKind::ngram) {
      saw_ngram = true;
      out.push_back(NeighborhoodSpec::ngram(std::min(s.k, min_k == std::numeric_limits<int>::max() ? s.k : min_k)));
    } else {
      out.push_back(s);
    }
  }
  if (!saw_ngram && min_k != std::numeric_limits<int>::max()) {
    out.push_back(NeighborhoodSpec::ngram(min_k));
  }
  if (out.empty()) out.push_back(NeighborhoodSpec::exact());
  return out;
}

inline CorpusBundle build_corpus(const ExperimentConfig& cfg) {
  CorpusBundle b;
  const int seq_len = cfg.corpus.sequence_length;
  if (cfg.corpus.background_files.empty()) {
    Dataset all = synth_background(cfg.corpus.background_sequences + cfg.corpus.aux_sequences,
                                   seq_len, stream_seed(cfg.seed, "background"),
                                   cfg.corpus.noise_fraction);
    for (int i = 0; i < cfg.corpus.background_sequences; ++i) {
      b.background.add(all.points[i], Provenance::background);
    }
    for (std::size_t i = cfg.corpus.background_sequences; i < all.size(); ++i) {
      b.aux.add(all.points[i], Provenance::background);
    }
  } else {
    std::string text;
    for (const std::string& f : cfg.corpus.background_files) {
      std::ifstream in(f, std::ios::binary);
      if (!in) throw Error(Errc::io_error, "build_corpus: cannot open " + f);
      text.append((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    Dataset all = ingest_text(text, seq_len);
    const int need = cfg.corpus.background_sequences + cfg.corpus.aux_sequences;
    if (static_cast<int>(all.size()) < need) {
      throw Error(Errc::size_mismatch, "build_corpus: corpus files yield " +
                                           std::to_string(all.size()) + " sequences, need " +
                                           std::to_string(need));
    }
    for (int i = 0; i < cfg.corpus.background_sequences; ++i) {
      b.background.add(all.points[i], Provenance::background);
    }
    for (int i = cfg.corpus.background_sequences; i < need; ++i) {
      b.aux.add(all.points[i], Provenance::background);
    }
  }

  const auto check_specs = canary_check_specs(cfg);
  b.canaries = gen_canaries(cfg.corpus.canaries + cfg.corpus.holdout, cfg.corpus.canary_length,
                            stream_seed(cfg.seed, "canaries"), check_specs);
  b.reference_canaries =
      gen_canaries(cfg.corpus.reference_canaries, cfg.corpus.canary_length,
                   stream_seed(cfg.seed, "reference_canaries"), check_specs);
  b.mixed = mix(b.background, b.canaries, cfg.corpus.canaries, cfg.corpus.holdout,
                stream_seed(cfg.seed, "mix"));
  return b;
}

// ------------------------------------------------------------------- models

inline ModelParams train_natural_model(const ExperimentConfig& cfg, const CorpusBundle& bundle) {
  ModelConfig mc = cfg.model;
  mc.seed = stream_seed(cfg.seed, "model");
  return train(init_model(mc), bundle.mixed.train);
}

inline ModelParams train_reference_model(const ExperimentConfig& cfg, const CorpusBundle& bundle) {
  ModelConfig mc = cfg.model;
  mc.seed = stream_seed(cfg.seed, "reference_model");
  return train(init_model(mc), bundle.background);
}

inline ModelParams train_surrogate_model(const ExperimentConfig& cfg, const CorpusBundle& bundle) {
  ModelConfig mc = cfg.model;
  mc.seed = stream_seed(cfg.seed, "surrogate_model");
  return train(init_model(mc), bundle.background);
}

inline PoisonConfig attack_config(const ExperimentConfig& cfg, std::uint64_t stream) {
  PoisonConfig pc;
  pc.max_iters = cfg.attack.max_iters;
  pc.candidate_policy = cfg.attack.candidate_policy == "sampled"
                            ? PoisonConfig::CandidatePolicy::sampled
                            : PoisonConfig::CandidatePolicy::full_vocab;
  pc.candidate_sample_size = cfg.attack.candidate_sample_size;
  pc.seed = stream;
  return pc;
}

// --------------------------------------------------------------------- eval

struct EvalCell {
  std::string spec_name;
  TestKind test = TestKind::loss;
  double natural_auc = 0.0;
  double natural_tpr_at_1fpr = 0.0;
  std::optional<double> poisoned_auc;
  std::optional<double> poisoned_tpr_at_1fpr;
};

struct SpecEval {
  NeighborhoodSpec spec;
  LabeledEvalSet labels;
  ScoreTable natural;
  std::optional<ScoreTable> poisoned;
};

struct EvalRun {
  std::vector<SpecEval> per_spec;
  std::vector<EvalCell> cells;
  nlohmann::json summary;
};

inline ScoreConfig scoring_with_seed(const ExperimentConfig& cfg) {
  ScoreConfig sc = cfg.scoring;
  sc.seed = stream_seed(cfg.seed, "scoring");
  return sc;
}

/// Scores the eval set under every configured spec; when a poisoned train set
/// is supplied a second model is trained on it and both conditions land side
/// by side in the summary.
inline EvalRun run_eval(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                        const Dataset* poisoned_train, const std::string& out_dir) {
  EvalRun run;
  const ScoreConfig sc = scoring_with_seed(cfg);
  const ModelParams model = train_natural_model(cfg, bundle);
  const ModelParams reference = train_reference_model(cfg, bundle);
  std::optional<ModelParams> poisoned_model;
  if (poisoned_train != nullptr) {
    ModelConfig mc = cfg.model;
    mc.seed = stream_seed(cfg.seed, "model");  // same init/shuffle stream as natural
    poisoned_model = train(init_model(mc), *poisoned_train);
  }

  const std::string header = report_header(cfg);
  for (const NeighborhoodSpec& spec : cfg.specs) {
    SpecEval se;
    se.spec = spec;
    se.labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
    se.natural = score_all(model, reference, se.labels, sc, cfg.jobs);
    if (poisoned_model) {
      se.poisoned = score_all(*poisoned_model, reference, se.labels, sc, cfg.jobs);
    }

    for (TestKind t : cfg.tests) {
      EvalCell cell;
      cell.spec_name = spec.name();
      cell.test = t;
      const RocCurve natural_curve = roc(se.natural, t);
      cell.natural_auc = auc(natural_curve);
      cell.natural_tpr_at_1fpr = tpr_at_fpr(natural_curve, 0.01);
      if (se.poisoned) {
        const RocCurve poisoned_curve = roc(*se.poisoned, t);
        cell.poisoned_auc = auc(poisoned_curve);
        cell.poisoned_tpr_at_1fpr = tpr_at_fpr(poisoned_curve, 0.01);
      }
      run.cells.push_back(cell);
      if (!out_dir.empty()) {
        save_roc(out_dir + "/roc_natural_" + spec.name() + "_" + test_name(t) + ".csv",
                 natural_curve, header);
        if (se.poisoned) {
          save_roc(out_dir + "/roc_poisonm_" + spec.name() + "_" + test_name(t) + ".csv",
                   roc(*se.poisoned, t), header);
        }
      }
    }
    if (!out_dir.empty()) {
      save_score_table(out_dir + "/scores_natural_" + spec.name() + ".csv", se.natural, header);
      if (se.poisoned) {
        save_score_table(out_dir + "/scores_poisonm_" + spec.name() + ".csv", *se.poisoned,
                         header);
      }
    }
    run.per_spec.push_back(std::move(se));
  }

  nlohmann::json summary;
  summary["version"] = kFileVersion;
  summary["config_hash"] = config_hash_hex(cfg);
  summary["seed"] = cfg.seed;
  summary["conditions"] =
      poisoned_train != nullptr ? nlohmann::json::array({"natural", "poisonm"})
                                : nlohmann::json::array({"natural"});
  summary["compressor"] = {{"impl", "zlib"}, {"level", sc.zlib_level}};
  summary["cells"] = nlohmann::json::array();
  for (const EvalCell& c : run.cells) {
    nlohmann::json jc;
    jc["spec"] = c.spec_name;
    jc["test"] = test_name(c.test);
    jc["natural_auc"] = c.natural_auc;
    jc["natural_tpr_at_1fpr"] = c.natural_tpr_at_1fpr;
    if (c.poisoned_auc) {
      jc["poisoned_auc"] = *c.poisoned_auc;
      jc["poisoned_tpr_at_1fpr"] = *c.poisoned_tpr_at_1fpr;
    }
    summary["cells"].push_back(jc);
  }
  // compressed lengths recorded for auditability of the zlib test
  nlohmann::json zl = nlohmann::json::object();
  for (std::size_t i = 0; i < bundle.mixed.eval.size(); ++i) {
    zl["p" + std::to_string(i)] = compressed_length(bundle.mixed.eval[i], sc.zlib_level);
  }
  summary["zlib_compressed_bytes"] = zl;
  run.summary = summary;
  if (!out_dir.empty()) {
    std::ofstream out(out_dir + "/summary.json");
    if (!out) throw Error(Errc::io_error, "run_eval: cannot write summary.json");
    out << summary.dump(2) << "\n";
  }
  return run;
}

// -------------------------------------------------------------------- attack

struct AttackRun {
  NeighborhoodSpec spec;
  PoisonDatasetResult result;
  int n_member_targets = 0;
  int n_non_member_targets = 0;
};

inline std::vector<std::pair<Sequence, bool>> eval_targets(const CorpusBundle& bundle,
                                                           const LabeledEvalSet& labels) {
  std::vector<std::pair<Sequence, bool>> targets;
  targets.reserve(bundle.mixed.eval.size());
  for (std::size_t i = 0; i < bundle.mixed.eval.size(); ++i) {
    targets.push_back({bundle.mixed.eval[i], labels.member[i] != 0});
  }
  return targets;
}

inline AttackRun run_attack(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                            const ModelParams& surrogate, const NeighborhoodSpec& spec,
                            const std::string& out_dir) {
  AttackRun run;
  run.spec = spec;
  const LabeledEvalSet labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
  const auto targets = eval_targets(bundle, labels);
  for (const auto& [seq, member] : targets) {
    (member ? run.n_member_targets : run.n_non_member_targets) += 1;
  }
  const PoisonConfig pc = attack_config(cfg, stream_seed(cfg.seed, "attack", fnv1a64(spec.name())));
  run.result = poison_dataset(bundle.mixed.train, targets, spec, surrogate, cfg.attack.b1,
                              cfg.attack.b2, bundle.aux, pc);
  if (!out_dir.empty()) {
    const std::string header = report_header(cfg);
    save_dataset(out_dir + "/poisoned_train_" + spec.name() + ".ds", run.result.data,
                 cfg.corpus.sequence_length);
    save_provenance(out_dir + "/poisoned_train_" + spec.name() + ".prov", run.result.data);
    save_records_jsonl(out_dir + "/poison_records_" + spec.name() + ".jsonl", run.result.records,
                       header);
  }
  return run;
}

// ------------------------------------------------------------------ baseline

struct BaselineRun {
  BaselineKind kind = BaselineKind::token_dropout;
  Dataset data;               // poisoned dataset
  int poisoned_targets = 0;   // non-member targets that received poisons
  int infeasible_targets = 0; // NoFeasibleParams under the grid
};

/// Baseline poisoning: only non-member targets receive poisons (there are no
/// baseline constructions for poisoned neighbors), with per-target tuned
/// least-destructive parameters; infeasible targets stay untouched.
inline BaselineRun run_baseline_attack(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                                       BaselineKind kind, const NeighborhoodSpec& spec) {
  BaselineRun run;
  run.kind = kind;
  run.data = bundle.mixed.train;

  const LabeledEvalSet labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
  const auto targets = eval_targets(bundle, labels);
  std::vector<Sequence> target_seqs;
  for (const auto& [seq, member] : targets) target_seqs.push_back(seq);
  const auto lists = detail::neighbor_lists(run.data, target_seqs, spec);

  std::vector<BaselineParams> grid;
  switch (kind) {
    case BaselineKind::token_dropout:
      for (double r : cfg.baselines.dropout_rates) grid.push_back({r, 0, 0});
      break;
    case BaselineKind::case_flip:
      for (double p : cfg.baselines.case_flip_ps) grid.push_back({p, 0, 0});
      break;
    case BaselineKind::chunk:
      for (int len : cfg.baselines.chunk_lens) {
        grid.push_back({0.0, len, cfg.corpus.canary_length});
      }
      break;
  }

  // substitutable background pool: not a neighbor of any member target
  std::vector<std::uint8_t> member_neighbor(run.data.size(), 0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!targets[t].second) continue;
    for (std::uint32_t p : lists[t]) member_neighbor[p] = 1;
  }
  std::vector<std::uint32_t> pool;
  for (std::size_t p = 0; p < run.data.size(); ++p) {
    if (member_neighbor[p] || run.data.provenance[p] != Provenance::background) continue;
    pool.push_back(static_cast<std::uint32_t>(p));
  }
  const std::uint64_t base_seed = stream_seed(cfg.seed, "baseline", fnv1a64(baseline_name(kind)));
  Rng pool_rng(stream_seed(base_seed, "slots"));
  pool_rng.shuffle(pool);
  std::size_t cursor = 0;

  const auto safe = [&](const Sequence& poison, std::size_t own) {
    if (is_neighbor(poison, target_seqs[own], spec)) return false;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t].second || t == own) continue;
      if (is_neighbor(poison, target_seqs[t], spec)) return false;
    }
    return true;
  };

  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t].second) continue;
    BaselineParams params;
    try {
      params = tune_baseline(kind, target_seqs[t], spec, grid, stream_seed(base_seed, "tune", t));
    } catch (const Error& e) {
      if (e.code() == Errc::no_feasible_params) {
        run.infeasible_targets += 1;
        continue;
      }
      throw;
    }
    bool poisoned_any = false;
    for (int b = 0; b < cfg.attack.b2; ++b) {
      Sequence poison;
      bool ok = false;
      for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
        poison = generate_baseline(kind, target_seqs[t], params,
                                   stream_seed(base_seed, "gen", (t << 8) ^ (b << 4) ^ attempt));
        ok = safe(poison, t);
      }
      if (!ok) continue;  // this copy stays un-poisoned rather than mislabeled
      std::uint32_t slot = 0;
      bool found = false;
      while (cursor < pool.size()) {
        slot = pool[cursor++];
        if (!is_neighbor(run.data.points[slot], target_seqs[t], spec)) {
          found = true;
          break;
        }
      }
      if (!found) throw Error(Errc::budget_infeasible, "baseline: background pool exhausted");
      run.data.points[slot] = poison;
      run.data.provenance[slot] = Provenance::poison_non_neighbor;
      poisoned_any = true;
    }
    if (poisoned_any) run.poisoned_targets += 1;
  }

  // Def. 3 audit: no target label may change
  const auto after = detail::neighbor_lists(run.data, target_seqs, spec);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if ((!after[t].empty()) != targets[t].second) {
      throw Error(Errc::protocol_violation, "baseline: target label changed");
    }
  }
  return run;
}

// ---------------------------------------------------------------- game stage

inline NeighborhoodSpec game_spec(const ExperimentConfig& cfg) {
  if (cfg.game.spec == "ngram") return NeighborhoodSpec::ngram(cfg.game.ngram_k);
  if (cfg.game.spec == "exact") return NeighborhoodSpec::exact();
  if (cfg.game.spec == "embedding") return NeighborhoodSpec::embedding();
  if (cfg.game.spec == "edit") return NeighborhoodSpec::edit();
  throw ConfigError("config: game.spec: unknown kind '" + cfg.game.spec + "'");
}

struct GameRun {
  std::vector<GameTranscript> transcripts;
  RobustReport robust;
  double gamma = 0.0;
  double win_rate = 0.0;
};

inline GameRun run_game_stage(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                              const std::string& out_dir) {
  const NeighborhoodSpec spec = game_spec(cfg);
  const TestKind test = detail::test_from_name(cfg.game.test, "game.test");
  GameEnv env = make_game_env(bundle.background, bundle.aux, cfg.model, scoring_with_seed(cfg),
                              cfg.game.dataset_size, stream_seed(cfg.seed, "game_env"));

  // targets cycle through the holdout canaries
  std::vector<Sequence> targets;
  for (int i = bundle.mixed.n_injected; i < static_cast<int>(bundle.mixed.eval.size()); ++i) {
    targets.push_back(bundle.mixed.eval[i]);
  }
  if (targets.empty()) throw Error(Errc::insufficient_data, "game: no holdout canaries");

  // calibrate gamma on a handful of natural trials
  std::vector<double> cal_m, cal_n;
  const int cal_trials = std::min(8, cfg.game.trials);
  for (int t = 0; t < cal_trials; ++t) {
    const Sequence& x_t = targets[t % targets.size()];
    const std::uint64_t ts = stream_seed(cfg.seed, "game_cal", t);
    Dataset d_in = detail::challenger_sample(*env.background_pool, x_t, spec,
                                             env.dataset_size - 1, stream_seed(ts, "i"));
    d_in.add(x_t, Provenance::canary);
    const Dataset d_out = detail::challenger_sample(*env.background_pool, x_t, spec,
                                                    env.dataset_size, stream_seed(ts, "o"));
    ModelConfig mc = env.model_config;
    mc.seed = stream_seed(ts, "m");
    cal_m.push_back(squashed_score(test, train(init_model(mc), d_in), x_t, env.score_env()));
    cal_n.push_back(squashed_score(test, train(init_model(mc), d_out), x_t, env.score_env()));
  }
  GameRun run;
  run.gamma = calibrate_gamma(cal_m, cal_n);

  int wins = 0;
  run.transcripts.resize(cfg.game.trials);
  parallel_for(cfg.game.trials, cfg.jobs, [&](std::size_t t) {
    const Sequence& x_t = targets[t % targets.size()];
    run.transcripts[t] = run_game(x_t, spec, cfg.attack.b1, cfg.attack.b2, test, run.gamma,
                                  stream_seed(cfg.seed, "game_trial", t), env);
  });
  for (const GameTranscript& tr : run.transcripts) wins += tr.adversary_wins ? 1 : 0;
  run.win_rate = static_cast<double>(wins) / static_cast<double>(cfg.game.trials);

  run.robust = estimate_robust_metrics(targets[0], spec, test, cfg.attack.b1, cfg.attack.b2,
                                       cfg.game.trials / 4 + 2, cfg.game.gamma_points,
                                       stream_seed(cfg.seed, "robust"), env);
  if (!out_dir.empty()) {
    const std::string header = report_header(cfg);
    save_transcripts_jsonl(out_dir + "/transcripts.jsonl", run.transcripts, header);
    save_robust_report(out_dir + "/robust_report_" + spec.name() + "_" + test_name(test) + ".csv",
                       run.robust, header);
  }
  return run;
}

// -------------------------------------------------------------- verify stage

struct VerifyRun {
  std::vector<AdvantageReport> lemma1_reports;
  AdvantageReport lemma1_real_scores;
  TradeoffReport tradeoff;
  bool all_passed = false;
};

inline VerifyRun run_verify_stage(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                                  const std::string& out_dir) {
  VerifyRun run;

  // Lemma 1 over random bounded mixture pairs
  Rng meta(stream_seed(cfg.seed, "lemma1_meta"));
  for (int p = 0; p < cfg.verify.lemma1_pairs; ++p) {
    const double a1 = meta.next_unit(), b1 = a1 + (1.0 - a1) * meta.next_unit();
    const double a2 = meta.next_unit(), b2 = a2 + (1.0 - a2) * meta.next_unit();
    const double w = meta.next_unit();
    const double c1 = meta.next_unit(), c2 = meta.next_unit();
    const auto member_sampler = [=](Rng& rng) {
      if (rng.next_unit() < w) return a1 + (b1 - a1) * rng.next_unit();
      return a2 + (b2 - a2) * rng.next_unit();
    };
    const auto nonmember_sampler = [=](Rng& rng) {
      return std::min(c1, c2) + std::abs(c1 - c2) * rng.next_unit();
    };
    run.lemma1_reports.push_back(verify_lemma1(member_sampler, nonmember_sampler,
                                               cfg.verify.lemma1_samples, cfg.verify.grid_step,
                                               cfg.verify.lemma1_tolerance,
                                               stream_seed(cfg.seed, "lemma1_pair", p)));
  }

  // Lemma 1 on real score tables from a trained model (LOSS test)
  {
    const ModelParams model = train_natural_model(cfg, bundle);
    const NeighborhoodSpec spec = NeighborhoodSpec::exact();
    const LabeledEvalSet labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
    std::vector<double> members, nonmembers;
    for (std::size_t i = 0; i < labels.points.size(); ++i) {
      const double s = squash(score_loss(model, labels.points[i]).value);
      (labels.member[i] ? members : nonmembers).push_back(s);
    }
    const auto empirical_sampler = [](std::vector<double> values) {
      return [values = std::move(values)](Rng& rng) {
        return values[rng.below(values.size())];
      };
    };
    run.lemma1_real_scores = verify_lemma1(
        empirical_sampler(members), empirical_sampler(nonmembers), cfg.verify.lemma1_samples,
        cfg.verify.grid_step, cfg.verify.lemma1_tolerance,
        stream_seed(cfg.seed, "lemma1_real"));
  }

  // Theorem 1 under the ngram spec with the LOSS test
  {
    GameEnv env = make_game_env(bundle.background, bundle.aux, cfg.model, scoring_with_seed(cfg),
                                cfg.verify.dataset_size, stream_seed(cfg.seed, "verify_env"));
    TradeoffOptions opts;
    opts.n_trials = cfg.verify.trials;
    opts.grid_step = cfg.verify.grid_step;
    opts.fixed_b2 = cfg.verify.fixed_b2;
    const Sequence& x_t = bundle.mixed.eval[bundle.mixed.n_injected];  // a holdout canary
    run.tradeoff = verify_theorem1(x_t, NeighborhoodSpec::ngram(7), TestKind::loss, opts,
                                   stream_seed(cfg.seed, "theorem1"), env);
  }

  run.all_passed = run.lemma1_real_scores.passed && run.tradeoff.passed;
  for (const AdvantageReport& r : run.lemma1_reports) run.all_passed = run.all_passed && r.passed;

  if (!out_dir.empty()) {
    nlohmann::json adv;
    adv["version"] = kFileVersion;
    adv["config_hash"] = config_hash_hex(cfg);
    adv["seed"] = cfg.seed;
    adv["pairs"] = nlohmann::json::array();
    const auto report_json = [](const AdvantageReport& r) {
      return nlohmann::json{{"quadrature", r.quadrature},
                            {"mean_difference", r.mean_difference},
                            {"gap", r.gap},
                            {"tolerance", r.tolerance},
                            {"passed", r.passed},
                            {"n_samples", r.n_samples},
                            {"grid_step", r.grid_step}};
    };
    for (const auto& r : run.lemma1_reports) adv["pairs"].push_back(report_json(r));
    adv["real_score_table"] = report_json(run.lemma1_real_scores);
    std::ofstream out(out_dir + "/advantage_report.json");
    out << adv.dump(2) << "\n";

    const TradeoffReport& t = run.tradeoff;
    nlohmann::json tj;
    tj["version"] = kFileVersion;
    tj["config_hash"] = config_hash_hex(cfg);
    tj["seed"] = cfg.seed;
    tj["clean_advantage"] = t.clean_advantage;
    tj["robust_advantage"] = t.robust_advantage;
    tj["delta_neighbor_term"] = t.delta_neighbor_term;
    tj["delta_non_neighbor_term"] = t.delta_non_neighbor_term;
    tj["delta_star"] = t.delta_star;
    tj["slack"] = t.slack;
    tj["tolerance"] = t.tolerance;
    tj["passed"] = t.passed;
    tj["n_trials"] = t.n_trials;
    tj["skipped_trials"] = t.skipped_trials;
    tj["ci_half_width_neighbor"] = t.ci_half_width_neighbor;
    tj["ci_half_width_non_neighbor"] = t.ci_half_width_non_neighbor;
    tj["extension_fixed_b2"] = {{"b2", t.extension_b2},
                                {"robust_advantage", t.extension_robust_advantage},
                                {"delta_non_neighbor_term", t.extension_delta_non_neighbor_term},
                                {"slack", t.extension_slack},
                                {"note", "fixed-b2 variant; reported, not part of the bound"}};
    std::ofstream tout(out_dir + "/tradeoff_report.json");
    tout << tj.dump(2) << "\n";
  }
  return run;
}

// ----------------------------------------------------------------- dsi stage

struct DsiConditionResult {
  DsiResult member;      // member suspects vs reference canaries
  DsiResult non_member;  // holdout suspects vs reference canaries
  bool fallback_univariate = false;
};

struct DsiRun {
  std::string spec_name;
  DsiConditionResult natural;
  DsiConditionResult poisoned;
};

namespace detail {

inline ScoreTable slice(const ScoreTable& t, std::size_t lo, std::size_t hi,
                        const std::string& prefix) {
  ScoreTable out;
  for (std::size_t i = lo; i < hi && i < t.rows.size(); ++i) {
    ScoreRow r = t.rows[i];
    r.point_id = prefix + r.point_id;
    out.rows.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

struct DsiSplits {
  ScoreTable fit;  // only meaningful for the natural condition
  ScoreTable suspect_members;
  ScoreTable suspect_non_members;
  ScoreTable reference;
};

/// Slices one model condition's scores into the fit / suspect / reference
/// sets. Layout of the eval list: [0, n_injected) members, then holdout.
inline DsiSplits dsi_splits(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                            const ModelParams& model, const ModelParams& reference_model,
                            const LabeledEvalSet& labels) {
  const ScoreConfig sc = scoring_with_seed(cfg);
  const ScoreTable eval_table = score_all(model, reference_model, labels, sc, cfg.jobs);
  const auto n_injected = static_cast<std::size_t>(bundle.mixed.n_injected);
  const auto n_total = eval_table.rows.size();
  const auto member_fit =
      static_cast<std::size_t>(static_cast<double>(n_injected) * cfg.dsi.fit_fraction);
  const auto holdout_fit = static_cast<std::size_t>(
      static_cast<double>(n_total - n_injected) * cfg.dsi.fit_fraction);

  DsiSplits s;
  s.fit = detail::slice(eval_table, 0, member_fit, "fit_");
  const ScoreTable holdout_part =
      detail::slice(eval_table, n_injected, n_injected + holdout_fit, "fit_");
  s.fit.rows.insert(s.fit.rows.end(), holdout_part.rows.begin(), holdout_part.rows.end());
  s.suspect_members = detail::slice(eval_table, member_fit, n_injected, "sus_");
  s.suspect_non_members = detail::slice(eval_table, n_injected + holdout_fit, n_total, "sus_");

  LabeledEvalSet ref_labels;
  ref_labels.points = bundle.reference_canaries.points;
  ref_labels.member.assign(ref_labels.points.size(), 0);
  ref_labels.spec = labels.spec;
  s.reference = score_all(model, reference_model, ref_labels, sc, cfg.jobs);
  for (auto& r : s.reference.rows) r.point_id = "ref_" + r.point_id;
  return s;
}

inline DsiRun run_dsi_stage(const ExperimentConfig& cfg, const CorpusBundle& bundle,
                            const NeighborhoodSpec& spec, const Dataset& poisoned_train,
                            const std::string& out_dir) {
  DsiRun run;
  run.spec_name = spec.name();
  const LabeledEvalSet labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
  const ModelParams reference_model = train_reference_model(cfg, bundle);
  const ModelParams natural_model = train_natural_model(cfg, bundle);
  ModelConfig mc = cfg.model;
  mc.seed = stream_seed(cfg.seed, "model");
  const ModelParams poisoned_model = train(init_model(mc), poisoned_train);

  // the auditor fixes the aggregation direction on the natural fit split and
  // applies it to whichever model is under audit
  const DsiSplits natural = dsi_splits(cfg, bundle, natural_model, reference_model, labels);
  const DsiSplits poisoned = dsi_splits(cfg, bundle, poisoned_model, reference_model, labels);
  check_disjoint(natural.fit, natural.suspect_members);
  check_disjoint(natural.fit, natural.suspect_non_members);
  check_disjoint(natural.fit, natural.reference);
  const EnsembleWeights weights = fit_ensemble(natural.fit, "natural_eval_fit_split");

  run.natural.fallback_univariate = weights.fallback_univariate;
  run.natural.member = dsi_test(weights, natural.suspect_members, natural.reference);
  run.natural.non_member = dsi_test(weights, natural.suspect_non_members, natural.reference);
  run.poisoned.fallback_univariate = weights.fallback_univariate;
  run.poisoned.member = dsi_test(weights, poisoned.suspect_members, poisoned.reference);
  run.poisoned.non_member =
      dsi_test(weights, poisoned.suspect_non_members, poisoned.reference);

  if (!out_dir.empty()) {
    const auto result_json = [](const DsiConditionResult& r) {
      return nlohmann::json{
          {"member_p", r.member.p_value},
          {"non_member_p", r.non_member.p_value},
          {"member_t", r.member.t_statistic},
          {"non_member_t", r.non_member.t_statistic},
          {"suspect_sizes", {r.member.n_suspect, r.non_member.n_suspect}},
          {"reference_size", r.member.n_reference},
          {"ensemble_fallback_univariate", r.fallback_univariate}};
    };
    nlohmann::json j;
    j["version"] = kFileVersion;
    j["config_hash"] = config_hash_hex(cfg);
    j["seed"] = cfg.seed;
    j["spec"] = run.spec_name;
    j["natural"] = result_json(run.natural);
    j["poisonm"] = result_json(run.poisoned);
    std::ofstream out(out_dir + "/dsi_result_" + run.spec_name + ".json");
    out << j.dump(2) << "\n";
  }
  return run;
}

// -------------------------------------------------------------- radius sweep

struct SweepRow {
  int k = 0;
  double gamma = 0.0;
  double natural_auc = 0.0;
  double post_fpr = 0.0;
  double post_tpr = 0.0;
};

/// Threshold giving at most `fpr_target` FPR on the natural non-member scores
/// (the smallest such squashed threshold, maximizing TPR).
inline double gamma_at_fpr(std::vector<double> nonmember_squashed, double fpr_target) {
  std::sort(nonmember_squashed.begin(), nonmember_squashed.end(), std::greater<>());
  const auto n = static_cast<double>(nonmember_squashed.size());
  double best = 1.0;  // squash() < 1 always: FPR 0
  for (double candidate : nonmember_squashed) {
    double count = 0.0;
    for (double s : nonmember_squashed) count += s >= candidate ? 1.0 : 0.0;
    if (count / n <= fpr_target) best = std::min(best, candidate);
  }
  return best;
}

/// Fig.-3 analog: per n-gram radius, the post-poison LOSS-test FPR/TPR at a
/// gamma calibrated on the natural run (5% natural FPR).
inline std::vector<SweepRow> run_radius_sweep(const ExperimentConfig& cfg,
                                              const CorpusBundle& bundle,
                                              const ModelParams& natural_model,
                                              const ModelParams& surrogate,
                                              const std::string& out_dir) {
  std::vector<SweepRow> rows;
  for (int k : cfg.sweep_ks) {
    const NeighborhoodSpec spec = NeighborhoodSpec::ngram(k);
    const LabeledEvalSet labels = label_membership(bundle.mixed.eval, bundle.mixed.train, spec);
    const auto targets = eval_targets(bundle, labels);

    const PoisonConfig pc = attack_config(cfg, stream_seed(cfg.seed, "sweep_attack", k));
    const PoisonDatasetResult poisoned = poison_dataset(
        bundle.mixed.train, targets, spec, surrogate, cfg.attack.b1, cfg.attack.b2, bundle.aux, pc);
    ModelConfig mc = cfg.model;
    mc.seed = stream_seed(cfg.seed, "model");
    const ModelParams poisoned_model = train(init_model(mc), poisoned.data);

    SweepRow row;
    row.k = k;
    std::vector<double> natural_non, natural_scores;
    std::vector<std::uint8_t> lab;
    std::vector<double> post_m, post_n;
    for (std::size_t i = 0; i < labels.points.size(); ++i) {
      const double nat = squash(score_loss(natural_model, labels.points[i]).value);
      const double post = squash(score_loss(poisoned_model, labels.points[i]).value);
      natural_scores.push_back(nat);
      lab.push_back(labels.member[i]);
      if (labels.member[i]) {
        post_m.push_back(post);
      } else {
        natural_non.push_back(nat);
        post_n.push_back(post);
      }
    }
    row.gamma = gamma_at_fpr(natural_non, 0.05);
    row.natural_auc = auc(roc_from_scores(natural_scores, lab));
    double fp = 0.0, tp = 0.0;
    for (double s : post_n) fp += s >= row.gamma ? 1.0 : 0.0;
    for (double s : post_m) tp += s >= row.gamma ? 1.0 : 0.0;
    row.post_fpr = fp / static_cast<double>(post_n.size());
    row.post_tpr = tp / static_cast<double>(post_m.size());
    rows.push_back(row);
  }
  if (!out_dir.empty()) {
    std::ofstream out(out_dir + "/sweep_ngram_loss.csv");
    if (!out) throw Error(Errc::io_error, "run_radius_sweep: cannot write sweep csv");
    out << "# " << report_header(cfg) << "\n";
    out << "k,gamma,natural_auc,post_fpr,post_tpr\n";
    for (const SweepRow& r : rows) {
      out << r.k << ',' << format_double(r.gamma) << ',' << format_double(r.natural_auc) << ','
          << format_double(r.post_fpr) << ',' << format_double(r.post_tpr) << '\n';
    }
  }
  return rows;
}

// ------------------------------------------------------------ command fronts

inline void ensure_out_dir(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream snap(cfg.out_dir + "/resolved_config.json");
  if (!snap) throw Error(Errc::io_error, "cannot write resolved_config.json");
  snap << config_to_json(cfg).dump(2) << "\n";
}

inline void cmd_gen_data(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  const int len = cfg.corpus.sequence_length;
  save_dataset(cfg.out_dir + "/background.ds", b.background, len);
  save_dataset(cfg.out_dir + "/aux.ds", b.aux, len);
  save_dataset(cfg.out_dir + "/canaries.ds", b.canaries, cfg.corpus.canary_length);
  save_dataset(cfg.out_dir + "/reference_canaries.ds", b.reference_canaries,
               cfg.corpus.canary_length);
  save_dataset(cfg.out_dir + "/train.ds", b.mixed.train, len);
  save_provenance(cfg.out_dir + "/train.prov", b.mixed.train);
  Dataset eval_ds;
  for (const Sequence& s : b.mixed.eval) eval_ds.add(s, Provenance::canary);
  save_dataset(cfg.out_dir + "/eval.ds", eval_ds, cfg.corpus.canary_length);
}

inline EvalRun cmd_run_eval(const ExperimentConfig& cfg, const std::string& poisoned_path) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  std::optional<Dataset> poisoned;
  if (!poisoned_path.empty()) poisoned = load_dataset(poisoned_path);
  return run_eval(cfg, b, poisoned ? &*poisoned : nullptr, cfg.out_dir);
}

inline std::vector<AttackRun> cmd_run_attack(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  const ModelParams surrogate = train_surrogate_model(cfg, b);
  std::vector<AttackRun> runs;
  for (const NeighborhoodSpec& spec : cfg.specs) {
    if (spec.kind == NeighborhoodKind::exact_match && cfg.attack.b1 > 0) {
      // exact match has no poisoned neighbors; run the non-member side only
      ExperimentConfig sub = cfg;
      sub.attack.b1 = 0;
      runs.push_back(run_attack(sub, b, surrogate, spec, cfg.out_dir));
      continue;
    }
    runs.push_back(run_attack(cfg, b, surrogate, spec, cfg.out_dir));
  }
  return runs;
}

inline GameRun cmd_run_game(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  return run_game_stage(cfg, b, cfg.out_dir);
}

inline VerifyRun cmd_run_verify(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  return run_verify_stage(cfg, b, cfg.out_dir);
}

inline DsiRun cmd_run_dsi(const ExperimentConfig& cfg, const std::string& poisoned_path) {
  ensure_out_dir(cfg);
  const CorpusBundle b = build_corpus(cfg);
  const NeighborhoodSpec spec = [&] {
    for (const auto& s : cfg.specs) {
      if (s.kind == NeighborhoodKind::ngram) return s;
    }
    return cfg.specs.front();
  }();
  Dataset poisoned;
  if (!poisoned_path.empty()) {
    poisoned = load_dataset(poisoned_path);
  } else {
    const ModelParams surrogate = train_surrogate_model(cfg, b);
    const LabeledEvalSet labels = label_membership(b.mixed.eval, b.mixed.train, spec);
    const PoisonConfig pc =
        attack_config(cfg, stream_seed(cfg.seed, "attack", fnv1a64(spec.name())));
    poisoned = poison_dataset(b.mixed.train, eval_targets(b, labels), spec, surrogate,
                              cfg.attack.b1, cfg.attack.b2, b.aux, pc)
                   .data;
  }
  return run_dsi_stage(cfg, b, spec, poisoned, cfg.out_dir);
}

}  // namespace mipl
