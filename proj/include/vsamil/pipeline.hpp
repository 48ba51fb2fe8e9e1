#pragma once

// End-to-end VSA-MIL: normalize -> autoencoder -> encode -> k-means on train
// encodings -> quantize every split -> concept-bank classifier. Also the run
// configuration, the model document and run manifests.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vsamil/classifier.hpp"
#include "vsamil/codebook.hpp"
#include "vsamil/data.hpp"
#include "vsamil/encoder.hpp"
#include "vsamil/error.hpp"
#include "vsamil/eval.hpp"
#include "vsamil/json_io.hpp"

namespace vsamil {

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;

/// splitmix64 of (seed, stream): independent RNG seeds for each stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// RunConfig

struct RunConfig {
  std::string dataset;
  std::uint64_t seed = 0;
  SplitFractions split;

  std::size_t blocks = 1;
  std::size_t layers = 2;
  std::size_t latent_dim = 128;
  double ae_lr = 0.01;
  std::size_t ae_epochs = 50;
  std::size_t ae_batch = 16;
  double ae_weight_decay = 0.01;
  Property1Mode property1 = Property1Mode::squared;

  std::size_t clusters = 4;
  std::size_t kmeans_restarts = 5;
  std::size_t kmeans_max_iters = 300;
  double kmeans_tol = 1e-6;

  std::size_t concepts = 4;
  double clf_lr = 0.1;
  std::size_t clf_epochs = 50;
  std::size_t clf_batch = 16;
  double clf_weight_decay = 0.01;
  /// Mixed with `seed` for the classifier's RNG; the tuner sets it per trial.
  std::uint64_t clf_seed = 0;
  /// Score centroids (true) or raw encodings (false).
  bool quantize = true;

  std::string out = "run";

  /// Flat object with dotted keys, in a fixed order.
  Json to_json() const {
    Json j = Json::object();
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["split.train"] = split.train;
    j["split.val"] = split.val;
    j["split.test"] = split.test;
    j["autoencoder.blocks"] = blocks;
    j["autoencoder.layers"] = layers;
    j["autoencoder.latent_dim"] = latent_dim;
    j["autoencoder.lr"] = ae_lr;
    j["autoencoder.epochs"] = ae_epochs;
    j["autoencoder.batch_size"] = ae_batch;
    j["autoencoder.weight_decay"] = ae_weight_decay;
    j["autoencoder.property1"] = to_string(property1);
    j["codebook.k"] = clusters;
    j["codebook.restarts"] = kmeans_restarts;
    j["codebook.max_iters"] = kmeans_max_iters;
    j["codebook.tol"] = kmeans_tol;
    j["classifier.concepts"] = concepts;
    j["classifier.lr"] = clf_lr;
    j["classifier.epochs"] = clf_epochs;
    j["classifier.batch_size"] = clf_batch;
    j["classifier.weight_decay"] = clf_weight_decay;
    j["classifier.seed"] = clf_seed;
    j["classifier.quantize"] = quantize;
    j["out"] = out;
    return j;
  }

  /// Applies the keys present in `j` on top of `base`; unknown keys are rejected.
  static RunConfig from_json(const Json& j) { return from_json(j, RunConfig{}); }

  static RunConfig from_json(const Json& j, RunConfig base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c = std::move(base);
    for (const auto& [key, value] : j.items()) {
      try {
        c.set(key, value);
      } catch (const Json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    }
    c.validate();
    return c;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v < 1) throw ConfigError(std::string(key) + " must be >= 1");
    };
    positive(blocks, "autoencoder.blocks");
    positive(layers, "autoencoder.layers");
    positive(latent_dim, "autoencoder.latent_dim");
    positive(ae_epochs, "autoencoder.epochs");
    positive(ae_batch, "autoencoder.batch_size");
    positive(clusters, "codebook.k");
    positive(kmeans_restarts, "codebook.restarts");
    positive(kmeans_max_iters, "codebook.max_iters");
    positive(concepts, "classifier.concepts");
    positive(clf_epochs, "classifier.epochs");
    positive(clf_batch, "classifier.batch_size");
    if (!(ae_lr > 0) || !(clf_lr > 0)) throw ConfigError("learning rates must be positive");
    if (!(split.train > 0) || !(split.val > 0) || !(split.test > 0) ||
        std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must be positive and sum to 1");
    }
  }

 private:
  void set(const std::string& key, const Json& v) {
    if (key == "dataset") dataset = v.get<std::string>();
    else if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "split.train") split.train = v.get<double>();
    else if (key == "split.val") split.val = v.get<double>();
    else if (key == "split.test") split.test = v.get<double>();
    else if (key == "autoencoder.blocks") blocks = v.get<std::size_t>();
    else if (key == "autoencoder.layers") layers = v.get<std::size_t>();
    else if (key == "autoencoder.latent_dim") latent_dim = v.get<std::size_t>();
    else if (key == "autoencoder.lr") ae_lr = v.get<double>();
    else if (key == "autoencoder.epochs") ae_epochs = v.get<std::size_t>();
    else if (key == "autoencoder.batch_size") ae_batch = v.get<std::size_t>();
    else if (key == "autoencoder.weight_decay") ae_weight_decay = v.get<double>();
    else if (key == "autoencoder.property1") property1 = property1_from_string(v.get<std::string>());
    else if (key == "codebook.k") clusters = v.get<std::size_t>();
    else if (key == "codebook.restarts") kmeans_restarts = v.get<std::size_t>();
    else if (key == "codebook.max_iters") kmeans_max_iters = v.get<std::size_t>();
    else if (key == "codebook.tol") kmeans_tol = v.get<double>();
    else if (key == "classifier.concepts") concepts = v.get<std::size_t>();
    else if (key == "classifier.lr") clf_lr = v.get<double>();
    else if (key == "classifier.epochs") clf_epochs = v.get<std::size_t>();
    else if (key == "classifier.batch_size") clf_batch = v.get<std::size_t>();
    else if (key == "classifier.weight_decay") clf_weight_decay = v.get<double>();
    else if (key == "classifier.seed") clf_seed = v.get<std::uint64_t>();
    else if (key == "classifier.quantize") quantize = v.get<bool>();
    else if (key == "out") out = v.get<std::string>();
    else throw ConfigError("unknown config key '" + key + "'");
  }
};

/// Every RNG seed a run uses, derived from the config.
struct RunSeeds {
  std::uint64_t split, autoencoder_init, autoencoder_shuffle, kmeans, concepts_init, classifier_shuffle;

  static RunSeeds of(const RunConfig& c) {
    const std::uint64_t clf = derive_seed(c.seed, 1000 + c.clf_seed);
    return {c.seed, derive_seed(c.seed, 1), derive_seed(c.seed, 2), derive_seed(c.seed, 3), derive_seed(clf, 4),
            derive_seed(clf, 5)};
  }

  Json to_json() const {
    return Json{{"split", split},
                {"autoencoder_init", autoencoder_init},
                {"autoencoder_shuffle", autoencoder_shuffle},
                {"kmeans", kmeans},
                {"concepts_init", concepts_init},
                {"classifier_shuffle", classifier_shuffle}};
  }
};

// ---------------------------------------------------------------------------
// Trained pipeline

struct PipelineModel {
  Normalizer normalizer;
  AutoencoderModel autoencoder;
  Codebook codebook;
  ConceptBank bank;
  bool quantize = true;

  /// Normalized, encoded and (optionally) quantized instances of `bag`.
  std::vector<Instance> embed(const Bag& bag) const {
    if (bag.instances.empty()) throw ValueError("embed: empty bag");
    std::vector<Instance> xs;
    xs.reserve(bag.size());
    for (const auto& x : bag.instances) xs.push_back(normalizer.apply(x));
    auto z = autoencoder.encode_all(xs);
    if (quantize) {
      for (auto& v : z) v = vsamil::quantize(codebook, v);
    }
    return z;
  }

  BagScore score(const Bag& bag) const { return score_bag(bank, embed(bag)); }
  BagExplanation explain(const Bag& bag) const { return explain_bag(bank, embed(bag)); }

  BagScorer scorer() const {
    return [this](const Bag& b) { return score(b).score; };
  }

  Json to_json() const {
    Json j = autoencoder.to_json();
    j["format_version"] = kModelFormatVersion;
    j["normalizer"] = normalizer_to_json(normalizer);
    j["codebook"] = codebook.to_json();
    j["concept_bank"] = bank.to_json();
    j["quantize"] = quantize;
    return j;
  }

  static PipelineModel from_json(const Json& j) {
    if (!j.is_object()) throw DataError("model: document is not a JSON object");
    const int version = json_field<int>(j, "format_version");
    if (version != kModelFormatVersion) throw DataError("model: unsupported format_version " + std::to_string(version));
    PipelineModel m;
    m.autoencoder = AutoencoderModel::from_json(j);
    m.normalizer = normalizer_from_json(json_child(j, "normalizer"));
    m.codebook = Codebook::from_json(json_child(j, "codebook"));
    m.bank = ConceptBank::from_json(json_child(j, "concept_bank"));
    m.quantize = json_field<bool>(j, "quantize");
    if (m.normalizer.dim() != m.autoencoder.input_dim()) throw DataError("model: normalizer dimension != p");
    if (m.codebook.dim() != m.autoencoder.latent_dim()) throw DataError("model: codebook dimension != d");
    if (m.bank.dim() != m.autoencoder.latent_dim()) throw DataError("model: concept dimension != d");
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json().dump() << '\n';
  }

  static PipelineModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model " + path.string());
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw DataError("model " + path.string() + ": invalid JSON: " + e.what());
    }
    try {
      return from_json(j);
    } catch (const DataError& e) {
      throw DataError("model " + path.string() + ": " + e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Stages

struct StageTimes {
  std::map<std::string, double> seconds;

  template <class F>
  auto time(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      seconds[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto r = f();
      seconds[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  }
};

/// Output of the representation stage: everything that depends only on the
/// split, seed and autoencoder settings.
struct EncodedStage {
  Normalizer normalizer;
  AutoencoderModel autoencoder;
  AutoencoderTrainReport report;
  MilDataset encoded;  // same bags and splits, instances replaced by latents
  StageTimes times;
};

inline void check_splits(const MilDataset& ds) {
  if (ds.split.empty()) throw ValueError("pipeline: dataset has no split assignment");
  const MilDataset train = ds.subset(Split::train);
  if (train.count(BagLabel::positive) == 0 || train.count(BagLabel::negative) == 0) {
    throw ValueError("pipeline: train split needs both classes");
  }
}

inline EncodedStage fit_encoder_stage(const MilDataset& ds, const RunConfig& cfg) {
  check_splits(ds);
  const RunSeeds seeds = RunSeeds::of(cfg);
  EncodedStage st;
  const MilDataset train = ds.subset(Split::train);
  const MilDataset normalized = st.times.time("normalize", [&] {
    st.normalizer = Normalizer::fit(train);
    return st.normalizer.apply(ds);
  });
  st.times.time("autoencoder", [&] {
    AutoencoderSpec spec{ds.feature_dim, cfg.latent_dim, cfg.blocks, cfg.layers, kDefaultMu, cfg.property1};
    st.autoencoder = AutoencoderModel::create(spec, seeds.autoencoder_init);
    const auto xs = all_instances(normalized.subset(Split::train));
    st.report = train_autoencoder(st.autoencoder, xs,
                                  {cfg.ae_epochs, cfg.ae_batch, cfg.ae_lr, cfg.ae_weight_decay, seeds.autoencoder_shuffle});
  });
  st.times.time("encode", [&] {
    st.encoded = MilDataset{ds.name, cfg.latent_dim, {}, ds.split};
    const auto z = st.autoencoder.encode_all(all_instances(normalized));
    std::size_t at = 0;
    for (const auto& b : normalized.bags) {
      Bag e{b.id, b.label, {}};
      for (std::size_t i = 0; i < b.size(); ++i) e.instances.push_back(z[at++]);
      st.encoded.bags.push_back(std::move(e));
    }
  });
  return st;
}

/// k-means on the train-split encodings only.
inline Codebook fit_codebook_stage(const EncodedStage& enc, const RunConfig& cfg) {
  const auto pts = all_instances(enc.encoded.subset(Split::train));
  return kmeans_fit(pts, {cfg.clusters, RunSeeds::of(cfg).kmeans, cfg.kmeans_max_iters, cfg.kmeans_tol, cfg.kmeans_restarts});
}

/// Replaces each instance by its centroid, dropping repeats (scores are
/// invariant to duplicates). With `quantize` off the encodings pass through.
inline MilDataset quantize_dataset(const MilDataset& encoded, const Codebook& cb, bool quantize) {
  if (!quantize) return encoded;
  MilDataset out{encoded.name, encoded.feature_dim, {}, encoded.split};
  for (const auto& b : encoded.bags) {
    std::set<std::size_t> ids;
    for (const auto& v : b.instances) ids.insert(nearest(cb, v).index);
    Bag q{b.id, b.label, {}};
    for (auto i : ids) q.instances.push_back(cb.centroids[i]);
    out.bags.push_back(std::move(q));
  }
  return out;
}

struct SplitMetrics {
  MetricsReport train, val, test;

  Json to_json() const { return Json{{"train", train.to_json()}, {"val", val.to_json()}, {"test", test.to_json()}}; }
};

struct PipelineRun {
  PipelineModel model;
  AutoencoderTrainReport autoencoder_report;
  ClassifierTrainReport classifier_report;
  SplitMetrics metrics;
  StageTimes times;
  RunSeeds seeds{};
};

inline MetricsReport score_split(const ConceptBank& bank, const MilDataset& quantized, Split s) {
  const MilDataset part = quantized.subset(s);
  if (part.bags.empty()) return {};
  std::vector<double> scores;
  for (const auto& b : part.bags) scores.push_back(score_bag(bank, b.instances).score);
  const auto labels = part.labels();
  return accuracy_report(scores, labels);
}

inline PipelineRun finish_pipeline(const EncodedStage& enc, const Codebook& cb, const RunConfig& cfg) {
  PipelineRun run;
  run.seeds = RunSeeds::of(cfg);
  run.times = enc.times;
  run.autoencoder_report = enc.report;
  const MilDataset q = run.times.time("quantize", [&] { return quantize_dataset(enc.encoded, cb, cfg.quantize); });
  ConceptBank bank = ConceptBank::create(cfg.concepts, cfg.latent_dim, run.seeds.concepts_init);
  run.times.time("classifier", [&] {
    const MilDataset train = q.subset(Split::train);
    run.classifier_report = train_classifier(
        bank, train.bags, {cfg.clf_epochs, cfg.clf_batch, cfg.clf_lr, cfg.clf_weight_decay, run.seeds.classifier_shuffle});
  });
  run.metrics = {score_split(bank, q, Split::train), score_split(bank, q, Split::val), score_split(bank, q, Split::test)};
  run.model = PipelineModel{enc.normalizer, enc.autoencoder, cb, std::move(bank), cfg.quantize};
  return run;
}

/// Runs every stage on a split-assigned dataset.
inline PipelineRun train_pipeline(const MilDataset& ds, const RunConfig& cfg) {
  cfg.validate();
  const EncodedStage enc = fit_encoder_stage(ds, cfg);
  StageTimes t;
  const Codebook cb = t.time("kmeans", [&] { return fit_codebook_stage(enc, cfg); });
  PipelineRun run = finish_pipeline(enc, cb, cfg);
  run.times.seconds["kmeans"] = t.seconds["kmeans"];
  return run;
}

/// Splits `ds` with the config's fractions and seed, then trains.
inline PipelineRun train_pipeline_from_raw(const MilDataset& ds, const RunConfig& cfg) {
  return train_pipeline(split(ds, cfg.split, RunSeeds::of(cfg).split), cfg);
}

/// Adapter for milcheck: trains on every bag handed over and scores new bags
/// with the resulting model.
inline PipelineFactory pipeline_factory(const RunConfig& cfg) {
  return [cfg](const MilDataset& train) -> BagScorer {
    MilDataset ds = train;
    ds.split.clear();
    for (const auto& b : ds.bags) ds.split[b.id] = Split::train;
    auto model = std::make_shared<PipelineModel>(train_pipeline(ds, cfg).model);
    return [model](const Bag& b) { return model->score(b).score; };
  };
}

// ---------------------------------------------------------------------------
// Manifest

inline Json make_manifest(const RunConfig& cfg, const PipelineRun& run, const std::string& model_path) {
  Json times = Json::object();
  for (const auto& [k, v] : run.times.seconds) times[k] = v;
  Json ae_loss = Json::array();
  for (const auto& e : run.autoencoder_report.epochs) ae_loss.push_back(e.total);
  return Json{{"format_version", kManifestFormatVersion},
              {"config", cfg.to_json()},
              {"seeds", run.seeds.to_json()},
              {"protocol", "stratified split train/val/test, single split per seed"},
              {"wall_seconds", times},
              {"metrics", run.metrics.to_json()},
              {"autoencoder_loss", ae_loss},
              {"classifier_loss", run.classifier_report.epoch_loss},
              {"model_path", model_path}};
}

/// The RunConfig snapshot stored in a manifest.
inline RunConfig config_from_manifest(const Json& manifest) {
  if (!manifest.is_object() || !manifest.contains("config")) throw DataError("manifest: missing 'config'");
  const int version = json_field<int>(manifest, "format_version");
  if (version != kManifestFormatVersion) throw DataError("manifest: unsupported format_version " + std::to_string(version));
  return RunConfig::from_json(manifest.at("config"));
}

}  // namespace vsamil
