#pragma once

// Random-search hyperparameter tuning selected on validation AUROC. Trials are
// independent: each carries its full RunConfig, so re-training that config on
// its own reproduces the trial. Autoencoders and codebooks are shared between
// trials through caches keyed by the settings they depend on.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "vsamil/pipeline.hpp"

namespace vsamil {

struct TuneSpace {
  std::size_t blocks_min = 1, blocks_max = 2;
  std::size_t layers_min = 1, layers_max = 4;
  std::size_t clusters_min = 3, clusters_max = 10;
  std::size_t concepts_min = 1, concepts_max = 20;
  double lr_min = 1e-3, lr_max = 0.3;  // log-uniform
};

struct TuneOptions {
  std::size_t trials = 50;
  std::size_t jobs = 1;
  TuneSpace space;
  /// JSONL trial log; finished trials found there are not re-run.
  std::optional<std::filesystem::path> log_path;
  std::function<void(std::size_t index, std::size_t total)> on_trial;
};

struct TrialRecord {
  std::size_t index = 0;
  RunConfig config;
  SplitMetrics metrics;
  std::string error;  // non-empty when the trial failed

  bool ok() const { return error.empty(); }

  Json to_json() const {
    Json j{{"index", index}, {"config", config.to_json()}};
    if (ok()) j["metrics"] = metrics.to_json();
    else j["error"] = error;
    return j;
  }
};

struct TuneResult {
  std::vector<TrialRecord> trials;
  std::size_t best = 0;
  std::size_t resumed = 0;

  const TrialRecord& best_trial() const { return trials.at(best); }
};

/// Trial configs for `opts.trials` draws, fixed by `base.seed`.
inline std::vector<RunConfig> sample_trials(const RunConfig& base, const TuneOptions& opts) {
  std::mt19937_64 rng(derive_seed(base.seed, 99));
  const auto& s = opts.space;
  std::vector<RunConfig> out;
  for (std::size_t t = 0; t < opts.trials; ++t) {
    RunConfig c = base;
    c.blocks = std::uniform_int_distribution<std::size_t>(s.blocks_min, s.blocks_max)(rng);
    c.layers = std::uniform_int_distribution<std::size_t>(s.layers_min, s.layers_max)(rng);
    c.clusters = std::uniform_int_distribution<std::size_t>(s.clusters_min, s.clusters_max)(rng);
    c.concepts = std::uniform_int_distribution<std::size_t>(s.concepts_min, s.concepts_max)(rng);
    c.clf_lr = std::exp(std::uniform_real_distribution<double>(std::log(s.lr_min), std::log(s.lr_max))(rng));
    c.clf_seed = t;
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

/// Compute-once cache; concurrent callers for the same key share one future.
template <class Key, class Value>
class OnceCache {
 public:
  template <class F>
  std::shared_ptr<const Value> get(const Key& key, F&& make) {
    std::shared_future<std::shared_ptr<const Value>> fut;
    std::promise<std::shared_ptr<const Value>> mine;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        fut = mine.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        mine.set_value(std::make_shared<const Value>(make()));
      } catch (...) {
        mine.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

 private:
  std::mutex mu_;
  std::map<Key, std::shared_future<std::shared_ptr<const Value>>> entries_;
};

inline std::map<std::size_t, TrialRecord> read_trial_log(const std::filesystem::path& path) {
  std::map<std::size_t, TrialRecord> done;
  std::ifstream in(path);
  if (!in) return done;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      TrialRecord r;
      r.index = json_field<std::size_t>(j, "index");
      r.config = RunConfig::from_json(json_child(j, "config"));
      if (j.contains("error")) {
        r.error = json_field<std::string>(j, "error");
      } else {
        const Json& m = json_child(j, "metrics");
        r.metrics = {MetricsReport::from_json(json_child(m, "train")), MetricsReport::from_json(json_child(m, "val")),
                     MetricsReport::from_json(json_child(m, "test"))};
      }
      done[r.index] = std::move(r);
    } catch (const std::exception&) {
      // A torn last line from an interrupted run; that trial is re-run.
    }
  }
  return done;
}

/// Higher val AUROC, then higher val accuracy, then lower index.
inline bool better_trial(const TrialRecord& a, const TrialRecord& b) {
  if (a.ok() != b.ok()) return a.ok();
  if (!a.ok()) return a.index < b.index;
  const double aa = std::isnan(a.metrics.val.auroc) ? -1.0 : a.metrics.val.auroc;
  const double ba = std::isnan(b.metrics.val.auroc) ? -1.0 : b.metrics.val.auroc;
  if (aa != ba) return aa > ba;
  if (a.metrics.val.accuracy != b.metrics.val.accuracy) return a.metrics.val.accuracy > b.metrics.val.accuracy;
  return a.index < b.index;
}

}  // namespace detail

/// Runs (or resumes) the search on a split-assigned dataset.
inline TuneResult tune(const MilDataset& ds, const RunConfig& base, const TuneOptions& opts) {
  if (opts.trials == 0) throw ConfigError("tune: trials must be >= 1");
  check_splits(ds);
  const auto configs = sample_trials(base, opts);
  TuneResult result;
  result.trials.resize(configs.size());

  std::vector<bool> pending(configs.size(), true);
  if (opts.log_path) {
    for (auto& [idx, rec] : detail::read_trial_log(*opts.log_path)) {
      if (idx < configs.size() && rec.config.to_json() == configs[idx].to_json()) {
        result.trials[idx] = std::move(rec);
        pending[idx] = false;
        ++result.resumed;
      }
    }
  }

  using AeKey = std::tuple<std::size_t, std::size_t>;
  using CbKey = std::tuple<std::size_t, std::size_t, std::size_t>;
  detail::OnceCache<AeKey, EncodedStage> encoders;
  detail::OnceCache<CbKey, Codebook> codebooks;
  std::mutex log_mu;
  std::ofstream log;
  if (opts.log_path) log.open(*opts.log_path, std::ios::app);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (pending[i]) todo.push_back(i);
  }
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{result.resumed};

  auto worker = [&] {
    for (std::size_t slot = next++; slot < todo.size(); slot = next++) {
      const std::size_t i = todo[slot];
      const RunConfig& cfg = configs[i];
      TrialRecord rec;
      rec.index = i;
      rec.config = cfg;
      try {
        auto enc = encoders.get({cfg.blocks, cfg.layers}, [&] { return fit_encoder_stage(ds, cfg); });
        auto cb = codebooks.get({cfg.blocks, cfg.layers, cfg.clusters}, [&] { return fit_codebook_stage(*enc, cfg); });
        rec.metrics = finish_pipeline(*enc, *cb, cfg).metrics;
      } catch (const Error& e) {
        rec.error = e.what();
      }
      {
        std::lock_guard lock(log_mu);
        if (log) log << rec.to_json().dump() << '\n' << std::flush;
      }
      result.trials[i] = std::move(rec);
      if (opts.on_trial) opts.on_trial(++finished, configs.size());
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  result.best = 0;
  for (std::size_t i = 1; i < result.trials.size(); ++i) {
    if (detail::better_trial(result.trials[i], result.trials[result.best])) result.best = i;
  }
  if (!result.best_trial().ok()) throw NumericalError("tune: every trial failed; first error: " + result.trials[0].error);
  return result;
}

/// milcheck adapter that tunes before scoring: the bags handed over are split
/// into train and validation (test fraction folded back into train), the
/// search runs, and the best trial's config is retrained on the same split.
inline PipelineFactory tuned_pipeline_factory(const RunConfig& base, const TuneOptions& opts) {
  return [base, opts](const MilDataset& bags) -> BagScorer {
    MilDataset ds = split(bags, base.split, RunSeeds::of(base).split);
    for (auto& [id, s] : ds.split) {
      if (s == Split::test) s = Split::train;
    }
    const TuneResult r = tune(ds, base, opts);
    auto model = std::make_shared<PipelineModel>(train_pipeline(ds, r.best_trial().config).model);
    return [model](const Bag& b) { return model->score(b).score; };
  };
}

}  // namespace vsamil
