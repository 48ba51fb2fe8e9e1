#pragma once

// ReZero autoencoder mapping raw instance features to HLB-compatible
// hypervectors. Training minimizes reconstruction error plus three penalties
// pulling each latent vector towards the MiND statistics:
//   mean_j z_j -> 0,  mean_j |z_j| -> mu,  ||z||_2 -> sqrt(mu^2 d).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vsamil/data.hpp"
#include "vsamil/diffnum.hpp"
#include "vsamil/error.hpp"
#include "vsamil/hlb.hpp"
#include "vsamil/json_io.hpp"

namespace vsamil {

/// How the zero-mean penalty is written: squared, (mean)^2, is bounded below;
/// literal, mean, is the unsquared form.
enum class Property1Mode { squared, literal };

inline std::string to_string(Property1Mode m) { return m == Property1Mode::squared ? "squared" : "literal"; }

inline Property1Mode property1_from_string(const std::string& s) {
  if (s == "squared") return Property1Mode::squared;
  if (s == "literal") return Property1Mode::literal;
  throw ConfigError("property1 mode must be 'squared' or 'literal', got '" + s + "'");
}

struct AutoencoderSpec {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 128;
  std::size_t blocks = 1;
  std::size_t layers = 1;
  double mu = kDefaultMu;
  Property1Mode property1 = Property1Mode::squared;
};

struct Affine {
  Parameter weight;  // in × out
  Parameter bias;    // 1 × out
};

/// out = x + alpha * F(x), F a stack of tanh(affine) layers, alpha starting at 0.
struct ReZeroBlock {
  std::vector<Affine> layers;
  Parameter alpha;
};

class AutoencoderModel {
 public:
  AutoencoderModel() = default;

  /// Xavier-uniform weights, zero biases, zero ReZero gates.
  static AutoencoderModel create(const AutoencoderSpec& spec, std::uint64_t seed) {
    if (spec.input_dim == 0 || spec.latent_dim == 0 || spec.blocks == 0 || spec.layers == 0) {
      throw ValueError("autoencoder: dimensions, blocks and layers must all be >= 1");
    }
    if (!(spec.mu > 0)) throw ValueError("autoencoder: mu must be positive");
    std::mt19937_64 rng(seed);
    AutoencoderModel m;
    m.spec_ = spec;
    const std::size_t p = spec.input_dim, d = spec.latent_dim;
    m.input_ = make_affine("enc.in", p, d, rng);
    for (std::size_t b = 0; b < spec.blocks; ++b) m.encoder_.push_back(make_block("enc.block" + std::to_string(b), d, spec.layers, rng));
    for (std::size_t b = 0; b < spec.blocks; ++b) m.decoder_.push_back(make_block("dec.block" + std::to_string(b), d, spec.layers, rng));
    m.output_ = make_affine("dec.out", d, p, rng);
    return m;
  }

  const AutoencoderSpec& spec() const noexcept { return spec_; }
  std::size_t input_dim() const noexcept { return spec_.input_dim; }
  std::size_t latent_dim() const noexcept { return spec_.latent_dim; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto add_affine = [&out](Affine& a) {
      out.push_back(&a.weight);
      out.push_back(&a.bias);
    };
    add_affine(input_);
    for (auto* blocks : {&encoder_, &decoder_}) {
      for (auto& blk : *blocks) {
        for (auto& l : blk.layers) add_affine(l);
        out.push_back(&blk.alpha);
      }
    }
    add_affine(output_);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<AutoencoderModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  const std::vector<ReZeroBlock>& encoder_blocks() const noexcept { return encoder_; }
  const std::vector<ReZeroBlock>& decoder_blocks() const noexcept { return decoder_; }
  const Affine& input_layer() const noexcept { return input_; }
  const Affine& output_layer() const noexcept { return output_; }

  /// n×p inputs → n×d latents.
  Var encode(Graph& g, Var x) const {
    Var h = apply_affine(g, input_, x);
    for (const auto& blk : encoder_) h = apply_block(g, blk, h);
    return h;
  }

  /// n×d latents → n×p reconstructions.
  Var decode(Graph& g, Var z) const {
    Var h = z;
    for (const auto& blk : decoder_) h = apply_block(g, blk, h);
    return apply_affine(g, output_, h);
  }

  Tensor encode(const Tensor& x) const {
    check_cols(x, input_dim(), "encode");
    Graph g;
    return encode(g, g.constant(x)).value();
  }

  Tensor decode(const Tensor& z) const {
    check_cols(z, latent_dim(), "decode");
    Graph g;
    return decode(g, g.constant(z)).value();
  }

  std::vector<double> encode(std::span<const double> x) const {
    const Tensor out = encode(Tensor::matrix(1, x.size(), {x.begin(), x.end()}));
    return {out.values().begin(), out.values().end()};
  }

  std::vector<double> decode(std::span<const double> z) const {
    const Tensor out = decode(Tensor::matrix(1, z.size(), {z.begin(), z.end()}));
    return {out.values().begin(), out.values().end()};
  }

  /// Encodes many instances, in chunks to bound graph size.
  std::vector<Instance> encode_all(std::span<const Instance> xs) const {
    std::vector<Instance> out;
    out.reserve(xs.size());
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < xs.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, xs.size() - start);
      const Tensor z = encode(stack(xs.subspan(start, n)));
      for (std::size_t r = 0; r < n; ++r) out.emplace_back(z.row(r).begin(), z.row(r).end());
    }
    return out;
  }

  static Tensor stack(std::span<const Instance> xs) {
    if (xs.empty()) throw ValueError("stack: no instances");
    const std::size_t p = xs.front().size();
    std::vector<double> flat;
    flat.reserve(xs.size() * p);
    for (const auto& x : xs) {
      if (x.size() != p) throw ShapeError("stack: ragged instances");
      flat.insert(flat.end(), x.begin(), x.end());
    }
    return Tensor::matrix(xs.size(), p, std::move(flat));
  }

  Json to_json() const {
    Json params = Json::object();
    for (const Parameter* p : parameters()) params[p->name] = tensor_to_json(p->value);
    return Json{{"p", spec_.input_dim},
                {"d", spec_.latent_dim},
                {"B", spec_.blocks},
                {"L", spec_.layers},
                {"mu", spec_.mu},
                {"property1_mode", to_string(spec_.property1)},
                {"parameters", params}};
  }

  static AutoencoderModel from_json(const Json& j) {
    AutoencoderSpec spec;
    spec.input_dim = json_field<std::size_t>(j, "p");
    spec.latent_dim = json_field<std::size_t>(j, "d");
    spec.blocks = json_field<std::size_t>(j, "B");
    spec.layers = json_field<std::size_t>(j, "L");
    spec.mu = json_field<double>(j, "mu");
    try {
      spec.property1 = property1_from_string(json_field<std::string>(j, "property1_mode"));
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    AutoencoderModel m;
    try {
      m = create(spec, 0);
    } catch (const ValueError& e) {
      throw DataError(std::string("autoencoder: ") + e.what());
    }
    const Json& params = json_child(j, "parameters");
    for (Parameter* p : m.parameters()) {
      Tensor t = tensor_from_json(json_child(params, p->name));
      if (t.shape() != p->value.shape()) {
        throw DataError("parameter '" + p->name + "' has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(p->value.shape()));
      }
      p->value = std::move(t);
    }
    return m;
  }

 private:
  template <class Rng>
  static Affine make_affine(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor w(Shape{in, out});
    for (auto& v : w.values()) v = u(rng);
    return Affine{{name + ".weight", std::move(w)}, {name + ".bias", Tensor(Shape{1, out}, 0.0)}};
  }

  template <class Rng>
  static ReZeroBlock make_block(const std::string& name, std::size_t d, std::size_t layers, Rng& rng) {
    ReZeroBlock blk;
    for (std::size_t l = 0; l < layers; ++l) blk.layers.push_back(make_affine(name + ".layer" + std::to_string(l), d, d, rng));
    blk.alpha = Parameter{name + ".alpha", Tensor::scalar(0.0)};
    return blk;
  }

  static Var apply_affine(Graph& g, const Affine& a, Var x) {
    return affine(x, g.parameter(a.weight), g.parameter(a.bias));
  }

  static Var apply_block(Graph& g, const ReZeroBlock& blk, Var x) {
    Var h = x;
    for (const auto& l : blk.layers) h = tanh(apply_affine(g, l, h));
    return x + g.parameter(blk.alpha) * h;
  }

  static void check_cols(const Tensor& t, std::size_t want, const char* op) {
    if (t.cols() != want) {
      throw ShapeError(std::string(op) + ": input shape " + shape_string(t.shape()) + " needs " +
                       std::to_string(want) + " columns");
    }
  }

  AutoencoderSpec spec_;
  Affine input_;
  std::vector<ReZeroBlock> encoder_;
  std::vector<ReZeroBlock> decoder_;
  Affine output_;
};

// ---------------------------------------------------------------------------
// Loss

/// Batch means of each loss term; `total` is their unweighted sum.
struct HlbLossTerms {
  Var total;
  Var reconstruction;
  Var property1;  // zero mean
  Var property2;  // absolute mean mu
  Var property3;  // norm sqrt(mu^2 d)
};

/// The three HLB penalties for an n×d batch of latents, each averaged over rows.
/// `total` holds their sum; `reconstruction` is left empty.
inline HlbLossTerms property_penalties(Var latent, double mu, Property1Mode mode) {
  const double d = static_cast<double>(latent.value().cols());
  Var row_mean = mean(latent, Reduce::per_row);
  Var p1 = mode == Property1Mode::squared ? square(row_mean) : row_mean;
  Var p2 = square(mu - mean(abs(latent), Reduce::per_row));
  Var p3 = square(l2norm(latent, Reduce::per_row) - std::sqrt(mu * mu * d));
  HlbLossTerms t;
  t.property1 = mean(p1);
  t.property2 = mean(p2);
  t.property3 = mean(p3);
  t.total = t.property1 + t.property2 + t.property3;
  return t;
}

inline HlbLossTerms hlb_loss(const AutoencoderModel& model, Graph& g, const Tensor& batch) {
  if (batch.size() == 0) throw ValueError("hlb_loss: empty batch");
  Var x = g.constant(batch);
  Var z = model.encode(g, x);
  Var recon = model.decode(g, z);
  HlbLossTerms t = property_penalties(z, model.spec().mu, model.spec().property1);
  t.reconstruction = mean(l2norm(x - recon, Reduce::per_row));
  t.total = t.reconstruction + t.total;
  return t;
}

struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;
  double property1 = 0.0;
  double property2 = 0.0;
  double property3 = 0.0;
};

/// Per-instance loss terms averaged over a whole set of instances.
inline LossBreakdown evaluate_loss(const AutoencoderModel& model, std::span<const Instance> xs) {
  if (xs.empty()) throw ValueError("evaluate_loss: no instances");
  LossBreakdown acc;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, xs.size() - start);
    Graph g;
    const auto t = hlb_loss(model, g, AutoencoderModel::stack(xs.subspan(start, n)));
    const double w = static_cast<double>(n);
    acc.total += w * t.total.value().item();
    acc.reconstruction += w * t.reconstruction.value().item();
    acc.property1 += w * t.property1.value().item();
    acc.property2 += w * t.property2.value().item();
    acc.property3 += w * t.property3.value().item();
  }
  const double n = static_cast<double>(xs.size());
  return {acc.total / n, acc.reconstruction / n, acc.property1 / n, acc.property2 / n, acc.property3 / n};
}

// ---------------------------------------------------------------------------
// Training

struct AutoencoderTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct AutoencoderTrainReport {
  /// Mean over the epoch's mini-batches, one entry per epoch.
  std::vector<LossBreakdown> epochs;
};

/// Mini-batch AdamW on the HLB autoencoder loss. Reproducible given `cfg.seed`.
inline AutoencoderTrainReport train_autoencoder(AutoencoderModel& model, std::span<const Instance> train,
                                                const AutoencoderTrainConfig& cfg) {
  if (train.empty()) throw ValueError("train_autoencoder: empty training set");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ValueError("train_autoencoder: epochs and batch size must be >= 1");
  AdamW opt(model.parameters(), AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Instance> batch;
  AutoencoderTrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++steps) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);
      Graph g;
      const auto t = hlb_loss(model, g, AutoencoderModel::stack(batch));
      const double loss = t.total.value().item();
      if (!std::isfinite(loss)) {
        throw NumericalError("autoencoder: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(steps + 1));
      }
      sum.total += loss;
      sum.reconstruction += t.reconstruction.value().item();
      sum.property1 += t.property1.value().item();
      sum.property2 += t.property2.value().item();
      sum.property3 += t.property3.value().item();
      opt.step(g.backward(t.total));
    }
    const double n = static_cast<double>(steps);
    report.epochs.push_back({sum.total / n, sum.reconstruction / n, sum.property1 / n, sum.property2 / n, sum.property3 / n});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Distribution statistics of encoded vectors

struct MeanStd {
  double value = 0.0;
  double std = 0.0;
};

struct DistributionReport {
  MeanStd mean;      // over all latent entries
  MeanStd abs_mean;  // over all |latent entries|
  MeanStd l2_norm;   // over latent vectors
  std::size_t vectors = 0;
};

inline DistributionReport distribution_report(std::span<const Instance> latents) {
  if (latents.empty()) throw ValueError("distribution_report: no vectors");
  DistributionReport r;
  r.vectors = latents.size();
  double s = 0, ss = 0, a = 0, as = 0, n = 0, ns = 0;
  std::size_t count = 0;
  for (const auto& z : latents) {
    double sq = 0;
    for (double v : z) {
      s += v;
      ss += v * v;
      a += std::fabs(v);
      as += v * v;
      sq += v * v;
      ++count;
    }
    const double norm = std::sqrt(sq);
    n += norm;
    ns += norm * norm;
  }
  auto finish = [](double sum, double sumsq, double cnt) {
    const double m = sum / cnt;
    return MeanStd{m, std::sqrt(std::max(0.0, sumsq / cnt - m * m))};
  };
  r.mean = finish(s, ss, static_cast<double>(count));
  r.abs_mean = finish(a, as, static_cast<double>(count));
  r.l2_norm = finish(n, ns, static_cast<double>(latents.size()));
  return r;
}

inline DistributionReport distribution_report(const AutoencoderModel& model, std::span<const Instance> inputs) {
  const auto z = model.encode_all(inputs);
  return distribution_report(z);
}

inline Json to_json(const DistributionReport& r) {
  auto ms = [](const MeanStd& m) { return Json{{"value", m.value}, {"std", m.std}}; };
  return Json{{"mean", ms(r.mean)}, {"abs_mean", ms(r.abs_mean)}, {"l2_norm", ms(r.l2_norm)}, {"vectors", r.vectors}};
}

struct DistributionRow {
  std::string dataset;
  DistributionReport train;
  DistributionReport test;
};

/// Dataset | Absolute Mean(Train) | Absolute Mean(Test) | Mean(Train) | Mean(Test), as "value ± std".
inline std::string format_distribution_table(std::span<const DistributionRow> rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "Dataset\tAbsolute Mean(Train)\tAbsolute Mean(Test)\tMean(Train)\tMean(Test)\n";
  for (const auto& r : rows) {
    os << r.dataset << '\t' << r.train.abs_mean.value << " ± " << r.train.abs_mean.std << '\t'
       << r.test.abs_mean.value << " ± " << r.test.abs_mean.std << '\t' << r.train.mean.value << " ± "
       << r.train.mean.std << '\t' << r.test.mean.value << " ± " << r.test.mean.std << '\n';
  }
  return os.str();
}

}  // namespace vsamil
