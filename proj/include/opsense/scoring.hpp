#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "opsense/autodiff.hpp"
#include "opsense/data.hpp"
#include "opsense/stats.hpp"
#include "opsense/supernet.hpp"

namespace opsense {

enum class ScoreVariant { vanilla, label_agnostic, data_agnostic };

std::string_view variant_name(ScoreVariant v);  // vanilla | label | data
ScoreVariant parse_variant(std::string_view name);

/// How |dL/d alpha_k * alpha_k| is read when the forward mixes by softmax(alpha).
///  raw:        gradient through the softmax, times the raw alpha
///  mixing:     gradient w.r.t. the mixing coefficient, times the coefficient
///  linearized: gradient w.r.t. the mixing coefficient, times the raw alpha
/// For sequential spaces the coefficient is alpha itself and all three agree.
enum class AlphaMode { raw, mixing, linearized };

std::string_view alpha_mode_name(AlphaMode m);
AlphaMode parse_alpha_mode(std::string_view name);

inline constexpr AlphaMode kDefaultAlphaMode = AlphaMode::linearized;

struct ScoreEntry {
  std::size_t edge = 0;
  std::size_t op = 0;
  double score = 0.0;     // |gradient * alpha|
  double alpha = 0.0;     // value of the scored parameter
  double gradient = 0.0;  // dL / d(scored parameter)
};

/// ZEROS values for every alive (edge, op) of a supernet, in (edge, op) order.
struct ScoreTable {
  ScoreVariant variant = ScoreVariant::data_agnostic;
  AlphaMode alpha_mode = kDefaultAlphaMode;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  double loss = 0.0;
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
  std::vector<ScoreEntry> entries;

  std::optional<double> score(std::size_t edge, std::size_t op) const;
  // FNV-1a over (edge, op, score bits) of every entry.
  std::uint64_t digest() const;
};

/// Input, labels and weight transform that define one ZEROS loss.
/// Labels present -> mean cross-entropy; absent -> sum of all logits.
struct ZerosObjective {
  Tensor x;
  std::optional<std::vector<int>> labels;
  WeightTransform transform = WeightTransform::identity;
};

ZerosObjective vanilla_objective(const Batch& batch);
ZerosObjective label_agnostic_objective(const Tensor& x, std::size_t num_classes, std::uint64_t seed);
ZerosObjective data_agnostic_objective(const SearchSpace& space);

// Loss value of the objective; `mixing` replaces the alpha-derived coefficients.
double zeros_loss(const Supernet& net, const ZerosObjective& objective, const MixingOverride* mixing = nullptr);

// One forward and one backward pass on a fresh tape; `net` is not modified.
ScoreTable zeros_table(const Supernet& net, const ZerosObjective& objective, ScoreVariant variant,
                       AlphaMode mode = kDefaultAlphaMode, std::uint64_t seed = 0);

ScoreTable zeros_scores(const Supernet& net, const Batch& batch, AlphaMode mode = kDefaultAlphaMode);
ScoreTable zeros_scores_label_agnostic(const Supernet& net, const Tensor& x, std::uint64_t seed,
                                       AlphaMode mode = kDefaultAlphaMode);
ScoreTable zeros_scores_data_agnostic(const Supernet& net, AlphaMode mode = kDefaultAlphaMode);

// ---------------------------------------------------------------------------
// Summing-up proxies

enum class Proxy { grad_norm, snip, grasp, synflow };

std::string_view proxy_name(Proxy p);
Proxy parse_proxy(std::string_view name);
bool needs_batch(Proxy p);

struct ProxyScore {
  Proxy proxy = Proxy::synflow;
  double value = 0.0;
  std::size_t param_count = 0;
};

inline constexpr double kGraspStep = 1e-4;

/// Architecture-level score of a differentiable model given its parameters and
/// the loss the proxy is defined on:
///   grad_norm  ||g||_2
///   snip       sum |g * theta|
///   grasp      sum |(H g) * theta|, H g by central finite differences
///   synflow    sum |g * theta|  (caller passes the all-ones, |theta| loss)
double proxy_value(Proxy proxy, std::span<const Tensor> params, const LossBuilder& loss,
                   double grasp_step = kGraspStep);

/// Proxy of the supernet's alive sub-network. Batch-dependent proxies use mean
/// cross-entropy on `batch`; SynFlow uses the all-ones input with |W| and the
/// sum of logits. Architecture parameters are held fixed.
ProxyScore proxy_score(const Supernet& net, Proxy proxy, const Batch* batch = nullptr);

/// Proxy of a discrete architecture built as a singleton supernet from `seed`.
ProxyScore proxy_score(const SearchSpace& space, const Genotype& genotype, Proxy proxy, std::uint64_t seed,
                       const Batch* batch = nullptr);

struct ProxyCorrelation {
  Proxy proxy = Proxy::synflow;
  stats::Correlation spearman;  // proxy value vs param_count
};

/// Spearman(value, param_count) per proxy present in `samples`. Each proxy
/// needs at least `min_samples` samples.
std::vector<ProxyCorrelation> bias_correlation(std::span<const ProxyScore> samples, std::size_t min_samples = 20);

struct MaxParamFrequency {
  std::vector<double> per_edge;  // fraction of genotypes choosing a max-param op
  double overall = 0.0;
  bool degenerate = false;       // on every edge all ops have the same param count
};

MaxParamFrequency max_param_selection_frequency(const SearchSpace& space, std::span<const Genotype> genotypes);

}  // namespace opsense
