#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskaug/corpus.hpp"

namespace taskaug {

enum class Precision { Double, Single };

/// Hashed bag-of-n-grams encoder with one hidden ReLU layer and a softmax
/// head. Small enough that every gradient is testable; expressive enough
/// for utterance classification at desk scale.
struct EncoderConfig {
  std::size_t hash_buckets = std::size_t{1} << 15;  // feature dimension D
  std::vector<int> ngram_orders = {1, 2};
  int hidden_dim = 64;
  int num_classes = 2;  // M for target-side heads, N for source pretraining
  /// Multiplier on the uniform(-s, s) init with s = 1/sqrt(fan_in).
  double init_scale = 1.0;
  Precision precision = Precision::Double;

  void validate() const;
  /// Same encoder shape with a different head width.
  EncoderConfig with_classes(int classes) const;
};

/// Sparse L2-normalized feature vector; entries sorted by bucket index.
struct SparseVec {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

/// Lowercases, splits on non-alphanumeric runs (bytes >= 0x80 are treated
/// as token characters so multibyte UTF-8 stays intact), hashes each n-gram
/// of the configured orders with 64-bit FNV-1a (tokens joined by 0x1F) into
/// `hash_buckets`, accumulates counts, and L2-normalizes unless all-zero.
SparseVec featurize(std::string_view text, const EncoderConfig& config);

/// Flat parameter vector, partitioned as
///   [input weights D*h][hidden bias h][head weights h*C][head bias C].
/// The head (last h*C + C entries) is addressable as a separate slice so it
/// can be re-initialized or carried over independently of the encoder.
struct Parameters {
  std::vector<double> values;
  std::size_t hash_buckets = 0;
  int hidden_dim = 0;
  int num_classes = 0;
  Precision precision = Precision::Double;

  static Parameters init(const EncoderConfig& config, std::uint64_t seed);
  static Parameters zeros(const EncoderConfig& config);

  std::size_t size() const { return values.size(); }
  std::size_t head_offset() const {
    return hash_buckets * static_cast<std::size_t>(hidden_dim) +
           static_cast<std::size_t>(hidden_dim);
  }
  std::size_t head_size() const {
    return static_cast<std::size_t>(hidden_dim) * static_cast<std::size_t>(num_classes) +
           static_cast<std::size_t>(num_classes);
  }
  std::span<double> head() { return {values.data() + head_offset(), head_size()}; }
  std::span<const double> head() const { return {values.data() + head_offset(), head_size()}; }
  std::span<const double> encoder_slice() const { return {values.data(), head_offset()}; }

  /// Copy with the head replaced by a freshly initialized slice of width
  /// `classes`; encoder coordinates are untouched.
  Parameters with_new_head(int classes, double init_scale, std::uint64_t seed) const;

  bool shape_matches(const EncoderConfig& config) const;
  bool all_finite() const;
};

/// One training example: features, gold label, per-sample weight.
struct Example {
  const SparseVec* features = nullptr;
  int label = 0;
  double weight = 1.0;
};

/// Softmax probabilities for one example. Entries sum to 1 within 1e-9 in
/// double precision.
std::vector<double> forward(const Parameters& params, const SparseVec& features);

/// Weighted cross-entropy over a batch:
///   loss = sum_i w_i * cw[y_i] * (-log p_i[y_i]) / sum_i w_i * cw[y_i].
/// Writes the exact analytic gradient of that scalar into `grad` (resized
/// to params.size()). Throws NumericError on non-finite intermediates.
double loss_and_grad(const Parameters& params, std::span<const Example> batch,
                     std::span<const double> class_weights, std::vector<double>& grad);

/// Loss only (validation path).
double batch_loss(const Parameters& params, std::span<const Example> batch,
                  std::span<const double> class_weights);

/// Adam moments; same shape as the parameter vector.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(std::size_t n);
};

/// Standard Adam with bias correction:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,  t <- t+1
///   theta <- theta - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
void adam_step(Parameters& params, std::span<const double> grad, AdamState& state, double lr);

/// Plain SGD step, used as the inner-loop test mode for exact identities.
void sgd_step(Parameters& params, std::span<const double> grad, double lr);

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 64;
  std::vector<double> class_weights;  // empty -> all ones
  /// Overrides Example::weight by position when present.
  std::optional<std::vector<double>> sample_weights;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Runs epochs x shuffled minibatches of Adam steps. The shuffle for epoch
/// e is drawn from Rng(mix_seed(seed, e)), so training for n epochs and
/// then continuing is bit-identical to training for n+k epochs directly.
Parameters train(Parameters params, std::span<const Example> data, const TrainConfig& config);

/// Same trajectory as train(); additionally copies the parameters after
/// each epoch listed in `snapshot_epochs` (ascending) into `snapshots`.
Parameters train_with_snapshots(Parameters params, std::span<const Example> data,
                                const TrainConfig& config, std::span<const int> snapshot_epochs,
                                std::vector<Parameters>& snapshots);

/// Argmax of forward(); ties break to the lowest class index.
int predict_one(const Parameters& params, const SparseVec& features);
std::vector<int> predict(const Parameters& params, std::span<const SparseVec> features);
std::vector<int> predict(const Parameters& params, const Corpus& corpus,
                         const EncoderConfig& config);

/// Inverse-frequency class weights, normalized to mean 1 over the classes
/// present in `labels`. Absent classes get weight 0 and raise the flag.
struct ClassWeights {
  std::vector<double> weights;
  bool has_absent_classes = false;
};
ClassWeights class_weights_from(std::span<const int> labels, int num_classes);
ClassWeights class_weights_from(const Corpus& corpus);

/// Featurized view of a corpus; rows align with corpus.utterances().
struct FeatureCache {
  std::vector<SparseVec> rows;

  static FeatureCache build(const Corpus& corpus, const EncoderConfig& config);
  FeatureCache subset(std::span<const std::size_t> indices) const;
};

/// Builds Examples over cached rows with unit weights.
std::vector<Example> make_examples(const Corpus& corpus, const FeatureCache& cache);

/// Checkpoint: versioned header (config echo + head label names) followed
/// by the flat parameter array as little-endian doubles. Round-trips
/// bit-exactly.
struct Checkpoint {
  Parameters params;
  EncoderConfig config;
  std::vector<std::string> label_names;  // head classes, may be empty
};

void save_checkpoint(const Parameters& params, const EncoderConfig& config,
                     std::span<const std::string> label_names, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace taskaug
