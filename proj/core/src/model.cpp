#include "taskaug/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include "taskaug/error.hpp"
#include "taskaug/rng.hpp"

namespace taskaug {

void EncoderConfig::validate() const {
  if (hash_buckets < 1) throw UsageError("hash_buckets must be >= 1");
  if (hidden_dim < 1) throw UsageError("hidden_dim must be >= 1");
  if (num_classes < 2) throw UsageError("num_classes must be >= 2");
  if (ngram_orders.empty()) throw UsageError("ngram_orders must not be empty");
  for (int o : ngram_orders) {
    if (o < 1) throw UsageError("ngram orders must be >= 1");
  }
  if (init_scale <= 0.0) throw UsageError("init_scale must be > 0");
}

EncoderConfig EncoderConfig::with_classes(int classes) const {
  EncoderConfig copy = *this;
  copy.num_classes = classes;
  return copy;
}

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a_extend(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline bool is_token_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
}

}  // namespace

SparseVec featurize(std::string_view text, const EncoderConfig& config) {
  std::string lowered(text);
  for (char& c : lowered) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + ('a' - 'A'));
  }

  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && !is_token_char(static_cast<unsigned char>(lowered[i]))) ++i;
    std::size_t start = i;
    while (i < lowered.size() && is_token_char(static_cast<unsigned char>(lowered[i]))) ++i;
    if (i > start) tokens.emplace_back(lowered.data() + start, i - start);
  }

  std::vector<std::pair<std::uint32_t, double>> counts;
  for (int order : config.ngram_orders) {
    if (static_cast<std::size_t>(order) > tokens.size()) continue;
    for (std::size_t pos = 0; pos + static_cast<std::size_t>(order) <= tokens.size(); ++pos) {
      std::uint64_t h = kFnvOffset;
      for (int k = 0; k < order; ++k) {
        if (k > 0) h = fnv1a_extend(h, std::string_view("\x1f", 1));
        h = fnv1a_extend(h, tokens[pos + static_cast<std::size_t>(k)]);
      }
      counts.emplace_back(static_cast<std::uint32_t>(h % config.hash_buckets), 1.0);
    }
  }

  std::sort(counts.begin(), counts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVec vec;
  for (const auto& [idx, val] : counts) {
    if (!vec.entries.empty() && vec.entries.back().first == idx) {
      vec.entries.back().second += val;
    } else {
      vec.entries.emplace_back(idx, val);
    }
  }

  double norm_sq = 0.0;
  for (const auto& [_, val] : vec.entries) norm_sq += val * val;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& [_, val] : vec.entries) val *= inv;
  }
  return vec;
}

Parameters Parameters::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters p = zeros(config);
  Rng rng(seed);
  const std::size_t d = config.hash_buckets;
  const std::size_t h = static_cast<std::size_t>(config.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(config.num_classes);

  // uniform(-s, s), s = init_scale / sqrt(fan_in); biases start at zero.
  const double s1 = config.init_scale / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d * h; ++i) p.values[i] = (2.0 * rng.next_double() - 1.0) * s1;
  const double s2 = config.init_scale / std::sqrt(static_cast<double>(h));
  const std::size_t head_w = p.head_offset();
  for (std::size_t i = 0; i < h * c; ++i) {
    p.values[head_w + i] = (2.0 * rng.next_double() - 1.0) * s2;
  }
  return p;
}

Parameters Parameters::zeros(const EncoderConfig& config) {
  config.validate();
  Parameters p;
  p.hash_buckets = config.hash_buckets;
  p.hidden_dim = config.hidden_dim;
  p.num_classes = config.num_classes;
  p.precision = config.precision;
  const std::size_t d = config.hash_buckets;
  const std::size_t h = static_cast<std::size_t>(config.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(config.num_classes);
  p.values.assign(d * h + h + h * c + c, 0.0);
  return p;
}

Parameters Parameters::with_new_head(int classes, double init_scale, std::uint64_t seed) const {
  if (classes < 2) throw UsageError("head needs at least 2 classes");
  Parameters p;
  p.hash_buckets = hash_buckets;
  p.hidden_dim = hidden_dim;
  p.num_classes = classes;
  p.precision = precision;
  const std::size_t h = static_cast<std::size_t>(hidden_dim);
  const std::size_t c = static_cast<std::size_t>(classes);
  p.values.assign(head_offset() + h * c + c, 0.0);
  std::copy(values.begin(), values.begin() + static_cast<long>(head_offset()), p.values.begin());

  Rng rng(seed);
  const double s = init_scale / std::sqrt(static_cast<double>(h));
  for (std::size_t i = 0; i < h * c; ++i) {
    p.values[head_offset() + i] = (2.0 * rng.next_double() - 1.0) * s;
  }
  return p;
}

bool Parameters::shape_matches(const EncoderConfig& config) const {
  return hash_buckets == config.hash_buckets && hidden_dim == config.hidden_dim &&
         num_classes == config.num_classes;
}

bool Parameters::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

// Shared forward pass; returns probabilities and exposes the hidden layer
// so the backward pass can reuse it. Single precision rounds activations
// to float at layer boundaries; storage stays double.
void forward_impl(const Parameters& p, const SparseVec& x, std::vector<double>& hidden,
                  std::vector<double>& probs) {
  const std::size_t h = static_cast<std::size_t>(p.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(p.num_classes);
  const bool single = p.precision == Precision::Single;

  hidden.assign(h, 0.0);
  for (const auto& [idx, val] : x.entries) {
    const double* row = p.values.data() + static_cast<std::size_t>(idx) * h;
    for (std::size_t j = 0; j < h; ++j) hidden[j] += val * row[j];
  }
  const double* b1 = p.values.data() + p.hash_buckets * h;
  for (std::size_t j = 0; j < h; ++j) {
    double v = hidden[j] + b1[j];
    if (single) v = static_cast<float>(v);
    hidden[j] = v > 0.0 ? v : 0.0;  // ReLU
  }

  const double* w2 = p.values.data() + p.head_offset();
  const double* b2 = w2 + h * c;
  probs.assign(c, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    const double hj = hidden[j];
    if (hj == 0.0) continue;
    const double* row = w2 + j * c;
    for (std::size_t k = 0; k < c; ++k) probs[k] += hj * row[k];
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < c; ++k) {
    probs[k] += b2[k];
    if (single) probs[k] = static_cast<float>(probs[k]);
    max_logit = std::max(max_logit, probs[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    probs[k] = std::exp(probs[k] - max_logit);
    z += probs[k];
  }
  for (std::size_t k = 0; k < c; ++k) {
    probs[k] /= z;
    if (single) probs[k] = static_cast<float>(probs[k]);
  }
}

}  // namespace

std::vector<double> forward(const Parameters& params, const SparseVec& features) {
  std::vector<double> hidden, probs;
  forward_impl(params, features, hidden, probs);
  return probs;
}

double loss_and_grad(const Parameters& params, std::span<const Example> batch,
                     std::span<const double> class_weights, std::vector<double>& grad) {
  if (batch.empty()) throw UsageError("loss_and_grad: empty batch");
  const std::size_t h = static_cast<std::size_t>(params.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(params.num_classes);
  if (class_weights.size() != c) throw UsageError("class_weights length must equal num_classes");

  grad.assign(params.size(), 0.0);

  double weight_sum = 0.0;
  for (const Example& ex : batch) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= c) {
      throw UsageError("example label out of range");
    }
    weight_sum += ex.weight * class_weights[static_cast<std::size_t>(ex.label)];
  }
  if (!(weight_sum > 0.0)) throw NumericError("total example weight is zero");

  double loss = 0.0;
  std::vector<double> hidden, probs, dlogits(c), dhidden(h);
  double* gw1 = grad.data();
  double* gb1 = grad.data() + params.hash_buckets * h;
  double* gw2 = grad.data() + params.head_offset();
  double* gb2 = gw2 + h * c;
  const double* w2 = params.values.data() + params.head_offset();

  for (const Example& ex : batch) {
    forward_impl(params, *ex.features, hidden, probs);
    const double a = ex.weight * class_weights[static_cast<std::size_t>(ex.label)] / weight_sum;
    if (a == 0.0) continue;
    const double p_gold = probs[static_cast<std::size_t>(ex.label)];
    loss += a * -std::log(p_gold);

    for (std::size_t k = 0; k < c; ++k) {
      dlogits[k] = a * (probs[k] - (static_cast<std::size_t>(ex.label) == k ? 1.0 : 0.0));
      gb2[k] += dlogits[k];
    }
    std::fill(dhidden.begin(), dhidden.end(), 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      const double hj = hidden[j];
      if (hj == 0.0) continue;  // ReLU gate: zero activation blocks both paths
      const double* w2row = w2 + j * c;
      double* gw2row = gw2 + j * c;
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        gw2row[k] += hj * dlogits[k];
        acc += w2row[k] * dlogits[k];
      }
      dhidden[j] = acc;
      gb1[j] += acc;
    }
    for (const auto& [idx, val] : ex.features->entries) {
      double* grow = gw1 + static_cast<std::size_t>(idx) * h;
      for (std::size_t j = 0; j < h; ++j) {
        if (dhidden[j] != 0.0) grow[j] += val * dhidden[j];
      }
    }
  }

  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss (exploding parameters or zero probability)");
  }
  return loss;
}

double batch_loss(const Parameters& params, std::span<const Example> batch,
                  std::span<const double> class_weights) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  const std::size_t c = static_cast<std::size_t>(params.num_classes);
  if (class_weights.size() != c) throw UsageError("class_weights length must equal num_classes");

  double weight_sum = 0.0;
  for (const Example& ex : batch) {
    weight_sum += ex.weight * class_weights[static_cast<std::size_t>(ex.label)];
  }
  if (!(weight_sum > 0.0)) throw NumericError("total example weight is zero");

  double loss = 0.0;
  std::vector<double> hidden, probs;
  for (const Example& ex : batch) {
    const double a = ex.weight * class_weights[static_cast<std::size_t>(ex.label)] / weight_sum;
    if (a == 0.0) continue;
    forward_impl(params, *ex.features, hidden, probs);
    loss += a * -std::log(probs[static_cast<std::size_t>(ex.label)]);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite validation loss");
  return loss;
}

AdamState AdamState::zeros(std::size_t n) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

void adam_step(Parameters& params, std::span<const double> grad, AdamState& state, double lr) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: shape mismatch");
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  double* m = state.first_moment.data();
  double* v = state.second_moment.data();
  double* theta = params.values.data();
  const double* g = grad.data();
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / bias1;
    const double vhat = v[i] / bias2;
    theta[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

void sgd_step(Parameters& params, std::span<const double> grad, double lr) {
  if (grad.size() != params.size()) throw UsageError("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params.values[i] -= lr * grad[i];
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw UsageError("learning_rate must be > 0");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
}

namespace {

Parameters train_impl(Parameters params, std::span<const Example> data, const TrainConfig& config,
                      std::span<const int> snapshot_epochs, std::vector<Parameters>* snapshots) {
  config.validate();
  if (data.empty()) throw UsageError("train: no data");
  if (config.sample_weights && config.sample_weights->size() != data.size()) {
    throw UsageError("sample_weights length must equal data size");
  }

  std::vector<double> cw = config.class_weights;
  if (cw.empty()) cw.assign(static_cast<std::size_t>(params.num_classes), 1.0);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState state = AdamState::zeros(params.size());
  std::vector<double> grad;
  std::vector<Example> batch;
  std::size_t next_snapshot = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t b = start; b < stop; ++b) {
        Example ex = data[order[b]];
        if (config.sample_weights) ex.weight = (*config.sample_weights)[order[b]];
        batch.push_back(ex);
      }
      const double wsum = [&] {
        double s = 0.0;
        for (const Example& ex : batch) s += ex.weight * cw[static_cast<std::size_t>(ex.label)];
        return s;
      }();
      if (!(wsum > 0.0)) continue;  // batch of only zero-weight samples
      loss_and_grad(params, batch, cw, grad);
      adam_step(params, grad, state, config.learning_rate);
    }
    while (next_snapshot < snapshot_epochs.size() && snapshot_epochs[next_snapshot] == epoch + 1) {
      snapshots->push_back(params);
      ++next_snapshot;
    }
  }
  return params;
}

}  // namespace

Parameters train(Parameters params, std::span<const Example> data, const TrainConfig& config) {
  return train_impl(std::move(params), data, config, {}, nullptr);
}

Parameters train_with_snapshots(Parameters params, std::span<const Example> data,
                                const TrainConfig& config, std::span<const int> snapshot_epochs,
                                std::vector<Parameters>& snapshots) {
  return train_impl(std::move(params), data, config, snapshot_epochs, &snapshots);
}

int predict_one(const Parameters& params, const SparseVec& features) {
  const std::vector<double> probs = forward(params, features);
  int best = 0;
  for (int k = 1; k < params.num_classes; ++k) {
    if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

std::vector<int> predict(const Parameters& params, std::span<const SparseVec> features) {
  std::vector<int> out;
  out.reserve(features.size());
  for (const SparseVec& f : features) out.push_back(predict_one(params, f));
  return out;
}

std::vector<int> predict(const Parameters& params, const Corpus& corpus,
                         const EncoderConfig& config) {
  std::vector<int> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus.utterances()) {
    out.push_back(predict_one(params, featurize(u.text, config)));
  }
  return out;
}

ClassWeights class_weights_from(std::span<const int> labels, int num_classes) {
  std::vector<long> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw UsageError("label out of range in class_weights_from");
    counts[static_cast<std::size_t>(y)]++;
  }
  ClassWeights cw;
  cw.weights.assign(static_cast<std::size_t>(num_classes), 0.0);
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < num_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0) {
      cw.weights[static_cast<std::size_t>(k)] =
          1.0 / static_cast<double>(counts[static_cast<std::size_t>(k)]);
      sum += cw.weights[static_cast<std::size_t>(k)];
      ++present;
    } else {
      cw.has_absent_classes = true;
    }
  }
  if (present == 0) throw DataError("class_weights_from: no labels at all");
  const double mean = sum / present;
  for (double& w : cw.weights) w /= mean;
  if (cw.has_absent_classes) {
    std::cerr << "[taskaug] warning: " << (num_classes - present)
              << " class(es) absent from training data; their weight is 0\n";
  }
  return cw;
}

ClassWeights class_weights_from(const Corpus& corpus) {
  std::vector<int> labels;
  labels.reserve(corpus.size());
  for (const auto& u : corpus.utterances()) labels.push_back(u.label_id);
  return class_weights_from(labels, corpus.labels().size());
}

FeatureCache FeatureCache::build(const Corpus& corpus, const EncoderConfig& config) {
  FeatureCache cache;
  cache.rows.reserve(corpus.size());
  for (const auto& u : corpus.utterances()) cache.rows.push_back(featurize(u.text, config));
  return cache;
}

FeatureCache FeatureCache::subset(std::span<const std::size_t> indices) const {
  FeatureCache out;
  out.rows.reserve(indices.size());
  for (std::size_t i : indices) out.rows.push_back(rows.at(i));
  return out;
}

std::vector<Example> make_examples(const Corpus& corpus, const FeatureCache& cache) {
  if (cache.rows.size() != corpus.size()) throw UsageError("feature cache does not match corpus");
  std::vector<Example> ex;
  ex.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ex.push_back({&cache.rows[i], corpus.utterances()[i].label_id, 1.0});
  }
  return ex;
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x54415547;  // "TAUG"
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<long>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ParseError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_str(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<long>(n));
  if (!in) throw ParseError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const Parameters& params, const EncoderConfig& config,
                     std::span<const std::string> label_names, const std::filesystem::path& path) {
  if (!params.shape_matches(config)) throw UsageError("checkpoint: parameters do not match config");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  write_u32(out, kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  write_u64(out, config.hash_buckets);
  write_u32(out, static_cast<std::uint32_t>(config.ngram_orders.size()));
  for (int o : config.ngram_orders) write_u32(out, static_cast<std::uint32_t>(o));
  write_u32(out, static_cast<std::uint32_t>(config.hidden_dim));
  write_u32(out, static_cast<std::uint32_t>(config.num_classes));
  write_f64(out, config.init_scale);
  write_u32(out, config.precision == Precision::Single ? 1 : 0);
  write_u32(out, static_cast<std::uint32_t>(label_names.size()));
  for (const auto& n : label_names) write_str(out, n);
  write_u64(out, params.size());
  for (double v : params.values) write_f64(out, v);
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  if (read_u32(in) != kCheckpointMagic) throw ParseError("not a taskaug checkpoint");
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config.hash_buckets = read_u64(in);
  const std::uint32_t n_orders = read_u32(in);
  ck.config.ngram_orders.clear();
  for (std::uint32_t i = 0; i < n_orders; ++i) {
    ck.config.ngram_orders.push_back(static_cast<int>(read_u32(in)));
  }
  ck.config.hidden_dim = static_cast<int>(read_u32(in));
  ck.config.num_classes = static_cast<int>(read_u32(in));
  ck.config.init_scale = read_f64(in);
  ck.config.precision = read_u32(in) == 1 ? Precision::Single : Precision::Double;
  const std::uint32_t n_labels = read_u32(in);
  for (std::uint32_t i = 0; i < n_labels; ++i) ck.label_names.push_back(read_str(in));

  ck.params = Parameters::zeros(ck.config);
  const std::uint64_t count = read_u64(in);
  if (count != ck.params.size()) throw ParseError("checkpoint parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) ck.params.values[i] = read_f64(in);
  return ck;
}

}  // namespace taskaug
