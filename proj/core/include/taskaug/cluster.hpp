#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "taskaug/corpus.hpp"
#include "taskaug/model.hpp"

namespace taskaug {

/// Target-vs-source label similarity. values[y*N + z] is the fraction of
/// source samples with gold label z that the dummy classifier assigns to
/// target label y; columns of labels with no samples are all zero.
struct SimMatrix {
  int target_classes = 0;  // M (rows)
  int source_classes = 0;  // N (columns)
  std::vector<double> values;
  std::vector<long> source_counts;  // per source label; 0 marks an unusable column

  double at(int y, int z) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(source_classes) +
                  static_cast<std::size_t>(z)];
  }
};

/// M disjoint ordered lists of K source label ids. Every member had at
/// least one source sample.
struct LabelSubsets {
  std::vector<std::vector<int>> subsets;
  int subset_size = 0;  // K

  int target_classes() const { return static_cast<int>(subsets.size()); }
  bool contains(int source_label, int* subset_out = nullptr) const;
  void validate() const;
};

/// Trains the similarity scorer on the in-domain target samples. Warns if
/// some target classes are absent (they can never win an argmax).
Parameters fit_dummy_classifier(const Corpus& target_train, const EncoderConfig& config,
                                const TrainConfig& train_config);

/// Exact count ratios from per-sample predictions and gold source labels.
SimMatrix sim_from_predictions(std::span<const int> predicted, std::span<const int> gold,
                               int target_classes, int source_classes);

/// Runs the dummy classifier over the source corpus and tabulates.
SimMatrix compute_sim(const Parameters& dummy, const EncoderConfig& config, const Corpus& source);
SimMatrix compute_sim(const Parameters& dummy, const Corpus& source, const FeatureCache& cache,
                      int source_classes);

/// Greedy subset construction: for rounds 1..K, visiting target labels in
/// ascending index order, pick the remaining source label with the highest
/// similarity and remove it from the pool. Ties break to the higher source
/// sample count, then the lower source label index. Labels with zero
/// samples never enter the pool.
LabelSubsets build_subsets(const SimMatrix& sim, int subset_size);

/// Text serialization: one line per target label,
/// `target_name<TAB>source_1,...,source_K`.
void save_subsets(const LabelSubsets& subsets, const LabelSpace& target_labels,
                  const LabelSpace& source_labels, const std::filesystem::path& path);
LabelSubsets load_subsets(const std::filesystem::path& path, const LabelSpace& target_labels,
                          const LabelSpace& source_labels);

}  // namespace taskaug
