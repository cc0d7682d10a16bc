#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace taskaug {

/// One labeled utterance. `label_id` indexes into the owning corpus'
/// LabelSpace. Text may be empty; session_id must not be.
struct Utterance {
  std::string session_id;
  std::string speaker;
  std::string text;
  int label_id = -1;

  bool operator==(const Utterance&) const = default;
};

/// Ordered set of unique label names. Ids are positions in `names()`.
class LabelSpace {
 public:
  LabelSpace() = default;

  /// Validates uniqueness and size >= 2.
  explicit LabelSpace(std::vector<std::string> names);

  /// Reads one label name per line (blank lines ignored).
  static LabelSpace from_file(const std::filesystem::path& path);

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> id_of(std::string_view name) const;

  bool operator==(const LabelSpace& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
};

/// Immutable collection of labeled utterances plus a session index.
/// Target and source corpora share this type; the role is contextual.
class Corpus {
 public:
  Corpus() = default;

  /// Validates every label_id against `labels` and builds the session index.
  Corpus(std::vector<Utterance> utterances, LabelSpace labels);

  const std::vector<Utterance>& utterances() const { return utterances_; }
  const LabelSpace& labels() const { return labels_; }

  /// session_id -> utterance indices, ordered lexicographically by id.
  const std::map<std::string, std::vector<std::size_t>>& session_index() const {
    return session_index_;
  }

  std::size_t size() const { return utterances_.size(); }
  std::size_t num_sessions() const { return session_index_.size(); }
  std::vector<std::string> session_ids() const;

  /// Per-class utterance counts, length labels().size().
  std::vector<long> label_counts() const;

  /// New corpus containing the given utterances (same label space).
  Corpus subset(std::span<const std::size_t> indices) const;

  bool operator==(const Corpus& other) const {
    return utterances_ == other.utterances_ && labels_ == other.labels_;
  }

 private:
  std::vector<Utterance> utterances_;
  LabelSpace labels_;
  std::map<std::string, std::vector<std::size_t>> session_index_;
};

/// Loads a JSON Lines corpus: one object per line with string fields
/// "session", "speaker", "text", "label". When no label space is supplied,
/// it is inferred from the observed labels, sorted lexicographically.
Corpus load_corpus(const std::filesystem::path& path,
                   const std::optional<LabelSpace>& labels = std::nullopt);

/// Writes the JSONL form read back by load_corpus (UTF-8, "\n" separators).
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Session split as index sets into the input corpus. Sessions are sampled
/// without replacement by shuffling the sorted session-id list with the
/// library Rng (xoshiro256** seeded via SplitMix64).
struct SessionSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::string> train_sessions;
  std::vector<std::string> val_sessions;
};

SessionSplit select_session_indices(const Corpus& corpus, int n_train, int n_val,
                                    std::uint64_t seed);

/// Convenience form returning materialized corpora. Train and val session
/// sets are disjoint; all utterances of a chosen session are included.
std::pair<Corpus, Corpus> select_sessions(const Corpus& corpus, int n_train, int n_val,
                                          std::uint64_t seed);

/// Synthetic corpus generator with planted source->target label structure.
///
/// Every source class owns a disjoint vocabulary of `vocab_per_class`
/// tokens. Each target class is assigned `children_per_target` distinct
/// source classes (the planted children); its utterances draw tokens from
/// the union of the children's vocabularies. Independently per token, with
/// probability `noise` the token is drawn from the global vocabulary
/// instead. Source utterances draw from their own class vocabulary under
/// the same noise rule.
struct SynthSpec {
  int target_classes = 4;            // M
  int source_classes = 24;           // N, must be >= M * children_per_target
  int children_per_target = 3;       // planted children per target class
  int vocab_per_class = 80;
  double noise = 0.0;                // in [0, 1]
  int utterances_per_source_class = 50;
  int sessions = 24;                 // target corpus session count
  int target_utterances = 1440;
  /// Optional linear ramp over source-class sizes: class j receives
  /// round(utterances_per_source_class * (1 + count_skew * (N-1-j)/(N-1)))
  /// utterances. 0 (the default) keeps all classes at the same size.
  double count_skew = 0.0;

  void validate() const;
};

struct SynthData {
  Corpus source;
  Corpus target;
  /// Planted map: target label name -> its children's source label names.
  std::map<std::string, std::set<std::string>> planted;
};

/// Deterministic: identical (spec, seed) pairs produce byte-identical
/// corpora. Utterance length is uniform in [6, 12] tokens.
SynthData generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Writes/reads the planted map as `target<TAB>child1,...,childn` lines.
void save_planted(const std::map<std::string, std::set<std::string>>& planted,
                  const std::filesystem::path& path);

}  // namespace taskaug
