#include "taskaug/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "taskaug/error.hpp"
#include "taskaug/rng.hpp"

namespace taskaug {

using nlohmann::json;

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw DataError("label space needs at least 2 labels, got " + std::to_string(names_.size()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw DataError("duplicate label name: " + n);
  }
}

LabelSpace LabelSpace::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return LabelSpace(std::move(names));
}

std::optional<int> LabelSpace::id_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

Corpus::Corpus(std::vector<Utterance> utterances, LabelSpace labels)
    : utterances_(std::move(utterances)), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    const Utterance& u = utterances_[i];
    if (u.label_id < 0 || u.label_id >= labels_.size()) {
      throw DataError("utterance " + std::to_string(i) + " has label_id " +
                      std::to_string(u.label_id) + " outside label space of size " +
                      std::to_string(labels_.size()));
    }
    if (u.session_id.empty()) {
      throw DataError("utterance " + std::to_string(i) + " has empty session_id");
    }
    session_index_[u.session_id].push_back(i);
  }
}

std::vector<std::string> Corpus::session_ids() const {
  std::vector<std::string> ids;
  ids.reserve(session_index_.size());
  for (const auto& [id, _] : session_index_) ids.push_back(id);
  return ids;
}

std::vector<long> Corpus::label_counts() const {
  std::vector<long> counts(static_cast<std::size_t>(labels_.size()), 0);
  for (const auto& u : utterances_) counts[static_cast<std::size_t>(u.label_id)]++;
  return counts;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
  std::vector<Utterance> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(utterances_.at(i));
  return Corpus(std::move(picked), labels_);
}

Corpus load_corpus(const std::filesystem::path& path, const std::optional<LabelSpace>& labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());

  struct Raw {
    std::string session, speaker, text, label;
  };
  std::vector<Raw> raws;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      throw ParseError("malformed JSON record in " + path.string(), line_no);
    }
    for (const char* key : {"session", "speaker", "text", "label"}) {
      if (!rec.contains(key) || !rec[key].is_string()) {
        throw ParseError(std::string("record missing string field \"") + key + "\" in " +
                             path.string(),
                         line_no);
      }
    }
    raws.push_back({rec["session"].get<std::string>(), rec["speaker"].get<std::string>(),
                    rec["text"].get<std::string>(), rec["label"].get<std::string>()});
  }

  LabelSpace space;
  if (labels.has_value()) {
    space = *labels;
  } else {
    if (raws.empty()) {
      throw DataError("empty corpus file and no label space supplied: " + path.string());
    }
    std::set<std::string> observed;
    for (const auto& r : raws) observed.insert(r.label);
    space = LabelSpace(std::vector<std::string>(observed.begin(), observed.end()));
  }

  std::vector<Utterance> utterances;
  utterances.reserve(raws.size());
  for (std::size_t i = 0; i < raws.size(); ++i) {
    auto id = space.id_of(raws[i].label);
    if (!id.has_value()) {
      throw DataError("unknown label \"" + raws[i].label + "\" at record " + std::to_string(i + 1) +
                      " of " + path.string());
    }
    utterances.push_back({std::move(raws[i].session), std::move(raws[i].speaker),
                          std::move(raws[i].text), *id});
  }
  return Corpus(std::move(utterances), std::move(space));
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  for (const auto& u : corpus.utterances()) {
    json rec;
    rec["session"] = u.session_id;
    rec["speaker"] = u.speaker;
    rec["text"] = u.text;
    rec["label"] = corpus.labels().name(u.label_id);
    out << rec.dump() << "\n";
  }
}

SessionSplit select_session_indices(const Corpus& corpus, int n_train, int n_val,
                                    std::uint64_t seed) {
  if (n_train < 0 || n_val < 0) throw UsageError("session counts must be non-negative");
  std::vector<std::string> ids = corpus.session_ids();
  const std::size_t need = static_cast<std::size_t>(n_train) + static_cast<std::size_t>(n_val);
  if (ids.size() < need) {
    throw DataError("need " + std::to_string(need) + " sessions but corpus has " +
                    std::to_string(ids.size()));
  }
  Rng rng(seed);
  rng.shuffle(ids);

  SessionSplit split;
  split.train_sessions.assign(ids.begin(), ids.begin() + n_train);
  split.val_sessions.assign(ids.begin() + n_train, ids.begin() + static_cast<long>(need));

  std::set<std::string> train_set(split.train_sessions.begin(), split.train_sessions.end());
  std::set<std::string> val_set(split.val_sessions.begin(), split.val_sessions.end());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string& sid = corpus.utterances()[i].session_id;
    if (train_set.count(sid)) split.train_indices.push_back(i);
    else if (val_set.count(sid)) split.val_indices.push_back(i);
  }
  return split;
}

std::pair<Corpus, Corpus> select_sessions(const Corpus& corpus, int n_train, int n_val,
                                          std::uint64_t seed) {
  SessionSplit split = select_session_indices(corpus, n_train, n_val, seed);
  return {corpus.subset(split.train_indices), corpus.subset(split.val_indices)};
}

void SynthSpec::validate() const {
  if (target_classes < 2) throw UsageError("target_classes must be >= 2");
  if (children_per_target < 1) throw UsageError("children_per_target must be >= 1");
  if (source_classes < target_classes * children_per_target) {
    throw UsageError("source_classes must be >= target_classes * children_per_target");
  }
  if (noise < 0.0 || noise > 1.0) throw UsageError("noise must be in [0, 1]");
  if (vocab_per_class < 1) throw UsageError("vocab_per_class must be >= 1");
  if (utterances_per_source_class < 1) throw UsageError("utterances_per_source_class must be >= 1");
  if (sessions < 1) throw UsageError("sessions must be >= 1");
  if (target_utterances < 1) throw UsageError("target_utterances must be >= 1");
  if (count_skew < 0.0) throw UsageError("count_skew must be >= 0");
}

namespace {

std::string padded(std::string_view prefix, int value, int width) {
  std::string digits = std::to_string(value);
  std::string out(prefix);
  out.append(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0');
  out += digits;
  return out;
}

int digits_for(int count) {
  int w = 1;
  for (int v = count - 1; v >= 10; v /= 10) ++w;
  return w;
}

}  // namespace

SynthData generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);

  const int n = spec.source_classes;
  const int m = spec.target_classes;
  const int kt = spec.children_per_target;
  const int v = spec.vocab_per_class;
  const int src_width = digits_for(n);
  const int tgt_width = digits_for(m);

  std::vector<std::string> source_names, target_names;
  for (int j = 0; j < n; ++j) source_names.push_back(padded("S", j, src_width));
  for (int t = 0; t < m; ++t) target_names.push_back(padded("T", t, tgt_width));

  // Disjoint per-class vocabularies; token "w<class>t<index>".
  const int tok_width = digits_for(v);
  auto token = [&](int cls, int idx) {
    return padded("w", cls, src_width) + padded("t", idx, tok_width);
  };

  // Planted children: a seeded permutation of the source classes, first
  // m*kt entries assigned kt at a time.
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) perm[static_cast<std::size_t>(j)] = j;
  rng.shuffle(perm);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(m));
  std::map<std::string, std::set<std::string>> planted;
  for (int t = 0; t < m; ++t) {
    for (int c = 0; c < kt; ++c) {
      int cls = perm[static_cast<std::size_t>(t * kt + c)];
      children[static_cast<std::size_t>(t)].push_back(cls);
      planted[target_names[static_cast<std::size_t>(t)]].insert(
          source_names[static_cast<std::size_t>(cls)]);
    }
  }

  const long global_vocab = static_cast<long>(n) * v;
  auto global_token = [&](std::uint64_t flat) {
    return token(static_cast<int>(flat) / v, static_cast<int>(flat) % v);
  };
  auto utterance_len = [&]() { return 6 + static_cast<int>(rng.below(7)); };

  // Source corpus. Class sizes follow the optional linear ramp.
  std::vector<Utterance> source_utts;
  for (int j = 0; j < n; ++j) {
    double ramp = (n > 1) ? static_cast<double>(n - 1 - j) / (n - 1) : 0.0;
    long count = std::max<long>(
        1, std::lround(spec.utterances_per_source_class * (1.0 + spec.count_skew * ramp)));
    for (long u = 0; u < count; ++u) {
      const int len = utterance_len();
      std::string text;
      for (int tkn = 0; tkn < len; ++tkn) {
        if (!text.empty()) text += ' ';
        if (rng.next_double() < spec.noise) {
          text += global_token(rng.below(static_cast<std::uint64_t>(global_vocab)));
        } else {
          text += token(j, static_cast<int>(rng.below(static_cast<std::uint64_t>(v))));
        }
      }
      source_utts.push_back({"src", "spk", std::move(text), j});
    }
  }

  // Target corpus: sessions round-robin, class uniform, speaker alternating.
  std::vector<Utterance> target_utts;
  const int sess_width = digits_for(spec.sessions);
  for (int u = 0; u < spec.target_utterances; ++u) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    const auto& kids = children[static_cast<std::size_t>(t)];
    const int len = utterance_len();
    std::string text;
    for (int tkn = 0; tkn < len; ++tkn) {
      if (!text.empty()) text += ' ';
      if (rng.next_double() < spec.noise) {
        text += global_token(rng.below(static_cast<std::uint64_t>(global_vocab)));
      } else {
        const std::uint64_t flat = rng.below(static_cast<std::uint64_t>(kids.size()) * v);
        text += token(kids[static_cast<std::size_t>(flat / static_cast<std::uint64_t>(v))],
                      static_cast<int>(flat % static_cast<std::uint64_t>(v)));
      }
    }
    target_utts.push_back({padded("sess", u % spec.sessions, sess_width),
                           (u % 2 == 0) ? "A" : "B", std::move(text), t});
  }

  SynthData data;
  data.source = Corpus(std::move(source_utts), LabelSpace(std::move(source_names)));
  data.target = Corpus(std::move(target_utts), LabelSpace(std::move(target_names)));
  data.planted = std::move(planted);
  return data;
}

void save_planted(const std::map<std::string, std::set<std::string>>& planted,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write planted map: " + path.string());
  for (const auto& [target, kids] : planted) {
    out << target << '\t';
    bool first = true;
    for (const auto& k : kids) {
      if (!first) out << ',';
      out << k;
      first = false;
    }
    out << '\n';
  }
}

}  // namespace taskaug
