#pragma once

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "flare/errors.hpp"
#include "flare/model.hpp"
#include "flare/rng.hpp"

namespace flare {

// Token id layout shared by every generated corpus: three reserved ids that
// every cipher maps to themselves, then content ids. Classification class
// markers sit at the bottom of the content range; span answers come from a
// dedicated block at the top so an answer run is recognizable by token type.
struct VocabLayout {
  static constexpr int pad = 0;
  static constexpr int sep = 1;
  static constexpr int query_marker = 2;
  static constexpr int first_content = 3;
};

struct Span {
  int start = -1;
  int end = -1;
  bool operator==(const Span&) const = default;
};

struct TaskInstance {
  int id = 0;
  std::vector<int> tokens;
  int label = -1;          // classification tasks
  Span span;               // span tasks
  bool span_valid = true;  // false once reordering breaks contiguity
  std::string language = "en";
};

// A deterministic "language": a bijection over content ids (reserved ids
// are fixed points) plus a tendency to transpose adjacent words.
struct CipherLanguage {
  std::string name;
  double swap_rate = 0.0;
  int vocab_size = 0;
  std::vector<int> perm, inv_perm;

  static CipherLanguage make(const std::string& name, double swap_rate,
                             int vocab_size, uint64_t seed) {
    if (vocab_size <= VocabLayout::first_content)
      throw ContractError("CipherLanguage: vocab too small");
    if (swap_rate < 0.0 || swap_rate > 1.0)
      throw ContractError("CipherLanguage: swap_rate outside [0,1]");
    CipherLanguage lang;
    lang.name = name;
    lang.swap_rate = swap_rate;
    lang.vocab_size = vocab_size;
    lang.perm.resize(vocab_size);
    std::iota(lang.perm.begin(), lang.perm.end(), 0);
    std::vector<int> content(lang.perm.begin() + VocabLayout::first_content,
                             lang.perm.end());
    Rng rng(derive_seed(seed, "cipher-" + name));
    rng.shuffle(content);
    std::copy(content.begin(), content.end(),
              lang.perm.begin() + VocabLayout::first_content);
    lang.inv_perm.resize(vocab_size);
    for (int i = 0; i < vocab_size; ++i) lang.inv_perm[lang.perm[i]] = i;
    return lang;
  }
};

enum class Direction { to_target, to_english };

// Translate an instance through the cipher. Each content token maps through
// the bijection with probability `quality`, otherwise it becomes a random
// content token. Adjacent content tokens then swap with the language's
// swap_rate (left to right, non-overlapping, reserved ids never move).
// Spans are re-projected through the position map; if the moved positions
// are no longer contiguous the span is flagged invalid.
inline TaskInstance apply_cipher(const CipherLanguage& lang,
                                 const TaskInstance& in, Direction dir,
                                 double quality, uint64_t seed) {
  if (quality < 0.0 || quality > 1.0)
    throw ContractError("apply_cipher: quality outside [0,1]");
  Rng rng(seed);
  TaskInstance out = in;
  out.language = dir == Direction::to_target ? lang.name : "en";
  int m = static_cast<int>(in.tokens.size());
  const auto& map = dir == Direction::to_target ? lang.perm : lang.inv_perm;
  int content_span = lang.vocab_size - VocabLayout::first_content;
  for (int i = 0; i < m; ++i) {
    int t = in.tokens[i];
    if (t < 0 || t >= lang.vocab_size)
      throw IndexError("apply_cipher: token " + std::to_string(t) +
                       " outside vocab " + std::to_string(lang.vocab_size));
    if (t < VocabLayout::first_content) {
      out.tokens[i] = t;
    } else if (rng.bernoulli(quality)) {
      out.tokens[i] = map[t];
    } else {
      out.tokens[i] = VocabLayout::first_content + rng.below(content_span);
    }
  }

  // orig_at[p] = which original position now sits at p.
  std::vector<int> orig_at(m);
  std::iota(orig_at.begin(), orig_at.end(), 0);
  for (int i = 0; i + 1 < m;) {
    bool both_content = out.tokens[i] >= VocabLayout::first_content &&
                        out.tokens[i + 1] >= VocabLayout::first_content;
    if (both_content && rng.bernoulli(lang.swap_rate)) {
      std::swap(out.tokens[i], out.tokens[i + 1]);
      std::swap(orig_at[i], orig_at[i + 1]);
      i += 2;
    } else {
      ++i;
    }
  }

  if (in.span.start >= 0) {
    std::vector<int> new_pos(m);
    for (int p = 0; p < m; ++p) new_pos[orig_at[p]] = p;
    int lo = m, hi = -1;
    for (int k = in.span.start; k <= in.span.end; ++k) {
      lo = std::min(lo, new_pos[k]);
      hi = std::max(hi, new_pos[k]);
    }
    out.span = {lo, hi};
    out.span_valid =
        in.span_valid && (hi - lo == in.span.end - in.span.start);
  }
  return out;
}

// The stand-in machine translation system: the cipher plus a quality dial.
struct MtStandin {
  const CipherLanguage* lang = nullptr;
  double quality = 1.0;

  TaskInstance translate(const TaskInstance& inst, Direction dir,
                         uint64_t seed) const {
    if (!lang) throw ContractError("MtStandin: no language installed");
    return apply_cipher(*lang, inst, dir, quality, seed);
  }
};

struct GenOptions {
  int seq_len = 12;
  int num_classes = 3;
  int vocab_size = 64;
  int answer_vocab = 16;
  int max_span_len = 8;
  int marker_count = 2;
  int evidence_per_class = 1;
};

// English corpus for one task. Classification: each class owns a block of
// evidence_per_class keyword ids right after the reserved range; an
// instance carries marker_count keyword tokens drawn from its class block
// at random positions, fillers everywhere else (never from any block).
// The evidence is redundant and distributed, so a lossy translation
// rarely destroys all of it, while reading it at all requires knowing the
// whole keyword vocabulary. Labels are exactly balanced over the corpus.
// Span: a query marker with the answer being a run of answer-block tokens
// right after it; fillers never come from the answer block, so the answer
// segment is well defined.
inline std::vector<TaskInstance> generate_task_corpus(TaskKind kind, int n,
                                                      uint64_t seed,
                                                      const GenOptions& opt = {}) {
  int first = VocabLayout::first_content;
  int V = opt.vocab_size;
  int A = opt.answer_vocab;
  if (kind == TaskKind::classification) {
    if (opt.evidence_per_class < 1)
      throw ContractError("generate_task_corpus: evidence_per_class must be positive");
    if (first + opt.num_classes * opt.evidence_per_class >= V)
      throw ContractError("generate_task_corpus: vocab too small for " +
                          std::to_string(opt.num_classes) + " classes x " +
                          std::to_string(opt.evidence_per_class) + " keywords");
    if (opt.marker_count < 1 || opt.marker_count > opt.seq_len)
      throw ContractError("generate_task_corpus: marker_count " +
                          std::to_string(opt.marker_count) +
                          " out of range for seq_len " +
                          std::to_string(opt.seq_len));
  } else {
    if (V - A <= first)
      throw ContractError("generate_task_corpus: vocab too small for answer block");
    if (opt.seq_len < 2)
      throw ContractError("generate_task_corpus: span task needs seq_len >= 2");
  }
  uint64_t base = derive_seed(seed, "corpus");
  std::vector<TaskInstance> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(base, static_cast<uint64_t>(i)));
    TaskInstance inst;
    inst.id = i;
    inst.language = "en";
    inst.tokens.resize(opt.seq_len);
    if (kind == TaskKind::classification) {
      int filler_lo = first + opt.num_classes * opt.evidence_per_class;
      for (auto& t : inst.tokens) t = filler_lo + rng.below(V - filler_lo);
      inst.label = i % opt.num_classes;
      int own_lo = first + inst.label * opt.evidence_per_class;
      std::vector<int> positions(opt.seq_len);
      std::iota(positions.begin(), positions.end(), 0);
      rng.shuffle(positions);
      for (int k = 0; k < opt.marker_count; ++k)
        inst.tokens[positions[k]] = own_lo + rng.below(opt.evidence_per_class);
    } else {
      int filler_hi = V - A;
      for (auto& t : inst.tokens) t = first + rng.below(filler_hi - first);
      int p = rng.below(opt.seq_len - 1);
      int max_len = std::min(opt.max_span_len, opt.seq_len - 1 - p);
      int len = 1 + rng.below(max_len);
      inst.tokens[p] = VocabLayout::query_marker;
      for (int k = 0; k < len; ++k)
        inst.tokens[p + 1 + k] = filler_hi + rng.below(A);
      inst.span = {p + 1, p + len};
    }
    out.push_back(std::move(inst));
  }
  return out;
}

struct ParallelPair {
  TaskInstance source;  // English side
  TaskInstance target;  // cipher side
  std::string provenance;  // "train": gold source, translated target
                           // "eval": gold target, back-translated source
};

struct SplitSizes {
  int train = 2000;
  int val = 300;
  int test = 500;
};

inline SplitSizes default_split_sizes(TaskKind kind) {
  return kind == TaskKind::classification ? SplitSizes{2000, 300, 500}
                                          : SplitSizes{1500, 200, 400};
}

struct ParallelSplits {
  std::vector<ParallelPair> train, val, test;
  // Gold English views of the same instances, same order.
  std::vector<TaskInstance> en_train, en_val, en_test;
};

// Train pairs pair the gold English instance with a quality-limited
// translation into the target language. Eval pairs hold the gold target
// (perfect translation) and a quality-limited back-translation into
// English, mimicking translate-test at inference time.
inline ParallelSplits make_parallel_splits(const std::vector<TaskInstance>& corpus,
                                           const CipherLanguage& lang,
                                           double train_quality,
                                           double eval_quality,
                                           const SplitSizes& sizes,
                                           uint64_t seed) {
  long total = static_cast<long>(sizes.train) + sizes.val + sizes.test;
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0 ||
      total > static_cast<long>(corpus.size()))
    throw ContractError("make_parallel_splits: split sizes " +
                        std::to_string(sizes.train) + "/" +
                        std::to_string(sizes.val) + "/" +
                        std::to_string(sizes.test) + " do not fit corpus of " +
                        std::to_string(corpus.size()));
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(order);

  uint64_t t2t = derive_seed(seed, "mt-to-target");
  uint64_t gold = derive_seed(seed, "gold-target");
  uint64_t t2e = derive_seed(seed, "mt-to-english");

  ParallelSplits out;
  long cursor = 0;
  auto take = [&](int count, std::vector<ParallelPair>& pairs,
                  std::vector<TaskInstance>& en, bool is_train) {
    for (int k = 0; k < count; ++k, ++cursor) {
      const TaskInstance& inst = corpus[order[cursor]];
      en.push_back(inst);
      ParallelPair pair;
      if (is_train) {
        pair.source = inst;
        pair.target = apply_cipher(lang, inst, Direction::to_target,
                                   train_quality,
                                   derive_seed(t2t, (uint64_t)inst.id));
        pair.provenance = "train";
      } else {
        pair.target = apply_cipher(lang, inst, Direction::to_target, 1.0,
                                   derive_seed(gold, (uint64_t)inst.id));
        pair.source = apply_cipher(lang, pair.target, Direction::to_english,
                                   eval_quality,
                                   derive_seed(t2e, (uint64_t)inst.id));
        pair.provenance = "eval";
      }
      pairs.push_back(std::move(pair));
    }
  };
  take(sizes.train, out.train, out.en_train, true);
  take(sizes.val, out.val, out.en_val, false);
  take(sizes.test, out.test, out.en_test, false);
  return out;
}

// k pairs, stratified by label for classification data (class counts differ
// by at most one); order-shuffled but deterministic in the seed.
inline std::vector<ParallelPair> low_resource_subsample(
    const std::vector<ParallelPair>& pairs, int k, uint64_t seed) {
  if (k < 0 || k > static_cast<int>(pairs.size()))
    throw ContractError("low_resource_subsample: k=" + std::to_string(k) +
                        " out of range for " + std::to_string(pairs.size()) +
                        " pairs");
  Rng rng(derive_seed(seed, "low-resource"));
  bool labeled = !pairs.empty() && pairs[0].target.label >= 0;
  std::vector<ParallelPair> out;
  out.reserve(k);
  if (!labeled) {
    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int i = 0; i < k; ++i) out.push_back(pairs[order[i]]);
    return out;
  }
  int num_classes = 0;
  for (const auto& p : pairs)
    num_classes = std::max(num_classes, p.target.label + 1);
  std::vector<std::vector<int>> byclass(num_classes);
  for (size_t i = 0; i < pairs.size(); ++i)
    byclass[pairs[i].target.label].push_back(static_cast<int>(i));
  for (auto& v : byclass) rng.shuffle(v);
  std::vector<size_t> cursor(num_classes, 0);
  int c = 0;
  while (static_cast<int>(out.size()) < k) {
    bool progressed = false;
    for (int step = 0; step < num_classes && static_cast<int>(out.size()) < k;
         ++step) {
      int cls = (c + step) % num_classes;
      if (cursor[cls] < byclass[cls].size()) {
        out.push_back(pairs[byclass[cls][cursor[cls]++]]);
        progressed = true;
      }
    }
    c = (c + 1) % num_classes;
    if (!progressed) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence. First line is a header with a schema version.

inline nlohmann::json instance_to_json(const TaskInstance& t) {
  nlohmann::json j;
  j["id"] = t.id;
  j["tokens"] = t.tokens;
  j["language"] = t.language;
  if (t.label >= 0) j["label"] = t.label;
  if (t.span.start >= 0) {
    j["span"] = {t.span.start, t.span.end};
    j["span_valid"] = t.span_valid;
  }
  return j;
}

inline TaskInstance instance_from_json(const nlohmann::json& j) {
  TaskInstance t;
  t.id = j.at("id").get<int>();
  t.tokens = j.at("tokens").get<std::vector<int>>();
  t.language = j.at("language").get<std::string>();
  t.label = j.value("label", -1);
  if (j.contains("span")) {
    auto s = j.at("span");
    t.span = {s.at(0).get<int>(), s.at(1).get<int>()};
    t.span_valid = j.value("span_valid", true);
  }
  return t;
}

inline void write_jsonl_header(std::ofstream& out, const std::string& record) {
  nlohmann::json h;
  h["schema_version"] = 1;
  h["record"] = record;
  out << h.dump() << "\n";
}

inline nlohmann::json read_jsonl_header(std::ifstream& in,
                                        const std::string& path,
                                        const std::string& record) {
  std::string line;
  if (!std::getline(in, line))
    throw ContractError("'" + path + "': empty data file");
  nlohmann::json h = nlohmann::json::parse(line, nullptr, false);
  if (h.is_discarded() || h.value("schema_version", -1) != 1 ||
      h.value("record", "") != record)
    throw ContractError("'" + path + "': missing or wrong schema header");
  return h;
}

inline void save_instances_jsonl(const std::string& path,
                                 const std::vector<TaskInstance>& items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot write '" + path + "'");
  write_jsonl_header(out, "task_instance");
  for (const auto& t : items) out << instance_to_json(t).dump() << "\n";
}

inline std::vector<TaskInstance> load_instances_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read '" + path + "'");
  read_jsonl_header(in, path, "task_instance");
  std::vector<TaskInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(instance_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline void save_pairs_jsonl(const std::string& path,
                             const std::vector<ParallelPair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot write '" + path + "'");
  write_jsonl_header(out, "parallel_pair");
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["source"] = instance_to_json(p.source);
    j["target"] = instance_to_json(p.target);
    j["provenance"] = p.provenance;
    out << j.dump() << "\n";
  }
}

inline std::vector<ParallelPair> load_pairs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read '" + path + "'");
  read_jsonl_header(in, path, "parallel_pair");
  std::vector<ParallelPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ParallelPair p;
    p.source = instance_from_json(j.at("source"));
    p.target = instance_from_json(j.at("target"));
    p.provenance = j.at("provenance").get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace flare
