// Word and nonterminal vocabularies, frequency cutoff with deterministic
// tie-breaking, and the unknown-word signature rule.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnng/tree.hpp"

namespace rnng {

// Deterministic surface-feature signature for out-of-vocabulary words.
// Frozen rule set: case marker (-ALLCAPS, -CAP mid-sentence only, -LC),
// -DIG, -DASH, -KNOWN (lowercased form in vocab), and the longest matching
// suffix among {-s,-ed,-ing,-ion,-er,-est,-ly,-ity,-y,-al}. Base symbol "UNK".
std::string unk_signature(const std::string& word, bool sentence_initial,
                          const std::function<bool(const std::string&)>& lowercase_known);

class Vocab {
 public:
  // Most frequent `limit` word types kept, ties broken lexicographically;
  // all nonterminal labels kept; OOV training tokens counted under their
  // signatures. "UNK" is always present.
  static Vocab build(const std::vector<Tree>& corpus, size_t limit = 50000);
  // Vocabulary over an explicit token inventory (subword mode).
  static Vocab from_units(const std::vector<std::pair<std::string, int64_t>>& units,
                          const std::vector<Tree>& corpus_for_nts);

  int32_t word_id(const std::string& w) const;  // -1 when absent
  int32_t nt_id(const std::string& label) const;
  // In-vocabulary id after unkification; total.
  int32_t lookup(const std::string& w, bool sentence_initial) const;
  int32_t lookup_nt(const std::string& label) const;

  const std::string& word(int32_t id) const { return words_.at(static_cast<size_t>(id)); }
  const std::string& nt(int32_t id) const { return nts_.at(static_cast<size_t>(id)); }
  int64_t word_count(int32_t id) const { return counts_.at(static_cast<size_t>(id)); }

  size_t num_words() const { return words_.size(); }
  size_t num_nts() const { return nts_.size(); }
  int32_t unk_id() const { return unk_id_; }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& nts() const { return nts_; }

  // One entry per line: id<TAB>symbol<TAB>count.
  void save(const std::string& words_path, const std::string& nts_path) const;
  static Vocab load(const std::string& words_path, const std::string& nts_path);

  // FNV-1a over the serialized word entries; stored in checkpoints.
  uint64_t digest() const;

  // Encodes a tree's oracle: NT/GEN symbols resolved to ids, with
  // sentence-initial unkification on the first terminal.
  ActionSeq encode_oracle(const Tree& t) const;
  std::vector<int32_t> encode_tokens(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> words_;
  std::vector<int64_t> counts_;
  std::vector<std::string> nts_;
  std::unordered_map<std::string, int32_t> word_id_;
  std::unordered_map<std::string, int32_t> nt_id_;
  int32_t unk_id_ = -1;

  void index();
};

// Treebank file: UTF-8, one bracketed tree per line.
std::vector<Tree> load_treebank(const std::string& path);

uint64_t fnv1a(const std::string& data);

}  // namespace rnng
