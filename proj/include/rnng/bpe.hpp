// Byte-pair-encoding subword units, trained natively for determinism.
// Word-initial units carry a "▁" marker prefix so segmentation is lossless;
// trees are segmented in place: each terminal becomes its subword sequence
// under the same parent, no new constituents.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rnng/tree.hpp"

namespace rnng {

inline const std::string kWordInitMarker = "▁";  // ▁

class Merges {
 public:
  // Greedy highest-frequency pair merges until the unit inventory reaches
  // target_units; ties broken by lexicographically smallest pair. Errors if
  // target_units is below the corpus alphabet size.
  static Merges train(const std::vector<std::string>& words, size_t target_units);
  static Merges train_on_trees(const std::vector<Tree>& corpus, size_t target_units);

  // Replays merges in order. Concatenating the output (marker stripped)
  // reproduces the word.
  std::vector<std::string> apply(const std::string& word) const;

  // Distinct unit inventory: alphabet plus merge outputs.
  std::vector<std::string> unit_inventory() const;

  size_t size() const { return pairs_.size(); }
  const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

  // One merge pair per line, in application order.
  void save(const std::string& path) const;
  static Merges load(const std::string& path);

  uint64_t digest() const;

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::vector<std::string> alphabet_;
};

// Splits a UTF-8 string into code points.
std::vector<std::string> utf8_chars(const std::string& s);

// Replaces each terminal with its subword units in place (tree skeleton
// unchanged); unsegment_tree merges them back.
Tree segment_tree(const Tree& t, const Merges& m);
Tree unsegment_tree(const Tree& t);

std::vector<std::string> segment_tokens(const std::vector<std::string>& tokens, const Merges& m);
std::vector<std::string> unsegment_tokens(const std::vector<std::string>& units);

// Unit counts over a segmented corpus, for building the subword vocabulary.
std::vector<std::pair<std::string, int64_t>> unit_counts(const std::vector<Tree>& corpus,
                                                         const Merges& m);

}  // namespace rnng
