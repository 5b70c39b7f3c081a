// Labeled bracket scoring over (label, start, end) spans; root included,
// terminal tokens are not brackets.

#pragma once

#include "rnng/tree.hpp"

namespace rnng {

struct F1Score {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  int matched = 0;
  int predicted = 0;
  int gold = 0;
};

// Requires identical terminal yields (compare after subword reassembly).
F1Score bracket_f1(const Tree& predicted, const Tree& gold);

// Aggregate over a corpus: micro-averaged counts.
F1Score bracket_f1(const std::vector<Tree>& predicted, const std::vector<Tree>& gold);

// Replaces terminals in surface order; used to restore original tokens in
// parser output after unkification.
Tree substitute_leaves(const Tree& t, const std::vector<std::string>& tokens);

}  // namespace rnng
