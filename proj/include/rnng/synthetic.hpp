// Deterministic random treebank generation for benchmarks and fixtures.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "rnng/tree.hpp"

namespace rnng {

struct TreeGenConfig {
  int num_nts = 5;
  int num_words = 50;
  int max_depth = 8;
  int max_children = 3;
  int min_tokens = 1;
  int max_tokens = 12;
  std::string nt_prefix = "X";
  std::string word_prefix = "w";
};

// One random tree; depth bounded, every nonterminal nonempty.
Tree random_tree(std::mt19937_64& rng, const TreeGenConfig& cfg);

std::vector<Tree> random_treebank(size_t n, uint64_t seed, const TreeGenConfig& cfg);

}  // namespace rnng
