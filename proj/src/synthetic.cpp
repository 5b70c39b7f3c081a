#include "rnng/synthetic.hpp"

#include <functional>

namespace rnng {

namespace {

Tree gen_node(std::mt19937_64& rng, const TreeGenConfig& cfg, int depth, int* tokens_left) {
  std::uniform_int_distribution<int> nt_pick(0, cfg.num_nts - 1);
  std::uniform_int_distribution<int> word_pick(0, cfg.num_words - 1);
  std::uniform_int_distribution<int> nchildren(1, cfg.max_children);
  Tree t;
  t.symbol = cfg.nt_prefix + std::to_string(nt_pick(rng));
  int n = nchildren(rng);
  for (int i = 0; i < n; ++i) {
    if (*tokens_left <= 0 && !t.children.empty()) break;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Terminal probability rises with depth so trees stay bounded.
    double p_term = depth >= cfg.max_depth - 1 ? 1.0 : 0.4 + 0.1 * depth;
    if (*tokens_left <= 0 || u(rng) < p_term) {
      t.children.push_back({cfg.word_prefix + std::to_string(word_pick(rng)), true, {}});
      --*tokens_left;
    } else {
      t.children.push_back(gen_node(rng, cfg, depth + 1, tokens_left));
    }
  }
  return t;
}

}  // namespace

Tree random_tree(std::mt19937_64& rng, const TreeGenConfig& cfg) {
  std::uniform_int_distribution<int> len(cfg.min_tokens, cfg.max_tokens);
  int budget = len(rng);
  Tree t = gen_node(rng, cfg, 1, &budget);
  return t;
}

std::vector<Tree> random_treebank(size_t n, uint64_t seed, const TreeGenConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::vector<Tree> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(random_tree(rng, cfg));
  return out;
}

}  // namespace rnng
