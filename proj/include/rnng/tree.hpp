// Bracketed constituency trees, top-down oracle action sequences, and the
// stack-depth precomputation used to size the batched stack tensors.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rnng {

// A nonterminal node has a label and >=1 child; a terminal has a token and
// no children. The root is always a nonterminal.
struct Tree {
  std::string symbol;  // label for nonterminals, token for terminals
  bool terminal = false;
  std::vector<Tree> children;

  bool operator==(const Tree&) const = default;
};

Tree parse_tree(const std::string& line);
std::string serialize(const Tree& t);

// Yield in surface order.
std::vector<std::string> leaves(const Tree& t);

struct Action {
  enum class Kind : uint8_t { NT, GEN, REDUCE, PAD };
  Kind kind = Kind::PAD;
  int32_t symbol = -1;  // nonterminal id for NT, token id for GEN

  static Action nt(int32_t id) { return {Kind::NT, id}; }
  static Action gen(int32_t id) { return {Kind::GEN, id}; }
  static Action reduce() { return {Kind::REDUCE, -1}; }
  static Action pad() { return {Kind::PAD, -1}; }
  bool operator==(const Action&) const = default;
};

using ActionSeq = std::vector<Action>;

// The scored action inventory has |N|+2 entries; PAD is never scored.
// Layout: 0 = GEN, 1 = REDUCE, 2+i = NT(i).
inline constexpr int32_t kActionGen = 0;
inline constexpr int32_t kActionReduce = 1;
inline int32_t action_index(const Action& a) {
  switch (a.kind) {
    case Action::Kind::GEN: return kActionGen;
    case Action::Kind::REDUCE: return kActionReduce;
    case Action::Kind::NT: return 2 + a.symbol;
    default: return -1;
  }
}

// Symbol-level oracle: NT carries the label, GEN the surface token.
struct StringAction {
  Action::Kind kind;
  std::string symbol;
  bool operator==(const StringAction&) const = default;
};

// Depth-first traversal: NT on entering a nonterminal, GEN per terminal,
// REDUCE on exit. replay() reconstructs the tree.
std::vector<StringAction> oracle_actions(const Tree& t);
Tree replay(const std::vector<StringAction>& actions);

// Maximum value attained by the stack-top pointer when simulating the
// sequence; errors on invalid sequences (REDUCE with no open NT, etc.).
int min_stack_depth(const std::vector<Action::Kind>& kinds);
int min_stack_depth(const std::vector<StringAction>& actions);
int min_stack_depth(const ActionSeq& actions);

}  // namespace rnng
