#include "rnng/tree.hpp"

#include <cctype>
#include <sstream>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

struct Parser {
  const std::string& s;
  size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  std::string token() {
    size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '(' &&
           s[pos] != ')')
      ++pos;
    if (pos == start) throw DataError("parse_tree: expected symbol at offset " + std::to_string(pos));
    return s.substr(start, pos - start);
  }

  Tree node() {
    skip_ws();
    if (pos >= s.size() || s[pos] != '(') throw DataError("parse_tree: expected '('");
    ++pos;
    skip_ws();
    Tree t;
    t.symbol = token();
    while (true) {
      skip_ws();
      if (pos >= s.size()) throw DataError("parse_tree: unbalanced parentheses");
      if (s[pos] == ')') {
        ++pos;
        break;
      }
      if (s[pos] == '(') {
        t.children.push_back(node());
      } else {
        Tree leaf;
        leaf.symbol = token();
        leaf.terminal = true;
        t.children.push_back(std::move(leaf));
      }
    }
    if (t.children.empty()) throw DataError("parse_tree: nonterminal '" + t.symbol + "' has no children");
    return t;
  }
};

void serialize_into(const Tree& t, std::string& out) {
  if (t.terminal) {
    out += t.symbol;
    return;
  }
  out += '(';
  out += t.symbol;
  for (const Tree& c : t.children) {
    out += ' ';
    serialize_into(c, out);
  }
  out += ')';
}

void leaves_into(const Tree& t, std::vector<std::string>& out) {
  if (t.terminal) {
    out.push_back(t.symbol);
    return;
  }
  for (const Tree& c : t.children) leaves_into(c, out);
}

void oracle_into(const Tree& t, std::vector<StringAction>& out) {
  if (t.terminal) {
    out.push_back({Action::Kind::GEN, t.symbol});
    return;
  }
  out.push_back({Action::Kind::NT, t.symbol});
  for (const Tree& c : t.children) oracle_into(c, out);
  out.push_back({Action::Kind::REDUCE, ""});
}

}  // namespace

Tree parse_tree(const std::string& line) {
  Parser p{line};
  p.skip_ws();
  if (p.pos >= line.size()) throw DataError("parse_tree: empty input");
  Tree t = p.node();
  p.skip_ws();
  if (p.pos != line.size()) throw DataError("parse_tree: trailing input after tree");
  if (t.terminal) throw DataError("parse_tree: root must be a nonterminal");
  return t;
}

std::string serialize(const Tree& t) {
  std::string out;
  serialize_into(t, out);
  return out;
}

std::vector<std::string> leaves(const Tree& t) {
  std::vector<std::string> out;
  leaves_into(t, out);
  return out;
}

std::vector<StringAction> oracle_actions(const Tree& t) {
  if (t.terminal) throw DataError("oracle_actions: root must be a nonterminal");
  std::vector<StringAction> out;
  oracle_into(t, out);
  return out;
}

Tree replay(const std::vector<StringAction>& actions) {
  std::vector<Tree> stack;
  std::vector<size_t> open;  // indices of open nonterminals on the stack
  for (const StringAction& a : actions) {
    switch (a.kind) {
      case Action::Kind::NT: {
        open.push_back(stack.size());
        stack.push_back(Tree{a.symbol, false, {}});
        break;
      }
      case Action::Kind::GEN:
        stack.push_back(Tree{a.symbol, true, {}});
        break;
      case Action::Kind::REDUCE: {
        if (open.empty()) throw DataError("replay: REDUCE with no open nonterminal");
        size_t at = open.back();
        open.pop_back();
        if (at + 1 >= stack.size()) throw DataError("replay: REDUCE on empty constituent");
        Tree parent = std::move(stack[at]);
        parent.children.assign(std::make_move_iterator(stack.begin() + at + 1),
                               std::make_move_iterator(stack.end()));
        stack.resize(at);
        stack.push_back(std::move(parent));
        break;
      }
      case Action::Kind::PAD:
        break;
    }
  }
  if (stack.size() != 1 || !open.empty()) throw DataError("replay: incomplete action sequence");
  return stack.front();
}

int min_stack_depth(const std::vector<Action::Kind>& kinds) {
  // Simulates the p_h / q pointer updates of a training step.
  int p_h = 0, max_p_h = 0;
  std::vector<int> q;
  for (Action::Kind k : kinds) {
    switch (k) {
      case Action::Kind::NT:
        q.push_back(p_h + 1);
        ++p_h;
        break;
      case Action::Kind::GEN:
        if (q.empty()) throw DataError("min_stack_depth: GEN outside any constituent");
        ++p_h;
        break;
      case Action::Kind::REDUCE: {
        if (q.empty()) throw DataError("min_stack_depth: REDUCE with no open nonterminal");
        int prev_nt = q.back();
        q.pop_back();
        if (prev_nt > p_h || prev_nt < 1)
          throw DataError("min_stack_depth: inconsistent nonterminal position");
        p_h = prev_nt;  // pop to prev_nt - 1, then push the composed node
        break;
      }
      case Action::Kind::PAD:
        break;
    }
    max_p_h = std::max(max_p_h, p_h);
  }
  return max_p_h;
}

int min_stack_depth(const std::vector<StringAction>& actions) {
  std::vector<Action::Kind> kinds;
  kinds.reserve(actions.size());
  for (const auto& a : actions) kinds.push_back(a.kind);
  return min_stack_depth(kinds);
}

int min_stack_depth(const ActionSeq& actions) {
  std::vector<Action::Kind> kinds;
  kinds.reserve(actions.size());
  for (const auto& a : actions) kinds.push_back(a.kind);
  return min_stack_depth(kinds);
}

}  // namespace rnng
