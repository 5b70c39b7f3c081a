#include "rnng/eval.hpp"

#include <map>
#include <tuple>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

using Span = std::tuple<std::string, int, int>;  // label, start, end

int collect_spans(const Tree& t, int start, std::map<Span, int>& spans) {
  if (t.terminal) return start + 1;
  int end = start;
  for (const Tree& c : t.children) end = collect_spans(c, end, spans);
  ++spans[{t.symbol, start, end}];
  return end;
}

void count_pair(const Tree& predicted, const Tree& gold, F1Score& acc) {
  if (leaves(predicted) != leaves(gold))
    throw DataError("bracket_f1: terminal yields differ");
  std::map<Span, int> pred, ref;
  collect_spans(predicted, 0, pred);
  collect_spans(gold, 0, ref);
  for (const auto& [span, n] : pred) {
    acc.predicted += n;
    auto it = ref.find(span);
    if (it != ref.end()) acc.matched += std::min(n, it->second);
  }
  for (const auto& [span, n] : ref) acc.gold += n;
}

void finalize(F1Score& s) {
  s.precision = s.predicted > 0 ? 100.0 * s.matched / s.predicted : 0.0;
  s.recall = s.gold > 0 ? 100.0 * s.matched / s.gold : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
}

}  // namespace

F1Score bracket_f1(const Tree& predicted, const Tree& gold) {
  F1Score s;
  count_pair(predicted, gold, s);
  finalize(s);
  return s;
}

F1Score bracket_f1(const std::vector<Tree>& predicted, const std::vector<Tree>& gold) {
  if (predicted.size() != gold.size()) throw DataError("bracket_f1: corpus sizes differ");
  F1Score s;
  for (size_t i = 0; i < predicted.size(); ++i) count_pair(predicted[i], gold[i], s);
  finalize(s);
  return s;
}

namespace {

void substitute(const Tree& t, const std::vector<std::string>& tokens, size_t& next, Tree& out) {
  if (t.terminal) {
    if (next >= tokens.size()) throw DataError("substitute_leaves: too few tokens");
    out = Tree{tokens[next++], true, {}};
    return;
  }
  out.symbol = t.symbol;
  out.terminal = false;
  out.children.resize(t.children.size());
  for (size_t i = 0; i < t.children.size(); ++i)
    substitute(t.children[i], tokens, next, out.children[i]);
}

}  // namespace

Tree substitute_leaves(const Tree& t, const std::vector<std::string>& tokens) {
  Tree out;
  size_t next = 0;
  substitute(t, tokens, next, out);
  if (next != tokens.size()) throw DataError("substitute_leaves: token count mismatch");
  return out;
}

}  // namespace rnng
