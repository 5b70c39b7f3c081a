#include "rnng/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "rnng/errors.hpp"
#include "rnng/vocab.hpp"

namespace rnng {

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80) == 0x00) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;  // tolerate malformed tails
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms = utf8_chars(word);
  if (!syms.empty()) syms[0] = kWordInitMarker + syms[0];
  return syms;
}

void merge_in_place(std::vector<std::string>& syms, const std::string& a, const std::string& b) {
  size_t w = 0;
  for (size_t r = 0; r < syms.size();) {
    if (r + 1 < syms.size() && syms[r] == a && syms[r + 1] == b) {
      syms[w++] = a + b;
      r += 2;
    } else {
      if (w != r) syms[w] = std::move(syms[r]);
      ++w;
      ++r;
    }
  }
  syms.resize(w);
}

void collect_words(const Tree& t, std::vector<std::string>& out) {
  if (t.terminal) {
    out.push_back(t.symbol);
    return;
  }
  for (const Tree& c : t.children) collect_words(c, out);
}

}  // namespace

Merges Merges::train(const std::vector<std::string>& words, size_t target_units) {
  if (words.empty()) throw DataError("bpe_train: empty corpus");
  std::map<std::vector<std::string>, int64_t> word_freq;
  for (const std::string& w : words) {
    if (w.empty()) continue;
    ++word_freq[word_symbols(w)];
  }

  Merges m;
  std::set<std::string> inventory;
  for (const auto& [syms, f] : word_freq) {
    (void)f;
    for (const std::string& s : syms) inventory.insert(s);
  }
  m.alphabet_.assign(inventory.begin(), inventory.end());
  if (target_units < inventory.size())
    throw ConfigError("bpe_train: target " + std::to_string(target_units) +
                      " below alphabet size " + std::to_string(inventory.size()));

  std::vector<std::pair<std::vector<std::string>, int64_t>> work(word_freq.begin(),
                                                                 word_freq.end());
  while (inventory.size() < target_units) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& [syms, f] : work)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_counts[{syms[i], syms[i + 1]}] += f;
    if (pair_counts.empty()) break;
    // Highest count wins; std::map order gives the lexicographic tie-break.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [a, b] = best->first;
    m.pairs_.emplace_back(a, b);
    inventory.insert(a + b);
    for (auto& [syms, f] : work) {
      (void)f;
      merge_in_place(syms, a, b);
    }
  }
  return m;
}

Merges Merges::train_on_trees(const std::vector<Tree>& corpus, size_t target_units) {
  std::vector<std::string> words;
  for (const Tree& t : corpus) collect_words(t, words);
  return train(words, target_units);
}

std::vector<std::string> Merges::apply(const std::string& word) const {
  std::vector<std::string> syms = word_symbols(word);
  for (const auto& [a, b] : pairs_) merge_in_place(syms, a, b);
  return syms;
}

std::vector<std::string> Merges::unit_inventory() const {
  std::set<std::string> inv(alphabet_.begin(), alphabet_.end());
  for (const auto& [a, b] : pairs_) inv.insert(a + b);
  return {inv.begin(), inv.end()};
}

void Merges::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("merges: cannot write " + path);
  for (const auto& [a, b] : pairs_) f << a << ' ' << b << '\n';
}

Merges Merges::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("merges: cannot read " + path);
  Merges m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string a, b;
    if (!(is >> a >> b)) throw DataError("merges: malformed line " + std::to_string(lineno));
    m.pairs_.emplace_back(a, b);
  }
  return m;
}

uint64_t Merges::digest() const {
  std::string blob;
  for (const auto& [a, b] : pairs_) blob += a + " " + b + "\n";
  return fnv1a(blob);
}

Tree segment_tree(const Tree& t, const Merges& m) {
  if (t.terminal) throw DataError("segment_tree: cannot segment a bare terminal");
  Tree out;
  out.symbol = t.symbol;
  for (const Tree& c : t.children) {
    if (c.terminal) {
      for (const std::string& unit : m.apply(c.symbol)) out.children.push_back({unit, true, {}});
    } else {
      out.children.push_back(segment_tree(c, m));
    }
  }
  return out;
}

Tree unsegment_tree(const Tree& t) {
  if (t.terminal) return t;
  Tree out;
  out.symbol = t.symbol;
  size_t i = 0;
  while (i < t.children.size()) {
    const Tree& c = t.children[i];
    if (!c.terminal) {
      out.children.push_back(unsegment_tree(c));
      ++i;
      continue;
    }
    // A token starts at a marker-prefixed unit and spans until the next one.
    std::string word = c.symbol;
    size_t j = i + 1;
    while (j < t.children.size() && t.children[j].terminal &&
           t.children[j].symbol.compare(0, kWordInitMarker.size(), kWordInitMarker) != 0) {
      word += t.children[j].symbol;
      ++j;
    }
    if (word.compare(0, kWordInitMarker.size(), kWordInitMarker) == 0)
      word = word.substr(kWordInitMarker.size());
    out.children.push_back({word, true, {}});
    i = j;
  }
  return out;
}

std::vector<std::string> segment_tokens(const std::vector<std::string>& tokens, const Merges& m) {
  std::vector<std::string> out;
  for (const std::string& t : tokens)
    for (const std::string& unit : m.apply(t)) out.push_back(unit);
  return out;
}

std::vector<std::string> unsegment_tokens(const std::vector<std::string>& units) {
  std::vector<std::string> out;
  for (const std::string& u : units) {
    if (u.compare(0, kWordInitMarker.size(), kWordInitMarker) == 0 || out.empty())
      out.push_back(u.compare(0, kWordInitMarker.size(), kWordInitMarker) == 0
                        ? u.substr(kWordInitMarker.size())
                        : u);
    else
      out.back() += u;
  }
  return out;
}

std::vector<std::pair<std::string, int64_t>> unit_counts(const std::vector<Tree>& corpus,
                                                         const Merges& m) {
  std::map<std::string, int64_t> counts;
  std::vector<std::string> words;
  for (const Tree& t : corpus) collect_words(t, words);
  for (const std::string& w : words)
    for (const std::string& u : m.apply(w)) ++counts[u];
  // Every inventory unit gets an id even if unseen after later merges.
  for (const std::string& u : m.unit_inventory()) counts.emplace(u, 0);
  return {counts.begin(), counts.end()};
}

}  // namespace rnng
