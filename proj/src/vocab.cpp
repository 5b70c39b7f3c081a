#include "rnng/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

const char* kUnkBase = "UNK";

bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)); }
bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)); }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

std::string lowercase(const std::string& w) {
  std::string out = w;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Longest-first suffix classes.
const std::vector<std::string> kSuffixes = {"ing", "ion", "est", "ity", "ed", "er",
                                            "ly",  "al",  "s",   "y"};

}  // namespace

std::string unk_signature(const std::string& word, bool sentence_initial,
                          const std::function<bool(const std::string&)>& lowercase_known) {
  std::string sig = kUnkBase;
  bool has_upper = false, all_upper = true, has_dig = false, has_dash = false, has_alpha = false;
  for (char c : word) {
    if (is_upper(c)) has_upper = true;
    if (is_lower(c)) all_upper = false;
    if (std::isalpha(static_cast<unsigned char>(c))) has_alpha = true;
    if (is_digit(c)) has_dig = true;
    if (c == '-') has_dash = true;
  }
  if (has_alpha && all_upper && has_upper && word.size() > 1) {
    sig += "-ALLCAPS";
  } else if (!word.empty() && is_upper(word[0])) {
    // The initial-caps feature is suppressed sentence-initially.
    if (!sentence_initial) sig += "-CAP";
  } else if (!word.empty() && is_lower(word[0])) {
    sig += "-LC";
  }
  if (has_dig) sig += "-DIG";
  if (has_dash) sig += "-DASH";
  if (lowercase_known && lowercase_known(lowercase(word))) sig += "-KNOWN";
  std::string low = lowercase(word);
  size_t best = 0;
  std::string best_suffix;
  for (const std::string& suf : kSuffixes) {
    if (suf.size() > best && low.size() > suf.size() + 1 &&
        low.compare(low.size() - suf.size(), suf.size(), suf) == 0) {
      best = suf.size();
      best_suffix = suf;
    }
  }
  if (!best_suffix.empty()) sig += "-" + best_suffix;
  return sig;
}

void Vocab::index() {
  word_id_.clear();
  nt_id_.clear();
  for (size_t i = 0; i < words_.size(); ++i) word_id_[words_[i]] = static_cast<int32_t>(i);
  for (size_t i = 0; i < nts_.size(); ++i) nt_id_[nts_[i]] = static_cast<int32_t>(i);
  auto it = word_id_.find(kUnkBase);
  unk_id_ = it == word_id_.end() ? -1 : it->second;
}

Vocab Vocab::build(const std::vector<Tree>& corpus, size_t limit) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, int64_t> word_counts;
  std::map<std::string, int64_t> nt_counts;
  std::function<void(const Tree&)> walk = [&](const Tree& t) {
    if (t.terminal) {
      ++word_counts[t.symbol];
      return;
    }
    ++nt_counts[t.symbol];
    for (const Tree& c : t.children) walk(c);
  };
  for (const Tree& t : corpus) walk(t);

  // Rank by (-count, lexicographic); keep the top `limit` types.
  std::vector<std::pair<std::string, int64_t>> ranked(word_counts.begin(), word_counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > limit) ranked.resize(limit);

  Vocab v;
  std::map<std::string, int64_t> kept(ranked.begin(), ranked.end());
  auto known = [&](const std::string& w) { return kept.count(w) > 0; };

  // OOV tokens map to signatures; count their occurrences too.
  std::map<std::string, int64_t> sig_counts;
  std::function<void(const Tree&, bool&)> walk_oov = [&](const Tree& t, bool& initial) {
    if (t.terminal) {
      if (!kept.count(t.symbol)) ++sig_counts[unk_signature(t.symbol, initial, known)];
      initial = false;
      return;
    }
    for (const Tree& c : t.children) walk_oov(c, initial);
  };
  for (const Tree& t : corpus) {
    bool initial = true;
    walk_oov(t, initial);
  }
  sig_counts.emplace(kUnkBase, 0);

  for (const auto& [w, c] : ranked) {
    v.words_.push_back(w);
    v.counts_.push_back(c);
  }
  for (const auto& [s, c] : sig_counts) {
    if (kept.count(s)) continue;
    v.words_.push_back(s);
    v.counts_.push_back(c);
  }
  for (const auto& [label, c] : nt_counts) {
    (void)c;
    v.nts_.push_back(label);
  }
  v.index();
  return v;
}

Vocab Vocab::from_units(const std::vector<std::pair<std::string, int64_t>>& units,
                        const std::vector<Tree>& corpus_for_nts) {
  Vocab v;
  for (const auto& [u, c] : units) {
    v.words_.push_back(u);
    v.counts_.push_back(c);
  }
  if (std::find(v.words_.begin(), v.words_.end(), kUnkBase) == v.words_.end()) {
    v.words_.push_back(kUnkBase);
    v.counts_.push_back(0);
  }
  std::map<std::string, int64_t> nt_counts;
  std::function<void(const Tree&)> walk = [&](const Tree& t) {
    if (t.terminal) return;
    ++nt_counts[t.symbol];
    for (const Tree& c : t.children) walk(c);
  };
  for (const Tree& t : corpus_for_nts) walk(t);
  for (const auto& [label, c] : nt_counts) {
    (void)c;
    v.nts_.push_back(label);
  }
  v.index();
  return v;
}

int32_t Vocab::word_id(const std::string& w) const {
  auto it = word_id_.find(w);
  return it == word_id_.end() ? -1 : it->second;
}

int32_t Vocab::nt_id(const std::string& label) const {
  auto it = nt_id_.find(label);
  return it == nt_id_.end() ? -1 : it->second;
}

int32_t Vocab::lookup(const std::string& w, bool sentence_initial) const {
  int32_t id = word_id(w);
  if (id >= 0) return id;
  auto known = [this](const std::string& lw) { return word_id_.count(lw) > 0; };
  id = word_id(unk_signature(w, sentence_initial, known));
  if (id >= 0) return id;
  return unk_id_;
}

int32_t Vocab::lookup_nt(const std::string& label) const {
  int32_t id = nt_id(label);
  if (id < 0) throw DataError("vocab: unknown nonterminal '" + label + "'");
  return id;
}

void Vocab::save(const std::string& words_path, const std::string& nts_path) const {
  std::ofstream wf(words_path);
  if (!wf) throw DataError("vocab: cannot write " + words_path);
  for (size_t i = 0; i < words_.size(); ++i)
    wf << i << '\t' << words_[i] << '\t' << counts_[i] << '\n';
  std::ofstream nf(nts_path);
  if (!nf) throw DataError("vocab: cannot write " + nts_path);
  for (size_t i = 0; i < nts_.size(); ++i) nf << i << '\t' << nts_[i] << '\t' << 0 << '\n';
}

Vocab Vocab::load(const std::string& words_path, const std::string& nts_path) {
  auto read = [](const std::string& path, std::vector<std::string>& syms,
                 std::vector<int64_t>* counts) {
    std::ifstream f(path);
    if (!f) throw DataError("vocab: cannot read " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream is(line);
      size_t id;
      std::string sym;
      int64_t count;
      if (!(is >> id) || !(is >> sym) || !(is >> count) || id != syms.size())
        throw DataError("vocab: malformed line " + std::to_string(lineno) + " in " + path);
      syms.push_back(sym);
      if (counts) counts->push_back(count);
    }
  };
  Vocab v;
  read(words_path, v.words_, &v.counts_);
  read(nts_path, v.nts_, nullptr);
  v.index();
  return v;
}

uint64_t fnv1a(const std::string& data) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t Vocab::digest() const {
  std::string blob;
  for (size_t i = 0; i < words_.size(); ++i)
    blob += words_[i] + "\t" + std::to_string(counts_[i]) + "\n";
  blob += "#\n";
  for (const std::string& n : nts_) blob += n + "\n";
  return fnv1a(blob);
}

ActionSeq Vocab::encode_oracle(const Tree& t) const {
  ActionSeq out;
  bool initial = true;
  for (const StringAction& a : oracle_actions(t)) {
    switch (a.kind) {
      case Action::Kind::NT:
        out.push_back(Action::nt(lookup_nt(a.symbol)));
        break;
      case Action::Kind::GEN:
        out.push_back(Action::gen(lookup(a.symbol, initial)));
        initial = false;
        break;
      case Action::Kind::REDUCE:
        out.push_back(Action::reduce());
        break;
      case Action::Kind::PAD:
        break;
    }
  }
  return out;
}

std::vector<int32_t> Vocab::encode_tokens(const std::vector<std::string>& tokens) const {
  std::vector<int32_t> ids;
  ids.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) ids.push_back(lookup(tokens[i], i == 0));
  return ids;
}

std::vector<Tree> load_treebank(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("treebank: cannot read " + path);
  std::vector<Tree> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    bool blank = line.find_first_not_of(" \t\r\n") == std::string::npos;
    if (blank) continue;
    try {
      out.push_back(parse_tree(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError("treebank: no trees in " + path);
  return out;
}

}  // namespace rnng
