#include "rnng/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rnng/errors.hpp"

#include <chrono>
namespace rnng {

long g_rounds = 0, g_scored = 0, g_copied = 0, g_applied = 0;
double g_t_score = 0, g_t_succ = 0, g_t_select = 0, g_t_copy = 0, g_t_apply = 0, g_t_rest = 0;
static double pnow() { return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count(); }

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp_scores(const std::vector<double>& xs) {
  double mx = kNegInf;
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return kNegInf;
  double z = 0;
  for (double x : xs) z += std::exp(x - mx);
  return mx + std::log(z);
}

struct ChainNode {
  int32_t parent;
  Action action;
};

struct Successor {
  int fr_pos;      // position in this round's frontier list
  int32_t action;  // action_index layout
  double score;
  int32_t word = -1;  // forced token for GEN successors
};

// Total order: higher score, then lower slot position, then action id. Every
// selection below is defined by this order, so partial selection algorithms
// give the same result as a full sort.
inline bool better(const Successor& a, const Successor& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.fr_pos != b.fr_pos) return a.fr_pos < b.fr_pos;
  return a.action < b.action;
}

// One sentence's search bookkeeping. Cells live in a fixed per-sentence slot
// range of one shared BatchState; a cell never moves once materialized, so
// completion-buffer cells cost nothing while other sentences keep expanding.
struct SentRun {
  enum class Phase { Words, Completing, Done } phase = Phase::Words;
  int len = 0;
  int rounds = 0;
  bool stopped = false;
  bool hit_cap = false;
  std::vector<int64_t> f_slots;  // frontier, in rank order
  std::vector<int64_t> c_slots;  // completion buffer, in admission order
  std::vector<int64_t> free_slots;
  std::vector<double> prefix;
  double best_logp = kNegInf;
  int32_t best_chain = -1;
  bool has_best = false;
};

class BeamRunner {
 public:
  BeamRunner(Model& model, std::vector<std::vector<int32_t>> sentences, const BeamConfig& cfg)
      : model_(model), sentences_(std::move(sentences)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& s : sentences_) {
      if (s.empty()) throw DataError("beam: empty sentence");
      for (int32_t id : s)
        if (id < 0 || id >= model.config().vocab)
          throw DataError("beam: token id out of vocabulary");
    }
  }

  std::vector<BeamResult> run();

 private:
  Model& model_;
  std::vector<std::vector<int32_t>> sentences_;
  BeamConfig cfg_;

  BatchState state_;
  int64_t slots_per_sent_ = 0;
  std::vector<double> score_;   // per slot
  std::vector<int32_t> chain_;  // per slot
  std::vector<SentRun> runs_;
  std::vector<ChainNode> arena_;
  IntMat tokens_;

  int32_t extend_chain(int32_t parent, const Action& a) {
    arena_.push_back({parent, a});
    return static_cast<int32_t>(arena_.size() - 1);
  }

  int sent_of(int64_t slot) const { return static_cast<int>(slot / slots_per_sent_); }
  bool round();
  void boundary(int t);
};

bool BeamRunner::round() {
  const int32_t num_nts = static_cast<int32_t>(model_.config().num_nts);
  const int32_t n_actions = static_cast<int32_t>(model_.config().action_count());

  IndexVec fr;
  for (auto& run : runs_) {
    if (run.phase == SentRun::Phase::Done || run.stopped) continue;
    // Each word gets at most M_w expansion rounds; hitting the cap ends the
    // round, and the boundary errors only if nothing reached the buffer.
    if (run.phase == SentRun::Phase::Words && run.rounds >= cfg_.max_word_actions) {
      run.stopped = true;
      run.hit_cap = true;
      continue;
    }
    for (int64_t s : run.f_slots) fr.push_back(s);
    ++run.rounds;
  }
  if (fr.empty()) return false;
  ++g_rounds;
  g_scored += (long)fr.size();

  double tt0 = pnow();
  std::vector<int32_t> fr_lens(fr.size());
  for (size_t p = 0; p < fr.size(); ++p)
    fr_lens[p] = static_cast<int32_t>(sentences_[static_cast<size_t>(sent_of(fr[p]))].size());
  std::vector<uint8_t> mask = valid_actions_rows(state_, fr, fr_lens, num_nts, cfg_.max_open_nt);

  Tensor mlp_out = model_.mlp(nullptr, model_.top_hidden_rows(nullptr, state_, fr), false);
  Tensor a_logp = log_softmax(nullptr, model_.action_logits(nullptr, mlp_out));

  // Word scores only where GEN is legal, and only for the forced next token.
  IndexVec gen_pos;
  for (size_t p = 0; p < fr.size(); ++p)
    if (mask[p * n_actions + kActionGen]) gen_pos.push_back(static_cast<int64_t>(p));
  std::vector<double> gen_word_logp(fr.size(), kNegInf);
  std::vector<int32_t> gen_word(fr.size(), -1);
  if (!gen_pos.empty()) {
    Tensor w_logp = log_softmax(
        nullptr, model_.word_logits(nullptr, indexed_select(nullptr, mlp_out, gen_pos)));
    IndexVec rows, cols;
    for (size_t g = 0; g < gen_pos.size(); ++g) {
      int64_t slot = fr[static_cast<size_t>(gen_pos[g])];
      const auto& sent = sentences_[static_cast<size_t>(sent_of(slot))];
      int32_t tok = sent[static_cast<size_t>(state_.buf[static_cast<size_t>(slot)])];
      rows.push_back(static_cast<int64_t>(g));
      cols.push_back(tok);
      gen_word[static_cast<size_t>(gen_pos[g])] = tok;
    }
    Tensor picked = indexed_select(nullptr, w_logp, rows, cols);
    for (size_t g = 0; g < gen_pos.size(); ++g)
      gen_word_logp[static_cast<size_t>(gen_pos[g])] = picked.at(static_cast<int64_t>(g));
  }

  g_t_score += pnow() - tt0; tt0 = pnow();
  // Enumerate successors grouped by sentence; fr is per-sentence contiguous.
  std::vector<std::vector<Successor>> succ(runs_.size());
  for (size_t p = 0; p < fr.size(); ++p) {
    int64_t slot = fr[p];
    const uint8_t* mrow = mask.data() + p * n_actions;
    double base = score_[static_cast<size_t>(slot)];
    auto& bucket = succ[static_cast<size_t>(sent_of(slot))];
    for (int32_t a = 0; a < n_actions; ++a) {
      if (!mrow[a]) continue;
      double sc = base + a_logp.at(static_cast<int64_t>(p), a);
      if (a == kActionGen) sc += gen_word_logp[p];
      bucket.push_back({static_cast<int>(p), a, sc, a == kActionGen ? gen_word[p] : -1});
    }
  }

  g_t_succ += pnow() - tt0; tt0 = pnow();
  // Per-sentence pruning; chosen successors fork into fresh slots.
  IndexVec copy_from, copy_to;
  std::vector<Action> step_actions(static_cast<size_t>(state_.batch), Action::pad());
  std::vector<std::pair<size_t, std::vector<int64_t>>> staged_f, staged_c;

  for (size_t s = 0; s < runs_.size(); ++s) {
    SentRun& run = runs_[s];
    if (run.phase == SentRun::Phase::Done || run.stopped || run.f_slots.empty()) continue;

    auto& cand = succ[s];
    // Top-k overall, ordered; cheaper than sorting every candidate.
    size_t topk = std::min<size_t>(cand.size(), static_cast<size_t>(cfg_.k));
    if (topk < cand.size())
      std::nth_element(cand.begin(), cand.begin() + static_cast<ptrdiff_t>(topk), cand.end(),
                       better);
    std::sort(cand.begin(), cand.begin() + static_cast<ptrdiff_t>(topk), better);

    auto materialize = [&](const Successor& sc) {
      if (run.free_slots.empty()) throw NumericError("beam: slot pool exhausted");
      int64_t parent = fr[static_cast<size_t>(sc.fr_pos)];
      int64_t slot = run.free_slots.back();
      run.free_slots.pop_back();
      copy_from.push_back(parent);
      copy_to.push_back(slot);
      Action act;
      if (sc.action == kActionGen) act = Action::gen(sc.word);
      else if (sc.action == kActionReduce) act = Action::reduce();
      else act = Action::nt(sc.action - 2);
      step_actions[static_cast<size_t>(slot)] = act;
      score_[static_cast<size_t>(slot)] = sc.score;
      chain_[static_cast<size_t>(slot)] = extend_chain(chain_[static_cast<size_t>(parent)], act);
      return slot;
    };

    std::vector<int64_t> f_next, c_new;
    if (run.phase == SentRun::Phase::Words) {
      std::vector<size_t> to_f, to_c;
      for (size_t i = 0; i < topk; ++i) {
        if (cand[i].action == kActionGen) to_c.push_back(i);
        else to_f.push_back(i);
      }
      // Fast-track: the best GEN successors beyond the top-k (every GEN
      // inside the top-k was already admitted).
      if (cfg_.ks() > 0 && topk < cand.size()) {
        std::vector<Successor> tail_gens(cand.begin() + static_cast<ptrdiff_t>(topk), cand.end());
        std::erase_if(tail_gens, [](const Successor& sc) { return sc.action != kActionGen; });
        size_t fast_n = std::min<size_t>(tail_gens.size(), static_cast<size_t>(cfg_.ks()));
        if (fast_n < tail_gens.size())
          std::nth_element(tail_gens.begin(), tail_gens.begin() + static_cast<ptrdiff_t>(fast_n),
                           tail_gens.end(), better);
        std::sort(tail_gens.begin(), tail_gens.begin() + static_cast<ptrdiff_t>(fast_n), better);
        tail_gens.resize(fast_n);
        for (const Successor& sc : tail_gens) {
          cand.push_back(sc);
          to_c.push_back(cand.size() - 1);
        }
      }
      for (size_t i : to_f) f_next.push_back(materialize(cand[i]));
      for (size_t i : to_c) c_new.push_back(materialize(cand[i]));
      if (static_cast<int>(run.c_slots.size() + c_new.size()) >= cfg_.k || f_next.empty())
        run.stopped = true;
    } else {  // Completing: REDUCE-only expansion, no pruning
      std::sort(cand.begin(), cand.end(), better);
      for (const Successor& sc : cand)
        if (sc.action == kActionReduce) f_next.push_back(materialize(sc));
      if (f_next.empty()) run.stopped = true;
    }
    staged_f.emplace_back(s, std::move(f_next));
    staged_c.emplace_back(s, std::move(c_new));
  }

  g_t_select += pnow() - tt0; tt0 = pnow();
  if (!copy_to.empty()) {
    g_copied += (long)copy_to.size();
    copy_rows(nullptr, state_, copy_from, copy_to);
    g_t_copy += pnow() - tt0; tt0 = pnow();
    apply_step(nullptr, state_, step_actions, tokens_, model_.hooks(nullptr, false));
    g_t_apply += pnow() - tt0; tt0 = pnow();
  }

  // Expanded sentences retire their old frontier slots.
  for (auto& [s, rows] : staged_f) {
    SentRun& run = runs_[s];
    for (int64_t slot : run.f_slots) run.free_slots.push_back(slot);
    run.f_slots = std::move(rows);
  }
  for (auto& [s, rows] : staged_c)
    runs_[s].c_slots.insert(runs_[s].c_slots.end(), rows.begin(), rows.end());

  tt0 = pnow();
  // Completion phase: harvest finished cells.
  for (auto& run : runs_) {
    if (run.phase != SentRun::Phase::Completing) continue;
    std::vector<int64_t> alive;
    for (int64_t slot : run.f_slots) {
      if (state_.finished[static_cast<size_t>(slot)]) {
        if (!run.has_best || score_[static_cast<size_t>(slot)] > run.best_logp) {
          run.best_logp = score_[static_cast<size_t>(slot)];
          run.best_chain = chain_[static_cast<size_t>(slot)];
          run.has_best = true;
        }
        run.free_slots.push_back(slot);
      } else {
        alive.push_back(slot);
      }
    }
    run.f_slots = std::move(alive);
    if (run.f_slots.empty()) run.stopped = true;
    if (run.rounds > static_cast<int>(state_.depth) + 2)
      throw NumericError("beam: completion did not converge within the depth bound");
  }
  g_t_rest += pnow() - tt0;
  return true;
}

void BeamRunner::boundary(int t) {
  for (auto& run : runs_) {
    if (run.phase == SentRun::Phase::Done) continue;
    if (run.phase == SentRun::Phase::Completing) {
      for (int64_t slot : run.f_slots) run.free_slots.push_back(slot);
      run.f_slots.clear();
      run.phase = SentRun::Phase::Done;
      continue;
    }
    // Word boundary: prefix over the full completion buffer, then prune to
    // the word beam.
    std::vector<double> scores;
    for (int64_t slot : run.c_slots) scores.push_back(score_[static_cast<size_t>(slot)]);
    if (scores.empty()) {
      if (run.hit_cap)
        throw NumericError("beam: structural action cap exceeded at token " + std::to_string(t) +
                           " (" + std::to_string(cfg_.max_word_actions) +
                           " rounds without a word candidate)");
      throw NumericError("beam: exhausted at token " + std::to_string(t) +
                         " (no legal continuation survived)");
    }
    run.prefix.push_back(logsumexp_scores(scores));

    std::vector<size_t> order(run.c_slots.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return score_[static_cast<size_t>(run.c_slots[a])] >
             score_[static_cast<size_t>(run.c_slots[b])];
    });
    // Leftover frontier cells die with the word.
    for (int64_t slot : run.f_slots) run.free_slots.push_back(slot);
    size_t keep = std::min<size_t>(order.size(), static_cast<size_t>(cfg_.kw()));
    std::vector<char> kept(run.c_slots.size(), 0);
    std::vector<int64_t> w_slots;
    for (size_t i = 0; i < keep; ++i) {
      w_slots.push_back(run.c_slots[order[i]]);
      kept[order[i]] = 1;
    }
    for (size_t i = 0; i < run.c_slots.size(); ++i)
      if (!kept[i]) run.free_slots.push_back(run.c_slots[i]);
    run.f_slots = std::move(w_slots);
    run.c_slots.clear();
    run.rounds = 0;
    run.stopped = false;
    run.hit_cap = false;
    if (t + 1 >= run.len) run.phase = SentRun::Phase::Completing;
  }
}

std::vector<BeamResult> BeamRunner::run() {
  const int64_t b = static_cast<int64_t>(sentences_.size());
  // Slot budget per sentence: a frontier and a completion buffer of up to k
  // cells each, one round of admission overshoot, and the seed.
  slots_per_sent_ = 3 * cfg_.k + 2 * std::max(cfg_.ks(), 1) + 8;
  const int64_t capacity = b * slots_per_sent_;
  state_ = model_.make_state(nullptr, capacity, cfg_.depth, false);
  score_.assign(static_cast<size_t>(capacity), kNegInf);
  chain_.assign(static_cast<size_t>(capacity), -1);
  arena_.clear();
  runs_.assign(static_cast<size_t>(b), {});

  int64_t max_len = 1;
  for (const auto& s : sentences_) max_len = std::max<int64_t>(max_len, s.size());
  tokens_ = IntMat(capacity, max_len);
  for (int64_t slot = 0; slot < capacity; ++slot) {
    const auto& sent = sentences_[static_cast<size_t>(slot / slots_per_sent_)];
    for (size_t j = 0; j < sent.size(); ++j) tokens_.at(slot, static_cast<int64_t>(j)) = sent[j];
  }

  for (int64_t s = 0; s < b; ++s) {
    SentRun& run = runs_[static_cast<size_t>(s)];
    run.len = static_cast<int>(sentences_[static_cast<size_t>(s)].size());
    int64_t base = s * slots_per_sent_;
    run.f_slots = {base};
    score_[static_cast<size_t>(base)] = 0.0;
    for (int64_t slot = base + slots_per_sent_ - 1; slot > base; --slot)
      run.free_slots.push_back(slot);
  }

  for (int t = 0;; ++t) {
    bool any = false;
    for (const auto& run : runs_) any = any || run.phase != SentRun::Phase::Done;
    if (!any) break;
    while (round()) {
    }
    boundary(t);
  }

  std::vector<BeamResult> results;
  for (size_t s = 0; s < runs_.size(); ++s) {
    const SentRun& run = runs_[s];
    if (!run.has_best)
      throw NumericError("beam: no complete parse for sentence " + std::to_string(s));
    BeamResult res;
    res.logp = run.best_logp;
    res.prefix_logp = run.prefix;
    for (size_t t = 0; t < run.prefix.size(); ++t)
      res.surprisal.push_back((t == 0 ? 0.0 : run.prefix[t - 1]) - run.prefix[t]);
    for (int32_t node = run.best_chain; node >= 0;
         node = arena_[static_cast<size_t>(node)].parent)
      res.actions.push_back(arena_[static_cast<size_t>(node)].action);
    std::reverse(res.actions.begin(), res.actions.end());
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace

void BeamConfig::validate() const {
  if (k < 1) throw ConfigError("beam: k must be >= 1");
  if (kw() < 1 || kw() > k) throw ConfigError("beam: need 1 <= k_w <= k");
  if (ks() < 0) throw ConfigError("beam: k_s must be >= 0");
  if (token_cap < 1 || max_word_actions < 1 || depth < 1)
    throw ConfigError("beam: caps must be positive");
}

BeamResult word_sync_beam(Model& model, const std::vector<int32_t>& tokens,
                          const BeamConfig& cfg) {
  BeamRunner runner(model, {{tokens}}, cfg);
  return runner.run().front();
}

std::vector<std::vector<size_t>> beam_groups(const std::vector<std::vector<int32_t>>& sentences,
                                             int64_t batch_size, int64_t token_cap) {
  std::vector<std::vector<size_t>> groups;
  std::vector<size_t> cur;
  int64_t tokens = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    int64_t len = static_cast<int64_t>(sentences[i].size());
    bool fits = static_cast<int64_t>(cur.size()) < batch_size && tokens + len <= token_cap;
    if (!cur.empty() && !fits) {
      groups.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(i);
    tokens += len;
  }
  if (!cur.empty()) groups.push_back(std::move(cur));
  return groups;
}

std::vector<BeamResult> batched_beam(Model& model,
                                     const std::vector<std::vector<int32_t>>& sentences,
                                     const BeamConfig& cfg, int64_t batch_size) {
  std::vector<BeamResult> results(sentences.size());
  for (const auto& group : beam_groups(sentences, batch_size, cfg.token_cap)) {
    std::vector<std::vector<int32_t>> batch;
    for (size_t idx : group) batch.push_back(sentences[idx]);
    BeamRunner runner(model, batch, cfg);
    std::vector<BeamResult> out = runner.run();
    for (size_t j = 0; j < group.size(); ++j) results[group[j]] = std::move(out[j]);
  }
  return results;
}

std::vector<ScoredSentence> score_corpus(Model& model, const Vocab& vocab, const Merges* merges,
                                         const std::vector<std::vector<std::string>>& sentences,
                                         const BeamConfig& cfg, int64_t batch_size) {
  std::vector<ScoredSentence> out(sentences.size());
  std::vector<std::vector<int32_t>> unit_ids(sentences.size());
  for (size_t i = 0; i < sentences.size(); ++i) {
    out[i].tokens = sentences[i];
    out[i].units = merges ? segment_tokens(sentences[i], *merges) : sentences[i];
    if (merges) {
      for (const std::string& u : out[i].units) unit_ids[i].push_back(vocab.lookup(u, false));
    } else {
      unit_ids[i] = vocab.encode_tokens(sentences[i]);
    }
  }
  std::vector<BeamResult> beams = batched_beam(model, unit_ids, cfg, batch_size);
  for (size_t i = 0; i < sentences.size(); ++i) {
    out[i].beam = std::move(beams[i]);
    // Sum the per-unit prefix increments within each original token.
    const auto& prefix = out[i].beam.prefix_logp;
    std::vector<double>& tok = out[i].token_logp;
    size_t unit = 0;
    for (size_t w = 0; w < out[i].tokens.size(); ++w) {
      size_t count = 1;
      if (merges) {
        count = 0;
        size_t u = unit;
        do {
          ++count;
          ++u;
        } while (u < out[i].units.size() &&
                 out[i].units[u].compare(0, kWordInitMarker.size(), kWordInitMarker) != 0);
      }
      double before = unit == 0 ? 0.0 : prefix[unit - 1];
      double after = prefix[unit + count - 1];
      tok.push_back(after - before);
      unit += count;
    }
    out[i].total_logp = prefix.empty() ? 0.0 : prefix.back();
  }
  return out;
}

PplResult token_ppl(Model& model, const Vocab& vocab, const Merges* merges,
                    const std::vector<std::vector<std::string>>& sentences,
                    const BeamConfig& cfg, int64_t batch_size) {
  if (sentences.empty()) throw DataError("ppl: empty corpus");
  PplResult res;
  res.sentences = score_corpus(model, vocab, merges, sentences, cfg, batch_size);
  for (const auto& s : res.sentences) {
    res.tokens += static_cast<int64_t>(s.tokens.size());
    res.total_logp += s.total_logp;
  }
  res.ppl = std::exp(-res.total_logp / static_cast<double>(res.tokens));
  return res;
}

PairsResult pairs_eval(Model& model, const Vocab& vocab, const Merges* merges,
                       const std::vector<PairsItem>& items, const BeamConfig& cfg,
                       int64_t batch_size) {
  if (items.empty()) throw DataError("pairs: empty suite");
  std::vector<std::vector<std::string>> sentences;
  for (const auto& item : items) {
    for (const PairsSide* side : {&item.good, &item.bad}) {
      if (side->critical_begin < 0 || side->critical_end > static_cast<int>(side->tokens.size()) ||
          side->critical_begin >= side->critical_end)
        throw DataError("pairs: malformed critical region in item " + item.id);
      sentences.push_back(side->tokens);
    }
  }
  std::vector<ScoredSentence> scored =
      score_corpus(model, vocab, merges, sentences, cfg, batch_size);

  PairsResult res;
  int correct = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    const ScoredSentence& good = scored[2 * i];
    const ScoredSentence& bad = scored[2 * i + 1];
    auto region = [](const ScoredSentence& s, const PairsSide& side) {
      double total = 0;
      for (int w = side.critical_begin; w < side.critical_end; ++w)
        total += s.token_logp[static_cast<size_t>(w)];
      return total;
    };
    PairsOutcome outcome;
    outcome.id = items[i].id;
    outcome.good_score = region(good, items[i].good);
    outcome.bad_score = region(bad, items[i].bad);
    outcome.correct = outcome.good_score > outcome.bad_score;  // ties are incorrect
    correct += outcome.correct;
    res.items.push_back(outcome);
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
  return res;
}

}  // namespace rnng
