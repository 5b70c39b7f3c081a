// Command-line harness: training, parsing, perplexity, minimal-pair
// evaluation, oracle extraction, benchmarks, and the invariant selfcheck.
// Exit codes: 1 bad configuration, 2 bad data, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "rnng/beam.hpp"
#include "rnng/checkpoint.hpp"
#include "rnng/errors.hpp"
#include "rnng/eval.hpp"
#include "rnng/reference.hpp"
#include "rnng/selfcheck.hpp"
#include "rnng/synthetic.hpp"
#include "rnng/trainer.hpp"

using json = nlohmann::ordered_json;
using namespace rnng;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Dtype dtype_of(int precision) {
  if (precision == 32) return Dtype::F32;
  if (precision == 64) return Dtype::F64;
  throw ConfigError("--precision must be 32 or 64");
}

// Full resolved configuration next to every artifact; silent defaults are
// not allowed.
void write_config_echo(const std::string& artifact_path, const json& resolved) {
  if (artifact_path.empty()) return;
  std::ofstream f(artifact_path + ".config.json");
  if (!f) throw DataError("cannot write config echo next to " + artifact_path);
  f << resolved.dump(2) << "\n";
}

std::vector<int64_t> parse_int_list(const std::string& csv) {
  std::vector<int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoll(item));
  }
  if (out.empty()) throw ConfigError("expected a comma-separated integer list");
  return out;
}

std::string action_str(const StringAction& a) {
  switch (a.kind) {
    case Action::Kind::NT: return "NT(" + a.symbol + ")";
    case Action::Kind::GEN: return "GEN(" + a.symbol + ")";
    case Action::Kind::REDUCE: return "REDUCE";
    default: return "PAD";
  }
}

struct ModelFlags {
  int64_t emb_dim = 256;
  int64_t hidden_dim = 256;
  int64_t layers = 2;
  double dropout = 0.1;
  std::string preset;

  void add(CLI::App* cmd) {
    cmd->add_option("--emb-dim", emb_dim, "input/embedding width")->capture_default_str();
    cmd->add_option("--hidden-dim", hidden_dim, "LSTM hidden width")->capture_default_str();
    cmd->add_option("--layers", layers, "stack-LSTM layers")->capture_default_str();
    cmd->add_option("--dropout", dropout, "dropout rate")->capture_default_str();
    cmd->add_option("--preset", preset,
                    "size preset: {15m,35m}-{10k,20k,30k} (overrides dims)");
  }

  ModelConfig build(int64_t vocab, int64_t num_nts, bool subword) const {
    ModelConfig cfg;
    if (!preset.empty()) {
      cfg = ModelConfig::from_preset(preset);
    } else {
      cfg.embedding = emb_dim;
      cfg.hidden = hidden_dim;
      cfg.layers = layers;
    }
    cfg.dropout = dropout;
    cfg.vocab = vocab;
    cfg.num_nts = num_nts;
    cfg.subword = subword;
    return cfg;
  }
};

struct BeamFlags {
  int k = 100;
  int k_w = 0;
  int k_s = -1;
  int64_t token_cap = 250;
  int64_t depth_bound = 100;
  int max_word_actions = 40;
  int64_t batch_size = 10;

  void add(CLI::App* cmd) {
    cmd->add_option("--beam-k", k, "action beam size")->capture_default_str();
    cmd->add_option("--beam-kw", k_w, "word beam size (0 = k/10)")->capture_default_str();
    cmd->add_option("--beam-ks", k_s, "fast-track size (-1 = k/100)")->capture_default_str();
    cmd->add_option("--token-cap", token_cap, "max tokens per beam batch")->capture_default_str();
    cmd->add_option("--depth-bound", depth_bound, "inference stack depth D")
        ->capture_default_str();
    cmd->add_option("--max-word-actions", max_word_actions,
                    "cap on structural actions between tokens")
        ->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "sentences per beam batch")
        ->capture_default_str();
  }

  BeamConfig build() const {
    BeamConfig cfg;
    cfg.k = k;
    cfg.k_w = k_w;
    cfg.k_s = k_s;
    cfg.token_cap = token_cap;
    cfg.depth = depth_bound;
    cfg.max_word_actions = max_word_actions;
    return cfg;
  }

  json echo() const {
    return {{"beam_k", k},
            {"beam_kw", k_w},
            {"beam_ks", k_s},
            {"token_cap", token_cap},
            {"depth_bound", depth_bound},
            {"max_word_actions", max_word_actions},
            {"batch_size", batch_size}};
  }
};

// Checkpoint plus its side files; paths default to <checkpoint>.<ext>.
struct LoadedModel {
  Model model;
  Vocab vocab;
  std::unique_ptr<Merges> merges;
  CheckpointMeta meta;
};

LoadedModel load_model(const std::string& ckpt, std::string vocab_path, std::string merges_path,
                       Dtype dt) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt, dt);
  if (vocab_path.empty()) vocab_path = ckpt + ".vocab";
  Vocab vocab = Vocab::load(vocab_path, vocab_path + ".nts");
  if (vocab.digest() != loaded.meta.vocab_digest)
    throw DataError("vocabulary digest does not match the checkpoint: " + vocab_path);
  std::unique_ptr<Merges> merges;
  if (loaded.meta.config.subword) {
    if (merges_path.empty()) merges_path = ckpt + ".merges";
    merges = std::make_unique<Merges>(Merges::load(merges_path));
    if (merges->digest() != loaded.meta.merges_digest)
      throw DataError("merges digest does not match the checkpoint: " + merges_path);
  }
  return {std::move(loaded.model), std::move(vocab), std::move(merges), loaded.meta};
}

// Test input: bracketed trees (gold available) or plain token lines.
struct TestInput {
  std::vector<std::vector<std::string>> sentences;
  std::vector<Tree> gold;  // empty when plain text
};

TestInput read_test_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  TestInput in;
  std::string line;
  while (std::getline(f, line)) {
    size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '(') {
      Tree t = parse_tree(line);
      in.gold.push_back(t);
      in.sentences.push_back(leaves(t));
    } else {
      std::istringstream is(line);
      std::vector<std::string> toks;
      std::string tok;
      while (is >> tok) toks.push_back(tok);
      in.sentences.push_back(toks);
    }
  }
  if (in.sentences.empty()) throw DataError("no sentences in " + path);
  if (!in.gold.empty() && in.gold.size() != in.sentences.size())
    throw DataError("mixed trees and plain text in " + path);
  return in;
}

// ----- train -----------------------------------------------------------------

int cmd_train(const std::string& train_path, const std::string& dev_path,
              const std::string& ckpt, const ModelFlags& mf, TrainConfig tc,
              int64_t vocab_limit, int64_t subword_units, int precision, bool clip) {
  Dtype dt = dtype_of(precision);
  if (clip) tc.clip_norm = 5.0;
  std::vector<Tree> train_trees = load_treebank(train_path);
  std::vector<Tree> dev_trees;
  if (!dev_path.empty()) dev_trees = load_treebank(dev_path);

  std::unique_ptr<Merges> merges;
  Vocab vocab;
  if (subword_units > 0) {
    merges = std::make_unique<Merges>(
        Merges::train_on_trees(train_trees, static_cast<size_t>(subword_units)));
    std::vector<Tree> seg_train, seg_dev;
    for (const Tree& t : train_trees) seg_train.push_back(segment_tree(t, *merges));
    for (const Tree& t : dev_trees) seg_dev.push_back(segment_tree(t, *merges));
    train_trees = std::move(seg_train);
    dev_trees = std::move(seg_dev);
    vocab = Vocab::from_units(unit_counts(train_trees, *merges), train_trees);
  } else {
    vocab = Vocab::build(train_trees, static_cast<size_t>(vocab_limit));
  }

  ModelConfig cfg = mf.build(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), subword_units > 0);
  Model model(cfg, dt, tc.seed);
  std::cerr << "model: " << model.param_count() << " parameters (" << vocab.num_words()
            << " word types, " << vocab.num_nts() << " nonterminals)\n";

  vocab.save(ckpt + ".vocab", ckpt + ".vocab.nts");
  if (merges) merges->save(ckpt + ".merges");
  CheckpointMeta meta;
  meta.config = cfg;
  meta.vocab_digest = vocab.digest();
  meta.merges_digest = merges ? merges->digest() : 0;
  meta.seed = tc.seed;

  std::ofstream metrics(ckpt + ".metrics.csv");
  if (!metrics) throw DataError("cannot write " + ckpt + ".metrics.csv");
  metrics << "step,wallclock_s,train_nll,dev_nll\n";

  TrainHooks hooks;
  hooks.on_metrics = [&](const MetricsRow& row) {
    metrics << row.step << ',' << row.wallclock_s << ',' << row.train_nll << ',' << row.dev_nll
            << '\n';
    metrics.flush();
    meta.step = row.step;
    save_checkpoint(ckpt + ".step-" + std::to_string(row.step), model, meta);
    std::cerr << "step " << row.step << "  train " << row.train_nll << "  dev " << row.dev_nll
              << "\n";
  };
  hooks.on_best = [&](int64_t step) {
    meta.step = step;
    save_checkpoint(ckpt, model, meta);
  };

  TrainResult res = train(model, train_trees, dev_trees, vocab, tc, hooks);
  if (res.best_step == 0) {
    meta.step = res.steps;
    save_checkpoint(ckpt, model, meta);
  }

  json echo{{"command", "train"},
            {"train", train_path},
            {"dev", dev_path},
            {"checkpoint", ckpt},
            {"precision", precision},
            {"seed", tc.seed},
            {"batch_size", tc.batch_size},
            {"max_actions", tc.max_actions},
            {"bucket", tc.bucket},
            {"lr", tc.lr},
            {"dropout", cfg.dropout},
            {"validate_every", tc.validate_every},
            {"max_epochs", tc.max_epochs},
            {"max_steps", tc.max_steps},
            {"clip_norm", tc.clip_norm},
            {"vocab_limit", vocab_limit},
            {"subword_units", subword_units},
            {"embedding", cfg.embedding},
            {"hidden", cfg.hidden},
            {"layers", cfg.layers},
            {"preset", cfg.preset},
            {"parameters", model.param_count()},
            {"steps", res.steps},
            {"best_step", res.best_step},
            {"best_dev_nll", res.best_dev_nll}};
  write_config_echo(ckpt, echo);
  std::cout << "trained " << res.steps << " steps; best dev NLL " << res.best_dev_nll
            << " at step " << res.best_step << "\n";
  return 0;
}

// ----- parse -----------------------------------------------------------------

int cmd_parse(const std::string& ckpt, const std::string& vocab_path,
              const std::string& merges_path, const std::string& test_path,
              const std::string& out_path, const BeamFlags& bf, int precision) {
  LoadedModel lm = load_model(ckpt, vocab_path, merges_path, dtype_of(precision));
  TestInput input = read_test_file(test_path);
  BeamConfig bc = bf.build();

  std::vector<ScoredSentence> scored =
      score_corpus(lm.model, lm.vocab, lm.merges.get(), input.sentences, bc, bf.batch_size);
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write " + out_path);
  std::vector<Tree> predicted;
  for (size_t i = 0; i < scored.size(); ++i) {
    Tree raw = decode_tree(scored[i].beam.actions, lm.vocab);
    if (lm.merges) raw = unsegment_tree(raw);
    Tree tree = substitute_leaves(raw, scored[i].tokens);
    predicted.push_back(tree);
    std::vector<double> prefix;
    double acc = 0.0;
    for (double lp : scored[i].token_logp) prefix.push_back(acc += lp);
    std::vector<double> surprisal;
    for (double lp : scored[i].token_logp) surprisal.push_back(-lp);
    json row{{"id", i},
             {"tree", serialize(tree)},
             {"logp", scored[i].beam.logp},
             {"prefix_logp", prefix},
             {"surprisal", surprisal}};
    out << row.dump() << "\n";
  }
  json echo = bf.echo();
  echo["command"] = "parse";
  echo["checkpoint"] = ckpt;
  echo["test"] = test_path;
  echo["output"] = out_path;
  echo["precision"] = precision;
  write_config_echo(out_path, echo);

  if (!input.gold.empty()) {
    F1Score f1 = bracket_f1(predicted, input.gold);
    std::cout << "bracket P " << f1.precision << "  R " << f1.recall << "  F1 " << f1.f1 << "  ("
              << predicted.size() << " sentences)\n";
  } else {
    std::cout << "parsed " << predicted.size() << " sentences\n";
  }
  return 0;
}

// ----- ppl -------------------------------------------------------------------

int cmd_ppl(const std::string& ckpt, const std::string& vocab_path,
            const std::string& merges_path, const std::string& test_path,
            const std::string& out_path, const BeamFlags& bf, int precision) {
  LoadedModel lm = load_model(ckpt, vocab_path, merges_path, dtype_of(precision));
  TestInput input = read_test_file(test_path);
  PplResult res =
      token_ppl(lm.model, lm.vocab, lm.merges.get(), input.sentences, bf.build(), bf.batch_size);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    out << "id,tokens,total_logp\n";
    for (size_t i = 0; i < res.sentences.size(); ++i)
      out << i << ',' << res.sentences[i].tokens.size() << ',' << res.sentences[i].total_logp
          << '\n';
    json echo = bf.echo();
    echo["command"] = "ppl";
    echo["checkpoint"] = ckpt;
    echo["test"] = test_path;
    echo["precision"] = precision;
    write_config_echo(out_path, echo);
  }
  std::cout << "token-level perplexity " << res.ppl << " over " << res.tokens << " tokens\n";
  return 0;
}

// ----- pairs-eval ---------------------------------------------------------------

std::vector<PairsItem> read_suite(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  std::vector<PairsItem> items;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    PairsItem item;
    item.id = row.value("id", std::to_string(lineno));
    for (auto [key, side] : {std::pair{"good", &item.good}, std::pair{"bad", &item.bad}}) {
      if (!row.contains(key)) throw DataError(path + ": item missing '" + std::string(key) + "'");
      side->tokens = row[key]["tokens"].get<std::vector<std::string>>();
      auto critical = row[key]["critical"].get<std::vector<int>>();
      if (critical.size() != 2) throw DataError(path + ": critical region must be [begin, end)");
      side->critical_begin = critical[0];
      side->critical_end = critical[1];
    }
    items.push_back(std::move(item));
  }
  return items;
}

int cmd_pairs(const std::string& ckpt, const std::string& vocab_path,
              const std::string& merges_path, const std::string& suite_path,
              const std::string& out_path, const BeamFlags& bf, int precision) {
  LoadedModel lm = load_model(ckpt, vocab_path, merges_path, dtype_of(precision));
  std::vector<PairsItem> items = read_suite(suite_path);
  PairsResult res =
      pairs_eval(lm.model, lm.vocab, lm.merges.get(), items, bf.build(), bf.batch_size);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    for (const auto& item : res.items) {
      json row{{"id", item.id},
               {"good_score", item.good_score},
               {"bad_score", item.bad_score},
               {"correct", item.correct}};
      out << row.dump() << "\n";
    }
    json echo = bf.echo();
    echo["command"] = "pairs-eval";
    echo["checkpoint"] = ckpt;
    echo["suite"] = suite_path;
    echo["precision"] = precision;
    write_config_echo(out_path, echo);
  }
  std::cout << "accuracy " << res.accuracy << " over " << res.items.size() << " items\n";
  return 0;
}

// ----- oracle ----------------------------------------------------------------

int cmd_oracle(const std::string& train_path, const std::string& out_path) {
  std::vector<Tree> trees = load_treebank(train_path);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot write " + out_path);
    os = &file;
  }
  for (const Tree& t : trees) {
    auto actions = oracle_actions(t);
    *os << min_stack_depth(actions) << '\t';
    for (size_t i = 0; i < actions.size(); ++i)
      *os << (i ? " " : "") << action_str(actions[i]);
    *os << '\n';
  }
  if (!out_path.empty()) {
    json echo{{"command", "oracle"}, {"train", train_path}, {"output", out_path}};
    write_config_echo(out_path, echo);
  }
  return 0;
}

// ----- bench-train --------------------------------------------------------------

int cmd_bench_train(const std::string& train_path, const std::string& out_path,
                    const std::string& batch_sizes, const ModelFlags& mf, int64_t synthetic,
                    int seeds, int64_t min_sentences, double min_seconds, uint64_t seed,
                    int precision) {
  std::vector<Tree> corpus;
  if (!train_path.empty()) {
    corpus = load_treebank(train_path);
  } else {
    corpus = random_treebank(static_cast<size_t>(synthetic), seed,
                             {.num_nts = 8, .num_words = 2000, .min_tokens = 8, .max_tokens = 14});
  }
  Vocab vocab = Vocab::build(corpus, 50000);
  ModelConfig cfg = mf.build(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), false);
  BenchTrainConfig bc;
  bc.batch_sizes = parse_int_list(batch_sizes);
  bc.seeds = seeds;
  bc.min_sentences = min_sentences;
  bc.min_seconds = min_seconds;
  bc.train.seed = seed;

  auto rows = bench_throughput(cfg, dtype_of(precision), corpus, vocab, bc);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot write " + out_path);
    os = &file;
  }
  *os << "batch_size,sentences_per_sec,sd\n";
  for (const auto& r : rows)
    *os << r.batch_size << ',' << r.sentences_per_sec << ',' << r.sd << '\n';
  if (!out_path.empty()) {
    json echo{{"command", "bench-train"},
              {"batch_sizes", batch_sizes},
              {"synthetic", synthetic},
              {"seeds", seeds},
              {"min_sentences", min_sentences},
              {"min_seconds", min_seconds},
              {"seed", seed},
              {"precision", precision},
              {"embedding", cfg.embedding},
              {"hidden", cfg.hidden}};
    write_config_echo(out_path, echo);
    for (const auto& r : rows)
      std::cout << "B=" << r.batch_size << "  " << r.sentences_per_sec << " sent/s (sd " << r.sd
                << ")\n";
  }
  return 0;
}

// ----- bench-beam ---------------------------------------------------------------

int cmd_bench_beam(const std::string& ckpt, const std::string& vocab_path,
                   const std::string& merges_path, const std::string& test_path,
                   const std::string& out_path, const std::string& beam_sizes, BeamFlags bf,
                   int repeats, int precision) {
  LoadedModel lm = load_model(ckpt, vocab_path, merges_path, dtype_of(precision));
  TestInput input = read_test_file(test_path);
  std::vector<std::vector<int32_t>> unit_ids;
  for (const auto& sent : input.sentences) {
    if (lm.merges) {
      std::vector<int32_t> ids;
      for (const std::string& u : segment_tokens(sent, *lm.merges))
        ids.push_back(lm.vocab.lookup(u, false));
      unit_ids.push_back(std::move(ids));
    } else {
      unit_ids.push_back(lm.vocab.encode_tokens(sent));
    }
  }

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot write " + out_path);
    os = &file;
  }
  *os << "k,k_w,k_s,seconds_per_sentence\n";
  for (int64_t k : parse_int_list(beam_sizes)) {
    BeamConfig bc = bf.build();
    bc.k = static_cast<int>(k);
    bc.k_w = 0;
    bc.k_s = -1;
    std::vector<double> times;
    for (int rep = 0; rep < repeats; ++rep) {
      double t0 = now_s();
      batched_beam(lm.model, unit_ids, bc, bf.batch_size);
      times.push_back((now_s() - t0) / static_cast<double>(unit_ids.size()));
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];
    *os << bc.k << ',' << bc.kw() << ',' << bc.ks() << ',' << median << '\n';
  }
  if (!out_path.empty()) {
    json echo = bf.echo();
    echo["command"] = "bench-beam";
    echo["beam_sizes"] = beam_sizes;
    echo["repeats"] = repeats;
    echo["precision"] = precision;
    write_config_echo(out_path, echo);
  }
  return 0;
}

// ----- selfcheck -----------------------------------------------------------------

int cmd_selfcheck(const std::string& ckpt, const std::string& vocab_path,
                  const std::string& merges_path, uint64_t seed, int precision) {
  SelfcheckOptions opt;
  opt.dt = dtype_of(precision);
  opt.seed = seed;
  opt.checkpoint = ckpt;
  if (!ckpt.empty()) {
    opt.vocab_words = vocab_path.empty() ? ckpt + ".vocab" : vocab_path;
    opt.vocab_nts = opt.vocab_words + ".nts";
    opt.merges = merges_path;
  }
  auto outcomes = run_selfcheck(opt);
  bool all = true;
  for (const auto& o : outcomes) {
    std::cout << (o.passed ? "[pass] " : "[FAIL] ") << o.name << ": " << o.detail << "\n";
    all = all && o.passed;
  }
  if (!all) throw NumericError("selfcheck failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batched recurrent neural network grammar"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "teacher-forced training");
  std::string train_path, dev_path, ckpt_path;
  train_cmd->add_option("--train", train_path, "training treebank")->required();
  train_cmd->add_option("--dev", dev_path, "development treebank");
  train_cmd->add_option("--checkpoint", ckpt_path, "output checkpoint path")->required();
  ModelFlags train_mf;
  train_mf.add(train_cmd);
  TrainConfig tc;
  int64_t vocab_limit = 50000, subword_units = 0;
  int train_precision = 64;
  bool clip = false;
  train_cmd->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--max-actions", tc.max_actions)->capture_default_str();
  train_cmd->add_option("--bucket", tc.bucket)->capture_default_str();
  train_cmd->add_option("--lr", tc.lr)->capture_default_str();
  train_cmd->add_option("--validate-every", tc.validate_every)->capture_default_str();
  train_cmd->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
  train_cmd->add_option("--max-steps", tc.max_steps)->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--vocab-limit", vocab_limit)->capture_default_str();
  train_cmd->add_option("--subword-units", subword_units,
                        "train byte-pair merges to this unit count (0 = word level)")
      ->capture_default_str();
  train_cmd->add_option("--precision", train_precision, "32 or 64")->capture_default_str();
  train_cmd->add_flag("--clip", clip, "clip gradients to max-norm 5");

  auto* parse_cmd = app.add_subcommand("parse", "beam-search parsing");
  std::string p_ckpt, p_vocab, p_merges, p_test, p_out;
  int p_precision = 64;
  parse_cmd->add_option("--checkpoint", p_ckpt)->required();
  parse_cmd->add_option("--vocab", p_vocab, "defaults to <checkpoint>.vocab");
  parse_cmd->add_option("--subword-merges", p_merges, "defaults to <checkpoint>.merges");
  parse_cmd->add_option("--test", p_test, "trees or token lines")->required();
  parse_cmd->add_option("--output", p_out, "JSONL output")->required();
  parse_cmd->add_option("--precision", p_precision)->capture_default_str();
  BeamFlags parse_bf;
  parse_bf.add(parse_cmd);

  auto* ppl_cmd = app.add_subcommand("ppl", "token-level perplexity");
  std::string l_ckpt, l_vocab, l_merges, l_test, l_out;
  int l_precision = 64;
  ppl_cmd->add_option("--checkpoint", l_ckpt)->required();
  ppl_cmd->add_option("--vocab", l_vocab);
  ppl_cmd->add_option("--subword-merges", l_merges);
  ppl_cmd->add_option("--test", l_test)->required();
  ppl_cmd->add_option("--output", l_out, "per-sentence CSV");
  ppl_cmd->add_option("--precision", l_precision)->capture_default_str();
  BeamFlags ppl_bf;
  ppl_bf.add(ppl_cmd);

  auto* pairs_cmd = app.add_subcommand("pairs-eval", "minimal-pair evaluation");
  std::string q_ckpt, q_vocab, q_merges, q_suite, q_out;
  int q_precision = 64;
  pairs_cmd->add_option("--checkpoint", q_ckpt)->required();
  pairs_cmd->add_option("--vocab", q_vocab);
  pairs_cmd->add_option("--subword-merges", q_merges);
  pairs_cmd->add_option("--suite", q_suite, "JSONL suite")->required();
  pairs_cmd->add_option("--output", q_out, "per-item JSONL");
  pairs_cmd->add_option("--precision", q_precision)->capture_default_str();
  BeamFlags pairs_bf;
  pairs_bf.add(pairs_cmd);

  auto* oracle_cmd = app.add_subcommand("oracle", "action sequences and stack depths");
  std::string o_train, o_out;
  oracle_cmd->add_option("--train", o_train, "treebank")->required();
  oracle_cmd->add_option("--output", o_out);

  auto* bt_cmd = app.add_subcommand("bench-train", "training throughput by batch size");
  std::string bt_train, bt_out, bt_sizes = "1,2,4,8,16,32,64";
  int64_t bt_synth = 5000, bt_min_sent = 256;
  int bt_seeds = 3, bt_precision = 32;
  double bt_min_sec = 0.5;
  uint64_t bt_seed = 1;
  ModelFlags bt_mf;
  bt_mf.emb_dim = 128;
  bt_mf.hidden_dim = 128;
  bt_mf.add(bt_cmd);
  bt_cmd->add_option("--train", bt_train, "real treebank (default: synthetic)");
  bt_cmd->add_option("--output", bt_out, "CSV output");
  bt_cmd->add_option("--batch-sizes", bt_sizes)->capture_default_str();
  bt_cmd->add_option("--synthetic", bt_synth, "synthetic corpus size")->capture_default_str();
  bt_cmd->add_option("--seeds", bt_seeds)->capture_default_str();
  bt_cmd->add_option("--min-sentences", bt_min_sent)->capture_default_str();
  bt_cmd->add_option("--min-seconds", bt_min_sec)->capture_default_str();
  bt_cmd->add_option("--seed", bt_seed)->capture_default_str();
  bt_cmd->add_option("--precision", bt_precision)->capture_default_str();

  auto* bb_cmd = app.add_subcommand("bench-beam", "beam speed by action beam size");
  std::string bb_ckpt, bb_vocab, bb_merges, bb_test, bb_out, bb_sizes = "10,100";
  int bb_repeats = 3, bb_precision = 32;
  bb_cmd->add_option("--checkpoint", bb_ckpt)->required();
  bb_cmd->add_option("--vocab", bb_vocab);
  bb_cmd->add_option("--subword-merges", bb_merges);
  bb_cmd->add_option("--test", bb_test)->required();
  bb_cmd->add_option("--output", bb_out);
  bb_cmd->add_option("--beam-sizes", bb_sizes)->capture_default_str();
  bb_cmd->add_option("--repeats", bb_repeats)->capture_default_str();
  bb_cmd->add_option("--precision", bb_precision)->capture_default_str();
  BeamFlags bb_bf;
  bb_bf.add(bb_cmd);

  auto* sc_cmd = app.add_subcommand("selfcheck", "fast invariant suite");
  std::string sc_ckpt, sc_vocab, sc_merges;
  uint64_t sc_seed = 7;
  int sc_precision = 64;
  sc_cmd->add_option("--checkpoint", sc_ckpt, "optional checkpoint to validate");
  sc_cmd->add_option("--vocab", sc_vocab);
  sc_cmd->add_option("--subword-merges", sc_merges);
  sc_cmd->add_option("--seed", sc_seed)->capture_default_str();
  sc_cmd->add_option("--precision", sc_precision)->capture_default_str();

  try {
    app.parse(argc, argv);
    if (*train_cmd)
      return cmd_train(train_path, dev_path, ckpt_path, train_mf, tc, vocab_limit, subword_units,
                       train_precision, clip);
    if (*parse_cmd)
      return cmd_parse(p_ckpt, p_vocab, p_merges, p_test, p_out, parse_bf, p_precision);
    if (*ppl_cmd) return cmd_ppl(l_ckpt, l_vocab, l_merges, l_test, l_out, ppl_bf, l_precision);
    if (*pairs_cmd)
      return cmd_pairs(q_ckpt, q_vocab, q_merges, q_suite, q_out, pairs_bf, q_precision);
    if (*oracle_cmd) return cmd_oracle(o_train, o_out);
    if (*bt_cmd)
      return cmd_bench_train(bt_train, bt_out, bt_sizes, bt_mf, bt_synth, bt_seeds, bt_min_sent,
                             bt_min_sec, bt_seed, bt_precision);
    if (*bb_cmd)
      return cmd_bench_beam(bb_ckpt, bb_vocab, bb_merges, bb_test, bb_out, bb_sizes, bb_bf,
                            bb_repeats, bb_precision);
    if (*sc_cmd) return cmd_selfcheck(sc_ckpt, sc_vocab, sc_merges, sc_seed, sc_precision);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
