#include "rnng/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || max_actions < 1 || bucket < 1 || validate_every < 1 ||
      max_epochs < 0 || max_steps < 0 || lr <= 0.0)
    throw ConfigError("train: all limits must be positive");
}

void Adam::init(Model& model) {
  t_ = 0;
  m_.clear();
  v_.clear();
  model.params().for_each([&](const std::string&, Tensor& p) {
    m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  });
}

namespace {

template <class T>
void adam_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2, double scale) {
  for (int64_t i = 0; i < n; ++i) {
    double gi = static_cast<double>(g[i]) * scale;
    double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
    double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p[i] = static_cast<T>(static_cast<double>(p[i]) -
                          lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

template <class T>
double sum_squares(const T* g, int64_t n, bool* finite) {
  double sq = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double gi = static_cast<double>(g[i]);
    if (!std::isfinite(gi)) *finite = false;
    sq += gi * gi;
  }
  return sq;
}

}  // namespace

void Adam::step_raw(std::vector<Tensor> params, const std::vector<Tensor>& grads, double lr) {
  step_scaled(std::move(params), grads, lr, 1.0);
}

void Adam::step_scaled(std::vector<Tensor> params, const std::vector<Tensor>& grads, double lr,
                       double grad_scale) {
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
      v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    const Tensor& g = grads[k];
    const int64_t n = p.size();
    if (p.dtype() == Dtype::F32)
      adam_update(p.f32(), g.f32(), m_[k].f32(), v_[k].f32(), n, lr, beta1, beta2, eps, bc1, bc2,
                  grad_scale);
    else
      adam_update(p.f64(), g.f64(), m_[k].f64(), v_[k].f64(), n, lr, beta1, beta2, eps, bc1, bc2,
                  grad_scale);
  }
}

double Adam::step(Model& model, const Tape& tape, double lr, double clip_norm) {
  if (m_.empty()) init(model);
  std::vector<Tensor> params, grads;
  double sq = 0.0;
  model.params().for_each([&](const std::string& name, Tensor& p) {
    Tensor g = tape.grad(p);
    bool finite = true;
    sq += g.dtype() == Dtype::F32 ? sum_squares(g.f32(), g.size(), &finite)
                                  : sum_squares(g.f64(), g.size(), &finite);
    if (!finite) throw NumericError("adam: non-finite gradient in " + name);
    params.push_back(p);
    grads.push_back(g);
  });
  double norm = std::sqrt(sq);
  double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
  step_scaled(std::move(params), grads, lr, scale);
  return norm;
}

BucketPlan make_buckets(const std::vector<int64_t>& action_lengths, const TrainConfig& cfg,
                        std::mt19937_64& rng) {
  BucketPlan plan;
  std::vector<size_t> order(action_lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (action_lengths[a] != action_lengths[b]) return action_lengths[a] < action_lengths[b];
    return a < b;
  });
  for (size_t group = 0; group < order.size(); group += static_cast<size_t>(cfg.bucket)) {
    size_t end = std::min(order.size(), group + static_cast<size_t>(cfg.bucket));
    std::shuffle(order.begin() + group, order.begin() + end, rng);
    Batch cur;
    for (size_t k = group; k < end; ++k) {
      size_t idx = order[k];
      int64_t len = action_lengths[idx];
      bool fits = static_cast<int64_t>(cur.items.size()) < cfg.batch_size &&
                  cur.total_actions + len <= cfg.max_actions;
      if (!cur.items.empty() && !fits) {
        plan.batches.push_back(std::move(cur));
        cur = Batch{};
      }
      cur.items.push_back(idx);
      cur.total_actions += len;
      if (len > cfg.max_actions) {
        plan.oversized.push_back(idx);
        plan.batches.push_back(std::move(cur));
        cur = Batch{};
      }
    }
    if (!cur.items.empty()) plan.batches.push_back(std::move(cur));
  }
  std::shuffle(plan.batches.begin(), plan.batches.end(), rng);
  return plan;
}

double total_nll(Model& model, const std::vector<Model::PreparedSentence>& corpus,
                 int64_t batch_size, int64_t max_actions) {
  double total = 0.0;
  std::vector<Model::PreparedSentence> batch;
  int64_t actions = 0;
  auto flush = [&]() {
    if (batch.empty()) return;
    total += model.batch_loss_prepared(nullptr, batch, false).total.item();
    batch.clear();
    actions = 0;
  };
  for (const auto& s : corpus) {
    int64_t len = static_cast<int64_t>(s.actions.size());
    if (!batch.empty() && (static_cast<int64_t>(batch.size()) >= batch_size ||
                           actions + len > max_actions))
      flush();
    batch.push_back(s);
    actions += len;
  }
  flush();
  return total;
}

TrainResult train(Model& model, const std::vector<Tree>& train_trees,
                  const std::vector<Tree>& dev_trees, const Vocab& vocab, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (train_trees.empty()) throw DataError("train: empty training corpus");

  std::vector<Model::PreparedSentence> corpus, dev;
  std::vector<int64_t> lengths;
  for (const Tree& t : train_trees) {
    corpus.push_back(Model::prepare(t, vocab));
    lengths.push_back(static_cast<int64_t>(corpus.back().actions.size()));
  }
  for (const Tree& t : dev_trees) dev.push_back(Model::prepare(t, vocab));

  Adam adam;
  adam.init(model);
  model.seed_dropout(cfg.seed + 17);
  std::mt19937_64 shuffle_rng(cfg.seed);

  TrainResult result;
  result.best_dev_nll = std::numeric_limits<double>::infinity();
  const double start = now_seconds();
  int64_t step = 0;
  double window_loss = 0.0;
  int64_t window_batches = 0;
  bool stop = false;

  auto run_validation = [&]() {
    MetricsRow row;
    row.step = step;
    row.wallclock_s = now_seconds() - start;
    row.train_nll = window_batches > 0 ? window_loss / static_cast<double>(window_batches) : 0.0;
    row.dev_nll = dev.empty() ? 0.0 : total_nll(model, dev, cfg.batch_size, cfg.max_actions);
    window_loss = 0.0;
    window_batches = 0;
    result.metrics.push_back(row);
    if (hooks.on_metrics) hooks.on_metrics(row);
    if (row.dev_nll < result.best_dev_nll) {
      result.best_dev_nll = row.dev_nll;
      result.best_step = step;
      if (hooks.on_best) hooks.on_best(step);
    }
  };

  for (int64_t epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    BucketPlan plan = make_buckets(lengths, cfg, shuffle_rng);
    for (const Batch& b : plan.batches) {
      std::vector<Model::PreparedSentence> batch;
      batch.reserve(b.items.size());
      for (size_t idx : b.items) batch.push_back(corpus[idx]);

      Tape tape;
      model.watch_all(tape);
      auto loss = model.batch_loss_prepared(&tape, batch, true);
      double loss_value = loss.total.item();
      if (!std::isfinite(loss_value))
        throw NumericError("train: non-finite loss at step " + std::to_string(step + 1) +
                           " (batch of " + std::to_string(batch.size()) + " sentences, " +
                           std::to_string(b.total_actions) + " actions)");
      tape.backward(loss.total);
      adam.step(model, tape, cfg.lr, cfg.clip_norm);
      ++step;
      window_loss += loss_value;
      ++window_batches;
      result.final_train_nll = loss_value;
      if (hooks.on_step) hooks.on_step(step, loss_value);
      if (step % cfg.validate_every == 0) run_validation();
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
  }
  if (result.metrics.empty() || result.metrics.back().step != step) run_validation();
  result.steps = step;
  return result;
}

std::vector<ThroughputRow> bench_throughput(const ModelConfig& model_cfg, Dtype dt,
                                            const std::vector<Tree>& corpus, const Vocab& vocab,
                                            const BenchTrainConfig& cfg) {
  std::vector<Model::PreparedSentence> prepared;
  std::vector<int64_t> lengths;
  for (const Tree& t : corpus) {
    prepared.push_back(Model::prepare(t, vocab));
    lengths.push_back(static_cast<int64_t>(prepared.back().actions.size()));
  }

  std::vector<ThroughputRow> rows;
  for (int64_t bsz : cfg.batch_sizes) {
    std::vector<double> rates;
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      Model model(model_cfg, dt, cfg.train.seed + static_cast<uint64_t>(seed));
      model.seed_dropout(cfg.train.seed + static_cast<uint64_t>(seed) + 31);
      Adam adam;
      adam.init(model);
      TrainConfig tc = cfg.train;
      tc.batch_size = bsz;
      std::mt19937_64 rng(cfg.train.seed + static_cast<uint64_t>(100 * seed));
      BucketPlan plan = make_buckets(lengths, tc, rng);

      auto one_step = [&](const Batch& b) {
        std::vector<Model::PreparedSentence> batch;
        batch.reserve(b.items.size());
        for (size_t idx : b.items) batch.push_back(prepared[idx]);
        Tape tape;
        model.watch_all(tape);
        auto loss = model.batch_loss_prepared(&tape, batch, true);
        tape.backward(loss.total);
        adam.step(model, tape, tc.lr, tc.clip_norm);
        return static_cast<int64_t>(batch.size());
      };

      size_t cursor = 0;
      auto next_batch = [&]() -> const Batch& {
        const Batch& b = plan.batches[cursor];
        cursor = (cursor + 1) % plan.batches.size();
        return b;
      };
      for (int w = 0; w < cfg.warmup_steps; ++w) one_step(next_batch());

      int64_t sentences = 0;
      const double t0 = now_seconds();
      double elapsed = 0.0;
      while (sentences < cfg.min_sentences || elapsed < cfg.min_seconds) {
        sentences += one_step(next_batch());
        elapsed = now_seconds() - t0;
      }
      rates.push_back(static_cast<double>(sentences) / elapsed);
    }
    double mean = std::accumulate(rates.begin(), rates.end(), 0.0) /
                  static_cast<double>(rates.size());
    double var = 0.0;
    for (double r : rates) var += (r - mean) * (r - mean);
    ThroughputRow row;
    row.batch_size = bsz;
    row.sentences_per_sec = mean;
    row.sd = rates.size() > 1 ? std::sqrt(var / static_cast<double>(rates.size() - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rnng
