// Mini-batch construction (action-length bucketing with a total-action cap),
// Adam, the training/validation loop, and the throughput benchmark.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rnng/model.hpp"
#include "rnng/vocab.hpp"

namespace rnng {

struct TrainConfig {
  int64_t batch_size = 512;
  int64_t max_actions = 26000;  // cap on total actions across a batch
  int64_t bucket = 4096;        // sentences per length-sorted group
  double lr = 0.001;
  int64_t validate_every = 1000;  // batches
  int64_t max_epochs = 1;
  int64_t max_steps = 0;  // 0 = no limit
  uint64_t seed = 1;
  double clip_norm = 0.0;  // 0 = off; 5.0 behind the --clip flag
  void validate() const;
};

// Bias-corrected Adam. Moments are shaped like their parameters and keyed
// by the fixed Parameters iteration order.
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(Model& model);
  bool initialized() const { return !m_.empty(); }
  int64_t step_count() const { return t_; }

  // One update from the tape's gradients. Throws NumericError on any
  // non-finite gradient, leaving parameters untouched. Returns the global
  // gradient norm (pre-clipping).
  double step(Model& model, const Tape& tape, double lr, double clip_norm = 0.0);

  // Raw update used by tests and the optimizer oracle.
  void step_raw(std::vector<Tensor> params, const std::vector<Tensor>& grads, double lr);
  void step_scaled(std::vector<Tensor> params, const std::vector<Tensor>& grads, double lr,
                   double grad_scale);

 private:
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct Batch {
  std::vector<size_t> items;  // indices into the prepared corpus
  int64_t total_actions = 0;
};

// Sort by action length, partition into consecutive groups of cfg.bucket,
// shuffle within each group, then greedily fill batches subject to both the
// sentence-count and the total-action caps. Every index appears exactly
// once; a single over-cap sentence gets its own batch (flagged).
struct BucketPlan {
  std::vector<Batch> batches;
  std::vector<size_t> oversized;  // indices that exceeded the cap alone
};
BucketPlan make_buckets(const std::vector<int64_t>& action_lengths, const TrainConfig& cfg,
                        std::mt19937_64& rng);

struct MetricsRow {
  int64_t step = 0;
  double wallclock_s = 0.0;
  double train_nll = 0.0;
  double dev_nll = 0.0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  double best_dev_nll = 0.0;
  int64_t best_step = 0;
  int64_t steps = 0;
  double final_train_nll = 0.0;
};

struct TrainHooks {
  // Called after each validation with the freshest metrics row.
  std::function<void(const MetricsRow&)> on_metrics;
  // Called when a new best-dev model is seen.
  std::function<void(int64_t step)> on_best;
  // Called every optimizer step (benchmarks, progress).
  std::function<void(int64_t step, double loss)> on_step;
};

// Teacher-forced training with per-epoch reshuffled buckets; dev NLL is the
// total (summed) dev-set NLL with dropout off.
TrainResult train(Model& model, const std::vector<Tree>& train_trees,
                  const std::vector<Tree>& dev_trees, const Vocab& vocab, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

double total_nll(Model& model, const std::vector<Model::PreparedSentence>& corpus,
                 int64_t batch_size, int64_t max_actions);

struct ThroughputRow {
  int64_t batch_size = 0;
  double sentences_per_sec = 0.0;  // mean over seeds
  double sd = 0.0;
};

struct BenchTrainConfig {
  std::vector<int64_t> batch_sizes{1, 2, 4, 8, 16, 32, 64};
  int seeds = 3;
  int warmup_steps = 2;
  // Measure at least this many sentences and at least this much wall time.
  int64_t min_sentences = 256;
  double min_seconds = 0.5;
  TrainConfig train;
};

// Full training steps (forward + backward + update), warmup excluded.
std::vector<ThroughputRow> bench_throughput(const ModelConfig& model_cfg, Dtype dt,
                                            const std::vector<Tree>& corpus, const Vocab& vocab,
                                            const BenchTrainConfig& cfg);

}  // namespace rnng
