#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prefsum/corpus.hpp"
#include "prefsum/model.hpp"
#include "prefsum/param_store.hpp"
#include "prefsum/vocab.hpp"

namespace prefsum {

enum class TrainMode { kPretrain, kFinetune, kIpl, kIipl };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::kPretrain;
  double lr_outer = 3e-5;  // Adam rate (alpha for the meta outer loop)
  double lr_inner = 3e-5;  // inner-loop SGD rate (beta)
  size_t batch_size = 8;
  size_t meta_batch_tasks = 4;
  size_t inner_steps = 1;
  size_t warmup_steps = 0;
  size_t total_steps = 100;
  double label_smoothing = 0.1;
  uint64_t seed = 0;
  bool second_order = true;
  // Post-loop finetune stage on the annotated examples; 0 steps disables it.
  size_t finetune_warmup = 0;
  size_t finetune_steps = 0;
  double finetune_lr = 3e-5;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);

  // (warmup, total steps, lr) presets for the 10- and 100-example regimes.
  static TrainConfig finetune_profile_10();
  static TrainConfig finetune_profile_100();
};

// Linear warmup factor; steps are 1-based, so lr(t) = base * t / warmup for
// t < warmup and base afterwards.
double warmup_lr_scale(size_t step, size_t warmup_steps);

struct StepLogEntry {
  size_t step = 0;
  std::string phase;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<StepLogEntry> log;
  double final_loss = 0.0;
};

void save_step_log(const std::string& path, const std::vector<StepLogEntry>& log);

// ---- example encoding -------------------------------------------------------

struct SupervisedExample {
  std::vector<int> src;
  std::vector<int> dec_input;   // BOS + summary ids
  std::vector<int> dec_target;  // summary ids + EOS
  std::optional<Tensor> preference;

  size_t target_tokens() const { return dec_target.size(); }
};

SupervisedExample encode_example(const Vocab& vocab, const std::string& article,
                                 const std::string& summary,
                                 const std::optional<PreferenceVector>& preference,
                                 size_t max_seq_len, const TokenizerOptions& tok = {});

// Annotated records only; computes gold preferences when with_preferences.
std::vector<SupervisedExample> encode_records(const Vocab& vocab,
                                              const std::vector<ExampleRecord>& records,
                                              size_t max_seq_len, bool with_preferences,
                                              const MetricOptions& opts = {});

std::vector<SupervisedExample> encode_ssl_pairs(const Vocab& vocab,
                                                const std::vector<SslPair>& pairs,
                                                size_t max_seq_len,
                                                const TokenizerOptions& tok = {});

struct MetaTaskExamples {
  std::vector<SupervisedExample> train;
  std::vector<SupervisedExample> test;
};

std::vector<MetaTaskExamples> encode_meta_tasks(const Vocab& vocab,
                                                const std::vector<MetaTask>& tasks,
                                                const std::vector<Corpus>& sources,
                                                size_t max_seq_len,
                                                const MetricOptions& opts = {});

// Token-weighted mean NLL over a batch (teacher forcing).
Tensor batch_nll(const Seq2SeqModel& model,
                 const std::vector<const SupervisedExample*>& batch, double smoothing,
                 const ParamOverlay* overlay = nullptr, Rng* dropout_rng = nullptr);

// ---- supervised training ----------------------------------------------------

// One Adam step per call over a seeded batch; shared by every phase that does
// plain supervised training so identical seeds give identical trajectories.
class SupervisedStepper {
 public:
  SupervisedStepper(Seq2SeqModel& model, const std::vector<SupervisedExample>& dataset,
                    const std::vector<ParamGroup>& groups, double lr,
                    size_t warmup_steps, size_t batch_size, double smoothing,
                    uint64_t seed, std::string phase, double dropout_seed_salt = 0);
  StepLogEntry step();
  size_t steps_taken() const { return step_; }

 private:
  Seq2SeqModel& model_;
  const std::vector<SupervisedExample>& dataset_;
  AdamOptimizer opt_;
  std::vector<Tensor> params_;
  double lr_;
  size_t warmup_steps_;
  size_t batch_size_;
  double smoothing_;
  Rng batch_rng_;
  Rng dropout_rng_;
  std::string phase_;
  size_t step_ = 0;
};

TrainResult train_supervised(Seq2SeqModel& model,
                             const std::vector<SupervisedExample>& dataset,
                             const TrainConfig& cfg,
                             const std::vector<ParamGroup>& update_groups,
                             const std::string& phase = "train");

// Self-supervised stage: optimizes theta and phi_self jointly, feeding each
// pair's preference vector through the modulated adapters.
TrainResult train_ipl(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
                      const TrainConfig& cfg);

// ---- bi-level optimization --------------------------------------------------

using OverlayLossFn = std::function<Tensor(const ParamOverlay&)>;

struct MetaTaskLoss {
  OverlayLossFn train_loss;
  OverlayLossFn test_loss;
};

// `steps` SGD updates of psi on the task-train loss. With track_graph the
// returned tensors stay differentiable with respect to the inputs; otherwise
// each update detaches (first-order mode).
std::map<std::string, Tensor> inner_adapt(const std::map<std::string, Tensor>& psi,
                                          const OverlayLossFn& loss, double beta,
                                          size_t steps, bool track_graph);

// Sum over tasks of d(task-test NLL at adapted psi)/d(phi), exact (through
// the adaptation) or first-order. Returns plain tensors keyed by name.
std::map<std::string, Tensor> meta_gradient(ParamStore& store,
                                            const std::vector<std::string>& phi_names,
                                            const std::vector<MetaTaskLoss>& tasks,
                                            double beta, size_t inner_steps,
                                            bool second_order,
                                            double* mean_test_loss = nullptr);

// Applies one Adam update to phi from the accumulated meta-gradient.
void meta_outer_step(ParamStore& store, const std::vector<std::string>& phi_names,
                     const std::vector<MetaTaskLoss>& tasks, AdamOptimizer& outer_opt,
                     double beta, size_t inner_steps, bool second_order,
                     double lr_scale = 1.0, double* mean_test_loss = nullptr);

// ---- IIPL -------------------------------------------------------------------

// Alternating loop: intra-phase supervised batch on the self-supervised pairs
// (updates theta + phi_self), then inter-phase meta step over source tasks
// (updates phi_meta only). One shared step counter; strict 1:1 alternation.
class IiplTrainer {
 public:
  IiplTrainer(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
              std::vector<MetaTaskExamples> meta_tasks, const TrainConfig& cfg);

  StepLogEntry intra_step();
  StepLogEntry inter_step();
  std::vector<StepLogEntry> run();  // cfg.total_steps alternations

  // Final adaptation on the annotated target examples: theta and phi_meta
  // update, phi_self stays frozen.
  std::vector<StepLogEntry> finetune(const std::vector<SupervisedExample>& annotated);

 private:
  Seq2SeqModel& model_;
  TrainConfig cfg_;
  SupervisedStepper intra_;
  std::vector<MetaTaskExamples> meta_tasks_;
  std::vector<std::string> phi_meta_names_;
  AdamOptimizer outer_opt_;
  Rng task_rng_;
  size_t step_ = 0;
};

TrainResult train_iipl(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
                       std::vector<MetaTaskExamples> meta_tasks,
                       const std::vector<SupervisedExample>& annotated,
                       const TrainConfig& cfg);

}  // namespace prefsum
