#include "prefsum/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prefsum {

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kPretrain: return "pretrain";
    case TrainMode::kFinetune: return "finetune";
    case TrainMode::kIpl: return "ipl";
    case TrainMode::kIipl: return "iipl";
  }
  return "pretrain";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "pretrain") return TrainMode::kPretrain;
  if (name == "finetune") return TrainMode::kFinetune;
  if (name == "ipl") return TrainMode::kIpl;
  if (name == "iipl") return TrainMode::kIipl;
  throw DataError("unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (lr_outer <= 0.0 || lr_inner <= 0.0)
    throw DataError("train config: learning rates must be positive");
  if (inner_steps < 1) throw DataError("train config: inner_steps must be >= 1");
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw DataError("train config: label_smoothing must be in [0,1)");
}

Json TrainConfig::to_json() const {
  Json j;
  j["mode"] = train_mode_name(mode);
  j["lr_outer"] = lr_outer;
  j["lr_inner"] = lr_inner;
  j["batch_size"] = batch_size;
  j["meta_batch_tasks"] = meta_batch_tasks;
  j["inner_steps"] = inner_steps;
  j["warmup_steps"] = warmup_steps;
  j["total_steps"] = total_steps;
  j["label_smoothing"] = label_smoothing;
  j["seed"] = seed;
  j["second_order"] = second_order;
  j["finetune_warmup"] = finetune_warmup;
  j["finetune_steps"] = finetune_steps;
  j["finetune_lr"] = finetune_lr;
  return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.mode = train_mode_from_name(j.value("mode", std::string("pretrain")));
  c.lr_outer = j.value("lr_outer", c.lr_outer);
  c.lr_inner = j.value("lr_inner", c.lr_inner);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.meta_batch_tasks = j.value("meta_batch_tasks", c.meta_batch_tasks);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.seed = j.value("seed", c.seed);
  c.second_order = j.value("second_order", c.second_order);
  c.finetune_warmup = j.value("finetune_warmup", c.finetune_warmup);
  c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
  c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
  c.validate();
  return c;
}

TrainConfig TrainConfig::finetune_profile_10() {
  TrainConfig c;
  c.mode = TrainMode::kFinetune;
  c.warmup_steps = 25;
  c.total_steps = 100;
  c.lr_outer = 3e-5;
  return c;
}

TrainConfig TrainConfig::finetune_profile_100() {
  TrainConfig c;
  c.mode = TrainMode::kFinetune;
  c.warmup_steps = 20;
  c.total_steps = 200;
  c.lr_outer = 3e-5;
  return c;
}

double warmup_lr_scale(size_t step, size_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup_steps);
}

void save_step_log(const std::string& path, const std::vector<StepLogEntry>& log) {
  std::vector<Json> lines;
  lines.reserve(log.size());
  for (const auto& e : log) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["step"] = e.step;
    j["phase"] = e.phase;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

// ---------------------------------------------------------------------------
// example encoding

SupervisedExample encode_example(const Vocab& vocab, const std::string& article,
                                 const std::string& summary,
                                 const std::optional<PreferenceVector>& preference,
                                 size_t max_seq_len, const TokenizerOptions& tok) {
  SupervisedExample ex;
  ex.src = vocab.encode_text(article, max_seq_len, tok);
  if (ex.src.empty()) throw DataError("article tokenizes to nothing");
  const auto summary_ids = vocab.encode_text(summary, max_seq_len - 1, tok);
  ex.dec_input.push_back(Vocab::kBos);
  ex.dec_input.insert(ex.dec_input.end(), summary_ids.begin(), summary_ids.end());
  ex.dec_target = summary_ids;
  ex.dec_target.push_back(Vocab::kEos);
  if (preference) ex.preference = Seq2SeqModel::preference_tensor(*preference);
  return ex;
}

std::vector<SupervisedExample> encode_records(const Vocab& vocab,
                                              const std::vector<ExampleRecord>& records,
                                              size_t max_seq_len, bool with_preferences,
                                              const MetricOptions& opts) {
  std::vector<SupervisedExample> out;
  for (const auto& r : records) {
    if (!r.annotated()) continue;
    std::optional<PreferenceVector> pref;
    if (with_preferences) {
      pref = r.preference ? *r.preference
                          : preference_vector_text(r.article, *r.summary, opts);
    }
    out.push_back(encode_example(vocab, r.article, *r.summary, pref, max_seq_len,
                                 opts.tokenizer));
  }
  if (out.empty()) throw DataError("no annotated examples to encode");
  return out;
}

std::vector<SupervisedExample> encode_ssl_pairs(const Vocab& vocab,
                                                const std::vector<SslPair>& pairs,
                                                size_t max_seq_len,
                                                const TokenizerOptions& tok) {
  std::vector<SupervisedExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back(encode_example(vocab, p.pseudo_article, p.pseudo_summary, p.preference,
                                 max_seq_len, tok));
  }
  return out;
}

std::vector<MetaTaskExamples> encode_meta_tasks(const Vocab& vocab,
                                                const std::vector<MetaTask>& tasks,
                                                const std::vector<Corpus>& sources,
                                                size_t max_seq_len,
                                                const MetricOptions& opts) {
  std::map<std::string, const Corpus*> by_id;
  for (const auto& c : sources) by_id[c.id] = &c;

  std::vector<MetaTaskExamples> out;
  out.reserve(tasks.size());
  for (const auto& task : tasks) {
    const auto it = by_id.find(task.source_corpus);
    if (it == by_id.end())
      throw DataError("meta task references unknown corpus '" + task.source_corpus + "'");
    auto resolve = [&](const std::vector<std::string>& ids) {
      std::vector<ExampleRecord> records;
      for (const auto& id : ids) {
        const ExampleRecord* r = it->second->find(id);
        if (!r)
          throw DataError("meta task references unknown record '" + id + "' in corpus '" +
                          task.source_corpus + "'");
        if (!r->annotated())
          throw DataError("meta task record '" + id + "' has no summary");
        records.push_back(*r);
      }
      return records;
    };
    MetaTaskExamples ex;
    ex.train = encode_records(vocab, resolve(task.train_ids), max_seq_len,
                              /*with_preferences=*/true, opts);
    ex.test = encode_records(vocab, resolve(task.test_ids), max_seq_len,
                             /*with_preferences=*/true, opts);
    out.push_back(std::move(ex));
  }
  return out;
}

Tensor batch_nll(const Seq2SeqModel& model,
                 const std::vector<const SupervisedExample*>& batch, double smoothing,
                 const ParamOverlay* overlay, Rng* dropout_rng) {
  if (batch.empty()) throw DataError("batch_nll: empty batch");
  const bool needs_pref = model.config().pref_adapters_active();
  Tensor total;
  size_t tokens = 0;
  for (const SupervisedExample* ex : batch) {
    if (needs_pref && !ex->preference.has_value())
      throw DataError("pair missing preference");
    const Tensor* pref = ex->preference ? &*ex->preference : nullptr;
    Tensor logits = model.forward(ex->src, ex->dec_input, pref, overlay, dropout_rng);
    Tensor nll = nll_label_smoothed(logits, ex->dec_target, smoothing, Vocab::kPad);
    Tensor weighted = mul_scalar(nll, static_cast<double>(ex->target_tokens()));
    total = total.defined() ? add(total, weighted) : weighted;
    tokens += ex->target_tokens();
  }
  return mul_scalar(total, 1.0 / static_cast<double>(tokens));
}

// ---------------------------------------------------------------------------
// supervised stepper

namespace {

std::vector<Tensor> collect_params(Seq2SeqModel& model,
                                   const std::vector<ParamGroup>& groups) {
  std::vector<Tensor> out;
  for (const auto& name : model.params().names()) {
    const ParamGroup g = model.params().group_of(name);
    if (std::find(groups.begin(), groups.end(), g) != groups.end())
      out.push_back(model.params().at(name));
  }
  if (out.empty()) throw DataError("no parameters in the requested groups");
  return out;
}

}  // namespace

SupervisedStepper::SupervisedStepper(Seq2SeqModel& model,
                                     const std::vector<SupervisedExample>& dataset,
                                     const std::vector<ParamGroup>& groups, double lr,
                                     size_t warmup_steps, size_t batch_size,
                                     double smoothing, uint64_t seed, std::string phase,
                                     double dropout_seed_salt)
    : model_(model),
      dataset_(dataset),
      opt_(collect_params(model, groups), lr),
      params_(collect_params(model, groups)),
      lr_(lr),
      warmup_steps_(warmup_steps),
      batch_size_(batch_size),
      smoothing_(smoothing),
      batch_rng_(derive_seed(seed, "supervised-batch")),
      dropout_rng_(derive_seed(seed, "dropout" + std::to_string(dropout_seed_salt))),
      phase_(std::move(phase)) {
  if (dataset_.empty()) throw DataError("empty dataset");
}

StepLogEntry SupervisedStepper::step() {
  ++step_;
  std::vector<const SupervisedExample*> batch;
  if (batch_size_ >= dataset_.size()) {
    for (const auto& ex : dataset_) batch.push_back(&ex);
  } else {
    for (size_t i : batch_rng_.sample_indices(dataset_.size(), batch_size_))
      batch.push_back(&dataset_[i]);
  }
  Rng* drop = model_.config().dropout_rate > 0.0 ? &dropout_rng_ : nullptr;
  Tensor loss = batch_nll(model_, batch, smoothing_, nullptr, drop);
  opt_.zero_grad();
  backward(loss);
  const double scale = warmup_lr_scale(step_, warmup_steps_);
  opt_.step(scale);
  return {step_, phase_, loss.item(), lr_ * scale};
}

TrainResult train_supervised(Seq2SeqModel& model,
                             const std::vector<SupervisedExample>& dataset,
                             const TrainConfig& cfg,
                             const std::vector<ParamGroup>& update_groups,
                             const std::string& phase) {
  cfg.validate();
  SupervisedStepper stepper(model, dataset, update_groups, cfg.lr_outer,
                            cfg.warmup_steps, cfg.batch_size, cfg.label_smoothing,
                            cfg.seed, phase);
  TrainResult result;
  for (size_t t = 0; t < cfg.total_steps; ++t) result.log.push_back(stepper.step());
  result.final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  return result;
}

TrainResult train_ipl(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
                      const TrainConfig& cfg) {
  std::vector<ParamGroup> groups = {ParamGroup::kTheta};
  if (model.config().adapter_set_self) groups.push_back(ParamGroup::kPhiSelf);
  return train_supervised(model, ssl, cfg, groups, "ipl");
}

// ---------------------------------------------------------------------------
// bi-level optimization

std::map<std::string, Tensor> inner_adapt(const std::map<std::string, Tensor>& psi,
                                          const OverlayLossFn& loss, double beta,
                                          size_t steps, bool track_graph) {
  std::map<std::string, Tensor> cur;
  if (track_graph) {
    cur = psi;
  } else {
    for (const auto& [name, t] : psi) cur[name] = t.detach().set_requires_grad(true);
  }
  for (size_t s = 0; s < steps; ++s) {
    ParamOverlay overlay{cur};
    Tensor task_loss = loss(overlay);
    std::vector<std::string> names;
    std::vector<Tensor> wrt;
    for (const auto& [name, t] : cur) {
      names.push_back(name);
      wrt.push_back(t);
    }
    const auto grads = grad(task_loss, wrt, /*create_graph=*/track_graph);
    std::map<std::string, Tensor> next;
    for (size_t i = 0; i < names.size(); ++i) {
      Tensor updated = sub(wrt[i], mul_scalar(grads[i], beta));
      next[names[i]] =
          track_graph ? updated : updated.detach().set_requires_grad(true);
    }
    cur = std::move(next);
  }
  return cur;
}

std::map<std::string, Tensor> meta_gradient(ParamStore& store,
                                            const std::vector<std::string>& phi_names,
                                            const std::vector<MetaTaskLoss>& tasks,
                                            double beta, size_t inner_steps,
                                            bool second_order, double* mean_test_loss) {
  if (tasks.empty()) throw DataError("meta_gradient: empty task batch");

  std::map<std::string, Tensor> accum;
  double loss_sum = 0.0;

  if (second_order) {
    // Sum of task-test losses, differentiated exactly through the adaptation.
    std::map<std::string, Tensor> psi0;
    for (const auto& name : phi_names) psi0[name] = store.at(name);
    Tensor total;
    for (const auto& task : tasks) {
      const auto adapted = inner_adapt(psi0, task.train_loss, beta, inner_steps, true);
      Tensor test_loss = task.test_loss(ParamOverlay{adapted});
      loss_sum += test_loss.item();
      total = total.defined() ? add(total, test_loss) : test_loss;
    }
    std::vector<Tensor> wrt;
    for (const auto& name : phi_names) wrt.push_back(store.at(name));
    const auto grads = grad(total, wrt);
    for (size_t i = 0; i < phi_names.size(); ++i) accum[phi_names[i]] = grads[i];
  } else {
    // First-order: gradients at the adapted parameters applied to phi.
    for (const auto& task : tasks) {
      std::map<std::string, Tensor> psi0;
      for (const auto& name : phi_names) psi0[name] = store.at(name);
      const auto adapted = inner_adapt(psi0, task.train_loss, beta, inner_steps, false);
      Tensor test_loss = task.test_loss(ParamOverlay{adapted});
      loss_sum += test_loss.item();
      std::vector<std::string> names;
      std::vector<Tensor> wrt;
      for (const auto& [name, t] : adapted) {
        names.push_back(name);
        wrt.push_back(t);
      }
      const auto grads = grad(test_loss, wrt);
      for (size_t i = 0; i < names.size(); ++i) {
        auto it = accum.find(names[i]);
        if (it == accum.end()) {
          accum[names[i]] = grads[i];
        } else {
          NoGradGuard no_grad;
          it->second = add(it->second, grads[i]);
        }
      }
    }
  }
  if (mean_test_loss) *mean_test_loss = loss_sum / static_cast<double>(tasks.size());
  return accum;
}

void meta_outer_step(ParamStore& store, const std::vector<std::string>& phi_names,
                     const std::vector<MetaTaskLoss>& tasks, AdamOptimizer& outer_opt,
                     double beta, size_t inner_steps, bool second_order, double lr_scale,
                     double* mean_test_loss) {
  const auto grads =
      meta_gradient(store, phi_names, tasks, beta, inner_steps, second_order,
                    mean_test_loss);
  for (const auto& name : phi_names) {
    Tensor& p = store.at(name);
    p.zero_grad();
    p.accumulate_grad(grads.at(name).detach());
  }
  outer_opt.step(lr_scale);
}

// ---------------------------------------------------------------------------
// IIPL

IiplTrainer::IiplTrainer(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
                         std::vector<MetaTaskExamples> meta_tasks,
                         const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      intra_(model, ssl,
             model.config().adapter_set_self
                 ? std::vector<ParamGroup>{ParamGroup::kTheta, ParamGroup::kPhiSelf}
                 : std::vector<ParamGroup>{ParamGroup::kTheta},
             cfg.lr_outer, cfg.warmup_steps, cfg.batch_size, cfg.label_smoothing,
             cfg.seed, "intra"),
      meta_tasks_(std::move(meta_tasks)),
      phi_meta_names_(model.params().names_in_group(ParamGroup::kPhiMeta)),
      outer_opt_(model.params().tensors_in_group(ParamGroup::kPhiMeta), cfg.lr_outer),
      task_rng_(derive_seed(cfg.seed, "meta-task-batch")) {
  cfg_.validate();
  if (cfg_.meta_batch_tasks > 0 && meta_tasks_.empty())
    throw DataError("IIPL requires a meta dataset");
  if (cfg_.meta_batch_tasks > 0 && phi_meta_names_.empty())
    throw DataError("IIPL requires phi_meta adapters in the model");
}

StepLogEntry IiplTrainer::intra_step() {
  StepLogEntry e = intra_.step();
  e.step = step_ + 1;
  return e;
}

StepLogEntry IiplTrainer::inter_step() {
  ++step_;
  if (cfg_.meta_batch_tasks == 0) return {step_, "inter", 0.0, 0.0};

  std::vector<size_t> picks;
  if (cfg_.meta_batch_tasks >= meta_tasks_.size()) {
    for (size_t i = 0; i < meta_tasks_.size(); ++i) picks.push_back(i);
  } else {
    picks = task_rng_.sample_indices(meta_tasks_.size(), cfg_.meta_batch_tasks);
  }

  std::vector<MetaTaskLoss> batch;
  batch.reserve(picks.size());
  for (size_t i : picks) {
    const MetaTaskExamples& task = meta_tasks_[i];
    auto loss_over = [this](const std::vector<SupervisedExample>& examples) {
      return [this, &examples](const ParamOverlay& overlay) {
        std::vector<const SupervisedExample*> ptrs;
        ptrs.reserve(examples.size());
        for (const auto& ex : examples) ptrs.push_back(&ex);
        return batch_nll(model_, ptrs, cfg_.label_smoothing, &overlay);
      };
    };
    batch.push_back({loss_over(task.train), loss_over(task.test)});
  }

  double test_loss = 0.0;
  const double scale = warmup_lr_scale(step_, cfg_.warmup_steps);
  meta_outer_step(model_.params(), phi_meta_names_, batch, outer_opt_, cfg_.lr_inner,
                  cfg_.inner_steps, cfg_.second_order, scale, &test_loss);
  return {step_, "inter", test_loss, cfg_.lr_outer * scale};
}

std::vector<StepLogEntry> IiplTrainer::run() {
  std::vector<StepLogEntry> log;
  for (size_t t = 0; t < cfg_.total_steps; ++t) {
    log.push_back(intra_step());
    log.push_back(inter_step());
  }
  return log;
}

std::vector<StepLogEntry> IiplTrainer::finetune(
    const std::vector<SupervisedExample>& annotated) {
  if (cfg_.finetune_steps == 0) return {};
  std::vector<ParamGroup> groups = {ParamGroup::kTheta};
  if (model_.config().adapter_set_meta) groups.push_back(ParamGroup::kPhiMeta);
  SupervisedStepper stepper(model_, annotated, groups, cfg_.finetune_lr,
                            cfg_.finetune_warmup, cfg_.batch_size,
                            cfg_.label_smoothing, cfg_.seed, "finetune",
                            /*dropout_seed_salt=*/1);
  std::vector<StepLogEntry> log;
  for (size_t t = 0; t < cfg_.finetune_steps; ++t) log.push_back(stepper.step());
  return log;
}

TrainResult train_iipl(Seq2SeqModel& model, const std::vector<SupervisedExample>& ssl,
                       std::vector<MetaTaskExamples> meta_tasks,
                       const std::vector<SupervisedExample>& annotated,
                       const TrainConfig& cfg) {
  IiplTrainer trainer(model, ssl, std::move(meta_tasks), cfg);
  TrainResult result;
  result.log = trainer.run();
  if (cfg.finetune_steps > 0 && !annotated.empty()) {
    const auto ft = trainer.finetune(annotated);
    result.log.insert(result.log.end(), ft.begin(), ft.end());
  }
  result.final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  return result;
}

}  // namespace prefsum
