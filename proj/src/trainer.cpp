#include "glsr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace glsr {

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to `workers` threads.
template <class F>
void parallel_for(int n, int workers, F&& body) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void accumulate(LossReport& into, const LossReport& r) {
  into.recon += r.recon;
  into.kl += r.kl;
  into.glsr += r.glsr;
  into.total += r.total;
  into.beta = r.beta;
  if (into.partials.size() < r.partials.size()) into.partials.resize(r.partials.size(), 0.0);
  for (std::size_t k = 0; k < r.partials.size(); ++k) into.partials[k] += r.partials[k];
}

void divide(LossReport& r, double n) {
  r.recon /= n;
  r.kl /= n;
  r.glsr /= n;
  r.total /= n;
  for (auto& p : r.partials) p /= n;
}

struct ExampleNoise {
  std::vector<double> eps;
  DropoutSeeds dropout;
};

ExampleNoise example_noise(std::uint64_t seed, int latent_dim, double rate) {
  return {standard_normal(latent_dim, seed), DropoutSeeds{rate, mix_seed(seed, 1), mix_seed(seed, 2)}};
}

Grad example_gradient(const Model& model, const SequenceSample& x, const RegSpec& spec, double beta,
                      const ExampleNoise& noise, LossReport& report) {
  Tape tape;
  auto elbo = regularized_elbo_vars(tape, model, x, noise.eps, spec, beta,
                                    noise.dropout.rate > 0.0 ? &noise.dropout : nullptr);
  tape.backward(elbo.total);
  report = std::move(elbo.report);
  return tape.param_grad(model.params);
}

/// Sum of per-example gradients. In deterministic mode the reduction runs in
/// example order regardless of the worker count.
Grad reduce_batch(const Model& model, std::span<const SequenceSample* const> batch, std::span<const ExampleNoise> noise,
                  const RegSpec& spec, double beta, int workers, bool deterministic, LossReport& report_sum) {
  const int n = static_cast<int>(batch.size());
  std::vector<LossReport> reports(n);
  Grad total = Grad::zeros_like(model.params);
  if (deterministic || workers <= 1) {
    std::vector<Grad> grads(n);
    parallel_for(n, workers, [&](int i) { grads[i] = example_gradient(model, *batch[i], spec, beta, noise[i], reports[i]); });
    for (int i = 0; i < n; ++i) total.add(grads[i]);
  } else {
    std::mutex m;
    parallel_for(n, workers, [&](int i) {
      Grad g = example_gradient(model, *batch[i], spec, beta, noise[i], reports[i]);
      std::lock_guard<std::mutex> lock(m);
      total.add(g);
    });
  }
  for (const auto& r : reports) accumulate(report_sum, r);
  return total;
}

}  // namespace

void TrainConfig::validate() const {
  if (latent_dim < 1 || hidden < 1 || layers < 1 || embed < 1) throw std::invalid_argument("model widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be non-negative");
  if (ramp_steps < 0) throw std::invalid_argument("ramp_steps must be non-negative");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be non-negative");
  for (const auto& r : reg) {
    if (r.dim < 0 || r.dim >= latent_dim) throw std::invalid_argument("regularized dim out of range");
    if (!(r.r_sigma > 0.0) || !std::isfinite(r.r_mu)) throw std::invalid_argument("r_k needs finite mu and positive sigma");
  }
}

TrainConfig two_phase_preset(TrainConfig base) {
  if (base.reg.empty()) base.reg.push_back(RegConfig{});
  base.reg[0].r_mu = 5.0;
  base.reg[0].r_sigma = 1.0;
  return base;
}

ModelConfig model_config(const TrainConfig& config, const TokenVocab& vocab, int seq_len) {
  ModelConfig m;
  m.vocab_size = vocab.size();
  m.seq_len = seq_len;
  m.latent_dim = config.latent_dim;
  m.hidden = config.hidden;
  m.layers = config.layers;
  m.embed = config.embed;
  m.dropout = config.dropout;
  m.validate();
  return m;
}

RegSpec reg_spec(const TrainConfig& config, const TokenVocab& vocab) {
  RegSpec spec;
  spec.fd_step = config.fd_step;
  for (const auto& r : config.reg) spec.entries.push_back(RegEntry{r.dim, attribute_by_name(vocab, r.attribute), r.r_mu, r.r_sigma});
  spec.validate(config.latent_dim);
  return spec;
}

LossReport validation_objective(const Model& model, std::span<const SequenceSample> samples, const RegSpec& spec,
                                std::uint64_t eps_seed, int workers) {
  const int n = static_cast<int>(samples.size());
  std::vector<LossReport> reports(n);
  parallel_for(n, workers, [&](int i) {
    const auto eps = standard_normal(model.config.latent_dim, mix_seed(mix_seed(eps_seed, kValidationStream), i));
    reports[i] = regularized_elbo(model, samples[i], eps, spec, 1.0);
  });
  LossReport mean;
  for (const auto& r : reports) accumulate(mean, r);
  divide(mean, n);
  mean.beta = 1.0;
  return mean;
}

double reconstruction_accuracy(const Model& model, std::span<const SequenceSample> samples) {
  if (samples.empty()) throw std::invalid_argument("reconstruction_accuracy needs samples");
  long long hits = 0;
  long long total = 0;
  for (const auto& x : samples) {
    const auto post = encode(model, x);
    const auto decoded = argmax_decode(model, LatentPoint{post.mu});
    for (int i = 0; i < x.length(); ++i) hits += decoded.ids[i] == x.ids[i];
    total += x.length();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

Grad batch_gradient(const Model& model, std::span<const SequenceSample> batch, const RegSpec& spec, double beta,
                    std::uint64_t seed, double dropout, LossReport* mean_report) {
  std::vector<const SequenceSample*> ptrs;
  std::vector<ExampleNoise> noise;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ptrs.push_back(&batch[i]);
    noise.push_back(example_noise(mix_seed(seed, i), model.config.latent_dim, dropout));
  }
  LossReport sum;
  Grad g = reduce_batch(model, ptrs, noise, spec, beta, 1, true, sum);
  g.scale(1.0 / static_cast<double>(batch.size()));
  if (mean_report) {
    divide(sum, static_cast<double>(batch.size()));
    *mean_report = sum;
  }
  return g;
}

Checkpoint initial_checkpoint(const TrainConfig& config, const Corpus& corpus) {
  config.validate();
  Checkpoint ck;
  ck.config = config;
  ck.model = model_config(config, corpus.vocab, corpus.seq_len);
  ck.vocab = corpus.vocab;
  ck.params = make_model(ck.model, config.init_seed).params;
  return ck;
}

TrainResult train(const TrainConfig& config, const Corpus& corpus, const TrainOptions& options) {
  config.validate();
  corpus.validate();
  const auto train_set = corpus.subset(Split::kTrain);
  const auto val_set = corpus.subset(Split::kValidation);
  if (train_set.empty()) throw TrainError("training split is empty", 0);
  if (val_set.empty()) throw TrainError("validation split is empty", 0);

  const RegSpec spec = reg_spec(config, corpus.vocab);
  const int workers = resolve_workers(config.workers);
  const int n_train = static_cast<int>(train_set.size());
  const int batches_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;

  Checkpoint current = options.resume ? *options.resume : initial_checkpoint(config, corpus);
  if (!options.resume) current.state.ramp_steps = config.ramp_steps > 0 ? config.ramp_steps : 10LL * batches_per_epoch;
  if (current.model != model_config(config, corpus.vocab, corpus.seq_len)) {
    throw TrainError("resume checkpoint does not match the configured model", current.state.epochs_done);
  }
  Checkpoint best = current;

  Model model{current.model, std::move(current.params)};
  const double dropout = model.config.dropout;

  for (int epoch = current.state.epochs_done; epoch < config.max_epochs && !current.state.stopped; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const std::uint64_t epoch_seed = mix_seed(config.eps_seed, static_cast<std::uint64_t>(epoch));
    LossReport train_sum;
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int lo = b * config.batch_size;
      const int hi = std::min(n_train, lo + config.batch_size);
      std::vector<const SequenceSample*> batch;
      std::vector<ExampleNoise> noise;
      for (int p = lo; p < hi; ++p) {
        batch.push_back(&train_set[order[p]]);
        noise.push_back(example_noise(mix_seed(epoch_seed, static_cast<std::uint64_t>(p)), model.config.latent_dim, dropout));
      }
      const double beta = anneal(current.state.global_step, current.state.ramp_steps);
      Grad grad;
      try {
        grad = reduce_batch(model, batch, noise, spec, beta, workers, config.deterministic, train_sum);
      } catch (const GradientError& e) {
        throw TrainError(std::string("gradient explosion in epoch ") + std::to_string(epoch) + ": " + e.what(), epoch);
      }
      grad.scale(1.0 / static_cast<double>(batch.size()));
      clip_global_norm(grad, config.clip_norm);
      adam_ascent_step(model.params, grad, current.optimizer, config.learning_rate);
      ++current.state.global_step;
    }
    divide(train_sum, n_train);
    train_sum.beta = anneal(current.state.global_step, current.state.ramp_steps);

    EpochRecord record;
    record.epoch = epoch;
    record.train = train_sum;
    record.validation = validation_objective(model, val_set, spec, config.eps_seed, workers);
    record.validation_accuracy = reconstruction_accuracy(model, val_set);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(record.validation.total)) throw TrainError("validation objective diverged", epoch);

    current.history.push_back(record);
    current.state.epochs_done = epoch + 1;
    const bool improved = !current.state.best_validation || record.validation.total > *current.state.best_validation;
    if (improved) {
      current.state.best_validation = record.validation.total;
      current.state.best_epoch = epoch;
      current.state.stale_epochs = 0;
    } else if (++current.state.stale_epochs >= config.patience) {
      current.state.stopped = true;
    }
    current.params = model.params;
    if (improved) best = current;
    if (options.on_epoch) options.on_epoch(record);
  }

  current.params = std::move(model.params);
  // The best snapshot carries the full history and final trainer state so it
  // records how the run ended, but keeps the parameters of its own epoch.
  best.history = current.history;
  best.state.stopped = current.state.stopped;
  return {std::move(best), std::move(current)};
}

}  // namespace glsr
