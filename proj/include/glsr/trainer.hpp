#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glsr/corpus.hpp"
#include "glsr/diffcore.hpp"
#include "glsr/objective.hpp"
#include "glsr/seqvae.hpp"

namespace glsr {

class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RegConfig {
  int dim = 0;
  std::string attribute = "num_played_notes";
  double r_mu = 2.0;
  double r_sigma = 0.1;
  bool operator==(const RegConfig&) const = default;
};

struct TrainConfig {
  int latent_dim = 12;
  int hidden = 32;
  int layers = 2;
  int embed = 16;
  double dropout = 0.2;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 30;
  /// 0 resolves to ten epochs' worth of steps.
  long long ramp_steps = 0;
  /// One entry (dim 0, note count, N(2, 0.1)) by default; empty disables the regularizer.
  std::vector<RegConfig> reg{RegConfig{}};
  double fd_step = 1e-2;
  int patience = 5;
  double clip_norm = 10.0;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  std::uint64_t eps_seed = 3;
  bool deterministic = false;
  /// 0 uses the hardware concurrency.
  int workers = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Same configuration with r_1 = N(5, 1), the steep-slope comparison setting.
TrainConfig two_phase_preset(TrainConfig base);

ModelConfig model_config(const TrainConfig& config, const TokenVocab& vocab, int seq_len);
RegSpec reg_spec(const TrainConfig& config, const TokenVocab& vocab);

struct EpochRecord {
  int epoch = 0;
  LossReport train;
  LossReport validation;
  double validation_accuracy = 0.0;
  double wall_seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainerState {
  int epochs_done = 0;
  long long global_step = 0;
  long long ramp_steps = 1;
  std::optional<double> best_validation;
  int best_epoch = -1;
  int stale_epochs = 0;
  bool stopped = false;
};

struct Checkpoint {
  TrainConfig config;
  ModelConfig model;
  TokenVocab vocab;
  ParamTree params;
  AdamState optimizer;
  TrainerState state;
  TrainHistory history;

  Model as_model() const { return Model{model, params}; }
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);
/// Writes to a temporary file and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);
std::string to_json(const EpochRecord& record, bool with_wall_time = true);

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
};

struct TrainOptions {
  std::optional<Checkpoint> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Fresh checkpoint with initialized parameters and no history.
Checkpoint initial_checkpoint(const TrainConfig& config, const Corpus& corpus);

TrainResult train(const TrainConfig& config, const Corpus& corpus, const TrainOptions& options = {});

/// Mean objective over `samples` at beta = 1 with fixed per-sample noise and no dropout.
LossReport validation_objective(const Model& model, std::span<const SequenceSample> samples, const RegSpec& spec,
                                std::uint64_t eps_seed, int workers = 1);

/// Mean over samples and steps of [argmax_decode(mu(x))_i == x_i].
double reconstruction_accuracy(const Model& model, std::span<const SequenceSample> samples);

/// Mean per-example gradient of the regularized ELBO over a batch, with fixed
/// per-example noise derived from `seed`. Exposed for gradient-equality checks.
Grad batch_gradient(const Model& model, std::span<const SequenceSample> batch, const RegSpec& spec, double beta,
                    std::uint64_t seed, double dropout = 0.0, LossReport* mean_report = nullptr);

}  // namespace glsr
