#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>

#include "vle/config.hpp"
#include "vle/dataset.hpp"
#include "vle/losses.hpp"

namespace vle {

struct SamplerConfig {
  std::optional<double> mu_start;  // defaults to n_min
  std::optional<double> mu_end;    // defaults to n_cap
  double sigma = 1.0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 0.0;     // global gradient norm cap, 0 disables
};

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  Variant variant = Variant::vanilla;
  int n_min = 1;
  int n_cap = 5;
  SamplerConfig sampler;
  AdamConfig optimizer;
  LrSchedule lr_schedule = LrSchedule::constant;
  int batch_size = 16;
  int64_t total_steps = 1000;
  uint64_t seed = 0;
  int image_size = 32;
  std::string data_root;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  double lambda_mask = 1.0;
  bool reconstruction_distinctness = false;
  bool detach_steps = false;
  CodecConfig codec;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  double mu_start() const { return sampler.mu_start.value_or(n_min); }
  double mu_end() const { return sampler.mu_end.value_or(n_cap); }
  LossOptions loss_options() const { return {lambda_mask, reconstruction_distinctness}; }
  /// Learning rate used for the update at `step`; cosine decays from lr to 0 over total_steps.
  double lr_at(int64_t step) const;

  KeyValues to_key_values() const;
  /// Applies keys onto `base`; unknown keys raise ConfigError naming the key.
  static TrainConfig from_key_values(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_key_values(const KeyValues& kv);
};

/// Folded-normal token-count curriculum. The mean rises linearly from
/// mu_start at step 0 to mu_end at total_steps.
class TokenSampler {
 public:
  TokenSampler(int n_min, int n_cap, double mu_start, double mu_end, double sigma, int64_t total_steps, uint64_t seed);
  static TokenSampler from_config(const TrainConfig& c);

  double mean_at(int64_t step) const;
  /// clamp(round(|g|), n_min, n_cap) with g ~ Normal(mean_at(step), sigma).
  int sample(int64_t step);

  std::string rng_state() const;
  void set_rng_state(const std::string& s);
  int n_min() const { return n_min_; }
  int n_cap() const { return n_cap_; }

 private:
  int n_min_, n_cap_;
  double mu_start_, mu_end_, sigma_;
  int64_t total_steps_;
  std::mt19937_64 rng_;
};

struct AdamState {
  int64_t step = 0;
  ParamSet<float> m;
  ParamSet<float> v;
};

AdamState init_adam(const ParamSet<float>& params);
void adam_update(ParamSet<float>& params, const ParamSet<float>& grads, AdamState& state, const AdamConfig& cfg);

struct StepOptions {
  LossOptions loss;
  bool detach_steps = false;
  int64_t step_index = 0;  // only used in diagnostics
};

/// One optimizer step on the variant's objective over the full unroll.
/// Updates params and optimizer state in place. Throws NumericError (with the
/// step index and per-step terms) if the loss is not finite.
LossBreakdown train_step(CodecParams<float>& params, AdamState& opt, const AdamConfig& adam, const ImageBatch& batch,
                         int n_tokens, Variant variant, const StepOptions& opts = {});

struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;
  uint32_t format_version = kFormatVersion;
  TrainConfig config;
  CodecParams<float> params;
  AdamState adam;
  std::string sampler_rng;
  int64_t global_step = 0;
};

/// Fresh checkpoint at step 0: initialized params, zero optimizer moments.
Checkpoint initial_checkpoint(const TrainConfig& config);

struct TrainHooks {
  /// CSV lines: step,n_tokens,total_loss,terms.
  std::ostream* log = nullptr;
  /// Directory for periodic checkpoints (ckpt_<step>.vlec); empty disables.
  std::string checkpoint_dir;
  /// Stop after this global step even if total_steps is larger.
  std::optional<int64_t> stop_after;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

/// Indices of the batch consumed at `step`: consecutive slices of a
/// per-epoch seeded permutation.
std::vector<size_t> batch_indices(uint64_t seed, int64_t step, int batch_size, size_t dataset_size);

/// Runs (or resumes) the curriculum until config.total_steps.
Checkpoint train(const TrainConfig& config, const Dataset& data, std::optional<Checkpoint> resume = std::nullopt,
                 const TrainHooks& hooks = {});

void write_log_header(std::ostream& os);

}  // namespace vle
