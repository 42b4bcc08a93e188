#include "vle/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "vle/checkpoint.hpp"

namespace vle {

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void check(bool cond, const std::string& key, const std::string& what) {
  if (!cond) throw ConfigError("invalid config key '" + key + "': " + what);
}

}  // namespace

void TrainConfig::validate() const {
  check(n_min >= 1, "n_min", "must be >= 1");
  check(variant != Variant::masked || n_min >= 2, "n_min", "masked training starts with at least two tokens");
  check(n_cap >= n_min, "n_cap", "must be >= n_min");
  check(mu_start() <= mu_end(), "sampler.mu_start", "must be <= sampler.mu_end");
  check(sampler.sigma >= 0.0 && std::isfinite(sampler.sigma), "sampler.sigma", "must be finite and >= 0");
  check(optimizer.lr >= 0.0, "optimizer.lr", "must be >= 0");
  check(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  check(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  check(optimizer.eps > 0.0, "optimizer.eps", "must be > 0");
  check(optimizer.clip_norm >= 0.0, "optimizer.clip_norm", "must be >= 0");
  check(batch_size >= 1, "batch_size", "must be >= 1");
  check(total_steps >= 0, "total_steps", "must be >= 0");
  check(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  check(lambda_mask >= 0.0, "lambda_mask", "must be >= 0");
  check(codec.mask_enabled == (variant == Variant::masked), "variant",
        "codec mask support must match the variant");
  try {
    codec.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid codec config: ") + e.what());
  }
  check(image_size >= 1 && image_size % codec.stride() == 0, "image_size",
        "must be a positive multiple of the codec stride " + std::to_string(codec.stride()));
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv["variant"] = to_string(variant);
  kv["n_min"] = std::to_string(n_min);
  kv["n_cap"] = std::to_string(n_cap);
  kv["sampler.mu_start"] = fmt_double(mu_start());
  kv["sampler.mu_end"] = fmt_double(mu_end());
  kv["sampler.sigma"] = fmt_double(sampler.sigma);
  kv["optimizer.lr"] = fmt_double(optimizer.lr);
  kv["optimizer.beta1"] = fmt_double(optimizer.beta1);
  kv["optimizer.beta2"] = fmt_double(optimizer.beta2);
  kv["optimizer.eps"] = fmt_double(optimizer.eps);
  kv["optimizer.weight_decay"] = fmt_double(optimizer.weight_decay);
  kv["optimizer.clip_norm"] = fmt_double(optimizer.clip_norm);
  kv["optimizer.schedule"] = lr_schedule == LrSchedule::cosine ? "cosine" : "constant";
  kv["batch_size"] = std::to_string(batch_size);
  kv["total_steps"] = std::to_string(total_steps);
  kv["seed"] = std::to_string(seed);
  kv["image_size"] = std::to_string(image_size);
  kv["data_root"] = data_root;
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["lambda_mask"] = fmt_double(lambda_mask);
  kv["reconstruction_distinctness"] = reconstruction_distinctness ? "true" : "false";
  kv["detach_steps"] = detach_steps ? "true" : "false";
  kv["codec.image_channels"] = std::to_string(codec.image_channels);
  kv["codec.base_channels"] = std::to_string(codec.base_channels);
  kv["codec.residual_blocks_per_level"] = std::to_string(codec.residual_blocks_per_level);
  kv["codec.levels"] = std::to_string(codec.levels);
  kv["codec.latent_channels"] = std::to_string(codec.latent_channels);
  kv["codec.lstm_hidden_channels"] = std::to_string(codec.lstm_hidden_channels);
  kv["codec.conv_bias"] = codec.conv_bias ? "true" : "false";
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, TrainConfig c) {
  const auto i32 = [](const std::string& k, const std::string& v) { return static_cast<int>(kv_int(k, v)); };
  bool n_min_given = false;
  for (const auto& [k, v] : kv) {
    if (k == "variant") {
      try {
        c.variant = parse_variant(v);
      } catch (const ContractError&) {
        throw ConfigError("key 'variant': expected vanilla or masked, got '" + v + "'");
      }
    } else if (k == "n_min") {
      c.n_min = i32(k, v);
      n_min_given = true;
    } else if (k == "n_cap") c.n_cap = i32(k, v);
    else if (k == "sampler.mu_start") c.sampler.mu_start = kv_double(k, v);
    else if (k == "sampler.mu_end") c.sampler.mu_end = kv_double(k, v);
    else if (k == "sampler.sigma") c.sampler.sigma = kv_double(k, v);
    else if (k == "optimizer.lr") c.optimizer.lr = kv_double(k, v);
    else if (k == "optimizer.beta1") c.optimizer.beta1 = kv_double(k, v);
    else if (k == "optimizer.beta2") c.optimizer.beta2 = kv_double(k, v);
    else if (k == "optimizer.eps") c.optimizer.eps = kv_double(k, v);
    else if (k == "optimizer.weight_decay") c.optimizer.weight_decay = kv_double(k, v);
    else if (k == "optimizer.clip_norm") c.optimizer.clip_norm = kv_double(k, v);
    else if (k == "optimizer.schedule") {
      if (v == "constant") c.lr_schedule = LrSchedule::constant;
      else if (v == "cosine") c.lr_schedule = LrSchedule::cosine;
      else throw ConfigError("key 'optimizer.schedule': expected constant or cosine, got '" + v + "'");
    }
    else if (k == "batch_size") c.batch_size = i32(k, v);
    else if (k == "total_steps") c.total_steps = kv_int(k, v);
    else if (k == "seed") c.seed = static_cast<uint64_t>(kv_int(k, v));
    else if (k == "image_size") c.image_size = i32(k, v);
    else if (k == "data_root") c.data_root = v;
    else if (k == "checkpoint_every") c.checkpoint_every = kv_int(k, v);
    else if (k == "lambda_mask") c.lambda_mask = kv_double(k, v);
    else if (k == "reconstruction_distinctness") c.reconstruction_distinctness = kv_bool(k, v);
    else if (k == "detach_steps") c.detach_steps = kv_bool(k, v);
    else if (k == "codec.image_channels") c.codec.image_channels = i32(k, v);
    else if (k == "codec.base_channels") c.codec.base_channels = i32(k, v);
    else if (k == "codec.residual_blocks_per_level") c.codec.residual_blocks_per_level = i32(k, v);
    else if (k == "codec.levels") c.codec.levels = i32(k, v);
    else if (k == "codec.latent_channels") c.codec.latent_channels = i32(k, v);
    else if (k == "codec.lstm_hidden_channels") c.codec.lstm_hidden_channels = i32(k, v);
    else if (k == "codec.conv_bias") c.codec.conv_bias = kv_bool(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (kv.count("variant") && !n_min_given && c.variant == Variant::masked && c.n_min < 2) c.n_min = 2;
  c.codec.mask_enabled = c.variant == Variant::masked;
  return c;
}

double TrainConfig::lr_at(int64_t step) const {
  if (lr_schedule == LrSchedule::constant || total_steps <= 0) return optimizer.lr;
  const double t = std::clamp(double(step) / double(total_steps), 0.0, 1.0);
  return optimizer.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

TokenSampler::TokenSampler(int n_min, int n_cap, double mu_start, double mu_end, double sigma, int64_t total_steps,
                           uint64_t seed)
    : n_min_(n_min), n_cap_(n_cap), mu_start_(mu_start), mu_end_(mu_end), sigma_(sigma), total_steps_(total_steps) {
  require(n_min >= 1 && n_cap >= n_min, "sampler needs 1 <= n_min <= n_cap");
  require(mu_start <= mu_end, "sampler needs mu_start <= mu_end");
  require(sigma >= 0.0, "sampler needs sigma >= 0");
  std::seed_seq seq{seed, uint64_t{0x70c3e2}};
  rng_.seed(seq);
}

TokenSampler TokenSampler::from_config(const TrainConfig& c) {
  return TokenSampler(c.n_min, c.n_cap, c.mu_start(), c.mu_end(), c.sampler.sigma, c.total_steps, c.seed);
}

double TokenSampler::mean_at(int64_t step) const {
  if (total_steps_ <= 0) return mu_end_;
  const double t = double(std::clamp<int64_t>(step, 0, total_steps_)) / double(total_steps_);
  return std::min(mu_end_, mu_start_ + (mu_end_ - mu_start_) * t);
}

int TokenSampler::sample(int64_t step) {
  const double mu = mean_at(step);
  // A fresh distribution per draw keeps all sampler state inside rng_.
  std::normal_distribution<double> normal(0.0, 1.0);
  const double g = mu + sigma_ * normal(rng_);
  const double r = std::round(std::abs(g));
  return static_cast<int>(std::clamp(r, double(n_min_), double(n_cap_)));
}

std::string TokenSampler::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void TokenSampler::set_rng_state(const std::string& s) {
  std::istringstream is(s);
  is >> rng_;
  if (is.fail()) throw FormatError("malformed sampler rng state");
}

AdamState init_adam(const ParamSet<float>& params) {
  AdamState s;
  for (const auto& [name, t] : params.items()) {
    s.m.add(name, Tensor<float>(t.shape()));
    s.v.add(name, Tensor<float>(t.shape()));
  }
  return s;
}

void adam_update(ParamSet<float>& params, const ParamSet<float>& grads, AdamState& state, const AdamConfig& cfg) {
  require(grads.size() == params.size() && state.m.size() == params.size(), "adam: parameter sets disagree");
  ++state.step;
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  const float c1 = float(1.0 / (1.0 - std::pow(cfg.beta1, double(state.step))));
  const float c2 = float(1.0 / (1.0 - std::pow(cfg.beta2, double(state.step))));
  const float lr = float(cfg.lr), eps = float(cfg.eps), wd = float(cfg.weight_decay);
  float gscale = 1.0f;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads.items())
      for (int64_t i = 0; i < g.numel(); ++i) sq += double(g[i]) * double(g[i]);
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) gscale = float(cfg.clip_norm / norm);
  }
  for (size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params.items()[k];
    const Tensor<float>& g = grads.items()[k].second;
    Tensor<float>& m = state.m.items()[k].second;
    Tensor<float>& v = state.v.items()[k].second;
    require(g.shape() == p.shape() && m.shape() == p.shape(), "adam: shape mismatch for " + name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const float gi = g[i] * gscale;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      const float step = (m[i] * c1) / (std::sqrt(v[i] * c2) + eps) + wd * p[i];
      p[i] -= lr * step;
    }
  }
}

LossBreakdown train_step(CodecParams<float>& params, AdamState& opt, const AdamConfig& adam, const ImageBatch& batch,
                         int n_tokens, Variant variant, const StepOptions& opts) {
  require(n_tokens >= 1, "train_step needs n_tokens >= 1");
  LossBreakdown b;
  ParamSet<float> grads;
  {
    BoundCodec<float> codec(params, true);
    Unroll<float> u = unroll(variant, codec, ag::Var<float>(batch.tensor()), n_tokens, {opts.detach_steps});
    LossGraph<float> g = objective(u, opts.loss);
    b = g.breakdown;
    bool finite = std::isfinite(b.total);
    for (const auto& s : b.per_step) finite = finite && std::isfinite(s.rec) && std::isfinite(s.mask);
    if (!finite) {
      std::ostringstream os;
      os << "non-finite loss at step " << opts.step_index << " (n_tokens=" << n_tokens << "):";
      for (const auto& s : b.per_step) os << " [n=" << s.n << " rec=" << s.rec << " mask=" << s.mask << "]";
      throw NumericError(os.str());
    }
    ag::backward(g.total);
    grads = codec.gradients();
  }
  adam_update(params.tensors, grads, opt, adam);
  return b;
}

Checkpoint initial_checkpoint(const TrainConfig& config) {
  config.validate();
  Checkpoint ck;
  ck.config = config;
  ck.params = init_codec_params<float>(config.codec, config.seed);
  ck.adam = init_adam(ck.params.tensors);
  ck.sampler_rng = TokenSampler::from_config(config).rng_state();
  return ck;
}

std::vector<size_t> batch_indices(uint64_t seed, int64_t step, int batch_size, size_t dataset_size) {
  require(dataset_size > 0 && batch_size >= 1 && step >= 0, "batch_indices: bad arguments");
  std::vector<size_t> out;
  out.reserve(static_cast<size_t>(batch_size));
  int64_t cached_epoch = -1;
  std::vector<size_t> perm(dataset_size);
  const int64_t N = static_cast<int64_t>(dataset_size);
  for (int64_t i = 0; i < batch_size; ++i) {
    const int64_t g = step * batch_size + i;
    const int64_t epoch = g / N;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), size_t{0});
      std::seed_seq seq{seed, static_cast<uint64_t>(epoch), uint64_t{0xba7c4}};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<size_t>(g % N)]);
  }
  return out;
}

void write_log_header(std::ostream& os) { os << "step,n_tokens,total_loss,terms\n"; }

Checkpoint train(const TrainConfig& config, const Dataset& data, std::optional<Checkpoint> resume,
                 const TrainHooks& hooks) {
  config.validate();
  require(data.size() > 0, "cannot train on an empty dataset");
  Checkpoint ck = resume ? std::move(*resume) : initial_checkpoint(config);
  require(ck.params.config == config.codec, "resumed checkpoint codec does not match the config");
  ck.config = config;
  TokenSampler sampler = TokenSampler::from_config(config);
  sampler.set_rng_state(ck.sampler_rng);

  const StepOptions base{config.loss_options(), config.detach_steps, 0};
  const int64_t end = hooks.stop_after ? std::min(config.total_steps, *hooks.stop_after) : config.total_steps;
  while (ck.global_step < end) {
    const int64_t step = ck.global_step;
    const int n = sampler.sample(step);
    const auto idx = batch_indices(config.seed, step, config.batch_size, data.size());
    StepOptions so = base;
    so.step_index = step;
    AdamConfig opt = config.optimizer;
    opt.lr = config.lr_at(step);
    const LossBreakdown b = train_step(ck.params, ck.adam, opt, data.batch(idx), n, config.variant, so);
    ck.global_step = step + 1;
    ck.sampler_rng = sampler.rng_state();
    if (hooks.log) {
      *hooks.log << ck.global_step << ',' << n << ',' << std::setprecision(9) << b.total << ',';
      for (size_t i = 0; i < b.per_step.size(); ++i)
        *hooks.log << (i ? " " : "") << b.per_step[i].n << ':' << b.per_step[i].rec << ':' << b.per_step[i].mask;
      *hooks.log << '\n';
    }
    if (config.checkpoint_every > 0 && ck.global_step % config.checkpoint_every == 0) {
      if (!hooks.checkpoint_dir.empty()) {
        std::filesystem::create_directories(hooks.checkpoint_dir);
        save_checkpoint(ck, (std::filesystem::path(hooks.checkpoint_dir) /
                             ("ckpt_" + std::to_string(ck.global_step) + ".vlec"))
                                .string());
      }
      if (hooks.on_checkpoint) hooks.on_checkpoint(ck);
    }
  }
  return ck;
}

}  // namespace vle
