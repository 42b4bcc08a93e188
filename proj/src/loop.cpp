#include "vle/loop.hpp"

namespace vle {

namespace {

// Advances an autoregressive run one token at a time, recording into an Unroll.
template <typename T>
class Stepper {
 public:
  Stepper(Variant variant, const Model<T>& model, const ag::Var<T>& x, LoopOptions opts)
      : model_(model), opts_(opts) {
    const Shape& s = x.shape();
    require(s.size() == 4 && s[0] >= 1, "loop input must be a (B,C,H,W) batch, got " + shape_str(s));
    require(s[2] % model.stride() == 0 && s[3] % model.stride() == 0,
            "loop input " + shape_str(s) + " not divisible by codec stride " + std::to_string(model.stride()));
    if (variant == Variant::masked) {
      require(model.mask_enabled(), "masked loop needs a codec with mask support");
      state_ = model.initial_state(s[0], s[2], s[3]);
    }
    u_.variant = variant;
    u_.target = x;
  }

  void step() {
    const int n = u_.size() + 1;
    const bool masked = u_.variant == Variant::masked;
    ag::Var<T> prev, prev_mask;
    if (n > 1) {
      prev = opts_.detach_steps ? ag::detach(u_.cumulative.back()) : u_.cumulative.back();
      if (masked) prev_mask = opts_.detach_steps ? ag::detach(u_.cumulative_masks.back()) : u_.cumulative_masks.back();
    }
    // X̂_0 = 0, so the first residual is the input itself.
    ag::Var<T> residual = n == 1 ? u_.target : ag::sub(u_.target, prev);
    ag::Var<T> z;
    if (masked) {
      PrecursorOutput<T> pre = model_.precursor(state_, residual);
      state_ = pre.state;
      z = model_.encode(condition(pre.transformed, pre.mask));
      u_.transformed.push_back(pre.transformed);
      u_.masks.push_back(pre.mask);
      u_.cumulative_masks.push_back(n == 1 ? pre.mask : ag::add(prev_mask, pre.mask));
    } else {
      z = model_.encode(residual);
    }
    ag::Var<T> out = model_.decode(z);
    require(out.shape() == u_.target.shape(), "decoder output " + shape_str(out.shape()) + " is not image shaped");
    u_.tokens.push_back(z);
    u_.outputs.push_back(out);
    u_.cumulative.push_back(n == 1 ? out : ag::add(prev, out));
  }

  Unroll<T>& unroll() { return u_; }

 private:
  const Model<T>& model_;
  LoopOptions opts_;
  MemoryState<T> state_;
  Unroll<T> u_;
};

}  // namespace

template <typename T>
BasicTrace<T> Unroll<T>::trace() const {
  BasicTrace<T> t(variant);
  for (int i = 0; i < size(); ++i) {
    TraceStep<T> s;
    s.index = i + 1;
    s.token = tokens[i].value();
    s.output = outputs[i].value();
    s.cumulative = cumulative[i].value();
    if (variant == Variant::masked) {
      s.transformed = transformed[i].value();
      s.mask = masks[i].value();
      s.cumulative_mask = cumulative_masks[i].value();
    }
    t.push(std::move(s));
  }
  return t;
}

template <typename T>
Unroll<T> unroll_vanilla(const Model<T>& model, const ag::Var<T>& x, int n_tokens, LoopOptions opts) {
  require(n_tokens >= 1, "n_tokens must be >= 1");
  Stepper<T> s(Variant::vanilla, model, x, opts);
  for (int n = 0; n < n_tokens; ++n) s.step();
  return std::move(s.unroll());
}

template <typename T>
Unroll<T> unroll_masked(const Model<T>& model, const ag::Var<T>& x, int n_tokens, LoopOptions opts) {
  require(n_tokens >= 1, "n_tokens must be >= 1");
  Stepper<T> s(Variant::masked, model, x, opts);
  for (int n = 0; n < n_tokens; ++n) s.step();
  return std::move(s.unroll());
}

template <typename T>
BasicTrace<T> run_vanilla(const Model<T>& model, const Tensor<T>& x, int n_tokens) {
  ag::NoGradGuard ng;
  return unroll_vanilla(model, ag::Var<T>(x), n_tokens).trace();
}

template <typename T>
BasicTrace<T> run_masked(const Model<T>& model, const Tensor<T>& x, int n_tokens) {
  ag::NoGradGuard ng;
  return unroll_masked(model, ag::Var<T>(x), n_tokens).trace();
}

template <typename T>
ThresholdResult<T> run_to_threshold(Variant variant, const Model<T>& model, const Tensor<T>& x, double tau,
                                    int n_cap) {
  require(tau >= 0.0, "tau must be nonnegative");
  require(n_cap >= 1, "n_cap must be >= 1");
  ag::NoGradGuard ng;
  Stepper<T> s(variant, model, ag::Var<T>(x), {});
  ThresholdResult<T> r;
  for (int n = 1; n <= n_cap; ++n) {
    s.step();
    if (mse(x, s.unroll().cumulative.back().value()) <= tau) {
      r.n_needed = n;
      r.reached = true;
      break;
    }
  }
  if (!r.reached) r.n_needed = n_cap + 1;
  r.trace = s.unroll().trace();
  return r;
}

#define VLE_INSTANTIATE(T)                                                                            \
  template struct Unroll<T>;                                                                          \
  template Unroll<T> unroll_vanilla(const Model<T>&, const ag::Var<T>&, int, LoopOptions);            \
  template Unroll<T> unroll_masked(const Model<T>&, const ag::Var<T>&, int, LoopOptions);             \
  template BasicTrace<T> run_vanilla(const Model<T>&, const Tensor<T>&, int);                          \
  template BasicTrace<T> run_masked(const Model<T>&, const Tensor<T>&, int);                           \
  template ThresholdResult<T> run_to_threshold(Variant, const Model<T>&, const Tensor<T>&, double, int);

VLE_INSTANTIATE(float)
VLE_INSTANTIATE(double)

}  // namespace vle
