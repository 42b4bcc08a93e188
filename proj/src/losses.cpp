#include "vle/losses.hpp"

namespace vle {

namespace {

template <typename T>
double scalar(const ag::Var<T>& v) {
  return double(v.value()[0]);
}

template <typename T>
ag::Var<T> zeros_like(const ag::Var<T>& v) {
  return ag::Var<T>(Tensor<T>(v.shape()));
}

// Rebuilds an Unroll of constants from a recorded trace.
template <typename T>
Unroll<T> constant_unroll(const BasicTrace<T>& trace, const Tensor<T>& target) {
  Unroll<T> u;
  u.variant = trace.variant();
  u.target = ag::Var<T>(target);
  for (const auto& s : trace.steps()) {
    require(s.cumulative.shape() == target.shape(),
            "trace reconstruction " + shape_str(s.cumulative.shape()) + " does not match target " +
                shape_str(target.shape()));
    u.tokens.push_back(ag::Var<T>(s.token));
    u.outputs.push_back(ag::Var<T>(s.output));
    u.cumulative.push_back(ag::Var<T>(s.cumulative));
    if (trace.masked()) {
      require(s.mask && s.cumulative_mask, "masked trace step lacks masks");
      u.masks.push_back(ag::Var<T>(*s.mask));
      u.cumulative_masks.push_back(ag::Var<T>(*s.cumulative_mask));
      u.transformed.push_back(ag::Var<T>(s.transformed ? *s.transformed : Tensor<T>()));
    }
  }
  return u;
}

template <typename T>
LossGraph<T> finish(std::vector<ag::Var<T>> terms, LossBreakdown b) {
  ag::Var<T> sum = terms.front();
  for (size_t i = 1; i < terms.size(); ++i) sum = ag::add(sum, terms[i]);
  const int n = static_cast<int>(b.per_step.size());
  LossGraph<T> g{ag::scale(sum, T(1.0 / n)), std::move(b)};
  g.breakdown.n_max_used = n;
  g.breakdown.total = scalar(g.total);
  return g;
}

}  // namespace

template <typename T>
ag::Var<T> distinctness_loss(const ag::Var<T>& current, const ag::Var<T>& cumulative_previous) {
  const ag::Var<T> prev = cumulative_previous.defined() ? cumulative_previous : zeros_like(current);
  return ag::mean(ag::exp_neg(ag::mse_per_image(current, prev)));
}

template <typename T>
ag::Var<T> mask_distinctness_loss(const ag::Var<T>& mask, const ag::Var<T>& cumulative_mask_previous) {
  return distinctness_loss(mask, cumulative_mask_previous);
}

template <typename T>
ag::Var<T> masked_rec_loss(const ag::Var<T>& mask, const ag::Var<T>& target, const ag::Var<T>& recon) {
  return ag::mean(ag::masked_sq_per_image(mask, target, recon));
}

template <typename T>
LossGraph<T> vanilla_loss(const Unroll<T>& u, const LossOptions& opts) {
  require(u.size() >= 1, "vanilla_loss needs at least one step");
  std::vector<ag::Var<T>> terms;
  LossBreakdown b;
  for (int i = 0; i < u.size(); ++i) {
    StepTerms st{i + 1};
    ag::Var<T> t = ag::mean(ag::mse_per_image(u.target, u.cumulative[i]));
    st.rec = scalar(t);
    if (opts.reconstruction_distinctness) {
      ag::Var<T> d = distinctness_loss(u.outputs[i], i > 0 ? u.cumulative[i - 1] : ag::Var<T>());
      st.distinct = scalar(d);
      t = ag::add(t, d);
    }
    terms.push_back(t);
    b.per_step.push_back(st);
  }
  return finish(std::move(terms), std::move(b));
}

template <typename T>
LossGraph<T> combined_loss(const Unroll<T>& u, const LossOptions& opts) {
  require(u.size() >= 1, "combined_loss needs at least one step");
  require(u.variant == Variant::masked && static_cast<int>(u.masks.size()) == u.size(),
          "combined_loss needs a masked run");
  std::vector<ag::Var<T>> terms;
  LossBreakdown b;
  for (int i = 0; i < u.size(); ++i) {
    StepTerms st{i + 1};
    ag::Var<T> rec = masked_rec_loss(u.masks[i], u.target, u.cumulative[i]);
    ag::Var<T> msk = mask_distinctness_loss(u.masks[i], i > 0 ? u.cumulative_masks[i - 1] : ag::Var<T>());
    st.rec = scalar(rec);
    st.mask = scalar(msk);
    ag::Var<T> t = ag::add(rec, opts.lambda_mask == 1.0 ? msk : ag::scale(msk, T(opts.lambda_mask)));
    if (opts.reconstruction_distinctness) {
      ag::Var<T> d = distinctness_loss(u.outputs[i], i > 0 ? u.cumulative[i - 1] : ag::Var<T>());
      st.distinct = scalar(d);
      t = ag::add(t, d);
    }
    terms.push_back(t);
    b.per_step.push_back(st);
  }
  return finish(std::move(terms), std::move(b));
}

template <typename T>
double distinctness_loss(const Tensor<T>& current, const Tensor<T>& cumulative_previous) {
  ag::NoGradGuard ng;
  return scalar(distinctness_loss(ag::Var<T>(current), ag::Var<T>(cumulative_previous)));
}

template <typename T>
double mask_distinctness_loss(const MaskBatch<T>& mask, const MaskBatch<T>& cumulative_mask_previous) {
  require(mask.data.rank() == 4 && mask.data.dim(1) == 1, "mask must be (B,1,H,W)");
  ag::NoGradGuard ng;
  return scalar(mask_distinctness_loss(ag::Var<T>(mask.data), ag::Var<T>(cumulative_mask_previous.data)));
}

template <typename T>
double masked_rec_loss(const MaskBatch<T>& mask, const Tensor<T>& target, const Tensor<T>& recon) {
  ag::NoGradGuard ng;
  return scalar(masked_rec_loss(ag::Var<T>(mask.data), ag::Var<T>(target), ag::Var<T>(recon)));
}

template <typename T>
LossBreakdown vanilla_loss(const BasicTrace<T>& trace, const Tensor<T>& target, const LossOptions& opts) {
  require(!trace.empty(), "vanilla_loss needs at least one step");
  ag::NoGradGuard ng;
  return vanilla_loss(constant_unroll(trace, target), opts).breakdown;
}

template <typename T>
LossBreakdown combined_loss(const BasicTrace<T>& trace, const Tensor<T>& target, const LossOptions& opts) {
  require(!trace.empty(), "combined_loss needs at least one step");
  require(trace.masked(), "combined_loss needs a trace with masks");
  ag::NoGradGuard ng;
  return combined_loss(constant_unroll(trace, target), opts).breakdown;
}

#define VLE_INSTANTIATE(T)                                                                                 \
  template ag::Var<T> distinctness_loss(const ag::Var<T>&, const ag::Var<T>&);                             \
  template ag::Var<T> mask_distinctness_loss(const ag::Var<T>&, const ag::Var<T>&);                        \
  template ag::Var<T> masked_rec_loss(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&);            \
  template LossGraph<T> vanilla_loss(const Unroll<T>&, const LossOptions&);                                \
  template LossGraph<T> combined_loss(const Unroll<T>&, const LossOptions&);                               \
  template double distinctness_loss(const Tensor<T>&, const Tensor<T>&);                                   \
  template double mask_distinctness_loss(const MaskBatch<T>&, const MaskBatch<T>&);                        \
  template double masked_rec_loss(const MaskBatch<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template LossBreakdown vanilla_loss(const BasicTrace<T>&, const Tensor<T>&, const LossOptions&);         \
  template LossBreakdown combined_loss(const BasicTrace<T>&, const Tensor<T>&, const LossOptions&);

VLE_INSTANTIATE(float)
VLE_INSTANTIATE(double)

}  // namespace vle
