#include "vle/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

#include "vle/metrics.hpp"

namespace vle {

namespace {

// Runs the loop over the dataset in chunks, calling visit(image_index, trace)
// with a single-image trace for every image.
template <typename F>
void for_each_trace(const Model<float>& model, Variant variant, const Dataset& data, int n_tokens, int batch_size,
                    F&& visit) {
  require(batch_size >= 1, "batch_size must be >= 1");
  for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(data.size(), begin + static_cast<size_t>(batch_size));
    std::vector<size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const ImageBatch batch = data.batch(idx);
    const ReconstructionTrace trace = run(variant, model, batch.tensor(), n_tokens);
    for (size_t i = begin; i < end; ++i) visit(i, trace, static_cast<int64_t>(i - begin));
  }
}

}  // namespace

std::string csv_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<EvalRow> eval_table(const Model<float>& model, Variant variant, const Dataset& data,
                                const std::vector<int>& n_list, int batch_size) {
  require(!n_list.empty(), "eval_table needs at least one token count");
  require(data.size() > 0, "eval_table needs a nonempty dataset");
  for (int n : n_list) require(n >= 1, "token counts must be >= 1");
  const int n_max = *std::max_element(n_list.begin(), n_list.end());
  std::vector<EvalRow> rows;
  for_each_trace(model, variant, data, n_max, batch_size, [&](size_t i, const ReconstructionTrace& t, int64_t j) {
    const Tensor<float>& x = data.images[i];
    for (int n : n_list) {
      const Tensor<float> rec = clamp01(t.step(n).cumulative.slice_batch(j, j + 1));
      rows.push_back({data.ids[i], n, mse(x, rec), ssim(x, rec)});
    }
  });
  return rows;
}

std::vector<Fig1Row> fig1_analysis(std::span<const NamedModel> models, const Dataset& data, int n_eval_max,
                                   int batch_size) {
  require(n_eval_max >= 1, "n_eval_max must be >= 1");
  std::vector<Fig1Row> rows;
  for (const auto& m : models) {
    require(m.model != nullptr, "fig1_analysis: null model " + m.name);
    for_each_trace(*m.model, m.variant, data, n_eval_max, batch_size,
                   [&](size_t i, const ReconstructionTrace& t, int64_t j) {
                     for (int n = 1; n <= n_eval_max; ++n)
                       rows.push_back({m.name, n, data.ids[i],
                                       mse(data.images[i], clamp01(t.step(n).cumulative.slice_batch(j, j + 1)))});
                   });
  }
  return rows;
}

std::vector<double> mean_mse_by_n(const std::vector<Fig1Row>& rows, const std::string& model) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    if (r.model != model) continue;
    acc[r.n].first += r.mse;
    acc[r.n].second += 1;
  }
  std::vector<double> out;
  for (const auto& [n, s] : acc) {
    require(n == static_cast<int>(out.size()) + 1, "mean_mse_by_n: token counts are not contiguous");
    out.push_back(s.first / s.second);
  }
  return out;
}

Fig2Result fig2_analysis(const Model<float>& model, Variant variant, const Dataset& data, double tau, int n_cap) {
  require(tau > 0.0, "tau must be > 0");
  require(n_cap >= 1, "n_cap must be >= 1");
  Fig2Result res;
  std::vector<double> ent, tok;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto r = run_to_threshold(variant, model, data.images[i], tau, n_cap);
    const double h = shannon_entropy(data.images[i]);
    res.rows.push_back({data.ids[i], h, r.n_needed, tau});
    if (r.reached) {
      ent.push_back(h);
      tok.push_back(r.n_needed);
    }
  }
  res.reached = static_cast<int>(ent.size());
  res.spearman = spearman(ent, tok);
  return res;
}

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& os) {
  os << "image_id,n,mse,ssim\n";
  for (const auto& r : rows) os << r.image_id << ',' << r.n_tokens << ',' << csv_float(r.mse) << ',' << csv_float(r.ssim) << '\n';
}

void write_fig1_csv(const std::vector<Fig1Row>& rows, std::ostream& os) {
  os << "model,n,image_id,mse\n";
  for (const auto& r : rows) os << r.model << ',' << r.n << ',' << r.image_id << ',' << csv_float(r.mse) << '\n';
}

void write_fig2_csv(const Fig2Result& result, std::ostream& os) {
  os << "image_id,entropy_bits,tokens_to_threshold\n";
  for (const auto& r : result.rows)
    os << r.image_id << ',' << csv_float(r.entropy_bits) << ',' << r.tokens_to_threshold << '\n';
}

}  // namespace vle
