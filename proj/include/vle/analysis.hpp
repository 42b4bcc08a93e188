#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vle/dataset.hpp"
#include "vle/loop.hpp"

namespace vle {

struct EvalRow {
  std::string image_id;
  int n_tokens = 0;
  double mse = 0.0;
  double ssim = 0.0;
};

struct Fig1Row {
  std::string model;
  int n = 0;
  std::string image_id;
  double mse = 0.0;
};

struct EntropyRow {
  std::string image_id;
  double entropy_bits = 0.0;
  int tokens_to_threshold = 0;  // n_cap + 1 when never reached
  double tau = 0.0;
};

struct Fig2Result {
  std::vector<EntropyRow> rows;
  std::optional<double> spearman;  // over rows that reached the threshold
  int reached = 0;
};

struct NamedModel {
  std::string name;
  const Model<float>* model = nullptr;
  Variant variant = Variant::vanilla;
};

/// MSE and SSIM of the clamped reconstruction X̂_n for every image and every
/// n in n_list, all read from a single run to max(n_list). Rows are ordered
/// by image, then by n as listed.
std::vector<EvalRow> eval_table(const Model<float>& model, Variant variant, const Dataset& data,
                                const std::vector<int>& n_list, int batch_size = 16);

/// Per-image MSE of the clamped X̂_n for n = 1..n_eval_max, for each model.
std::vector<Fig1Row> fig1_analysis(std::span<const NamedModel> models, const Dataset& data, int n_eval_max,
                                   int batch_size = 16);

/// Mean of Fig1Row::mse per n (index n-1) for one model.
std::vector<double> mean_mse_by_n(const std::vector<Fig1Row>& rows, const std::string& model);

/// Entropy against tokens-to-threshold per image, plus their Spearman
/// correlation over images that reached tau.
Fig2Result fig2_analysis(const Model<float>& model, Variant variant, const Dataset& data, double tau, int n_cap);

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& os);
void write_fig1_csv(const std::vector<Fig1Row>& rows, std::ostream& os);
void write_fig2_csv(const Fig2Result& result, std::ostream& os);

/// %.6g formatting used by every CSV writer.
std::string csv_float(double v);

}  // namespace vle
