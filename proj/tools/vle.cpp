// vle: train, evaluate, decompose and analyze variable-length codecs.
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vle/analysis.hpp"
#include "vle/checkpoint.hpp"
#include "vle/metrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vle;

namespace {

// Failure with a machine-readable kind; reported as one stderr line.
struct CliError : std::runtime_error {
  CliError(std::string kind, const std::string& msg, int code = 1)
      : std::runtime_error(msg), kind(std::move(kind)), code(code) {}
  std::string kind;
  int code;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  explicit Manifest(std::string command) {
    j_["command"] = std::move(command);
    j_["code_version"] = VLE_VERSION;
    j_["start_time"] = utc_now();
    j_["outputs"] = json::array();
  }
  json& operator[](const char* key) { return j_[key]; }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void write(const fs::path& out_dir) {
    j_["end_time"] = utc_now();
    const fs::path p = out_dir / "manifest.json";
    std::ofstream f(p);
    f << j_.dump(2) << '\n';
    if (!f) throw CliError("io", "cannot write " + p.string());
  }

 private:
  json j_;
};

json config_json(const TrainConfig& c) {
  json j;
  for (const auto& [k, v] : c.to_key_values()) j[k] = v;
  return j;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw CliError("io", "cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw CliError("io", "cannot write " + p.string());
  return f;
}

void close_out(std::ofstream& f, const fs::path& p) {
  f.close();
  if (!f) throw CliError("io", "failed writing " + p.string());
}

std::vector<int> parse_n_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int n = std::stoi(item, &used);
      if (used != item.size() || n < 1) throw std::invalid_argument(item);
      out.push_back(n);
    } catch (const std::exception&) {
      throw CliError("usage", "--n-list entries must be positive integers, got '" + item + "'", 2);
    }
  }
  if (out.empty()) throw CliError("usage", "--n-list is empty", 2);
  return out;
}

// data_root forms: a directory, "synthetic" (64 blobs) or "synthetic:<count>".
Dataset load_training_data(const TrainConfig& c) {
  const std::string& root = c.data_root;
  if (root.empty() || root.rfind("synthetic", 0) == 0) {
    size_t count = 64;
    if (root.size() > 10 && root[9] == ':') count = static_cast<size_t>(kv_int("data_root", root.substr(10)));
    else if (!root.empty() && root != "synthetic")
      throw ConfigError("key 'data_root': expected a directory, 'synthetic' or 'synthetic:<count>'");
    return synthetic_blobs(count, c.image_size, c.seed);
  }
  return ingest_dataset(root, c.image_size, c.seed);
}

Dataset load_eval_data(const std::string& dir, int image_size, uint64_t seed) {
  if (!fs::is_directory(dir)) throw CliError("io", "data directory not found: " + dir);
  return ingest_dataset(dir, image_size, seed);
}

// ---- train ----

struct TrainArgs {
  std::string config, out, resume;
  std::optional<std::string> variant, data;
  std::optional<int> n_min, n_cap;
  std::optional<int64_t> steps;
  std::optional<uint64_t> seed;
  std::vector<std::string> set;
};

int cmd_train(const TrainArgs& a) {
  KeyValues kv = a.config.empty() ? KeyValues{} : load_key_values(a.config);
  for (const auto& s : a.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CliError("usage", "--set expects key=value, got '" + s + "'", 2);
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (a.variant) kv["variant"] = *a.variant;
  if (a.n_min) kv["n_min"] = std::to_string(*a.n_min);
  if (a.n_cap) kv["n_cap"] = std::to_string(*a.n_cap);
  if (a.steps) kv["total_steps"] = std::to_string(*a.steps);
  if (a.seed) kv["seed"] = std::to_string(*a.seed);
  if (a.data) kv["data_root"] = *a.data;
  const TrainConfig config = TrainConfig::from_key_values(kv);
  config.validate();

  Manifest m("train");
  const fs::path out = prepare_out(a.out);
  const Dataset data = load_training_data(config);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);

  const fs::path cfg_path = out / "config.toml", log_path = out / "train_log.csv", ckpt_dir = out / "checkpoints";
  {
    std::ofstream f = open_out(cfg_path);
    f << format_key_values(config.to_key_values());
    close_out(f, cfg_path);
  }
  std::ofstream log = open_out(log_path);
  write_log_header(log);
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_dir = ckpt_dir.string();
  std::vector<std::string> periodic;
  hooks.on_checkpoint = [&](const Checkpoint& ck) {
    periodic.push_back((ckpt_dir / ("ckpt_" + std::to_string(ck.global_step) + ".vlec")).string());
  };
  const Checkpoint final_ck = train(config, data, std::move(resume), hooks);
  close_out(log, log_path);
  const fs::path final_path = out / "final.vlec";
  save_checkpoint(final_ck, final_path.string());

  m["config"] = config_json(config);
  m["seed"] = config.seed;
  m["dataset"] = {{"size", data.size()}, {"skipped", data.skipped}};
  m["parameter_count"] = count_parameters(final_ck.params);
  m["global_step"] = final_ck.global_step;
  if (!a.resume.empty()) m["resumed_from"] = a.resume;
  m.output(cfg_path);
  m.output(log_path);
  for (const auto& p : periodic) m.output(p);
  m.output(final_path);
  m.write(out);
  std::cout << final_path.string() << '\n';
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& n_list, int batch,
             uint64_t seed, const std::string& out_dir) {
  const std::vector<int> ns = parse_n_list(n_list);
  Manifest m("eval");
  const fs::path out = prepare_out(out_dir);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset data = load_eval_data(data_dir, ck.config.image_size, seed);
  const BoundCodec<float> codec(ck.params, false);
  const auto rows = eval_table(codec, ck.config.variant, data, ns, batch);
  const fs::path csv = out / "eval_table.csv";
  std::ofstream f = open_out(csv);
  write_eval_csv(rows, f);
  close_out(f, csv);

  json means = json::object();
  for (int n : ns) {
    double sm = 0, ss = 0;
    int k = 0;
    for (const auto& r : rows)
      if (r.n_tokens == n) sm += r.mse, ss += r.ssim, ++k;
    means[std::to_string(n)] = {{"mse", sm / k}, {"ssim", ss / k}};
  }
  m["config"] = config_json(ck.config);
  m["seed"] = seed;
  m["checkpoint"] = ckpt_path;
  m["data"] = data_dir;
  m["n_list"] = ns;
  m["parameter_count"] = count_parameters(ck.params);
  m["dataset"] = {{"size", data.size()}, {"skipped", data.skipped}};
  m["mean_by_n"] = means;
  m.output(csv);
  m.write(out);
  return 0;
}

// ---- decompose ----

int cmd_decompose(const std::string& ckpt_path, const std::string& image, int n_tokens, bool masks,
                  const std::string& out_dir) {
  if (n_tokens < 1) throw CliError("usage", "--n-tokens must be >= 1", 2);
  Manifest m("decompose");
  const fs::path out = prepare_out(out_dir);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Tensor<float> x = read_image(image, ck.config.image_size);
  const BoundCodec<float> codec(ck.params, false);
  const Variant v = ck.config.variant;
  const auto trace = run(v, codec, x, n_tokens);
  const bool write_masks = v == Variant::masked;
  if (masks && !write_masks) std::cerr << "notice: vanilla checkpoint has no masks; mask output omitted\n";

  const auto put = [&](const Tensor<float>& t, const std::string& name) {
    const fs::path p = out / name;
    write_png(clamp01(t), p.string());
    m.output(p);
  };
  put(x, "source.png");
  for (int n = 1; n <= n_tokens; ++n) {
    put(trace.step(n).cumulative, "reconstruction_" + std::to_string(n) + ".png");
    if (write_masks) put(*trace.step(n).mask, "mask_" + std::to_string(n) + ".png");
  }
  put(trace.back().cumulative, "final.png");

  json per_step = json::array();
  for (int n = 1; n <= n_tokens; ++n)
    per_step.push_back({{"n", n}, {"mse", mse(x, clamp01(trace.step(n).cumulative))},
                        {"ssim", ssim(x, trace.step(n).cumulative)}});
  m["config"] = config_json(ck.config);
  m["seed"] = ck.config.seed;
  m["checkpoint"] = ckpt_path;
  m["image"] = image;
  m["n_tokens"] = n_tokens;
  m["steps"] = per_step;
  m.write(out);
  return 0;
}

// ---- analyze ----

struct LoadedModel {
  std::string name;
  std::unique_ptr<Model<float>> model;
  Variant variant = Variant::vanilla;
  int image_size = 32;
  int n_cap = 1;
  std::optional<CodecParams<float>> params;
};

LoadedModel load_model(const std::string& name, const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  LoadedModel lm;
  lm.name = name;
  lm.variant = ck.config.variant;
  lm.image_size = ck.config.image_size;
  lm.n_cap = ck.config.n_cap;
  lm.params = std::move(ck.params);
  lm.model = std::make_unique<BoundCodec<float>>(*lm.params, false);
  return lm;
}

int cmd_fig1(const std::vector<std::string>& specs, std::optional<double> stub_alpha, const std::string& data_dir,
             int n_eval_max, std::optional<int> image_size, uint64_t seed, const std::string& out_dir) {
  if (n_eval_max < 1) throw CliError("usage", "--n-eval-max must be >= 1", 2);
  if (specs.empty() && !stub_alpha) throw CliError("usage", "fig1 needs at least one --model or --stub-alpha", 2);
  Manifest m("analyze fig1");
  const fs::path out = prepare_out(out_dir);
  std::vector<LoadedModel> loaded;
  json sources = json::object();
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CliError("usage", "--model expects name=checkpoint, got '" + s + "'", 2);
    loaded.push_back(load_model(s.substr(0, eq), s.substr(eq + 1)));
    sources[loaded.back().name] = s.substr(eq + 1);
  }
  if (stub_alpha) {
    LoadedModel lm;
    lm.name = "stub";
    lm.model = std::make_unique<ScaledIdentityCodec<float>>(float(*stub_alpha));
    lm.image_size = loaded.empty() ? 32 : loaded.front().image_size;
    loaded.push_back(std::move(lm));
    sources["stub"] = "alpha=" + csv_float(*stub_alpha);
  }
  const int size = image_size.value_or(loaded.front().image_size);
  for (const auto& l : loaded)
    if (l.params && l.image_size != size)
      throw CliError("usage", "model " + l.name + " was trained at " + std::to_string(l.image_size) +
                                  "px but the analysis runs at " + std::to_string(size) + "px", 2);
  const Dataset data = load_eval_data(data_dir, size, seed);
  std::vector<NamedModel> models;
  for (const auto& l : loaded) models.push_back({l.name, l.model.get(), l.variant});
  const auto rows = fig1_analysis(models, data, n_eval_max);
  const fs::path csv = out / "fig1.csv";
  std::ofstream f = open_out(csv);
  write_fig1_csv(rows, f);
  close_out(f, csv);

  json means = json::object();
  for (const auto& l : loaded) means[l.name] = mean_mse_by_n(rows, l.name);
  m["config"] = {{"models", sources}, {"n_eval_max", n_eval_max}, {"image_size", size}};
  m["seed"] = seed;
  m["data"] = data_dir;
  m["mean_mse_by_n"] = means;
  m.output(csv);
  m.write(out);
  return 0;
}

int cmd_fig2(const std::string& ckpt_path, const std::string& data_dir, double tau, std::optional<int> n_cap,
             uint64_t seed, const std::string& out_dir) {
  if (!(tau >= 0.0)) throw CliError("usage", "--tau must be >= 0", 2);
  Manifest m("analyze fig2");
  const fs::path out = prepare_out(out_dir);
  const LoadedModel lm = load_model("model", ckpt_path);
  const Dataset data = load_eval_data(data_dir, lm.image_size, seed);
  const int cap = n_cap.value_or(lm.n_cap);
  if (cap < 1) throw CliError("usage", "--n-cap must be >= 1", 2);
  const Fig2Result r = fig2_analysis(*lm.model, lm.variant, data, tau, cap);
  const fs::path csv = out / "fig2.csv";
  std::ofstream f = open_out(csv);
  write_fig2_csv(r, f);
  close_out(f, csv);

  m["config"] = {{"checkpoint", ckpt_path}, {"tau", tau}, {"n_cap", cap}};
  m["seed"] = seed;
  m["data"] = data_dir;
  m["spearman"] = r.spearman ? json(*r.spearman) : json(nullptr);
  m["reached"] = r.reached;
  m["images"] = r.rows.size();
  m["sentinel"] = cap + 1;
  m.output(csv);
  m.write(out);
  return 0;
}

// ---- synth ----

int cmd_synth(const std::string& kind, int count, int size, uint64_t seed, const std::string& out_dir) {
  Manifest m("synth");
  const fs::path out = prepare_out(out_dir);
  const fs::path images = out / "images";
  Dataset d;
  if (kind == "blobs") d = synthetic_blobs(static_cast<size_t>(count), size, seed);
  else if (kind == "ladder") d = quantization_ladder(count, size, seed);
  else throw CliError("usage", "--kind must be blobs or ladder", 2);
  write_dataset(d, images.string());
  m["config"] = {{"kind", kind}, {"count", count}, {"image_size", size}};
  m["seed"] = seed;
  m["images"] = d.size();
  m.output(images);
  m.write(out);
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const std::string& kind, const std::string& msg, int code) {
  std::cerr << "error: kind=" << kind << " message=" << json(one_line(msg)).dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-length image encoder: train, evaluate, decompose, analyze"};
  app.set_version_flag("--version", VLE_VERSION);
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a codec from a config file");
  train_cmd->add_option("--config", ta.config, "Key/value config file");
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--variant", ta.variant, "vanilla or masked");
  train_cmd->add_option("--n-min", ta.n_min, "Minimum tokens per step");
  train_cmd->add_option("--n-cap", ta.n_cap, "Maximum tokens per step");
  train_cmd->add_option("--total-steps", ta.steps, "Optimizer steps");
  train_cmd->add_option("--seed", ta.seed, "Seed for init, sampling and batching");
  train_cmd->add_option("--data", ta.data, "Image directory, 'synthetic' or 'synthetic:<count>'");
  train_cmd->add_option("--set", ta.set, "Override any config key (key=value)");
  train_cmd->add_option("--resume", ta.resume, "Checkpoint to resume from");

  std::string ckpt, data_dir, out, n_list = "1,2,3,4", image, kind = "blobs";
  int batch = 16, n_tokens = 4, n_eval_max = 6, count = 64, size = 32;
  uint64_t seed = 0;
  bool masks = false;
  std::optional<double> stub_alpha, tau;
  std::optional<int> n_cap, fig1_size;
  std::vector<std::string> models;

  auto* eval_cmd = app.add_subcommand("eval", "Per-image MSE/SSIM table");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data", data_dir, "Image directory")->required();
  eval_cmd->add_option("--n-list", n_list, "Comma separated token counts")->capture_default_str();
  eval_cmd->add_option("--batch-size", batch)->capture_default_str();
  eval_cmd->add_option("--seed", seed, "Ingestion order seed")->capture_default_str();
  eval_cmd->add_option("--out", out)->required();

  auto* dec_cmd = app.add_subcommand("decompose", "Write per-token reconstructions and masks of one image");
  dec_cmd->add_option("--checkpoint", ckpt)->required();
  dec_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--n-tokens", n_tokens)->capture_default_str();
  dec_cmd->add_flag("--masks", masks, "Request mask images (masked checkpoints write them anyway)");
  dec_cmd->add_option("--out", out)->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "Figure data");
  analyze_cmd->require_subcommand(1);
  auto* fig1_cmd = analyze_cmd->add_subcommand("fig1", "Per-image MSE against token count per model");
  fig1_cmd->add_option("--model", models, "name=checkpoint (repeatable)");
  fig1_cmd->add_option("--stub-alpha", stub_alpha, "Add the linear stub codec with this alpha");
  fig1_cmd->add_option("--data", data_dir)->required();
  fig1_cmd->add_option("--n-eval-max", n_eval_max)->capture_default_str();
  fig1_cmd->add_option("--image-size", fig1_size, "Defaults to the first model's training size");
  fig1_cmd->add_option("--seed", seed)->capture_default_str();
  fig1_cmd->add_option("--out", out)->required();
  auto* fig2_cmd = analyze_cmd->add_subcommand("fig2", "Entropy against tokens needed to reach an MSE threshold");
  fig2_cmd->add_option("--checkpoint", ckpt)->required();
  fig2_cmd->add_option("--data", data_dir)->required();
  fig2_cmd->add_option("--tau", tau, "MSE threshold")->required();
  fig2_cmd->add_option("--n-cap", n_cap, "Defaults to the checkpoint's n_cap");
  fig2_cmd->add_option("--seed", seed)->capture_default_str();
  fig2_cmd->add_option("--out", out)->required();

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic image set");
  synth_cmd->add_option("--kind", kind, "blobs or ladder")->capture_default_str();
  synth_cmd->add_option("--count", count, "Images (blobs) or images per level (ladder)")->capture_default_str();
  synth_cmd->add_option("--image-size", size)->capture_default_str();
  synth_cmd->add_option("--seed", seed)->capture_default_str();
  synth_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ckpt, data_dir, n_list, batch, seed, out);
    if (*dec_cmd) return cmd_decompose(ckpt, image, n_tokens, masks, out);
    if (*fig1_cmd) return cmd_fig1(models, stub_alpha, data_dir, n_eval_max, fig1_size, seed, out);
    if (*fig2_cmd) return cmd_fig2(ckpt, data_dir, *tau, n_cap, seed, out);
    if (*synth_cmd) return cmd_synth(kind, count, size, seed, out);
  } catch (const CliError& e) {
    return fail(e.kind, e.what(), e.code);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 1);
  } catch (const ContractError& e) {
    return fail("contract", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("usage", "no command given", 2);
}
