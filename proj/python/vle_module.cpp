#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vle/analysis.hpp"
#include "vle/checkpoint.hpp"
#include "vle/metrics.hpp"

namespace py = pybind11;
using namespace vle;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(s), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  FloatArray a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
  return a;
}

// Batches of images as one (N, C, S, S) array.
FloatArray dataset_array(const Dataset& d) { return to_array(stack_batch(d.images)); }

Dataset array_dataset(const FloatArray& images) {
  const Tensor<float> all = to_tensor(images);
  require(all.rank() == 4, "images must be (N, C, S, S)");
  Dataset d;
  d.image_size = int(all.dim(2));
  d.channels = int(all.dim(1));
  for (int64_t i = 0; i < all.dim(0); ++i) {
    d.ids.push_back(std::to_string(i));
    d.images.push_back(all.slice_batch(i, i + 1));
  }
  return d;
}

KeyValues to_kv(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) {
    const std::string key = py::str(k);
    if (py::isinstance<py::bool_>(v)) kv[key] = v.cast<bool>() ? "true" : "false";
    else kv[key] = py::str(v);
  }
  return kv;
}

py::dict from_kv(const KeyValues& kv) {
  py::dict d;
  for (const auto& [k, v] : kv) d[py::str(k)] = v;
  return d;
}

// Codec parameters plus the variant they were trained for.
struct PyCodec {
  CodecParams<float> params;
  Variant variant = Variant::vanilla;
  std::optional<TrainConfig> config;

  py::dict run(const FloatArray& x, int n_tokens) const {
    BoundCodec<float> codec(params, false);
    const auto t = vle::run(variant, codec, to_tensor(x), n_tokens);
    return trace_dict(t);
  }

  static py::dict trace_dict(const ReconstructionTrace& t) {
    py::list recons, outputs, tokens, masks;
    for (const auto& s : t.steps()) {
      recons.append(to_array(s.cumulative));
      outputs.append(to_array(s.output));
      tokens.append(to_array(s.token));
      if (s.mask) masks.append(to_array(*s.mask));
    }
    py::dict d;
    d["reconstructions"] = recons;
    d["outputs"] = outputs;
    d["tokens"] = tokens;
    if (t.masked()) d["masks"] = masks;
    return d;
  }
};

PyCodec codec_from_config(const py::dict& cfg, uint64_t seed) {
  TrainConfig tc = TrainConfig::from_key_values(to_kv(cfg));
  tc.seed = seed;
  return {init_codec_params<float>(tc.codec, seed), tc.variant, tc};
}

}  // namespace

PYBIND11_MODULE(_vle, m) {
  m.doc() = "Variable-length image encoder core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def("mse", [](const FloatArray& a, const FloatArray& b) { return mse(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(to_tensor(a), to_tensor(b)); });
  m.def("shannon_entropy", [](const FloatArray& a) { return shannon_entropy(to_tensor(a)); });
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); });
  m.def("distinctness_loss",
        [](const FloatArray& cur, const FloatArray& prev) { return distinctness_loss(to_tensor(cur), to_tensor(prev)); });
  m.def("masked_rec_loss", [](const FloatArray& mask, const FloatArray& x, const FloatArray& r) {
    return masked_rec_loss(MaskBatch<float>{to_tensor(mask)}, to_tensor(x), to_tensor(r));
  });

  m.def("synthetic_blobs", [](size_t count, int size, uint64_t seed) { return dataset_array(synthetic_blobs(count, size, seed)); },
        py::arg("count"), py::arg("image_size"), py::arg("seed") = 0);
  m.def("quantization_ladder",
        [](int per_level, int size, uint64_t seed) {
          const Dataset d = quantization_ladder(per_level, size, seed);
          return py::make_tuple(dataset_array(d), d.ids);
        },
        py::arg("per_level"), py::arg("image_size"), py::arg("seed") = 0);
  m.def("ingest",
        [](const std::string& root, int size, uint64_t seed) {
          const Dataset d = ingest_dataset(root, size, seed);
          return py::make_tuple(dataset_array(d), d.ids, d.skipped);
        },
        py::arg("root"), py::arg("image_size"), py::arg("seed") = 0);

  py::class_<TokenSampler>(m, "TokenSampler")
      .def(py::init<int, int, double, double, double, int64_t, uint64_t>(), py::arg("n_min"), py::arg("n_cap"),
           py::arg("mu_start"), py::arg("mu_end"), py::arg("sigma"), py::arg("total_steps"), py::arg("seed"))
      .def("mean_at", &TokenSampler::mean_at)
      .def("sample", &TokenSampler::sample)
      .def("sample_many", [](TokenSampler& s, int64_t step, int count) {
        std::vector<int> out(static_cast<size_t>(count));
        for (auto& v : out) v = s.sample(step);
        return out;
      });

  py::class_<PyCodec>(m, "Codec")
      .def_static("from_config", &codec_from_config, py::arg("config") = py::dict(), py::arg("seed") = 0,
                  "Freshly initialized codec from training config keys.")
      .def_static("load",
                  [](const std::string& path) {
                    Checkpoint ck = load_checkpoint(path);
                    return PyCodec{std::move(ck.params), ck.config.variant, ck.config};
                  })
      .def_property_readonly("variant", [](const PyCodec& c) { return to_string(c.variant); })
      .def_property_readonly("parameter_count", [](const PyCodec& c) { return count_parameters(c.params); })
      .def_property_readonly("stride", [](const PyCodec& c) { return c.params.config.stride(); })
      .def("encode", [](const PyCodec& c, const FloatArray& x) { return to_array(encode(c.params, to_tensor(x)).z); })
      .def("decode", [](const PyCodec& c, const FloatArray& z) {
        return to_array(decode(c.params, Token<float>{to_tensor(z), 1}));
      })
      .def("run", &PyCodec::run, py::arg("x"), py::arg("n_tokens"))
      .def("run_to_threshold",
           [](const PyCodec& c, const FloatArray& x, double tau, int n_cap) {
             BoundCodec<float> codec(c.params, false);
             const auto r = run_to_threshold(c.variant, codec, to_tensor(x), tau, n_cap);
             return py::make_tuple(r.n_needed, r.reached);
           })
      .def("eval", [](const PyCodec& c, const FloatArray& images, const std::vector<int>& n_list) {
        const Dataset d = array_dataset(images);
        BoundCodec<float> codec(c.params, false);
        py::list rows;
        for (const auto& r : eval_table(codec, c.variant, d, n_list))
          rows.append(py::make_tuple(std::stoi(r.image_id), r.n_tokens, r.mse, r.ssim));
        return rows;
      });

  m.def("run_stub",
        [](const FloatArray& x, float alpha, int n_tokens) {
          const ScaledIdentityCodec<float> stub(alpha);
          return PyCodec::trace_dict(run_vanilla(stub, to_tensor(x), n_tokens));
        },
        py::arg("x"), py::arg("alpha"), py::arg("n_tokens"));

  m.def("train",
        [](const py::dict& config, const FloatArray& images, const std::string& checkpoint_path) {
          const TrainConfig tc = TrainConfig::from_key_values(to_kv(config));
          const Dataset d = array_dataset(images);
          Checkpoint ck;
          {
            py::gil_scoped_release release;
            ck = train(tc, d);
          }
          if (!checkpoint_path.empty()) save_checkpoint(ck, checkpoint_path);
          return PyCodec{std::move(ck.params), tc.variant, tc};
        },
        py::arg("config"), py::arg("images"), py::arg("checkpoint_path") = "");

  m.def("default_config", [] { return from_kv(TrainConfig{}.to_key_values()); });
}
