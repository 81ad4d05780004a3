#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmtmlp/bench.hpp"
#include "mmtmlp/commands.hpp"
#include "mmtmlp/config.hpp"
#include "mmtmlp/error.hpp"
#include "mmtmlp/handpose.hpp"
#include "mmtmlp/model.hpp"
#include "mmtmlp/sampling.hpp"

namespace py = pybind11;
using namespace mmtmlp;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

json to_json(const py::handle& obj) {
  if (obj.is_none()) return json::object();
  if (py::isinstance<py::str>(obj)) return json::parse(obj.cast<std::string>());
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nn::Matrix to_matrix(const Array& a, std::size_t cols, const char* what) {
  if (a.ndim() == 1 && static_cast<std::size_t>(a.shape(0)) == cols) {
    return nn::Matrix(1, cols, std::vector<double>(a.data(), a.data() + cols));
  }
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(1)) != cols) {
    throw DimensionError(std::string(what) + ": expected shape (T, " + std::to_string(cols) + ")");
  }
  const auto n = static_cast<std::size_t>(a.size());
  return nn::Matrix(static_cast<std::size_t>(a.shape(0)), cols, std::vector<double>(a.data(), a.data() + n));
}

Array to_array(const nn::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

handpose::SkeletonTopology topology(const std::optional<std::vector<double>>& lengths) {
  return lengths ? handpose::SkeletonTopology::hand(*lengths) : handpose::SkeletonTopology::hand_unit();
}

handpose::HandKeypoints to_hand(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != 21 || a.shape(1) != 3) throw DimensionError("hand: expected shape (21, 3)");
  handpose::HandKeypoints h;
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = handpose::Vec3(a.at(k, 0), a.at(k, 1), a.at(k, 2));
  return h;
}

Array from_hand(const handpose::HandKeypoints& h) {
  Array out({std::size_t{21}, std::size_t{3}});
  auto r = out.mutable_unchecked<2>();
  for (py::ssize_t k = 0; k < 21; ++k)
    for (py::ssize_t c = 0; c < 3; ++c) r(k, c) = h[static_cast<std::size_t>(k)][c];
  return out;
}

py::dict cpu_dict(const bench::CpuStats& s) {
  py::dict d;
  d["median_s"] = s.median_cpu_seconds;
  d["p10_s"] = s.p10;
  d["p90_s"] = s.p90;
  d["reps"] = s.reps;
  d["warmup"] = s.warmup;
  d["thread_count"] = s.thread_count;
  d["samples"] = s.samples;
  return d;
}

py::dict row_dict(const bench::SweepRow& r) {
  py::dict d;
  d["model_kind"] = std::string(model::to_string(r.kind));
  d["f_rgb"] = r.f_rgb;
  d["f_hp"] = r.f_hp;
  d["macro_f1_action"] = r.macro_f1_action;
  d["macro_f1_verb"] = r.macro_f1_verb;
  d["cpu"] = cpu_dict(r.cpu);
  d["checkpoint"] = r.checkpoint;
  d["seed"] = r.seed;
  d["status"] = r.status;
  d["message"] = r.message;
  return d;
}

bench::SweepRow row_from(const py::dict& d) {
  bench::SweepRow r;
  r.kind = model::parse_model_kind(d["model_kind"].cast<std::string>());
  r.f_rgb = d["f_rgb"].cast<double>();
  r.f_hp = d["f_hp"].cast<double>();
  r.macro_f1_action = d["macro_f1_action"].cast<double>();
  r.macro_f1_verb = d.contains("macro_f1_verb") ? d["macro_f1_verb"].cast<double>() : 0.0;
  const py::dict cpu = d["cpu"].cast<py::dict>();
  r.cpu.median_cpu_seconds = cpu["median_s"].cast<double>();
  r.cpu.p10 = cpu.contains("p10_s") ? cpu["p10_s"].cast<double>() : r.cpu.median_cpu_seconds;
  r.cpu.p90 = cpu.contains("p90_s") ? cpu["p90_s"].cast<double>() : r.cpu.median_cpu_seconds;
  r.seed = d.contains("seed") ? d["seed"].cast<std::uint64_t>() : 0;
  r.status = d.contains("status") ? d["status"].cast<std::string>() : "ok";
  return r;
}

std::string run_command(const std::string& name, const py::object& cfg_obj) {
  const config::RunConfig cfg = config::run_config_from_json(to_json(cfg_obj));
  std::ostringstream log;
  py::gil_scoped_release release;
  if (name == "synth") {
    commands::cmd_synth(cfg, log);
  } else if (name == "train") {
    commands::cmd_train(cfg, log);
  } else if (name == "sweep") {
    if (commands::cmd_sweep(cfg, log) != commands::kExitOk) throw DataError("no grid point trained successfully");
  } else if (name == "bench") {
    commands::cmd_bench(cfg, log);
  } else {
    throw ConfigError("unknown command '" + name + "' (synth, train, sweep, bench)");
  }
  return log.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stream temporal MLP action recognition core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<MeasurementError>(m, "MeasurementError", base.ptr());

  m.def("sample_indices", &sampling::sample_indices, py::arg("native_hz"), py::arg("f"), py::arg("window_frames"),
        "Window-relative native frame indices kept at frequency f; the last frame is always included.");
  m.def("sequence_length", &sampling::sequence_length, py::arg("native_hz"), py::arg("f"),
        py::arg("window_frames"));

  m.def(
      "normalize_hand",
      [](const Array& hand, const std::optional<std::vector<double>>& reference_lengths, std::size_t primary,
         std::size_t secondary) {
        return from_hand(handpose::normalize_hand(to_hand(hand), topology(reference_lengths), {primary, secondary}));
      },
      py::arg("hand"), py::arg("reference_lengths") = py::none(), py::arg("primary") = 9, py::arg("secondary") = 5,
      "Translate to the wrist, standardize bone lengths, rotate into the canonical frame. "
      "`hand` is a (21, 3) right hand.");

  m.def(
      "normalize_frames",
      [](const Array& frames, const std::optional<std::vector<double>>& reference_lengths, bool strict) {
        const nn::Matrix raw = to_matrix(frames, 128, "frames");
        const auto topo = topology(reference_lengths);
        Array out({raw.rows(), handpose::kFrameFeatures});
        py::array_t<bool> valid({raw.rows(), std::size_t{2}});
        std::vector<std::string> problems;
        for (std::size_t i = 0; i < raw.rows(); ++i) {
          const auto row = raw.row(i);
          handpose::HandFrame f;
          f.left_valid = row[0] == 1.0;
          f.right_valid = row[64] == 1.0;
          for (std::size_t k = 0; k < 21; ++k) {
            f.left[k] = handpose::Vec3(row[1 + 3 * k], row[2 + 3 * k], row[3 + 3 * k]);
            f.right[k] = handpose::Vec3(row[65 + 3 * k], row[66 + 3 * k], row[67 + 3 * k]);
          }
          if (!f.left_valid) f.left = handpose::zero_hand();
          if (!f.right_valid) f.right = handpose::zero_hand();
          const auto n = strict ? handpose::normalize_hand_frame(f, topo)
                                : handpose::normalize_hand_frame_lenient(f, topo, {}, problems);
          const auto flat = handpose::flatten(n);
          std::copy(flat.begin(), flat.end(), out.mutable_data() + i * handpose::kFrameFeatures);
          valid.mutable_at(i, 0) = n.left_valid;
          valid.mutable_at(i, 1) = n.right_valid;
        }
        return py::make_tuple(out, valid);
      },
      py::arg("frames"), py::arg("reference_lengths") = py::none(), py::arg("strict") = false,
      "Normalize (N, 128) frames in file layout (validity flag + 63 values per hand). "
      "Returns (N, 126) features and an (N, 2) validity mask.");

  m.def(
      "macro_f1",
      [](const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t n_classes) {
        return bench::macro_f1(predictions, labels, n_classes);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("n_classes"));
  m.def("quantile", &bench::quantile, py::arg("samples"), py::arg("q"));

  py::class_<model::Model>(m, "Model")
      .def(py::init([](const py::object& cfg, std::uint64_t seed) {
             return model::make_model(model::model_config_from_json(to_json(cfg)), seed);
           }),
           py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::string& path) { return model::load_checkpoint(path); }, py::arg("path"))
      .def(
          "save", [](model::Model& self, const std::string& path) { model::save_checkpoint(path, self); },
          py::arg("path"))
      .def_property_readonly("kind", [](const model::Model& self) { return std::string(model::to_string(self.kind())); })
      .def_property_readonly("config", [](const model::Model& self) { return from_json(model::to_json(self.config())); })
      .def_property_readonly("macs", &model::Model::macs)
      .def_property_readonly("n_parameters",
                             [](model::Model& self) {
                               std::size_t n = 0;
                               for (auto* p : self.parameters()) n += p->trainable ? p->value.size() : 0;
                               return n;
                             })
      .def(
          "forward",
          [](model::Model& self, const std::optional<Array>& rgb, const std::optional<Array>& hp) {
            const auto& c = self.config();
            model::StreamInputs in;
            if (rgb) in.rgb = to_matrix(*rgb, c.rgb_input_width(), "rgb");
            if (hp) in.hp = to_matrix(*hp, handpose::kFrameFeatures, "hp");
            const nn::Matrix logits = self.forward(in);
            Array out(static_cast<py::ssize_t>(logits.cols()));
            std::copy(logits.data().begin(), logits.data().end(), out.mutable_data());
            return out;
          },
          py::arg("rgb") = py::none(), py::arg("hp") = py::none(),
          "Logits for one window: rgb is (T_rgb, D_in), hp is (T_hp, 126) normalized hand features.");

  m.def(
      "measure_cpu",
      [](const py::object& cfg, double f_rgb, double f_hp, double window_seconds, std::size_t reps,
         std::size_t warmup, std::uint64_t seed) {
        json j = model::to_json(config::RunConfig::default_bench_model());
        j.merge_patch(to_json(cfg));
        const auto mcfg = model::model_config_from_json(j);
        sampling::RateConfig rates;
        rates.f_rgb = f_rgb;
        rates.f_hp = f_hp;
        rates.window_seconds = window_seconds;
        bench::CpuStats s;
        {
          py::gil_scoped_release release;
          s = bench::measure_cpu(mcfg, rates, {reps, warmup, 1}, seed);
        }
        return cpu_dict(s);
      },
      py::arg("model") = py::none(), py::arg("f_rgb") = 30.0, py::arg("f_hp") = 30.0,
      py::arg("window_seconds") = 1.0, py::arg("reps") = 15, py::arg("warmup") = 3, py::arg("seed") = 0,
      "Single-thread CPU seconds of one-window inference. `model` patches the default bench architecture.");

  m.def(
      "read_results",
      [](const std::string& path) {
        const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
        py::list out;
        for (const auto& r : bench::import_results(path, is_json ? bench::ExportFormat::json : bench::ExportFormat::csv))
          out.append(row_dict(r));
        return out;
      },
      py::arg("path"), "Sweep rows from results.csv or results.json.");
  m.def(
      "pareto_front",
      [](const py::list& rows) {
        std::vector<bench::SweepRow> in;
        for (const auto& r : rows) in.push_back(row_from(r.cast<py::dict>()));
        py::list out;
        for (const auto& r : bench::pareto_front(in)) out.append(row_dict(r));
        return out;
      },
      py::arg("rows"), "Rows not dominated in (action F1 up, CPU down), sorted by CPU.");

  m.def(
      "default_config", [] { return from_json(config::to_json(config::RunConfig{})); },
      "The full run configuration with every default filled in.");
  m.def("run", &run_command, py::arg("command"), py::arg("config") = py::none(),
        "Run `synth`, `train`, `sweep` or `bench` with a config dict; returns the log text.");
}
