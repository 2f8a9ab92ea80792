#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "evlign/attention.hpp"
#include "evlign/dataset_tools.hpp"
#include "evlign/error.hpp"
#include "evlign/metrics.hpp"
#include "evlign/representations.hpp"
#include "evlign/selfcheck.hpp"
#include "evlign/simulator.hpp"
#include "evlign/ssmer.hpp"
#include "evlign/version.hpp"

namespace py = pybind11;
using namespace evlign;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> vector_to_numpy(const std::vector<T>& v) {
  return py::array_t<T>(static_cast<py::ssize_t>(v.size()), v.data());
}

py::array_t<double> grid_to_numpy(const Grid<double>& g) {
  py::array_t<double> out({g.channels, g.height, g.width});
  std::copy(g.values.begin(), g.values.end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Matrix numpy_to_matrix(const Array<double>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

Embeddings make_embeddings(const Array<double>& t, const Array<double>& q, const Array<double>& f_rgb,
                           const Array<double>& p_rgb, const Array<double>& f_evt, const Array<double>& p_evt) {
  return {numpy_to_matrix(t), numpy_to_matrix(q), numpy_to_matrix(f_rgb),
          numpy_to_matrix(p_rgb), numpy_to_matrix(f_evt), numpy_to_matrix(p_evt)};
}

Matrix rows_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("empty batch");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw ShapeError("ragged batch");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_evlign, m) {
  m.doc() = "Event representations, simulator, alignment attention, SSMER losses and landmark metrics.";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "EvlignError", PyExc_ValueError);

  py::class_<SensorGeometry>(m, "SensorGeometry")
      .def(py::init<std::uint32_t, std::uint32_t>(), py::arg("width") = 346, py::arg("height") = 260)
      .def_readwrite("width", &SensorGeometry::width)
      .def_readwrite("height", &SensorGeometry::height)
      .def("__repr__", [](const SensorGeometry& g) {
        return "SensorGeometry(" + std::to_string(g.width) + ", " + std::to_string(g.height) + ")";
      });

  py::class_<EventStream>(m, "EventStream")
      .def(py::init([](const Array<std::uint64_t>& t, const Array<std::int32_t>& x, const Array<std::int32_t>& y,
                       const Array<std::int8_t>& p, SensorGeometry g) {
             const auto n = static_cast<std::size_t>(t.size());
             if (x.size() != t.size() || y.size() != t.size() || p.size() != t.size()) {
               throw ShapeError("t, x, y and p must have the same length");
             }
             std::vector<Event> evs(n);
             for (std::size_t i = 0; i < n; ++i) evs[i] = {t.data()[i], x.data()[i], y.data()[i], p.data()[i]};
             return EventStream(g, std::move(evs));
           }),
           py::arg("t"), py::arg("x"), py::arg("y"), py::arg("p"), py::arg("geometry") = SensorGeometry{})
      .def_property_readonly("geometry", &EventStream::geometry)
      .def_property_readonly("was_resorted", &EventStream::was_resorted)
      .def("__len__", &EventStream::size)
      .def("arrays",
           [](const EventStream& s) {
             std::vector<std::uint64_t> t;
             std::vector<std::int32_t> x, y;
             std::vector<std::int8_t> p;
             for (const Event& e : s.events()) {
               t.push_back(e.t);
               x.push_back(e.x);
               y.push_back(e.y);
               p.push_back(e.polarity);
             }
             return py::make_tuple(vector_to_numpy(t), vector_to_numpy(x), vector_to_numpy(y), vector_to_numpy(p));
           },
           "(t, x, y, polarity) as numpy arrays");

  m.def("load_events", [](const std::filesystem::path& path, SensorGeometry g) {
        return load_events(path, format_for(path), g);
      }, py::arg("path"), py::arg("csv_geometry") = SensorGeometry{});
  m.def("save_events", [](const std::filesystem::path& path, const EventStream& s) {
        save_events(path, s, format_for(path));
      }, py::arg("path"), py::arg("stream"));
  m.def("slice_window", &slice_window, py::arg("stream"), py::arg("t0"), py::arg("dt"));
  m.def("count_events", &count_events);

  m.def("build_frame", [](const EventStream& s) { return grid_to_numpy(to_double(build_frame(s).grid)); });
  m.def("build_voxel", [](const EventStream& s, std::size_t bins) { return grid_to_numpy(build_voxel(s, bins).grid); },
        py::arg("stream"), py::arg("bins") = kDefaultVoxelBins);
  m.def("build_timesurface",
        [](const EventStream& s, std::optional<std::uint64_t> t_ref, std::optional<double> tau) {
          return grid_to_numpy(build_timesurface(s, t_ref, tau).grid);
        },
        py::arg("stream"), py::arg("t_ref") = py::none(), py::arg("tau") = py::none());

  m.def("frames_to_events",
        [](const Array<double>& frames, double fps, double threshold, double log_eps, int interpolation) {
          if (frames.ndim() != 3) throw ShapeError("frames must be K x H x W");
          FrameSequence seq;
          seq.fps = fps;
          const auto h = static_cast<std::size_t>(frames.shape(1)), w = static_cast<std::size_t>(frames.shape(2));
          for (py::ssize_t k = 0; k < frames.shape(0); ++k) {
            const double* src = frames.data() + k * h * w;
            seq.frames.emplace_back(h, w, std::vector<double>(src, src + h * w));
          }
          return frames_to_events(seq, {threshold, log_eps, interpolation});
        },
        py::arg("frames"), py::arg("fps") = 25.0, py::arg("threshold") = 0.2, py::arg("log_eps") = 1e-3,
        py::arg("interpolation_factor") = 1);

  m.def("segment_stream", [](const EventStream& s, double fps) {
        const auto idx = segment_stream(s, fps);
        std::vector<std::pair<std::uint64_t, std::uint64_t>> windows;
        for (const auto& w : idx.windows) windows.emplace_back(w.t0, w.dt);
        return py::make_tuple(windows, idx.counts);
      }, py::arg("stream"), py::arg("fps") = 25.0, "([(t0, dt), ...], counts)");
  auto index_from = [](const std::vector<std::size_t>& counts, const std::vector<std::uint64_t>& t0) {
    if (t0.size() != counts.size()) throw ShapeError("counts and t0 must have the same length");
    WindowIndex idx;
    for (std::size_t i = 0; i < counts.size(); ++i) idx.windows.push_back({t0[i], 1});
    idx.counts = counts;
    return idx;
  };
  m.def("select_max_event_segment", [index_from](const std::vector<std::size_t>& counts, std::vector<std::uint64_t> t0) {
        if (t0.empty()) for (std::size_t i = 0; i < counts.size(); ++i) t0.push_back(i);
        return select_max_event_segment(index_from(counts, t0));
      }, py::arg("counts"), py::arg("t0") = std::vector<std::uint64_t>{});
  m.def("select_top_k_segments",
        [index_from](const std::vector<std::size_t>& counts, std::size_t k, std::vector<std::uint64_t> t0) {
          if (t0.empty()) for (std::size_t i = 0; i < counts.size(); ++i) t0.push_back(i);
          return select_top_k_segments(index_from(counts, t0), k);
        },
        py::arg("counts"), py::arg("k"), py::arg("t0") = std::vector<std::uint64_t>{});
  m.def("esie_windows", [](const EventStream& s) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
    for (const auto& w : esie_windows(s)) out.emplace_back(w.t0, w.dt);
    return out;
  });

  m.def("cmfa_weights",
        [](const Array<double>& t, const Array<double>& q, const Array<double>& f_rgb, const Array<double>& p_rgb,
           std::size_t heads, std::uint64_t seed, std::size_t head) {
          const Matrix ft = numpy_to_matrix(f_rgb);
          Embeddings e{numpy_to_matrix(t), numpy_to_matrix(q), ft, numpy_to_matrix(p_rgb), Matrix(ft.rows(), ft.cols()),
                       Matrix(ft.rows(), ft.cols())};
          return matrix_to_numpy(cmfa_weights(e, AttentionParams::random(e.tokens.cols(), heads, seed), head));
        },
        py::arg("tokens"), py::arg("query"), py::arg("rgb_features"), py::arg("rgb_structure"), py::arg("heads"),
        py::arg("seed") = 7, py::arg("head") = 0, "Weights of one CMFA head under seeded parameters");
  m.def("layer_forward",
        [](const Array<double>& t, const Array<double>& q, const Array<double>& f_rgb, const Array<double>& p_rgb,
           const Array<double>& f_evt, const Array<double>& p_evt, std::size_t heads, std::uint64_t seed,
           const std::string& value_source, double init_scale, bool zero_params) {
          const Embeddings e = make_embeddings(t, q, f_rgb, p_rgb, f_evt, p_evt);
          const std::size_t c = e.tokens.cols();
          AttentionParams p = zero_params ? AttentionParams::zeros(c, heads) : AttentionParams::random(c, heads, seed, init_scale);
          p.value_source = value_source_from_string(value_source);
          const auto out = layer_forward(e.tokens, e, p);
          py::dict maps;
          auto list = [](const std::vector<Matrix>& v) {
            py::list l;
            for (const auto& a : v) l.append(matrix_to_numpy(a));
            return l;
          };
          maps["cmfa"] = list(out.cmfa_maps);
          maps["msa"] = list(out.msa_maps);
          maps["mca"] = list(out.mca_maps);
          return py::make_tuple(matrix_to_numpy(out.output), maps);
        },
        py::arg("tokens"), py::arg("query"), py::arg("rgb_features"), py::arg("rgb_structure"),
        py::arg("event_features"), py::arg("event_structure"), py::arg("heads") = 4, py::arg("seed") = 7,
        py::arg("value_source") = "rgb_features", py::arg("init_scale") = 1.0, py::arg("zero_params") = false,
        "(T', {'cmfa': [...], 'msa': [...], 'mca': [...]}) with seeded parameters");
  m.def("grad_check",
        [](const std::string& target, std::uint64_t seed, std::size_t tokens, std::size_t patches,
           std::size_t channels, std::size_t heads, const std::string& value_source) {
          GradCheckConfig cfg{tokens, patches, channels, heads, value_source_from_string(value_source), 1e-4, seed};
          const auto r = grad_check(grad_check_target_from_string(target), cfg);
          return py::make_tuple(r.max_relative_error, r.checked, r.worst);
        },
        py::arg("target") = "layer_forward", py::arg("seed") = 0, py::arg("tokens") = 3, py::arg("patches") = 4,
        py::arg("channels") = 8, py::arg("heads") = 2, py::arg("value_source") = "rgb_features",
        "(max_relative_error, scalars_checked, worst_name)");

  m.def("cosine_distance", [](const std::vector<double>& p, const std::vector<double>& z) {
    return cosine_distance(p, z);
  });
  m.def("symmetric_pair_loss",
        [](const std::vector<std::vector<double>>& z1, const std::vector<std::vector<double>>& z2,
           const std::vector<std::vector<double>>& p1, const std::vector<std::vector<double>>& p2) {
          return symmetric_pair_loss({rows_matrix(z1), rows_matrix(z2), rows_matrix(p1), rows_matrix(p2)});
        },
        py::arg("z1"), py::arg("z2"), py::arg("p1"), py::arg("p2"));
  m.def("train_toy",
        [](std::size_t windows, std::uint32_t size, std::size_t epochs, double lr, std::size_t batch,
           std::uint64_t seed, bool stop_gradient, bool use_predictor) {
          const auto triples = build_triples(make_synthetic_windows(windows, {size, size}, seed));
          TrainConfig cfg;
          cfg.epochs = epochs;
          cfg.lr = lr;
          cfg.batch = batch;
          cfg.seed = seed;
          cfg.stop_gradient = stop_gradient;
          cfg.use_predictor = use_predictor;
          py::list out;
          for (const auto& e : train_toy(triples, cfg).trajectory) {
            py::dict d;
            d["epoch"] = e.epoch;
            d["loss"] = e.loss;
            d["pair_losses"] = std::vector<double>(e.pair_losses.begin(), e.pair_losses.end());
            d["spread"] = e.spread;
            out.append(d);
          }
          return out;
        },
        py::arg("windows") = 64, py::arg("size") = 16, py::arg("epochs") = 50, py::arg("lr") = 0.05,
        py::arg("batch") = 16, py::arg("seed") = 3, py::arg("stop_gradient") = true, py::arg("use_predictor") = true,
        "Per-epoch {'epoch', 'loss', 'pair_losses', 'spread'}; epoch 0 is before training");

  m.def("nme",
        [](const std::vector<Point2>& pred, const std::vector<Point2>& gt, const std::string& norm) {
          return nme(LandmarkSet::from_points(pred), LandmarkSet::from_points(gt), normalization_from_string(norm));
        },
        py::arg("pred"), py::arg("gt"), py::arg("norm") = "inter_pupil");
  m.def("failure_rate", [](const std::vector<double>& v, double thr) { return failure_rate(v, thr); },
        py::arg("nmes"), py::arg("threshold") = kDefaultThreshold);
  m.def("auc", [](const std::vector<double>& v, double thr) { return auc(v, thr); }, py::arg("nmes"),
        py::arg("threshold") = kDefaultThreshold);
  m.def("evaluate",
        [](const std::filesystem::path& pred, const std::filesystem::path& gt, const std::string& norm, double thr) {
          const auto r = evaluate(pred, gt, normalization_from_string(norm), thr);
          py::dict d;
          d["nme_percent"] = r.nme_percent;
          d["fr10_percent"] = r.fr10_percent;
          d["auc10"] = r.auc10;
          py::dict per;
          for (const auto& im : r.per_image) per[py::str(im.image_id)] = im.nme_percent;
          d["per_image"] = per;
          return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("norm") = "inter_pupil", py::arg("threshold") = kDefaultThreshold);

  m.def("selfcheck", [](std::uint64_t seed) {
    std::vector<std::tuple<std::string, bool, std::string>> out;
    for (const auto& r : run_selfcheck(seed)) out.emplace_back(r.name, r.passed, r.detail);
    return out;
  }, py::arg("seed") = 0);
}
