#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "curvewalk/model.hpp"
#include "curvewalk/verify.hpp"

namespace py = pybind11;
using namespace curvewalk;

namespace {

Tensor coords_from_array(const py::array_t<double, py::array::c_style |
                                                        py::array::forcecast>& a) {
  CW_CHECK(a.ndim() == 2 && a.shape(1) == 3, "expected an (P, 3) array");
  Tensor t({static_cast<int>(a.shape(0)), 3});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int d = 0; d < t.rank(); ++d) shape.push_back(t.dim(d));
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

py::array_t<int> indices_to_array(const std::vector<int>& idx, int rows,
                                  int cols) {
  py::array_t<int> out({rows, cols});
  std::copy(idx.begin(), idx.end(), out.mutable_data());
  return out;
}

PointCloud cloud_from_array(const py::array_t<double, py::array::c_style |
                                                          py::array::forcecast>& a) {
  PointCloud c;
  c.coords = coords_from_array(a);
  return c;
}

ShapeKind kind_from_name(const std::string& name) {
  for (ShapeKind k : {ShapeKind::kSphere, ShapeKind::kCube, ShapeKind::kTorus,
                      ShapeKind::kCylinder})
    if (name == shape_name(k)) return k;
  CW_CHECK(false, "unknown shape kind " << name);
  return ShapeKind::kSphere;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "curve grouping and aggregation operators on point clouds";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "normalize_unit_sphere",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> pts) {
        return tensor_to_array(normalize_unit_sphere(cloud_from_array(pts)).coords);
      },
      py::arg("points"),
      "Center at the origin and scale so the farthest point sits at radius 1.");

  m.def(
      "farthest_point_sample",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> pts,
         int m_samples, int seed_index) {
        return farthest_point_sample(cloud_from_array(pts), m_samples, seed_index);
      },
      py::arg("points"), py::arg("m"), py::arg("seed_index") = 0,
      "Greedy max-min farthest point sampling; returns point indices.");

  m.def(
      "knn",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> pts,
         int k, bool exclude_self) {
        const PointCloud c = cloud_from_array(pts);
        const NeighborGraph g = knn(c, k, exclude_self);
        return indices_to_array(g.indices, c.points(), k);
      },
      py::arg("points"), py::arg("k"), py::arg("exclude_self") = true,
      "Exact k nearest neighbors per point, ties to the lower index.");

  m.def(
      "ball_query",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> pts,
         double radius, int k_max) {
        const PointCloud c = cloud_from_array(pts);
        const NeighborGraph g = ball_query_knn(c, radius, k_max);
        return indices_to_array(g.indices, c.points(), k_max);
      },
      py::arg("points"), py::arg("radius"), py::arg("k_max"),
      "Radius-limited neighbors, nearest first, padded to k_max.");

  m.def(
      "interpolate_3nn",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> src,
         py::array_t<double, py::array::c_style | py::array::forcecast> feats,
         py::array_t<double, py::array::c_style | py::array::forcecast> dst) {
        CW_CHECK(feats.ndim() == 2, "features must be (C, S)");
        Tensor f({static_cast<int>(feats.shape(0)),
                  static_cast<int>(feats.shape(1))});
        std::copy(feats.data(), feats.data() + feats.size(), f.data());
        return tensor_to_array(interpolate_3nn(coords_from_array(src), f,
                                               coords_from_array(dst)));
      },
      py::arg("src_points"), py::arg("src_features"), py::arg("dst_points"),
      "Inverse-distance weighted 3-NN feature upsampling.");

  m.def(
      "synth_cloud",
      [](const std::string& kind, int points, uint64_t seed) {
        Rng rng(seed);
        const PointCloud c = synth_cloud(kind_from_name(kind), points, rng);
        return py::make_tuple(tensor_to_array(c.coords),
                              tensor_to_array(c.normals));
      },
      py::arg("kind"), py::arg("points"), py::arg("seed") = 0,
      "Analytic shape sampler (sphere|cube|torus|cylinder); returns "
      "(points, normals).");

  m.def(
      "parse_off",
      [](py::bytes data) {
        const Mesh mesh = parse_off(std::string(data));
        py::array_t<int> faces({static_cast<py::ssize_t>(mesh.faces.size()),
                                static_cast<py::ssize_t>(3)});
        for (size_t i = 0; i < mesh.faces.size(); ++i)
          for (int j = 0; j < 3; ++j)
            faces.mutable_at(static_cast<py::ssize_t>(i), j) = mesh.faces[i][j];
        return py::make_tuple(tensor_to_array(mesh.vertices), faces);
      },
      py::arg("data"), "Parse OFF bytes into (vertices, triangles).");

  m.def(
      "sample_surface",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> verts,
         py::array_t<int, py::array::c_style | py::array::forcecast> faces,
         int points, uint64_t seed) {
        Mesh mesh;
        mesh.vertices = coords_from_array(verts);
        CW_CHECK(faces.ndim() == 2 && faces.shape(1) == 3,
                 "faces must be (F, 3)");
        for (py::ssize_t i = 0; i < faces.shape(0); ++i)
          mesh.faces.push_back({faces.at(i, 0), faces.at(i, 1), faces.at(i, 2)});
        Rng rng(seed);
        return tensor_to_array(sample_surface(mesh, points, rng).coords);
      },
      py::arg("vertices"), py::arg("faces"), py::arg("points"),
      py::arg("seed") = 0, "Area-weighted uniform surface sampling.");

  m.def(
      "group_curves",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> pts,
         int n, int l, int k, const std::string& policy, uint64_t seed,
         double theta_bar_deg) {
        PointCloud cloud = cloud_from_array(pts);
        const NeighborGraph graph = knn(cloud, k);
        const int P = cloud.points();
        Tensor feats({3, P});
        for (int i = 0; i < P; ++i)
          for (int d = 0; d < 3; ++d) feats.at(d, i) = cloud.coords.at(i, d);
        WalkConfig cfg{n, l, theta_bar_deg * M_PI / 180.0, true, true};
        if (policy == "naive") cfg.momentum = cfg.suppression = false;
        else if (policy == "momentum") cfg.suppression = false;
        else CW_CHECK(policy == "momentum+cs", "policy must be naive|momentum|momentum+cs");
        Rng rng(seed);
        WalkParams params = WalkParams::make("w", 3, 16, rng);
        Graph g;
        CurveSet cs = group_curves(g, g.input(feats), graph, params, cfg);
        const CurveStats stats = curve_stats(cs, cloud.coords);
        py::dict agg;
        agg["mean_revisits"] = stats.mean_revisits;
        agg["mean_turn_deg"] = stats.mean_turn_deg;
        agg["mean_dist_to_start"] = stats.mean_dist_to_start;
        agg["mean_dist_to_last"] = stats.mean_dist_to_last;
        return py::make_tuple(indices_to_array(cs.indices, n, l), agg);
      },
      py::arg("points"), py::arg("n"), py::arg("l"), py::arg("k") = 8,
      py::arg("policy") = "momentum+cs", py::arg("seed") = 0,
      py::arg("theta_bar_deg") = 90.0,
      "Walk n guided curves of l steps over the cloud's KNN graph with a "
      "randomly initialized policy; returns (indices, stats).");

  m.def("gradcheck", [](const std::string& only) {
        py::list out;
        for (const VerifyResult& r : run_gradcheck_suite(only)) {
          py::dict d;
          d["name"] = r.name;
          d["err"] = r.err;
          d["tol"] = r.tol;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("only") = "",
      "Run the finite-difference verification suite; returns per-target results.");

  py::class_<CurveNet>(m, "CurveNet")
      .def(py::init([](int classes, int k, int points, bool curves,
                       uint64_t seed) {
             return std::make_unique<CurveNet>(
                 CurveNetConfig::desk(TaskKind::kClassify, classes, k, points,
                                      curves),
                 seed);
           }),
           py::arg("classes") = 4, py::arg("k") = 8, py::arg("points") = 256,
           py::arg("curves") = true, py::arg("seed") = 1)
      .def_property_readonly("param_count", &CurveNet::param_count)
      .def("load", &CurveNet::load)
      .def("save", &CurveNet::save)
      .def(
          "logits",
          [](const CurveNet& self,
             py::array_t<double, py::array::c_style | py::array::forcecast> pts) {
            PointCloud cloud = cloud_from_array(pts);
            Graph g;
            auto trace = self.forward_classify(g, cloud);
            return tensor_to_array(g.tape.val(trace.output));
          },
          py::arg("points"), "Class logits for one cloud (eval mode).");
}
