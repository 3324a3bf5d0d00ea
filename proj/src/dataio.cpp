#include "curvewalk/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "curvewalk/geometry.hpp"

namespace curvewalk {

namespace {

// token scanner over raw bytes with line tracking; '#' starts a comment
class TokenScanner {
 public:
  explicit TokenScanner(std::string_view bytes) : bytes_(bytes) {}

  int line() const { return line_; }

  bool next(std::string_view& tok) {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size()) return false;
    const size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])) &&
           bytes_[pos_] != '#')
      ++pos_;
    tok = bytes_.substr(start, pos_ - start);
    return true;
  }

  std::string_view expect(const char* what) {
    std::string_view tok;
    if (!next(tok)) throw ParseError(line_, std::string("unexpected end of input, expected ") + what);
    return tok;
  }

  int64_t expect_int(const char* what) {
    const std::string_view tok = expect(what);
    int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw ParseError(line_, std::string("non-numeric token '") +
                                  std::string(tok) + "' for " + what);
    return v;
  }

  double expect_double(const char* what) {
    const std::string_view tok = expect(what);
    // from_chars<double> handles the full float grammar in libstdc++ 11
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw ParseError(line_, std::string("non-numeric token '") +
                                  std::string(tok) + "' for " + what);
    return v;
  }

 private:
  std::string_view bytes_;
  size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

Mesh parse_off(std::string_view bytes) {
  TokenScanner sc(bytes);
  std::string_view header = sc.expect("OFF header");
  int64_t nv = -1;
  if (header == "OFF") {
    nv = sc.expect_int("vertex count");
  } else if (header.size() > 3 && header.substr(0, 3) == "OFF") {
    // glued ModelNet header: counts start right after "OFF"
    const std::string_view rest = header.substr(3);
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), nv);
    if (ec != std::errc() || p != rest.data() + rest.size())
      throw ParseError(sc.line(), "malformed OFF header");
  } else {
    throw ParseError(sc.line(), "missing OFF header");
  }
  const int64_t nf = sc.expect_int("face count");
  sc.expect_int("edge count");
  if (nv < 1 || nv > static_cast<int64_t>(bytes.size()) / 2 + 16)
    throw ParseError(sc.line(), "implausible vertex count " + std::to_string(nv));
  if (nf < 0 || nf > static_cast<int64_t>(bytes.size()) / 2 + 16)
    throw ParseError(sc.line(), "implausible face count " + std::to_string(nf));

  Mesh mesh;
  mesh.vertices = Tensor({static_cast<int>(nv), 3});
  for (int64_t i = 0; i < nv; ++i)
    for (int d = 0; d < 3; ++d)
      mesh.vertices.at(static_cast<int>(i), d) = sc.expect_double("vertex coordinate");

  for (int64_t f = 0; f < nf; ++f) {
    const int64_t sides = sc.expect_int("face vertex count");
    if (sides < 3 || sides > nv)
      throw ParseError(sc.line(), "face with " + std::to_string(sides) + " vertices");
    std::vector<int> poly(static_cast<size_t>(sides));
    for (int64_t s = 0; s < sides; ++s) {
      const int64_t idx = sc.expect_int("face index");
      if (idx < 0 || idx >= nv)
        throw ParseError(sc.line(), "face index " + std::to_string(idx) + " out of range");
      poly[static_cast<size_t>(s)] = static_cast<int>(idx);
    }
    for (int64_t s = 1; s + 1 < sides; ++s)
      mesh.faces.push_back({poly[0], poly[static_cast<size_t>(s)],
                            poly[static_cast<size_t>(s + 1)]});
  }
  return mesh;
}

std::string write_off(const Mesh& mesh) {
  std::ostringstream os;
  os << "OFF\n" << mesh.vertices.rows() << " " << mesh.faces.size() << " 0\n";
  char buf[96];
  for (int i = 0; i < mesh.vertices.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", mesh.vertices.at(i, 0),
                  mesh.vertices.at(i, 1), mesh.vertices.at(i, 2));
    os << buf;
  }
  for (const auto& f : mesh.faces)
    os << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  return os.str();
}

PointCloud sample_surface(const Mesh& mesh, int points, Rng& rng) {
  CW_CHECK(points >= 1, "need at least one sample");
  CW_CHECK(!mesh.faces.empty(), "mesh has no faces");
  const int F = static_cast<int>(mesh.faces.size());
  std::vector<double> cum(static_cast<size_t>(F));
  double total = 0.0;
  for (int f = 0; f < F; ++f) {
    const auto& face = mesh.faces[static_cast<size_t>(f)];
    double u[3], v[3];
    for (int d = 0; d < 3; ++d) {
      u[d] = mesh.vertices.at(face[1], d) - mesh.vertices.at(face[0], d);
      v[d] = mesh.vertices.at(face[2], d) - mesh.vertices.at(face[0], d);
    }
    const double cx = u[1] * v[2] - u[2] * v[1];
    const double cy = u[2] * v[0] - u[0] * v[2];
    const double cz = u[0] * v[1] - u[1] * v[0];
    total += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
    cum[static_cast<size_t>(f)] = total;
  }
  CW_CHECK(total > 0.0, "mesh has zero total area");

  PointCloud cloud;
  cloud.coords = Tensor({points, 3});
  for (int p = 0; p < points; ++p) {
    const double target = rng.uniform() * total;
    const int f = static_cast<int>(
        std::upper_bound(cum.begin(), cum.end(), target) - cum.begin());
    const auto& face = mesh.faces[static_cast<size_t>(std::min(f, F - 1))];
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    for (int d = 0; d < 3; ++d) {
      const double v0 = mesh.vertices.at(face[0], d);
      const double v1 = mesh.vertices.at(face[1], d);
      const double v2 = mesh.vertices.at(face[2], d);
      cloud.coords.at(p, d) = v0 + a * (v1 - v0) + b * (v2 - v0);
    }
  }
  return cloud;
}

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kTorus: return "torus";
    case ShapeKind::kCylinder: return "cylinder";
  }
  return "?";
}

namespace {

void set_point(PointCloud& c, int i, double x, double y, double z, double nx,
               double ny, double nz) {
  c.coords.at(i, 0) = x;
  c.coords.at(i, 1) = y;
  c.coords.at(i, 2) = z;
  c.normals.at(i, 0) = nx;
  c.normals.at(i, 1) = ny;
  c.normals.at(i, 2) = nz;
}

void sphere_point(PointCloud& c, int i, Rng& rng) {
  double v[3], n = 0.0;
  do {
    n = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n += x * x;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  set_point(c, i, v[0] / n, v[1] / n, v[2] / n, v[0] / n, v[1] / n, v[2] / n);
}

void cube_point(PointCloud& c, int i, Rng& rng) {
  const double half = 1.0 / std::sqrt(3.0);  // corner radius 1
  const int face = static_cast<int>(rng.uniform_int(6));
  const int axis = face / 2;
  const double sign = face % 2 == 0 ? 1.0 : -1.0;
  double p[3], n[3] = {0, 0, 0};
  p[axis] = sign * half;
  n[axis] = sign;
  p[(axis + 1) % 3] = rng.uniform(-half, half);
  p[(axis + 2) % 3] = rng.uniform(-half, half);
  set_point(c, i, p[0], p[1], p[2], n[0], n[1], n[2]);
}

void torus_point(PointCloud& c, int i, Rng& rng) {
  const double R = 0.7, r = 0.3;
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  // area element scales with R + r cos(theta); rejection keeps it uniform
  double theta;
  for (;;) {
    theta = rng.uniform(0.0, 2.0 * M_PI);
    if (rng.uniform() * (R + r) <= R + r * std::cos(theta)) break;
  }
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(phi), sp = std::sin(phi);
  set_point(c, i, (R + r * ct) * cp, (R + r * ct) * sp, r * st, ct * cp,
            ct * sp, st);
}

void cylinder_point(PointCloud& c, int i, Rng& rng) {
  const double r = 0.5;
  const double hh = std::sqrt(1.0 - r * r);  // rim radius exactly 1
  const double lateral = 2.0 * M_PI * r * (2.0 * hh);
  const double caps = 2.0 * M_PI * r * r;
  if (rng.uniform() * (lateral + caps) < lateral) {
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double z = rng.uniform(-hh, hh);
    set_point(c, i, r * std::cos(phi), r * std::sin(phi), z, std::cos(phi),
              std::sin(phi), 0.0);
  } else {
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const double rad = r * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    set_point(c, i, rad * std::cos(phi), rad * std::sin(phi), sign * hh, 0.0,
              0.0, sign);
  }
}

}  // namespace

PointCloud synth_cloud(ShapeKind kind, int points, Rng& rng) {
  CW_CHECK(points >= 1, "need at least one point");
  PointCloud c;
  c.coords = Tensor({points, 3});
  c.normals = Tensor({points, 3});
  for (int i = 0; i < points; ++i) {
    switch (kind) {
      case ShapeKind::kSphere: sphere_point(c, i, rng); break;
      case ShapeKind::kCube: cube_point(c, i, rng); break;
      case ShapeKind::kTorus: torus_point(c, i, rng); break;
      case ShapeKind::kCylinder: cylinder_point(c, i, rng); break;
    }
  }
  return c;
}

Dataset synth_shapes(const std::vector<ShapeKind>& kinds, int per_class,
                     int points, Rng& rng) {
  CW_CHECK(!kinds.empty(), "no shape kinds given");
  Dataset ds;
  for (ShapeKind k : kinds) ds.class_names.push_back(shape_name(k));
  for (size_t ki = 0; ki < kinds.size(); ++ki)
    for (int s = 0; s < per_class; ++s) {
      PointCloud c = synth_cloud(kinds[ki], points, rng);
      c.label = static_cast<int>(ki);
      ds.clouds.push_back(std::move(c));
    }
  return ds;
}

namespace {

uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Dataset load_dataset(const std::string& root, const std::string& name,
                     int points, const std::string& split) {
  namespace fs = std::filesystem;
  CW_CHECK(split == "train" || split == "test", "split must be train|test");
  const fs::path base = name.empty() ? fs::path(root) : fs::path(root) / name;
  CW_CHECK(fs::is_directory(base), "dataset root " << base << " not found");
  Dataset ds;
  ds.split = split;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(base))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  CW_CHECK(!class_dirs.empty(), "no class directories under " << base);
  for (size_t ci = 0; ci < class_dirs.size(); ++ci) {
    ds.class_names.push_back(class_dirs[ci].filename().string());
    const fs::path split_dir = class_dirs[ci] / split;
    if (!fs::is_directory(split_dir)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(split_dir))
      if (e.is_regular_file() && e.path().extension() == ".off")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    CW_CHECK(!files.empty(), "class " << ds.class_names.back() << " has no "
                                      << split << " files");
    for (const fs::path& f : files) {
      std::ifstream is(f, std::ios::binary);
      CW_CHECK(is.good(), "cannot read " << f);
      std::ostringstream buf;
      buf << is.rdbuf();
      const std::string bytes = buf.str();
      const Mesh mesh = parse_off(bytes);
      const std::string rel = (class_dirs[ci].filename() / split /
                               f.filename()).string();
      Rng rng(fnv1a(bytes, fnv1a(rel)));
      PointCloud cloud = normalize_unit_sphere(sample_surface(mesh, points, rng));
      cloud.label = static_cast<int>(ci);
      ds.clouds.push_back(std::move(cloud));
    }
  }
  CW_CHECK(!ds.clouds.empty(), "no clouds loaded for split " << split);
  return ds;
}

void write_points(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::trunc);
  CW_CHECK(os.good(), "cannot open " << path << " for writing");
  std::string flags;
  if (cloud.has_normals()) flags += 'n';
  if (!cloud.point_labels.empty()) {
    CW_CHECK(static_cast<int>(cloud.point_labels.size()) == cloud.points(),
             "point label count mismatch");
    flags += 'l';
  }
  if (cloud.label >= 0) flags += 'c';
  if (flags.empty()) flags = "-";
  os << "PTS " << cloud.points() << " " << flags;
  if (cloud.label >= 0) os << " " << cloud.label;
  os << "\n";
  char buf[256];
  for (int i = 0; i < cloud.points(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", cloud.coords.at(i, 0),
                  cloud.coords.at(i, 1), cloud.coords.at(i, 2));
    os << buf;
    if (cloud.has_normals()) {
      std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g",
                    cloud.normals.at(i, 0), cloud.normals.at(i, 1),
                    cloud.normals.at(i, 2));
      os << buf;
    }
    if (!cloud.point_labels.empty())
      os << " " << cloud.point_labels[static_cast<size_t>(i)];
    os << "\n";
  }
  CW_CHECK(os.good(), "write failed for " << path);
}

PointCloud read_points(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CW_CHECK(is.good(), "cannot open " << path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  TokenScanner sc(bytes);
  if (sc.expect("PTS header") != "PTS")
    throw ParseError(sc.line(), "missing PTS header");
  const int64_t P = sc.expect_int("point count");
  if (P < 1 || P > static_cast<int64_t>(bytes.size()))
    throw ParseError(sc.line(), "implausible point count");
  const std::string flags(sc.expect("flags"));
  bool has_n = false, has_l = false, has_c = false;
  if (flags != "-")
    for (char f : flags) {
      if (f == 'n') has_n = true;
      else if (f == 'l') has_l = true;
      else if (f == 'c') has_c = true;
      else throw ParseError(sc.line(), std::string("unknown flag '") + f + "'");
    }
  PointCloud cloud;
  cloud.coords = Tensor({static_cast<int>(P), 3});
  if (has_n) cloud.normals = Tensor({static_cast<int>(P), 3});
  if (has_l) cloud.point_labels.resize(static_cast<size_t>(P));
  if (has_c) cloud.label = static_cast<int>(sc.expect_int("class id"));
  for (int64_t i = 0; i < P; ++i) {
    for (int d = 0; d < 3; ++d)
      cloud.coords.at(static_cast<int>(i), d) = sc.expect_double("coordinate");
    if (has_n)
      for (int d = 0; d < 3; ++d)
        cloud.normals.at(static_cast<int>(i), d) = sc.expect_double("normal");
    if (has_l)
      cloud.point_labels[static_cast<size_t>(i)] =
          static_cast<int>(sc.expect_int("point label"));
  }
  std::string_view extra;
  TokenScanner probe = sc;
  if (probe.next(extra))
    throw ParseError(probe.line(), "trailing data does not match flags");
  return cloud;
}

}  // namespace curvewalk
