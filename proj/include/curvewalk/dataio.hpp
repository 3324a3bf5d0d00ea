#ifndef CURVEWALK_DATAIO_HPP_
#define CURVEWALK_DATAIO_HPP_

#include <string>
#include <string_view>

#include "curvewalk/pointcloud.hpp"
#include "curvewalk/rng.hpp"

namespace curvewalk {

struct Mesh {
  Tensor vertices;                        // V x 3
  std::vector<std::array<int, 3>> faces;  // triangles after fan split
};

// OFF reader. Tolerates the ModelNet malformation where the counts share the
// header line ("OFF4 4 0"), ignores '#' comments, fan-triangulates polygons.
// Any malformed input raises ParseError with a line number; arbitrary bytes
// never crash.
Mesh parse_off(std::string_view bytes);
std::string write_off(const Mesh& mesh);

// Area-weighted uniform surface sampling with barycentric coordinates.
PointCloud sample_surface(const Mesh& mesh, int points, Rng& rng);

enum class ShapeKind { kSphere, kCube, kTorus, kCylinder };
const char* shape_name(ShapeKind kind);

// Analytic generators, canonically centered with max radius 1 so clouds are
// unit-sphere normalized by construction; every point carries its exact
// surface normal.
PointCloud synth_cloud(ShapeKind kind, int points, Rng& rng);

struct Dataset {
  std::vector<PointCloud> clouds;  // labels embedded per cloud
  std::vector<std::string> class_names;
  std::string split;  // "train" | "test"

  int size() const { return static_cast<int>(clouds.size()); }
};

Dataset synth_shapes(const std::vector<ShapeKind>& kinds, int per_class,
                     int points, Rng& rng);

// OFF tree layout root/class/{train,test}/*.off; classes sorted, files
// lexicographic, per-cloud sampling seeded by a content hash so reloads are
// identical across runs and machines. Clouds are unit-sphere normalized.
Dataset load_dataset(const std::string& root, const std::string& name,
                     int points, const std::string& split);

// Text point format: header "PTS <P> <flags>", flags from {n,l,c} or "-"
// ('c' appends the class id to the header), then per line
// x y z [nx ny nz] [point label]. Written with 17 significant digits.
void write_points(const std::string& path, const PointCloud& cloud);
PointCloud read_points(const std::string& path);

}  // namespace curvewalk

#endif  // CURVEWALK_DATAIO_HPP_
