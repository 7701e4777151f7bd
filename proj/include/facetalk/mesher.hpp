#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/headfield.hpp"

namespace facetalk {
namespace meshing {

struct GridSpec {
  Eigen::Vector3i resolution{128, 128, 128};
  Vec3<double> lo{-1.0, -1.0, -1.0};
  Vec3<double> hi{1.0, 1.0, 1.0};

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (resolution[a] < 2)
        throw ConfigError("grid resolution must be at least 2 per axis");
      if (!(lo[a] < hi[a]))
        throw ConfigError("grid bounds must satisfy min < max per axis");
    }
  }

  Index count() const {
    return Index(resolution[0]) * resolution[1] * resolution[2];
  }

  Vec3<double> node(int ix, int iy, int iz) const {
    Vec3<double> p;
    const int idx[3] = {ix, iy, iz};
    for (int a = 0; a < 3; ++a)
      p[a] = lo[a] + (hi[a] - lo[a]) * idx[a] / (resolution[a] - 1);
    return p;
  }

  Vec3<double> cell_size() const {
    Vec3<double> c;
    for (int a = 0; a < 3; ++a) c[a] = (hi[a] - lo[a]) / (resolution[a] - 1);
    return c;
  }
};

struct ScalarGrid {
  GridSpec spec;
  std::vector<double> values;  // index ix + nx*(iy + ny*iz)

  Index idx(int ix, int iy, int iz) const {
    return ix + Index(spec.resolution[0]) *
                    (iy + Index(spec.resolution[1]) * iz);
  }
  double at(int ix, int iy, int iz) const { return values[idx(ix, iy, iz)]; }
};

struct MeshBuffer {
  std::vector<Vec3<double>> vertices;
  std::vector<std::array<int, 3>> triangles;
};

namespace detail {

// Cube corners are indexed by bits: corner v sits at ((v>>a)&1 for axis a).
// Edge e = 4*axis + slot joins base corner (bit axis = 0) to base|1<<axis;
// slots enumerate the base corners of that axis in increasing index order.
struct CubeTopology {
  std::array<std::array<int, 2>, 12> edge_corners;
  std::array<int, 12> edge_axis;

  CubeTopology() {
    int e = 0;
    for (int axis = 0; axis < 3; ++axis)
      for (int v = 0; v < 8; ++v) {
        if (v & (1 << axis)) continue;
        edge_corners[e] = {v, v | (1 << axis)};
        edge_axis[e] = axis;
        ++e;
      }
  }
};

inline const CubeTopology& cube_topology() {
  static const CubeTopology topo;
  return topo;
}

// Triangulation table generated from the face-segment construction: crossing
// edges on each face are paired (ambiguous faces always separate the inside
// corners), the segments chain into closed loops, and each loop is fanned
// with outward orientation for the negative-inside convention. The pairing
// rule depends only on the face's sign pattern, so adjacent cells always
// agree on the shared boundary.
class TriangleTable {
 public:
  static const TriangleTable& instance() {
    static const TriangleTable table;
    return table;
  }

  const std::array<int8_t, 16>& row(int config) const { return rows_[config]; }

 private:
  std::array<std::array<int8_t, 16>, 256> rows_{};

  TriangleTable() {
    const CubeTopology& topo = cube_topology();
    for (int config = 0; config < 256; ++config) {
      rows_[config].fill(-1);
      auto inside = [&](int v) { return (config >> v) & 1; };

      std::array<bool, 12> crossed{};
      for (int e = 0; e < 12; ++e)
        crossed[e] = inside(topo.edge_corners[e][0]) !=
                     inside(topo.edge_corners[e][1]);

      // Segments on each of the six faces.
      std::vector<std::array<int, 2>> segments;
      for (int axis = 0; axis < 3; ++axis)
        for (int side = 0; side < 2; ++side) {
          std::vector<int> fe;
          for (int e = 0; e < 12; ++e) {
            if (!crossed[e]) continue;
            const auto [a, b] = topo.edge_corners[e];
            if (((a >> axis) & 1) == side && ((b >> axis) & 1) == side)
              fe.push_back(e);
          }
          if (fe.size() == 2) {
            segments.push_back({fe[0], fe[1]});
          } else if (fe.size() == 4) {
            // Ambiguous face: one segment around each inside corner.
            for (int v = 0; v < 8; ++v) {
              if (((v >> axis) & 1) != side || !inside(v)) continue;
              std::vector<int> adj;
              for (int e : fe) {
                const auto [a, b] = topo.edge_corners[e];
                if (a == v || b == v) adj.push_back(e);
              }
              if (adj.size() == 2) segments.push_back({adj[0], adj[1]});
            }
          }
        }

      // Chain segments into closed polygons (each crossed edge appears in
      // exactly two segments).
      std::array<std::vector<int>, 12> adj;
      for (size_t s = 0; s < segments.size(); ++s) {
        adj[segments[s][0]].push_back(int(s));
        adj[segments[s][1]].push_back(int(s));
      }
      std::vector<bool> used(segments.size(), false);
      int out_pos = 0;
      for (size_t s0 = 0; s0 < segments.size(); ++s0) {
        if (used[s0]) continue;
        std::vector<int> loop;
        int edge = segments[s0][0];
        size_t seg = s0;
        while (true) {
          used[seg] = true;
          loop.push_back(edge);
          const int next_edge =
              segments[seg][0] == edge ? segments[seg][1] : segments[seg][0];
          size_t next_seg = seg;
          for (int cand : adj[next_edge])
            if (!used[cand]) next_seg = size_t(cand);
          edge = next_edge;
          if (next_seg == seg) break;  // loop closed
          seg = next_seg;
        }

        orient_loop(config, loop);
        for (size_t i = 1; i + 1 < loop.size(); ++i) {
          rows_[config][out_pos++] = int8_t(loop[0]);
          rows_[config][out_pos++] = int8_t(loop[i]);
          rows_[config][out_pos++] = int8_t(loop[i + 1]);
        }
      }
    }
  }

  static Vec3<double> corner_pos(int v) {
    return Vec3<double>{double(v & 1), double((v >> 1) & 1),
                        double((v >> 2) & 1)};
  }

  // Orients the loop so triangle normals point from inside (negative) to
  // outside (positive).
  void orient_loop(int config, std::vector<int>& loop) const {
    const CubeTopology& topo = cube_topology();
    auto inside = [&](int v) { return (config >> v) & 1; };

    std::vector<Vec3<double>> pts;
    Vec3<double> in_c = Vec3<double>::Zero(), out_c = Vec3<double>::Zero();
    for (int e : loop) {
      const auto [a, b] = topo.edge_corners[e];
      pts.push_back(0.5 * (corner_pos(a) + corner_pos(b)));
      in_c += corner_pos(inside(a) ? a : b);
      out_c += corner_pos(inside(a) ? b : a);
    }
    in_c /= double(loop.size());
    out_c /= double(loop.size());

    Vec3<double> normal = Vec3<double>::Zero();  // Newell
    for (size_t i = 0; i < pts.size(); ++i) {
      const Vec3<double>& p = pts[i];
      const Vec3<double>& q = pts[(i + 1) % pts.size()];
      normal[0] += (p[1] - q[1]) * (p[2] + q[2]);
      normal[1] += (p[2] - q[2]) * (p[0] + q[0]);
      normal[2] += (p[0] - q[0]) * (p[1] + q[1]);
    }
    const double side = normal.dot(out_c - in_c);
    if (side < 0) std::reverse(loop.begin(), loop.end());
  }
};

}  // namespace detail

// Smoothing weights for every grid node, min-max normalized over the whole
// grid (frame-independent; computed once and reused across frames).
inline VecX<double> grid_smoothing_weights(const field::SmoothingKernel& k,
                                           const GridSpec& spec) {
  spec.validate();
  for (int a = 0; a < 3; ++a)
    if (!(k.sigma[a] > 0.0))
      throw ConfigError("smoothing sigma must be positive");
  const double norm =
      1.0 / (2.0 * M_PI * k.sigma[0] * k.sigma[1] * k.sigma[2]);
  VecX<double> w(spec.count());
  Index at = 0;
  for (int iz = 0; iz < spec.resolution[2]; ++iz)
    for (int iy = 0; iy < spec.resolution[1]; ++iy)
      for (int ix = 0; ix < spec.resolution[0]; ++ix) {
        const Vec3<double> p = spec.node(ix, iy, iz);
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double u = (p[a] - k.center[a]) / k.sigma[a];
          d2 += u * u;
        }
        w[at++] = norm * std::exp(-0.5 * d2);
      }
  const double lo = w.minCoeff(), hi = w.maxCoeff();
  if (!(hi > lo))
    throw DegenerateInputError("grid smoothing weights are degenerate");
  return (w.array() - lo) / (hi - lo);
}

// Per grid node: expression deformation (optionally scaled by the smoothing
// weight) followed by the base SDF of the deformed point.
inline ScalarGrid evaluate_grid(const field::HeadField& f,
                                const VecX<double>& theta_id,
                                const VecX<double>& theta_exp,
                                const GridSpec& spec,
                                const VecX<double>* smooth_weights = nullptr,
                                int threads = 1) {
  spec.validate();
  if (smooth_weights && smooth_weights->size() != spec.count())
    throw DimensionError("smoothing weight count must match the grid");

  const field::BaseShape shape = field::decode_base_shape(theta_id);
  const Points<double> centers = field::effective_centers(f, theta_id);
  const MatX<double> coef = field::deformation_coefficients(f, theta_exp);

  ScalarGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.count());

  const int nx = spec.resolution[0], ny = spec.resolution[1];
  const Index plane = Index(nx) * ny;
  parallel_for(spec.resolution[2], threads, [&](Index iz) {
    Points<double> pts(plane, 3);
    Index at = 0;
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
        pts.row(at++) = spec.node(ix, iy, int(iz)).transpose();
    const MatX<double> b = field::rbf_activations(f, centers, pts);
    Points<double> delta = b * coef;
    if (smooth_weights)
      delta.array().colwise() *=
          smooth_weights->segment(iz * plane, plane).array();
    for (Index i = 0; i < plane; ++i)
      grid.values[iz * plane + i] = field::base_sdf(
          shape, Vec3<double>(pts.row(i).transpose() + delta.row(i).transpose()));
  });
  return grid;
}

// Table-driven 256-case marching cubes with linear edge interpolation.
// Vertices are deduplicated by global edge id, so the output is independent
// of traversal order.
inline MeshBuffer marching_cubes(const ScalarGrid& grid, double iso = 0.0) {
  grid.spec.validate();
  const int nx = grid.spec.resolution[0];
  const int ny = grid.spec.resolution[1];
  const int nz = grid.spec.resolution[2];
  for (double v : grid.values)
    if (std::isnan(v)) throw NumericalError("NaN in scalar grid");

  const auto& topo = detail::cube_topology();
  const auto& table = detail::TriangleTable::instance();

  MeshBuffer mesh;
  std::unordered_map<uint64_t, int> edge_vertex;
  const uint64_t nodes = uint64_t(nx) * ny * nz;

  auto node_index = [&](int ix, int iy, int iz) {
    return uint64_t(ix) + uint64_t(nx) * (uint64_t(iy) + uint64_t(ny) * iz);
  };

  auto vertex_on_edge = [&](int axis, int ix, int iy, int iz) {
    const uint64_t key = uint64_t(axis) * nodes + node_index(ix, iy, iz);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const int jx = ix + (axis == 0), jy = iy + (axis == 1),
              jz = iz + (axis == 2);
    const double s0 = grid.at(ix, iy, iz);
    const double s1 = grid.at(jx, jy, jz);
    const double t = (iso - s0) / (s1 - s0);
    const Vec3<double> p0 = grid.spec.node(ix, iy, iz);
    const Vec3<double> p1 = grid.spec.node(jx, jy, jz);
    const int id = int(mesh.vertices.size());
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int cz = 0; cz + 1 < nz; ++cz)
    for (int cy = 0; cy + 1 < ny; ++cy)
      for (int cx = 0; cx + 1 < nx; ++cx) {
        int config = 0;
        for (int v = 0; v < 8; ++v) {
          const double s = grid.at(cx + (v & 1), cy + ((v >> 1) & 1),
                                   cz + ((v >> 2) & 1));
          if (s < iso) config |= 1 << v;
        }
        if (config == 0 || config == 255) continue;
        const auto& row = table.row(config);
        for (int k = 0; row[k] >= 0; k += 3) {
          std::array<int, 3> tri;
          for (int c = 0; c < 3; ++c) {
            const int e = row[k + c];
            const int base = topo.edge_corners[e][0];
            tri[c] = vertex_on_edge(topo.edge_axis[e], cx + (base & 1),
                                    cy + ((base >> 1) & 1),
                                    cz + ((base >> 2) & 1));
          }
          // Drop exact zero-area triangles (grid values hitting iso).
          const Vec3<double>& a = mesh.vertices[tri[0]];
          const Vec3<double>& b = mesh.vertices[tri[1]];
          const Vec3<double>& c = mesh.vertices[tri[2]];
          if ((b - a).cross(c - a).squaredNorm() == 0.0) continue;
          mesh.triangles.push_back(tri);
        }
      }
  return mesh;
}

inline double mesh_area(const MeshBuffer& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3<double>& a = mesh.vertices[t[0]];
    const Vec3<double>& b = mesh.vertices[t[1]];
    const Vec3<double>& c = mesh.vertices[t[2]];
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

inline double mesh_signed_volume(const MeshBuffer& mesh) {
  double vol = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3<double>& a = mesh.vertices[t[0]];
    const Vec3<double>& b = mesh.vertices[t[1]];
    const Vec3<double>& c = mesh.vertices[t[2]];
    vol += a.dot(b.cross(c)) / 6.0;
  }
  return vol;
}

}  // namespace meshing
}  // namespace facetalk
