#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "dp3d/mesh.hpp"

namespace dp3d {

// Unit icosahedron, 12 vertices / 20 faces.
inline TriMesh make_icosahedron() {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  Eigen::MatrixXd v(12, 3);
  v << -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p, 0, 0, -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p, p, 0, -1, p,
      0, 1, -p, 0, -1, -p, 0, 1;
  v.rowwise().normalize();
  Eigen::MatrixXi f(20, 3);
  f << 0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11, 1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7,
      1, 8, 3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9, 4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9,
      8, 1;
  return make_mesh(std::move(v), std::move(f));
}

// Icosahedron with `subdivisions` rounds of 4-way midpoint refinement, each
// new vertex projected to the unit sphere. subdivisions=3 gives 642 vertices
// and 1280 faces.
inline TriMesh make_icosphere(int subdivisions) {
  TriMesh mesh = make_icosahedron();
  for (int round = 0; round < subdivisions; ++round) {
    std::map<std::pair<int, int>, int> midpoint;
    std::vector<Eigen::RowVector3d> verts;
    verts.reserve(size_t(mesh.vertex_count()) * 4);
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) verts.push_back(mesh.vertices.row(i));
    const auto mid = [&](int a, int b) {
      if (a > b) std::swap(a, b);
      auto it = midpoint.find({a, b});
      if (it != midpoint.end()) return it->second;
      Eigen::RowVector3d m = (verts[size_t(a)] + verts[size_t(b)]).normalized();
      verts.push_back(m);
      const int idx = int(verts.size()) - 1;
      midpoint[{a, b}] = idx;
      return idx;
    };
    std::vector<Eigen::RowVector3i> faces;
    faces.reserve(size_t(mesh.face_count()) * 4);
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
      const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
      const int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
      faces.emplace_back(a, ab, ca);
      faces.emplace_back(b, bc, ab);
      faces.emplace_back(c, ca, bc);
      faces.emplace_back(ab, bc, ca);
    }
    mesh.vertices.resize(Eigen::Index(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(Eigen::Index(i)) = verts[i];
    mesh.faces.resize(Eigen::Index(faces.size()), 3);
    for (size_t i = 0; i < faces.size(); ++i) mesh.faces.row(Eigen::Index(i)) = faces[i];
  }
  validate_mesh(mesh);
  return mesh;
}

struct LabeledMesh {
  TriMesh mesh;
  std::vector<int> labels;  // hard part label per vertex
  std::vector<double> hinge_z;  // pivot heights between consecutive parts
};

// Closed cylinder along z with `n_parts` equal-height label bands. Hinge
// pivots sit on the band boundaries, which makes chained per-part rotations
// about them articulate the shape without tearing it.
inline LabeledMesh make_cylinder_chain(int n_around, int n_rings, int n_parts, double radius = 0.25,
                                       double height = 2.0) {
  std::vector<Eigen::RowVector3d> verts;
  std::vector<Eigen::RowVector3i> faces;
  const double z0 = -height / 2.0;
  for (int r = 0; r < n_rings; ++r) {
    const double z = z0 + height * double(r) / double(n_rings - 1);
    for (int s = 0; s < n_around; ++s) {
      const double a = 2.0 * M_PI * double(s) / double(n_around);
      verts.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
    }
  }
  for (int r = 0; r + 1 < n_rings; ++r) {
    for (int s = 0; s < n_around; ++s) {
      const int s1 = (s + 1) % n_around;
      const int a = r * n_around + s, b = r * n_around + s1;
      const int c = (r + 1) * n_around + s, d = (r + 1) * n_around + s1;
      faces.emplace_back(a, b, d);
      faces.emplace_back(a, d, c);
    }
  }
  // cap fans
  const int bottom_center = int(verts.size());
  verts.emplace_back(0.0, 0.0, z0);
  const int top_center = int(verts.size());
  verts.emplace_back(0.0, 0.0, z0 + height);
  for (int s = 0; s < n_around; ++s) {
    const int s1 = (s + 1) % n_around;
    faces.emplace_back(bottom_center, s1, s);
    const int base = (n_rings - 1) * n_around;
    faces.emplace_back(top_center, base + s, base + s1);
  }

  LabeledMesh out;
  out.mesh.vertices.resize(Eigen::Index(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) out.mesh.vertices.row(Eigen::Index(i)) = verts[i];
  out.mesh.faces.resize(Eigen::Index(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i) out.mesh.faces.row(Eigen::Index(i)) = faces[i];
  validate_mesh(out.mesh);

  out.labels.resize(verts.size());
  for (size_t i = 0; i < verts.size(); ++i) {
    const double t = (verts[i][2] - z0) / height;
    out.labels[i] = std::clamp(int(t * n_parts), 0, n_parts - 1);
  }
  for (int m = 1; m < n_parts; ++m) out.hinge_z.push_back(z0 + height * double(m) / double(n_parts));
  return out;
}

}  // namespace dp3d
