#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dp3d/error.hpp"

namespace dp3d {

// Triangle mesh: vertex positions (K x 3) and triangle indices (F x 3).
// Construction validates the structural invariants; a TriMesh in hand is
// always well-formed.
struct TriMesh {
  Eigen::MatrixXd vertices;  // K x 3
  Eigen::MatrixXi faces;     // F x 3

  Eigen::Index vertex_count() const { return vertices.rows(); }
  Eigen::Index face_count() const { return faces.rows(); }
};

inline double face_area(const TriMesh& mesh, Eigen::Index f) {
  const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
  const Eigen::RowVector3d b = mesh.vertices.row(mesh.faces(f, 1));
  const Eigen::RowVector3d c = mesh.vertices.row(mesh.faces(f, 2));
  return 0.5 * (b - a).cross(c - a).norm();
}

inline double total_area(const TriMesh& mesh) {
  double sum = 0.0;
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) sum += face_area(mesh, f);
  return sum;
}

inline double bbox_diagonal(const TriMesh& mesh) {
  const Eigen::RowVector3d lo = mesh.vertices.colwise().minCoeff();
  const Eigen::RowVector3d hi = mesh.vertices.colwise().maxCoeff();
  return (hi - lo).norm();
}

// Checks index ranges, face areas, and the two-faces-per-edge bound.
inline void validate_mesh(const TriMesh& mesh) {
  const Eigen::Index k = mesh.vertex_count();
  std::map<std::pair<int, int>, int> edge_count;
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int idx = mesh.faces(f, c);
      if (idx < 0 || idx >= k)
        throw Error("mesh_index_range",
                    "face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                        " outside [0, " + std::to_string(k) + ")");
    }
    if (face_area(mesh, f) <= 1e-12)
      throw Error("mesh_degenerate_face", "face " + std::to_string(f) + " is degenerate (area <= 1e-12)");
    for (int c = 0; c < 3; ++c) {
      int a = mesh.faces(f, c), b = mesh.faces(f, (c + 1) % 3);
      if (a == b)
        throw Error("mesh_degenerate_face", "face " + std::to_string(f) + " repeats vertex " + std::to_string(a));
      if (a > b) std::swap(a, b);
      if (++edge_count[{a, b}] > 2)
        throw Error("mesh_nonmanifold_edge", "edge (" + std::to_string(a) + "," + std::to_string(b) +
                                                 ") is shared by more than 2 faces (face " +
                                                 std::to_string(f) + ")");
    }
  }
}

inline TriMesh make_mesh(Eigen::MatrixXd vertices, Eigen::MatrixXi faces) {
  TriMesh mesh{std::move(vertices), std::move(faces)};
  validate_mesh(mesh);
  return mesh;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

// "3", "3/1", "3//2", "3/1/2" -> 3. OBJ indices are 1-based.
inline int parse_obj_index(const std::string& token, int line_no) {
  const std::string head = token.substr(0, token.find('/'));
  int value = 0;
  try {
    value = std::stoi(head);
  } catch (const std::exception&) {
    throw Error("obj_parse", "line " + std::to_string(line_no) + ": cannot parse face index '" + token + "'");
  }
  if (value <= 0)
    throw Error("obj_index_range", "line " + std::to_string(line_no) + ": face index " +
                                       std::to_string(value) + " is not a positive 1-based index");
  return value - 1;
}

inline TriMesh load_obj(std::ifstream& in) {
  std::vector<Eigen::RowVector3d> verts;
  std::vector<Eigen::RowVector3i> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(trim(line));
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z))
        throw Error("obj_parse", "line " + std::to_string(line_no) + ": malformed vertex record");
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (tokens.size() != 3)
        throw Error("obj_non_triangle", "line " + std::to_string(line_no) + ": face has " +
                                            std::to_string(tokens.size()) +
                                            " vertices; only triangles are supported");
      Eigen::RowVector3i f;
      for (int c = 0; c < 3; ++c) f[c] = parse_obj_index(tokens[c], line_no);
      faces.push_back(f);
    }
    // vt/vn/usemtl etc. are ignored
  }
  TriMesh mesh;
  mesh.vertices.resize(Eigen::Index(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(Eigen::Index(i)) = verts[i];
  mesh.faces.resize(Eigen::Index(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i) mesh.faces.row(Eigen::Index(i)) = faces[i];
  return mesh;
}

inline TriMesh load_ply(std::ifstream& in) {
  std::string line;
  int line_no = 1;  // the "ply" magic was already consumed
  size_t n_verts = 0, n_faces = 0;
  std::vector<std::string> vertex_props;
  bool in_vertex_element = false, header_done = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    std::istringstream ss(t);
    std::string tag;
    ss >> tag;
    if (tag == "comment" || tag == "obj_info") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii")
        throw Error("ply_parse", "line " + std::to_string(line_no) + ": only ascii PLY is supported");
    } else if (tag == "element") {
      std::string name;
      size_t count = 0;
      ss >> name >> count;
      if (name == "vertex") {
        n_verts = count;
        in_vertex_element = true;
      } else {
        if (name == "face") n_faces = count;
        in_vertex_element = false;
      }
    } else if (tag == "property") {
      if (in_vertex_element) {
        std::string type, name;
        ss >> type >> name;
        vertex_props.push_back(name);
      }
    } else if (tag == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw Error("ply_parse", "missing end_header");

  const auto has_prop = [&](const char* p) {
    return std::find(vertex_props.begin(), vertex_props.end(), p) != vertex_props.end();
  };
  if (!has_prop("x") || !has_prop("y") || !has_prop("z"))
    throw Error("ply_parse", "vertex element must carry x, y, z properties");

  TriMesh mesh;
  mesh.vertices.resize(Eigen::Index(n_verts), 3);
  for (size_t i = 0; i < n_verts; ++i) {
    if (!std::getline(in, line)) throw Error("ply_parse", "unexpected end of file in vertex list");
    ++line_no;
    std::istringstream ss(trim(line));
    double value = 0;
    Eigen::Index col = 0;
    for (const std::string& prop : vertex_props) {
      if (!(ss >> value))
        throw Error("ply_parse", "line " + std::to_string(line_no) + ": malformed vertex record");
      if (prop == "x" || prop == "y" || prop == "z") mesh.vertices(Eigen::Index(i), col++) = value;
    }
  }
  mesh.faces.resize(Eigen::Index(n_faces), 3);
  for (size_t i = 0; i < n_faces; ++i) {
    if (!std::getline(in, line)) throw Error("ply_parse", "unexpected end of file in face list");
    ++line_no;
    std::istringstream ss(trim(line));
    int count = 0;
    if (!(ss >> count))
      throw Error("ply_parse", "line " + std::to_string(line_no) + ": malformed face record");
    if (count != 3)
      throw Error("ply_non_triangle", "line " + std::to_string(line_no) + ": face has " +
                                          std::to_string(count) + " vertices; only triangles are supported");
    for (int c = 0; c < 3; ++c) {
      if (!(ss >> mesh.faces(Eigen::Index(i), c)))
        throw Error("ply_parse", "line " + std::to_string(line_no) + ": malformed face record");
    }
  }
  return mesh;
}

}  // namespace detail

// Loads a Wavefront OBJ or ascii PLY triangle mesh, validating invariants.
inline TriMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_open", "cannot open mesh file: " + path);
  std::string first;
  std::getline(in, first);
  TriMesh mesh;
  if (detail::trim(first) == "ply") {
    mesh = detail::load_ply(in);
  } else {
    in.clear();
    in.seekg(0);
    mesh = detail::load_obj(in);
  }
  validate_mesh(mesh);
  return mesh;
}

// Writes ascii PLY with 0-255 quantized vertex colors, or OBJ when no colors.
inline void export_mesh(const TriMesh& mesh, const Eigen::MatrixXd* per_vertex_color,
                        const std::string& path) {
  if (per_vertex_color && per_vertex_color->rows() != mesh.vertex_count())
    throw Error("export_color_rows", "color row count " + std::to_string(per_vertex_color->rows()) +
                                         " does not match vertex count " +
                                         std::to_string(mesh.vertex_count()));
  std::ofstream out(path);
  if (!out) throw Error("io_open", "cannot open output file: " + path);
  out.precision(17);
  if (per_vertex_color) {
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertex_count() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << mesh.face_count() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
      out << mesh.vertices(i, 0) << " " << mesh.vertices(i, 1) << " " << mesh.vertices(i, 2);
      for (int c = 0; c < 3; ++c) {
        const double value = (*per_vertex_color)(i, c);
        const int q = int(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
        out << " " << q;
      }
      out << "\n";
    }
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f)
      out << "3 " << mesh.faces(f, 0) << " " << mesh.faces(f, 1) << " " << mesh.faces(f, 2) << "\n";
  } else {
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i)
      out << "v " << mesh.vertices(i, 0) << " " << mesh.vertices(i, 1) << " " << mesh.vertices(i, 2)
          << "\n";
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f)
      out << "f " << mesh.faces(f, 0) + 1 << " " << mesh.faces(f, 1) + 1 << " "
          << mesh.faces(f, 2) + 1 << "\n";
  }
  if (!out) throw Error("io_write", "failed writing: " + path);
}

// Undirected one-ring adjacency with per-edge weights for the local
// rigidity energy: w_kq = (1/3) * (sum of areas of faces incident to edge
// kq) / total mesh area.
struct OneRings {
  std::vector<std::vector<int>> neighbors;       // per vertex
  std::vector<std::vector<double>> edge_weight;  // parallel to neighbors
};

inline OneRings build_one_rings(const TriMesh& mesh) {
  const double area_total = total_area(mesh);
  std::map<std::pair<int, int>, double> edge_area;
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const double a = face_area(mesh, f);
    for (int c = 0; c < 3; ++c) {
      int i = mesh.faces(f, c), j = mesh.faces(f, (c + 1) % 3);
      if (i > j) std::swap(i, j);
      edge_area[{i, j}] += a;
    }
  }
  OneRings rings;
  rings.neighbors.resize(size_t(mesh.vertex_count()));
  rings.edge_weight.resize(size_t(mesh.vertex_count()));
  for (const auto& [edge, area] : edge_area) {
    const double w = area / (3.0 * area_total);
    rings.neighbors[size_t(edge.first)].push_back(edge.second);
    rings.edge_weight[size_t(edge.first)].push_back(w);
    rings.neighbors[size_t(edge.second)].push_back(edge.first);
    rings.edge_weight[size_t(edge.second)].push_back(w);
  }
  return rings;
}

}  // namespace dp3d
