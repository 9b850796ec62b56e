#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/mesh.hpp"

namespace dp3d {

// Truncated Laplace-Beltrami eigenbasis. Columns of U are mass-orthonormal:
// U^T diag(areas) U = I, eigenvalues ascending.
struct SpectralBasis {
  Eigen::MatrixXd U;       // K x N_u
  Eigen::VectorXd lambdas;  // N_u, nondecreasing, >= 0
  Eigen::VectorXd areas;    // K, barycell areas, > 0

  Eigen::Index vertex_count() const { return U.rows(); }
  Eigen::Index size() const { return U.cols(); }
};

// Stiffness-convention cotangent Laplacian: x^T L x >= 0, off-diagonal
// entry for edge (i,j) is -(cot a + cot b)/2, rows sum to zero. Built from
// symmetric triplet pairs so L is exactly symmetric.
inline Eigen::SparseMatrix<double> cotan_laplacian(const TriMesh& mesh) {
  const Eigen::Index k = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(size_t(mesh.face_count()) * 12);
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const int v[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    for (int c = 0; c < 3; ++c) {
      // cotangent at corner c, opposite the edge (c+1, c+2)
      const Eigen::RowVector3d e1 = mesh.vertices.row(v[(c + 1) % 3]) - mesh.vertices.row(v[c]);
      const Eigen::RowVector3d e2 = mesh.vertices.row(v[(c + 2) % 3]) - mesh.vertices.row(v[c]);
      const double cot = e1.dot(e2) / e1.cross(e2).norm();
      const int i = v[(c + 1) % 3], j = v[(c + 2) % 3];
      trips.emplace_back(i, j, -0.5 * cot);
      trips.emplace_back(j, i, -0.5 * cot);
      trips.emplace_back(i, i, 0.5 * cot);
      trips.emplace_back(j, j, 0.5 * cot);
    }
  }
  Eigen::SparseMatrix<double> laplacian(k, k);
  laplacian.setFromTriplets(trips.begin(), trips.end());
  return laplacian;
}

// Lumped (barycentric) vertex masses: one third of incident face area.
inline Eigen::VectorXd barycell_areas(const TriMesh& mesh) {
  Eigen::VectorXd areas = Eigen::VectorXd::Zero(mesh.vertex_count());
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const double a = face_area(mesh, f) / 3.0;
    for (int c = 0; c < 3; ++c) areas[mesh.faces(f, c)] += a;
  }
  for (Eigen::Index i = 0; i < areas.size(); ++i)
    if (areas[i] <= 0.0)
      throw Error("mesh_isolated_vertex",
                  "vertex " + std::to_string(i) + " has no incident faces (zero barycell area)");
  return areas;
}

// Solves L u = lambda A u through the symmetric similarity
// A^{-1/2} L A^{-1/2}, returning the n_u smallest pairs. Eigenvector sign is
// fixed so the entry of largest magnitude is positive.
inline SpectralBasis spectral_basis(const TriMesh& mesh, Eigen::Index n_u) {
  const Eigen::Index k = mesh.vertex_count();
  if (n_u < 1 || n_u > k)
    throw Error("spectral_n_u", "n_u = " + std::to_string(n_u) + " outside [1, " + std::to_string(k) + "]");

  const Eigen::VectorXd areas = barycell_areas(mesh);
  const Eigen::VectorXd inv_sqrt = areas.array().rsqrt();
  Eigen::MatrixXd sym = cotan_laplacian(mesh);
  sym = inv_sqrt.asDiagonal() * sym * inv_sqrt.asDiagonal();
  sym = 0.5 * (sym + sym.transpose());  // similarity scaling can leave roundoff asymmetry

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success)
    throw Error("eigensolver", "symmetric eigensolver failed to converge on a " + std::to_string(k) +
                                   "x" + std::to_string(k) + " operator");

  SpectralBasis basis;
  basis.areas = areas;
  basis.lambdas = solver.eigenvalues().head(n_u).cwiseMax(0.0);
  basis.U = inv_sqrt.asDiagonal() * solver.eigenvectors().leftCols(n_u);
  for (Eigen::Index c = 0; c < n_u; ++c) {
    Eigen::Index at = 0;
    basis.U.col(c).cwiseAbs().maxCoeff(&at);
    if (basis.U(at, c) < 0.0) basis.U.col(c) = -basis.U.col(c);
  }
  return basis;
}

}  // namespace dp3d
