#include <Eigen/LU>

#include "doctest.h"
#include "lap/linops.hpp"
#include "testing.hpp"

using namespace lap;
using lap::testing::random_cmat;
using lap::testing::random_mat;
using lap::testing::random_mat_of;
using lap::testing::random_of;
using lap::testing::random_vec;
using lap::testing::rel_diff;

namespace {

template <class Scalar>
double adjoint_gap(const LinearMap<Scalar>& A, int probes = 20) {
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Vec<Scalar> u = random_of<Scalar>(A.cols()), v = random_of<Scalar>(A.rows());
    const double lhs = inner(A.apply(u), v), rhs = inner(u, A.adjoint(v));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));
  }
  return worst;
}

// Forward differences on an nx x ny grid, axis blocks stacked, scaled by 1/h.
MatR dense_gradient(Index nx, Index ny, double hx, double hy) {
  MatR D = MatR::Zero((nx - 1) * ny + nx * (ny - 1), nx * ny);
  Index r = 0;
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i + 1 < nx; ++i, ++r) {
      D(r, j * nx + i) = -1.0 / hx;
      D(r, j * nx + i + 1) = 1.0 / hx;
    }
  for (Index j = 0; j + 1 < ny; ++j)
    for (Index i = 0; i < nx; ++i, ++r) {
      D(r, j * nx + i) = -1.0 / hy;
      D(r, (j + 1) * nx + i) = 1.0 / hy;
    }
  return D;
}

}  // namespace

TEST_CASE_TEMPLATE("adjoint consistency of concrete maps", Scalar, double, Complex) {
  const Mat<Scalar> M = random_mat_of<Scalar>(7, 5);
  CHECK(adjoint_gap(dense_map<Scalar>(M)) <= 1e-10);
  CHECK(adjoint_gap(identity_map<Scalar>(6)) <= 1e-10);
  CHECK(adjoint_gap(scaled(dense_map<Scalar>(M), -2.5)) <= 1e-10);
  const SparseMatrix S = random_mat(5, 6).sparseView();
  CHECK(adjoint_gap(sparse_map<Scalar>(S)) <= 1e-10);
  CHECK(adjoint_gap(compose(dense_map<Scalar>(M), sparse_map<Scalar>(S))) <= 1e-10);
  CHECK(adjoint_gap(mask_columns(dense_map<Scalar>(M), {true, false, true, true, false})) <= 1e-10);
  const Grid g({5, 4}, {0, 0}, {5, 2});
  CHECK(adjoint_gap(grad_operator<Scalar>(g)) <= 1e-10);
  const Grid g3({3, 4, 2}, {0, 0, 0}, {3, 4, 2});
  CHECK(adjoint_gap(grad_operator<Scalar>(g3)) <= 1e-10);
}

TEST_CASE("block_diagonal") {
  const auto I4 = block_diagonal<double>({identity_map<double>(2), identity_map<double>(2)});
  const VecR v = random_vec(4);
  CHECK(I4.apply(v) == v);

  const auto s = block_diagonal<double>({scaled(identity_map<double>(1), 2.0), scaled(identity_map<double>(1), 3.0)});
  CHECK(s.apply(VecR::Ones(2)) == VecR((VecR(2) << 2.0, 3.0).finished()));

  CHECK_THROWS_AS(block_diagonal<double>({}), std::invalid_argument);

  const MatC A = random_cmat(3, 2), B = random_cmat(4, 5);
  MatC D = MatC::Zero(7, 7);
  D.topLeftCorner(3, 2) = A;
  D.bottomRightCorner(4, 5) = B;
  const auto bd = block_diagonal<Complex>({dense_map<Complex>(A), dense_map<Complex>(B)});
  CHECK(bd.rows() == 7);
  CHECK(bd.cols() == 7);
  const VecC x = random_of<Complex>(7), y = random_of<Complex>(7);
  CHECK(rel_diff(bd.apply(x), D * x) <= 1e-12);
  CHECK(rel_diff(bd.adjoint(y), D.adjoint() * y) <= 1e-12);
  CHECK(rel_diff(to_dense(bd), D) <= 1e-12);
}

TEST_CASE("vstack") {
  const auto II = vstack<double>({identity_map<double>(3), identity_map<double>(3)});
  const VecR x = random_vec(3), a = random_vec(3), b = random_vec(3);
  VecR xx(6), ab(6);
  xx << x, x;
  ab << a, b;
  CHECK(II.apply(x) == xx);
  CHECK(rel_diff(II.adjoint(ab), a + b) <= 1e-15);

  CHECK_THROWS_AS(vstack<double>({identity_map<double>(3), identity_map<double>(2)}), std::invalid_argument);

  const MatR A = random_mat(4, 6), B = random_mat(2, 6);
  MatR D(6, 6);
  D << A, B;
  const auto st = vstack<double>({dense_map<double>(A), dense_map<double>(B)});
  const VecR y = random_vec(6), z = random_vec(6);
  CHECK(rel_diff(st.apply(y), D * y) <= 1e-12);
  CHECK(rel_diff(st.adjoint(z), D.transpose() * z) <= 1e-12);
}

TEST_CASE("counting map") {
  auto counter = std::make_shared<MatvecCounter>();
  const MatR M = random_mat(5, 4);
  const auto plain = dense_map<double>(M);
  const auto counted = counting(plain, counter);
  const VecR x = random_vec(4), y = random_vec(5);
  for (int k = 1; k <= 7; ++k) {
    const VecR a = counted.apply(x);
    CHECK(counter->applies.load() == k);
    CHECK(a == plain.apply(x));
  }
  CHECK(counted.adjoint(y) == plain.adjoint(y));
  CHECK(counter->adjoints.load() == 1);
  CHECK(counter->total() == 8);
}

TEST_CASE("gradient operator") {
  const Grid g({5, 4}, {0, 0}, {2.5, 1.0});
  const auto L = grad_operator<double>(g);
  CHECK(L.rows() == 4 * 4 + 5 * 3);
  CHECK(L.apply(VecR::Constant(20, 3.0)).cwiseAbs().maxCoeff() == 0.0);

  VecR ramp(20);
  for (Index j = 0; j < 4; ++j)
    for (Index i = 0; i < 5; ++i) ramp[j * 5 + i] = i * g.cell_size(0);
  const VecR Lr = L.apply(ramp);
  CHECK((Lr.head(16).array() - 1.0).abs().maxCoeff() <= 1e-14);
  CHECK(Lr.tail(15).cwiseAbs().maxCoeff() == 0.0);

  const MatR D = dense_gradient(5, 4, g.cell_size(0), g.cell_size(1));
  const VecR x = random_vec(20);
  CHECK(rel_diff(L.apply(x), D * x) <= 1e-14);
  CHECK(rel_diff(MatR(grad_matrix(g)), D) <= 1e-14);

  const Grid g3({3, 4, 2}, {0, 0, 0}, {3, 4, 2});
  CHECK(grad_operator<double>(g3).rows() == 2 * 4 * 2 + 3 * 3 * 2 + 3 * 4 * 1);

  const VecC xc = random_of<Complex>(20);
  const VecC Lc = grad_operator<Complex>(g).apply(xc);
  CHECK(rel_diff(Lc.real(), D * xc.real()) <= 1e-14);
  CHECK(rel_diff(Lc.imag(), D * xc.imag()) <= 1e-14);
}

TEST_CASE_TEMPLATE("thin_qr", Scalar, double, Complex) {
  const Mat<Scalar> A = random_mat_of<Scalar>(50, 6);
  const ThinQr<Scalar> f = thin_qr(A);
  CHECK(!f.rank_deficient);
  CHECK((f.Q * f.R - A).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((f.Q.adjoint() * f.Q - Mat<Scalar>::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-12);
  for (Index j = 0; j < 6; ++j) {
    CHECK(std::imag(f.R(j, j)) == 0.0);
    CHECK(std::real(f.R(j, j)) >= 0.0);
    for (Index i = j + 1; i < 6; ++i) CHECK(f.R(i, j) == Scalar(0));
  }

  const Mat<Scalar> v = random_mat_of<Scalar>(9, 1);
  const ThinQr<Scalar> fv = thin_qr(v);
  CHECK(std::abs(fv.R(0, 0) - v.norm()) <= 1e-12);
  CHECK(rel_diff(fv.Q, v / v.norm()) <= 1e-12);

  const Mat<Scalar> O = thin_qr(A).Q;
  const ThinQr<Scalar> fo = thin_qr(O);
  CHECK((fo.R.cwiseAbs() - MatR::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-12);

  Mat<Scalar> deficient = random_mat_of<Scalar>(10, 3);
  deficient.col(2) = deficient.col(0) - deficient.col(1);
  CHECK(thin_qr(deficient).rank_deficient);
}

TEST_CASE("thin_qr_over_reals") {
  const MatC A = random_cmat(30, 4);
  const RealQr<Complex> f = thin_qr_over_reals(A);
  CHECK(!f.rank_deficient);
  CHECK((f.Q * f.R.cast<Complex>() - A).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(((f.Q.adjoint() * f.Q).real() - MatR::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
  // Real Gram matrix of the realified block equals R^T R.
  CHECK(((A.adjoint() * A).real() - f.R.transpose() * f.R).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("chol_solve_normal") {
  const VecR rhs = random_vec(4);
  CHECK(chol_solve_normal(MatR::Identity(4, 4), rhs) == rhs);
  CHECK(chol_solve_normal(MatR::Constant(1, 1, 2.0), VecR::Constant(1, 8.0))[0] == doctest::Approx(2.0));

  const MatR A = random_mat(20, 5);
  const MatR R = thin_qr(A).R;
  const VecR b = random_vec(5);
  const VecR expect = (A.transpose() * A).inverse() * b;
  CHECK(rel_diff(chol_solve_normal(R, b), expect) <= 1e-10);

  MatR S = MatR::Identity(3, 3);
  S(1, 1) = 0.0;
  CHECK_THROWS_AS(chol_solve_normal(S, random_vec(3)), std::domain_error);
}
