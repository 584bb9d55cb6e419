#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lap/linops.hpp"

namespace lap {

struct LsqrOptions {
  double atol = 1e-2;
  double btol = 1e-2;
  int max_iters = 50;
};

struct HybridOptions {
  int max_iters = 50;
  bool wgcv_adaptive = true;
  double gcv_flat_tol = 1e-6;
  bool reorthogonalize = true;
  /// When set, every projected problem uses this alpha instead of WGCV.
  std::optional<double> fixed_alpha;
  /// Optional LSQR-style tests on the regularized iterate (0 disables):
  /// ||A^H r|| <= atol ||A||_est ||r|| or ||r|| <= btol ||b||.
  double atol = 0.0;
  double btol = 0.0;
};

struct SolveStats {
  int iterations = 0;
  double final_relative_residual = 0.0;
  std::vector<double> alpha_history;
  long matvecs = 0;
  bool converged = false;
  bool breakdown = false;
};

template <class Scalar>
struct KrylovResult {
  Vec<Scalar> x;
  SolveStats stats;
};

/// Called after each iteration with the iteration number and current iterate.
template <class Scalar>
using IterateObserver = std::function<void(int, const Vec<Scalar>&)>;

/// Paige-Saunders LSQR for min ||A x - b||. Stops when
/// ||A^H r|| / (||A||_est ||r||) <= atol, ||r|| <= btol ||b||, or after
/// max_iters iterations.
template <class Scalar>
KrylovResult<Scalar> lsqr(const LinearMap<Scalar>& A, const Vec<Scalar>& b, const LsqrOptions& opts,
                          const IterateObserver<Scalar>& observer = {});

/// Augmented system for min ||A dx + r0||^2 + alpha ||L (x0 + dx)||^2:
/// A_aug = [A; sqrt(alpha) L], b_aug = -[r0; sqrt(alpha) L x0].
template <class Scalar>
struct AugmentedSystem {
  LinearMap<Scalar> A;
  Vec<Scalar> b;
};

template <class Scalar>
AugmentedSystem<Scalar> tikhonov_stack(const LinearMap<Scalar>& A, const LinearMap<Scalar>& L, double alpha,
                                       const Vec<Scalar>& x0, const Vec<Scalar>& r0);

/// Golub-Kahan lower bidiagonalization A V_k = U_{k+1} B_k, with optional
/// full reorthogonalization under Re(a^H b).
template <class Scalar>
class GolubKahan {
 public:
  GolubKahan(LinearMap<Scalar> A, const Vec<Scalar>& b, bool reorthogonalize);

  /// Performs one step. Returns false on breakdown (a zero bidiagonal entry);
  /// the bidiagonal still holds the completed column.
  bool step();

  int steps() const { return static_cast<int>(V_.size()); }
  double beta() const { return beta0_; }
  /// (k+1) x k lower bidiagonal.
  MatR bidiagonal() const;
  Mat<Scalar> U() const;
  Mat<Scalar> V() const;
  /// V_k y.
  Vec<Scalar> combine(const VecR& y) const;

 private:
  void orthogonalize(Vec<Scalar>& v, const std::vector<Vec<Scalar>>& basis) const;

  LinearMap<Scalar> A_;
  bool reorth_;
  double beta0_ = 0.0;
  std::vector<Vec<Scalar>> U_;
  std::vector<Vec<Scalar>> V_;
  std::vector<double> alphas_;
  std::vector<double> betas_;  // betas_[j] is the subdiagonal below alphas_[j]
};

/// Weighted GCV functional k ||(I - B B_a^+) beta e1||^2 / trace(I - w B B_a^+)^2
/// for a (k+1) x k bidiagonal B.
double wgcv_value(const MatR& B, double beta, double omega, double alpha);

/// Minimizer of wgcv_value over a 200-point log grid refined by
/// golden-section search.
double wgcv_select(const MatR& B, double beta, double omega);

/// Optimal weight estimate of the adaptive weighted-GCV scheme for the
/// current bidiagonal.
double wgcv_optimal_weight(const MatR& B, double beta);

/// Hybrid LSQR: Golub-Kahan with a Tikhonov parameter re-selected at each step
/// on the projected problem min ||B_k y - beta e1||^2 + alpha_k ||y||^2.
template <class Scalar>
KrylovResult<Scalar> hybrid_lsqr(const LinearMap<Scalar>& A, const Vec<Scalar>& b, const HybridOptions& opts,
                                 const IterateObserver<Scalar>& observer = {});

}  // namespace lap
