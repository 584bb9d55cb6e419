#include "lap/krylov.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lap {

template <class Scalar>
KrylovResult<Scalar> lsqr(const LinearMap<Scalar>& A, const Vec<Scalar>& b, const LsqrOptions& opts,
                          const IterateObserver<Scalar>& observer) {
  if (b.size() != A.rows()) throw std::invalid_argument("lsqr: rhs length mismatch");
  KrylovResult<Scalar> out{Vec<Scalar>::Zero(A.cols()), {}};
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    out.stats.converged = true;
    return out;
  }
  Vec<Scalar> u = b / bnorm;
  Vec<Scalar> v = A.adjoint(u);
  out.stats.matvecs = 1;
  double alpha = v.norm();
  if (alpha == 0.0) {
    out.stats.converged = true;
    out.stats.final_relative_residual = 1.0;
    return out;
  }
  v /= alpha;
  Vec<Scalar> w = v;
  Vec<Scalar>& x = out.x;
  double phibar = bnorm;
  double rhobar = alpha;
  double anorm2 = 0.0;

  for (int it = 1; it <= opts.max_iters; ++it) {
    u = A.apply(v) - alpha * u;
    double beta = u.norm();
    if (beta > 0.0) u /= beta;
    anorm2 += alpha * alpha + beta * beta;
    v = A.adjoint(u) - beta * v;
    alpha = v.norm();
    if (alpha > 0.0) v /= alpha;
    out.stats.matvecs += 2;

    const double rho = std::hypot(rhobar, beta);
    const double c = rhobar / rho;
    const double s = beta / rho;
    const double theta = s * alpha;
    rhobar = -c * alpha;
    const double phi = c * phibar;
    phibar = s * phibar;
    x += (phi / rho) * w;
    w = v - (theta / rho) * w;

    out.stats.iterations = it;
    const double rnorm = phibar;
    const double arnorm = phibar * alpha * std::abs(c);
    const double anorm = std::sqrt(anorm2);
    if (observer) observer(it, x);
    if (rnorm <= opts.btol * bnorm || (rnorm > 0.0 && arnorm <= opts.atol * anorm * rnorm) || alpha == 0.0) {
      out.stats.converged = true;
      break;
    }
  }
  out.stats.final_relative_residual = phibar / bnorm;
  return out;
}

template <class Scalar>
AugmentedSystem<Scalar> tikhonov_stack(const LinearMap<Scalar>& A, const LinearMap<Scalar>& L, double alpha,
                                       const Vec<Scalar>& x0, const Vec<Scalar>& r0) {
  if (alpha < 0.0) throw std::invalid_argument("tikhonov_stack: negative alpha");
  if (L.cols() != A.cols()) throw std::invalid_argument("tikhonov_stack: L and A column counts differ");
  if (alpha == 0.0) return {A, -r0};
  const double root = std::sqrt(alpha);
  const Vec<Scalar> lx = L.apply(x0);
  Vec<Scalar> b(r0.size() + lx.size());
  b << -r0, -root * lx;
  return {vstack<Scalar>({A, scaled(L, root)}), std::move(b)};
}

namespace {
// Relative size below which a new Lanczos vector is treated as zero.
constexpr double kBreakdownTol = 1.5e-8;
}  // namespace

template <class Scalar>
GolubKahan<Scalar>::GolubKahan(LinearMap<Scalar> A, const Vec<Scalar>& b, bool reorthogonalize)
    : A_(std::move(A)), reorth_(reorthogonalize) {
  if (b.size() != A_.rows()) throw std::invalid_argument("GolubKahan: rhs length mismatch");
  beta0_ = b.norm();
  if (beta0_ > 0.0) U_.push_back(b / beta0_);
}

template <class Scalar>
void GolubKahan<Scalar>::orthogonalize(Vec<Scalar>& v, const std::vector<Vec<Scalar>>& basis) const {
  // Two passes of classical Gram-Schmidt.
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& q : basis) v -= inner(q, v) * q;
}

template <class Scalar>
bool GolubKahan<Scalar>::step() {
  if (U_.size() != V_.size() + 1) return false;
  const auto k = V_.size();
  Vec<Scalar> v = A_.adjoint(U_[k]);
  const double raw = v.norm();
  if (k > 0) v -= betas_[k - 1] * V_[k - 1];
  if (reorth_) orthogonalize(v, V_);
  const double alpha = v.norm();
  // A^H u_k numerically inside span(V): the Krylov space is invariant and a
  // new column would only carry cancellation noise.
  if (!(alpha > kBreakdownTol * raw)) return false;
  v /= alpha;
  Vec<Scalar> u = A_.apply(v) - alpha * U_[k];
  if (reorth_) orthogonalize(u, U_);
  const double beta = u.norm();
  V_.push_back(std::move(v));
  alphas_.push_back(alpha);
  const double scale = std::max(alpha, beta0_);
  if (!(beta > 1e-14 * scale)) {
    betas_.push_back(0.0);
    return false;
  }
  betas_.push_back(beta);
  U_.push_back(u / beta);
  return true;
}

template <class Scalar>
MatR GolubKahan<Scalar>::bidiagonal() const {
  const Index k = static_cast<Index>(alphas_.size());
  MatR B = MatR::Zero(k + 1, k);
  for (Index j = 0; j < k; ++j) {
    B(j, j) = alphas_[j];
    B(j + 1, j) = betas_[j];
  }
  return B;
}

template <class Scalar>
Mat<Scalar> GolubKahan<Scalar>::U() const {
  Mat<Scalar> M(A_.rows(), static_cast<Index>(U_.size()));
  for (std::size_t j = 0; j < U_.size(); ++j) M.col(j) = U_[j];
  return M;
}

template <class Scalar>
Mat<Scalar> GolubKahan<Scalar>::V() const {
  Mat<Scalar> M(A_.cols(), static_cast<Index>(V_.size()));
  for (std::size_t j = 0; j < V_.size(); ++j) M.col(j) = V_[j];
  return M;
}

template <class Scalar>
Vec<Scalar> GolubKahan<Scalar>::combine(const VecR& y) const {
  Vec<Scalar> x = Vec<Scalar>::Zero(A_.cols());
  for (Index j = 0; j < y.size(); ++j) x += y[j] * V_[j];
  return x;
}

namespace {

struct ProjectedSvd {
  VecR sigma;  // k singular values, descending
  VecR bhat;   // U_B^T beta e1, length k+1
  MatR Vb;     // k x k
};

ProjectedSvd projected_svd(const MatR& B, double beta) {
  Eigen::JacobiSVD<MatR> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.singularValues(), beta * svd.matrixU().row(0).transpose(), svd.matrixV()};
}

double wgcv_from_svd(const ProjectedSvd& s, double omega, double alpha) {
  const Index k = s.sigma.size();
  double residual2 = 0.0;
  double filtered = 0.0;
  for (Index i = 0; i < k; ++i) {
    const double s2 = s.sigma[i] * s.sigma[i];
    const double denom = s2 + alpha;
    const double damp = denom > 0.0 ? alpha / denom : 1.0;
    residual2 += damp * damp * s.bhat[i] * s.bhat[i];
    filtered += denom > 0.0 ? s2 / denom : 0.0;
  }
  for (Index i = k; i < s.bhat.size(); ++i) residual2 += s.bhat[i] * s.bhat[i];
  const double trace = static_cast<double>(k + 1) - omega * filtered;
  return static_cast<double>(k) * residual2 / (trace * trace);
}

double select_from_svd(const ProjectedSvd& s, double omega) {
  const Index k = s.sigma.size();
  if (k == 0) return 0.0;
  const double smax = s.sigma[0];
  if (!(smax > 0.0)) return 0.0;
  const double smin = s.sigma[k - 1];
  const double lo = smin > 0.0 ? smin * smin * 1e-10 : smax * smax * 1e-24;
  // Reaches well below sigma_min^2 so noiseless problems can select alpha ~ 0; capped at sigma_max^2.
  const double hi = smax * smax;
  constexpr int kGrid = 200;
  const double llo = std::log10(lo), lhi = std::log10(hi);
  auto at = [&](double lg) { return wgcv_from_svd(s, omega, std::pow(10.0, lg)); };
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> grid(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    grid[i] = llo + (lhi - llo) * i / (kGrid - 1);
    const double g = at(grid[i]);
    if (g < best_val) {
      best_val = g;
      best = i;
    }
  }
  // Golden-section refinement on log10(alpha) inside the bracketing cells.
  double a = grid[std::max(best - 1, 0)];
  double b = grid[std::min(best + 1, kGrid - 1)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = at(c), fd = at(d);
  for (int it = 0; it < 60 && (b - a) > 1e-10; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = at(d);
    }
  }
  const double refined = 0.5 * (a + b);
  return at(refined) <= best_val ? std::pow(10.0, refined) : std::pow(10.0, grid[best]);
}

double optimal_weight_from_svd(const ProjectedSvd& s) {
  const Index n = s.sigma.size();
  const Index m = s.bhat.size();
  if (n == 0) return 1.0;
  const double lam = s.sigma[n - 1];
  const double lam2 = lam * lam;
  double t0 = 0.0;
  for (Index i = n; i < m; ++i) t0 += s.bhat[i] * s.bhat[i];
  double t1 = 0.0, t3 = 0.0, t4 = 0.0, t5 = 0.0, v2 = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double si = s.sigma[i], s2 = si * si, bi = s.bhat[i];
    const double tt = 1.0 / (s2 + lam2);
    const double tt3 = tt * tt * tt;
    t1 += s2 * tt;
    t3 += (bi * lam * si) * (bi * lam * si) * tt3;
    t4 += (si * tt) * (si * tt);
    t5 += (lam2 * bi * tt) * (lam2 * bi * tt);
    v2 += (bi * si) * (bi * si) * tt3;
  }
  const double denom = t1 * t3 + t4 * (t5 + t0);
  if (!(denom > 0.0) || !std::isfinite(denom)) return 1.0;
  const double omega = static_cast<double>(m) * lam2 * v2 / denom;
  return std::isfinite(omega) ? omega : 1.0;
}

}  // namespace

double wgcv_value(const MatR& B, double beta, double omega, double alpha) {
  return wgcv_from_svd(projected_svd(B, beta), omega, alpha);
}

double wgcv_select(const MatR& B, double beta, double omega) {
  return select_from_svd(projected_svd(B, beta), omega);
}

double wgcv_optimal_weight(const MatR& B, double beta) { return optimal_weight_from_svd(projected_svd(B, beta)); }

template <class Scalar>
KrylovResult<Scalar> hybrid_lsqr(const LinearMap<Scalar>& A, const Vec<Scalar>& b, const HybridOptions& opts,
                                 const IterateObserver<Scalar>& observer) {
  if (opts.max_iters < 1) throw std::invalid_argument("hybrid_lsqr: max_iters must be positive");
  KrylovResult<Scalar> out{Vec<Scalar>::Zero(A.cols()), {}};
  GolubKahan<Scalar> gk(A, b, opts.reorthogonalize);
  if (gk.beta() == 0.0) {
    out.stats.converged = true;
    return out;
  }
  std::vector<double> weights;
  std::vector<double> gcv;
  int flat_steps = 0;
  const bool residual_test = opts.atol > 0.0 || opts.btol > 0.0;
  // Projected residual t = beta e1 - B y of the previous iterate, for the
  // deferred ||A^H r|| test that needs the next alpha.
  VecR prev_t;
  VecR prev_y;
  Vec<Scalar> prev_x;
  double prev_alpha = 0.0;
  for (int k = 1; k <= opts.max_iters; ++k) {
    const bool ok = gk.step();
    out.stats.matvecs += 2;
    if (gk.steps() < k) {
      // Breakdown before a new column was added: keep the previous iterate.
      out.stats.matvecs -= 1;
      out.stats.breakdown = true;
      break;
    }
    const MatR B = gk.bidiagonal();
    if (residual_test && opts.atol > 0.0 && k > 1) {
      // A^H r_{k-1} = V_k [B_{k-1}^T t; alpha_k t_k].
      // For the damped problem the first block cancels against alpha y, so
      // only the component along v_k remains, as in damped LSQR.
      const double atr = std::abs(B(k - 1, k - 1) * prev_t[k - 1]);
      const double anorm = std::sqrt(B.topLeftCorner(k, k - 1).squaredNorm() + (k - 1) * prev_alpha);
      const double rnorm = std::sqrt(prev_t.squaredNorm() + prev_alpha * prev_y.squaredNorm());
      if (atr <= opts.atol * anorm * rnorm) {
        out.x = prev_x;
        out.stats.iterations = k - 1;
        out.stats.final_relative_residual = prev_t.norm() / gk.beta();
        out.stats.converged = true;
        return out;
      }
    }
    const ProjectedSvd s = projected_svd(B, gk.beta());
    double omega = 1.0;
    if (opts.wgcv_adaptive) {
      if (!weights.empty())
        omega = std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(weights.size());
      weights.push_back(std::min(1.0, optimal_weight_from_svd(s)));
    }
    const double alpha = opts.fixed_alpha ? *opts.fixed_alpha : select_from_svd(s, omega);
    out.stats.alpha_history.push_back(alpha);

    VecR coeff = VecR::Zero(k);
    double residual2 = 0.0;
    for (Index i = 0; i < k; ++i) {
      const double s2 = s.sigma[i] * s.sigma[i];
      const double denom = s2 + alpha;
      if (denom > 0.0) coeff[i] = s.sigma[i] * s.bhat[i] / denom;
      const double damp = denom > 0.0 ? alpha / denom : 1.0;
      residual2 += damp * damp * s.bhat[i] * s.bhat[i];
    }
    for (Index i = k; i < s.bhat.size(); ++i) residual2 += s.bhat[i] * s.bhat[i];
    const VecR y = s.Vb * coeff;
    out.x = gk.combine(y);
    out.stats.iterations = k;
    out.stats.final_relative_residual = std::sqrt(residual2) / gk.beta();
    if (observer) observer(k, out.x);
    if (residual_test) {
      if (std::sqrt(residual2) <= opts.btol * gk.beta()) {
        out.stats.converged = true;
        break;
      }
      prev_t = -(B * y);
      prev_t[0] += gk.beta();
      prev_y = y;
      prev_x = out.x;
      prev_alpha = alpha;
    }

    if (!ok) {
      out.stats.breakdown = true;
      break;
    }
    gcv.push_back(wgcv_from_svd(s, omega, alpha));
    if (gcv.size() >= 2) {
      const double prev = gcv[gcv.size() - 2];
      const double change = prev != 0.0 ? std::abs(gcv.back() - prev) / std::abs(prev) : std::abs(gcv.back());
      flat_steps = change < opts.gcv_flat_tol ? flat_steps + 1 : 0;
      if (flat_steps >= 3) {
        out.stats.converged = true;
        break;
      }
    }
  }
  return out;
}

#define LAP_INSTANTIATE_KRYLOV(S)                                                                             \
  template KrylovResult<S> lsqr<S>(const LinearMap<S>&, const Vec<S>&, const LsqrOptions&,                   \
                                   const IterateObserver<S>&);                                               \
  template AugmentedSystem<S> tikhonov_stack<S>(const LinearMap<S>&, const LinearMap<S>&, double, const Vec<S>&, \
                                                const Vec<S>&);                                              \
  template class GolubKahan<S>;                                                                               \
  template KrylovResult<S> hybrid_lsqr<S>(const LinearMap<S>&, const Vec<S>&, const HybridOptions&,          \
                                          const IterateObserver<S>&);

LAP_INSTANTIATE_KRYLOV(double)
LAP_INSTANTIATE_KRYLOV(Complex)

}  // namespace lap
