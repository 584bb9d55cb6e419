#include "lap/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lap {

const char* to_string(Method m) {
  switch (m) {
    case Method::lap: return "lap";
    case Method::varpro: return "varpro";
    case Method::bcd: return "bcd";
  }
  return "?";
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged_fixed: return "converged_fixed";
    case Termination::stagnated_hybrid: return "stagnated_hybrid";
    case Termination::max_iters: return "max_iters";
    case Termination::line_search_failure: return "line_search_failure";
    case Termination::rank_deficient_Jw: return "rank_deficient_Jw";
  }
  return "?";
}

bool ActiveSets::any_image() const { return std::find(image_active.begin(), image_active.end(), true) != image_active.end(); }
bool ActiveSets::any_motion() const {
  return std::find(motion_active.begin(), motion_active.end(), true) != motion_active.end();
}

namespace {

bool at_lower(double v, const Bounds& b) { return std::abs(v - b.lo) <= kActiveTol; }
bool at_upper(double v, const Bounds& b) { return std::abs(b.hi - v) <= kActiveTol; }

std::vector<bool> negate(const std::vector<bool>& mask) {
  std::vector<bool> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = !mask[i];
  return out;
}

template <class Scalar>
double inf_norm(const Vec<Scalar>& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

template <class Scalar>
double stacked_norm(const Vec<Scalar>& a, const VecR& b) {
  return std::sqrt(a.squaredNorm() + b.squaredNorm());
}

/// Copy of the problem with the bounds that actually apply: none for complex
/// images or when the active-set machinery is switched off.
template <class Scalar>
CoupledProblem<Scalar> effective_problem(const CoupledProblem<Scalar>& problem, const SolverConfig& config) {
  problem.validate();
  CoupledProblem<Scalar> out = problem;
  if (is_complex_v<Scalar> || !config.use_active_sets) out.bounds_x.reset();
  if (!config.use_active_sets) out.bounds_w.reset();
  return out;
}

/// alpha L^H L x for fixed regularization, zero in hybrid mode.
template <class Scalar>
Vec<Scalar> regularizer_gradient(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x) {
  if (problem.regularizer == Regularizer::hybrid || problem.alpha == 0.0) return Vec<Scalar>::Zero(x.size());
  const LinearMap<Scalar> L = problem.regularization_op();
  return problem.alpha * L.adjoint(L.apply(x));
}

template <class Scalar>
struct Gradient {
  Vec<Scalar> x;
  VecR w;
};

template <class Scalar>
Gradient<Scalar> projected_full_gradient(const CoupledProblem<Scalar>& problem, const LinearizedState<Scalar>& state) {
  Gradient<Scalar> g;
  g.x = projected_gradient<Scalar>(state.Jx_adj_r + regularizer_gradient(problem, state.x), state.x, problem.bounds_x);
  g.w = state.Jw.n_frames() > 0 ? projected_gradient<double>(state.Jw.adjoint(state.eval.residual), state.w, problem.bounds_w)
                                : VecR::Zero(state.w.size());
  return g;
}

double safe_relative_error(const auto& v, const auto& truth) {
  const double nt = truth.norm();
  return nt > 0.0 ? (v - truth).norm() / nt : std::numeric_limits<double>::quiet_NaN();
}

class Recorder {
 public:
  explicit Recorder(std::shared_ptr<MatvecCounter> counter)
      : counter_(std::move(counter)), start_(std::chrono::steady_clock::now()) {}

  template <class Scalar>
  IterationRecord make(int iter, const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w,
                       const ObjectiveEval<Scalar>& eval, double alpha_used, double step_norm, double eta,
                       double pgrad_norm) const {
    IterationRecord rec;
    rec.iter = iter;
    rec.data_misfit = eval.misfit;
    // In hybrid mode the objective column is diagnostic only.
    rec.objective = problem.regularizer == Regularizer::hybrid ? eval.misfit + 0.5 * alpha_used * x.squaredNorm()
                                                                : eval.phi;
    if (problem.truth_x) rec.relerr_x = safe_relative_error(x, *problem.truth_x);
    if (problem.truth_w) rec.relerr_w = safe_relative_error(w, *problem.truth_w);
    rec.matvecs_cumulative = counter_->total();
    rec.alpha_used = alpha_used;
    rec.step_norm = step_norm;
    rec.line_search_eta = eta;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    rec.pgrad_norm = pgrad_norm;
    rec.iterate_norm = stacked_norm(x, w);
    return rec;
  }

 private:
  std::shared_ptr<MatvecCounter> counter_;
  std::chrono::steady_clock::time_point start_;
};

template <class Scalar>
void check_start(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0) {
  if (x0.size() != problem.n()) throw std::invalid_argument("solve: initial image has wrong length");
  if (w0.size() != problem.p()) throw std::invalid_argument("solve: initial motion has wrong length");
}

StopMode stop_mode(Regularizer reg) { return reg == Regularizer::hybrid ? StopMode::hybrid : StopMode::fixed; }

Termination converged_reason(StopMode mode) {
  return mode == StopMode::hybrid ? Termination::stagnated_hybrid : Termination::converged_fixed;
}

/// Motion Gauss-Newton step -(J_w^H J_w)^{-1} Re(J_w^H u) per frame, on the
/// columns kept by `keep`, scattered into a full-length vector.
template <class Scalar>
VecR motion_normal_step(const JwBlocks<Scalar>& restricted, const std::vector<bool>& keep, const Vec<Scalar>& u,
                        int q) {
  VecR out = VecR::Zero(static_cast<Index>(keep.size()));
  const VecR rhs = restricted.adjoint(u);
  Index c = 0;
  for (Index k = 0; k < restricted.n_frames(); ++k) {
    const Index cols = restricted.blocks[k].cols();
    if (cols == 0) continue;
    const VecR dw = -chol_solve_normal(restricted.qr[k].R, rhs.segment(c, cols));
    Index j = 0;
    for (int col = 0; col < q; ++col)
      if (keep[static_cast<std::size_t>(k * q + col)]) out[k * q + col] = dw[j++];
    c += cols;
  }
  return out;
}

template <class Scalar>
ActiveSets active_sets_for(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w) {
  return split_active<Scalar>(x, w, problem.bounds_x, problem.bounds_w);
}

}  // namespace

// ---------------------------------------------------------------------------

template <class Scalar>
Vec<Scalar> project_box(const Vec<Scalar>& v, const std::optional<Bounds>& bounds) {
  if constexpr (is_complex_v<Scalar>) {
    return v;
  } else {
    if (!bounds) return v;
    return v.cwiseMax(bounds->lo).cwiseMin(bounds->hi);
  }
}

template <class Scalar>
ActiveSets split_active(const Vec<Scalar>& x, const VecR& w, const std::optional<Bounds>& bounds_x,
                        const std::optional<Bounds>& bounds_w) {
  ActiveSets sets;
  sets.image_active.assign(static_cast<std::size_t>(x.size()), false);
  sets.motion_active.assign(static_cast<std::size_t>(w.size()), false);
  if constexpr (!is_complex_v<Scalar>) {
    if (bounds_x)
      for (Index i = 0; i < x.size(); ++i) sets.image_active[i] = at_lower(x[i], *bounds_x) || at_upper(x[i], *bounds_x);
  }
  if (bounds_w)
    for (Index i = 0; i < w.size(); ++i) sets.motion_active[i] = at_lower(w[i], *bounds_w) || at_upper(w[i], *bounds_w);
  return sets;
}

template <class Scalar>
Vec<Scalar> projected_gradient(const Vec<Scalar>& g, const Vec<Scalar>& v, const std::optional<Bounds>& bounds) {
  if (g.size() != v.size()) throw std::invalid_argument("projected_gradient: length mismatch");
  if constexpr (is_complex_v<Scalar>) {
    return g;
  } else {
    if (!bounds) return g;
    Vec<Scalar> out = g;
    for (Index i = 0; i < g.size(); ++i) {
      // A descent step moves against g; zero the components that would leave the box.
      if ((at_lower(v[i], *bounds) && g[i] > 0.0) || (at_upper(v[i], *bounds) && g[i] < 0.0)) out[i] = 0.0;
    }
    return out;
  }
}

template <class Scalar>
Vec<Scalar> projector_perp_apply(const JwBlocks<Scalar>& jw, const Vec<Scalar>& v) {
  if (jw.qr.size() != jw.blocks.size()) throw std::logic_error("projector_perp_apply: J_w blocks not factored");
  Vec<Scalar> out = v;
  Index r = 0;
  for (Index k = 0; k < jw.n_frames(); ++k) {
    const Index rows = jw.blocks[k].rows();
    if (r + rows > v.size()) throw std::invalid_argument("projector_perp_apply: vector too short");
    const Mat<Scalar>& Q = jw.qr[k].Q;
    if (Q.cols() > 0) {
      const VecR coeff = (Q.adjoint() * v.segment(r, rows)).real();
      out.segment(r, rows) -= Q * coeff.template cast<Scalar>();
    }
    r += rows;
  }
  if (r != v.size()) throw std::invalid_argument("projector_perp_apply: vector length mismatch");
  return out;
}

template <class Scalar>
LinearizedState<Scalar> linearize(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w,
                                  std::shared_ptr<MatvecCounter> counter, bool with_motion) {
  LinearizedState<Scalar> s;
  s.x = x;
  s.w = w;
  s.eval = residual_and_objective(problem, x, w);
  s.Jx = image_jacobian(problem, w, std::move(counter));
  if (with_motion) s.Jw = assemble_Jw(problem, x, w);
  s.Jx_adj_r = s.Jx.adjoint(s.eval.residual);
  return s;
}

template <class Scalar>
LapStepResult<Scalar> lap_step(const CoupledProblem<Scalar>& problem, const LinearizedState<Scalar>& state,
                               const ActiveSets& active, const SolverConfig& config, bool include_motion) {
  LapStepResult<Scalar> out;
  const Index n = problem.n(), p = problem.p();
  const Vec<Scalar>& r0 = state.eval.residual;
  const std::vector<bool> keep_x = negate(active.image_active);
  const std::vector<bool> keep_w = negate(active.motion_active);

  const LinearMap<Scalar> Jx_hat = active.any_image() ? mask_columns(state.Jx, keep_x) : state.Jx;

  JwBlocks<Scalar> Jw_hat;
  if (include_motion) {
    if (state.Jw.n_frames() != problem.n_frames()) throw std::logic_error("lap_step: J_w not assembled");
    Jw_hat = active.any_motion() ? state.Jw.restrict_columns(keep_w) : state.Jw;
    if (!Jw_hat.factor()) {
      out.rank_deficient = true;
      out.step = {Vec<Scalar>::Zero(n), VecR::Zero(p)};
      return out;
    }
  }

  LinearMap<Scalar> A = Jx_hat;
  Vec<Scalar> Pr0 = r0;
  if (include_motion) {
    auto jw = std::make_shared<const JwBlocks<Scalar>>(Jw_hat);
    auto perp = [jw](const Vec<Scalar>& v) { return projector_perp_apply(*jw, v); };
    A = compose(LinearMap<Scalar>(problem.m(), problem.m(), perp, perp), Jx_hat);
    Pr0 = projector_perp_apply(Jw_hat, r0);
  }

  Vec<Scalar> dx;
  if (problem.regularizer == Regularizer::hybrid) {
    auto res = hybrid_lsqr<Scalar>(A, -Pr0, config.hybrid);
    dx = std::move(res.x);
    out.alpha_used = res.stats.alpha_history.empty() ? 0.0 : res.stats.alpha_history.back();
    out.inner = std::move(res.stats);
  } else {
    // Regularize the full image x0 + P_I dx.
    LinearMap<Scalar> Asys = A;
    Vec<Scalar> b = -Pr0;
    if (problem.alpha > 0.0) {
      const LinearMap<Scalar> L = problem.regularization_op();
      const double root = std::sqrt(problem.alpha);
      const LinearMap<Scalar> L_hat = active.any_image() ? mask_columns(L, keep_x) : L;
      const Vec<Scalar> lx = L.apply(state.x);
      Asys = vstack<Scalar>({A, scaled(L_hat, root)});
      b.resize(Pr0.size() + lx.size());
      b << -Pr0, -root * lx;
    }
    auto res = lsqr<Scalar>(Asys, b, config.lsqr);
    dx = std::move(res.x);
    out.alpha_used = problem.alpha;
    out.inner = std::move(res.stats);
  }
  for (Index i = 0; i < n; ++i)
    if (active.image_active[i]) dx[i] = Scalar(0);

  VecR dw = VecR::Zero(p);
  if (include_motion) {
    const Vec<Scalar> u = state.Jx.apply(dx) + r0;
    dw = motion_normal_step(Jw_hat, keep_w, u, problem.q());
  }
  out.step = {std::move(dx), std::move(dw)};
  return out;
}

template <class Scalar>
StepPair<Scalar> projected_gradient_step(const CoupledProblem<Scalar>& problem, const LinearizedState<Scalar>& state,
                                         const ActiveSets& active, double alpha_used) {
  StepPair<Scalar> out{Vec<Scalar>::Zero(problem.n()), VecR::Zero(problem.p())};
  if (active.any_image()) {
    Vec<Scalar> g = state.Jx_adj_r;
    if (problem.regularizer == Regularizer::hybrid)
      g += alpha_used * state.x;
    else
      g += regularizer_gradient(problem, state.x);
    for (Index i = 0; i < problem.n(); ++i)
      if (active.image_active[i]) out.dx[i] = -g[i];
  }
  if (active.any_motion()) {
    const VecR g = state.Jw.adjoint(state.eval.residual);
    for (Index i = 0; i < problem.p(); ++i)
      if (active.motion_active[i]) out.dw[i] = -g[i];
  }
  return out;
}

template <class Scalar>
CombinedStep<Scalar> combine_gamma(const StepPair<Scalar>& inactive, const StepPair<Scalar>& active_step) {
  if (inactive.dx.size() != active_step.dx.size() || inactive.dw.size() != active_step.dw.size())
    throw std::invalid_argument("combine_gamma: step length mismatch");
  const double den = std::max(inf_norm(active_step.dx), inf_norm(active_step.dw));
  if (den == 0.0) return {inactive, 0.0};
  const double gamma = std::max(inf_norm(inactive.dx), inf_norm(inactive.dw)) / den;
  CombinedStep<Scalar> out;
  out.gamma = gamma;
  out.step.dx = inactive.dx + gamma * active_step.dx;
  out.step.dw = inactive.dw + gamma * active_step.dw;
  return out;
}

template <class Scalar>
LineSearchResult<Scalar> projected_armijo(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w,
                                          double merit0, const Vec<Scalar>& grad_x, const VecR& grad_w,
                                          const StepPair<Scalar>& step, const SolverConfig& config, bool hybrid_merit) {
  if (step.dx.size() != x.size() || step.dw.size() != w.size())
    throw std::invalid_argument("projected_armijo: step length mismatch");
  if (inf_norm(step.dx) == 0.0 && inf_norm(step.dw) == 0.0) throw std::invalid_argument("projected_armijo: zero step");
  const double slope = std::min(inner(grad_x, step.dx) + grad_w.dot(step.dw), 0.0);
  LineSearchResult<Scalar> out;
  double eta = 1.0;
  for (int bt = 0; bt <= config.armijo_max_backtracks; ++bt, eta *= config.armijo_shrink) {
    Vec<Scalar> xt = project_box<Scalar>(x + eta * step.dx, problem.bounds_x);
    VecR wt = project_box<double>(w + eta * step.dw, problem.bounds_w);
    auto ev = residual_and_objective(problem, xt, wt);
    const double merit = hybrid_merit ? ev.misfit : ev.phi;
    if (std::isfinite(merit) && merit <= merit0 + config.armijo_c * eta * slope) {
      out.accepted = true;
      out.eta = eta;
      out.x = std::move(xt);
      out.w = std::move(wt);
      out.eval = std::move(ev);
      return out;
    }
  }
  return out;
}

StopDecision stopping_check(const std::vector<IterationRecord>& history, const SolverConfig& config, StopMode mode) {
  if (history.size() < 2) return {};
  const IterationRecord& first = history.front();
  const IterationRecord& prev = history[history.size() - 2];
  const IterationRecord& last = history.back();
  if (mode == StopMode::fixed) {
    const double scale = std::abs(first.objective);
    if (std::abs(last.objective - prev.objective) <= config.stop_fixed.obj_rel_tol * scale &&
        (scale > 0.0 || last.objective == prev.objective))
      return {true, Termination::converged_fixed};
    if (last.pgrad_norm < config.stop_fixed.pgrad_rel_tol * first.pgrad_norm || last.pgrad_norm == 0.0)
      return {true, Termination::converged_fixed};
  } else {
    if (last.step_norm < config.stop_hybrid.step_tol * last.iterate_norm || last.step_norm == 0.0)
      return {true, Termination::stagnated_hybrid};
    if (std::abs(last.data_misfit - prev.data_misfit) < config.stop_hybrid.misfit_change_tol * first.data_misfit ||
        last.data_misfit == prev.data_misfit)
      return {true, Termination::stagnated_hybrid};
  }
  if (last.iter >= config.max_outer) return {true, Termination::max_iters};
  return {};
}

// ---------------------------------------------------------------------------

template <class Scalar>
SolveReport<Scalar> solve_lap(const CoupledProblem<Scalar>& problem_in, const Vec<Scalar>& x0, const VecR& w0,
                              const SolverConfig& config, const AcceptObserver<Scalar>& observer) {
  const CoupledProblem<Scalar> problem = effective_problem(problem_in, config);
  check_start(problem, x0, w0);
  const bool hybrid = problem.regularizer == Regularizer::hybrid;
  const StopMode mode = stop_mode(problem.regularizer);
  auto counter = std::make_shared<MatvecCounter>();
  Recorder recorder(counter);

  SolveReport<Scalar> report;
  Vec<Scalar> x = project_box<Scalar>(x0, problem.bounds_x);
  VecR w = project_box<double>(w0, problem.bounds_w);
  auto state = linearize(problem, x, w, counter);
  auto grad = projected_full_gradient(problem, state);
  double alpha_used = hybrid ? 0.0 : problem.alpha;
  report.history.push_back(
      recorder.make(0, problem, x, w, state.eval, alpha_used, 0.0, 0.0, stacked_norm(grad.x, grad.w)));
  if (observer) observer(x, w);

  for (int k = 1; k <= config.max_outer; ++k) {
    const ActiveSets active = active_sets_for(problem, x, w);
    auto ls = lap_step(problem, state, active, config, true);
    if (ls.rank_deficient) {
      report.termination = Termination::rank_deficient_Jw;
      report.diagnostic = "motion Jacobian is rank deficient at iteration " + std::to_string(k);
      break;
    }
    alpha_used = ls.alpha_used;
    StepPair<Scalar> step = std::move(ls.step);
    if (active.any_image() || active.any_motion())
      step = combine_gamma(step, projected_gradient_step(problem, state, active, alpha_used)).step;

    if (inf_norm(step.dx) == 0.0 && inf_norm(step.dw) == 0.0) {
      auto rec = report.history.back();
      rec = recorder.make(k, problem, x, w, state.eval, alpha_used, 0.0, 0.0, rec.pgrad_norm);
      report.history.push_back(rec);
      report.termination = converged_reason(mode);
      break;
    }
    const double merit0 = hybrid ? state.eval.misfit : state.eval.phi;
    auto ls_res = projected_armijo(problem, x, w, merit0, grad.x, grad.w, step, config, hybrid);
    if (!ls_res.accepted) {
      report.termination = Termination::line_search_failure;
      report.diagnostic = "line search failed at iteration " + std::to_string(k);
      break;
    }
    const double step_norm = stacked_norm<Scalar>(ls_res.x - x, ls_res.w - w);
    x = std::move(ls_res.x);
    w = std::move(ls_res.w);
    state = linearize(problem, x, w, counter);
    grad = projected_full_gradient(problem, state);
    report.history.push_back(recorder.make(k, problem, x, w, state.eval, alpha_used, step_norm, ls_res.eta,
                                           stacked_norm(grad.x, grad.w)));
    if (observer) observer(x, w);
    const auto decision = stopping_check(report.history, config, mode);
    if (decision.stop) {
      report.termination = decision.reason;
      break;
    }
  }
  report.final_x = std::move(x);
  report.final_w = std::move(w);
  return report;
}

template <class Scalar>
SolveReport<Scalar> solve_bcd(const CoupledProblem<Scalar>& problem_in, const Vec<Scalar>& x0, const VecR& w0,
                              const SolverConfig& config, const AcceptObserver<Scalar>& observer) {
  const CoupledProblem<Scalar> problem = effective_problem(problem_in, config);
  check_start(problem, x0, w0);
  const bool hybrid = problem.regularizer == Regularizer::hybrid;
  const StopMode mode = stop_mode(problem.regularizer);
  const int q = problem.q();
  auto counter = std::make_shared<MatvecCounter>();
  Recorder recorder(counter);

  SolveReport<Scalar> report;
  Vec<Scalar> x = project_box<Scalar>(x0, problem.bounds_x);
  VecR w = project_box<double>(w0, problem.bounds_w);
  auto state = linearize(problem, x, w, counter);
  auto grad = projected_full_gradient(problem, state);
  double alpha_used = hybrid ? 0.0 : problem.alpha;
  report.history.push_back(
      recorder.make(0, problem, x, w, state.eval, alpha_used, 0.0, 0.0, stacked_norm(grad.x, grad.w)));
  if (observer) observer(x, w);

  for (int k = 1; k <= config.max_outer; ++k) {
    const Vec<Scalar> x_prev = x;
    const VecR w_prev = w;
    double eta_image = 0.0;

    // (a) image block with the motion frozen.
    ActiveSets active = active_sets_for(problem, x, w);
    ActiveSets image_only = active;
    std::fill(image_only.motion_active.begin(), image_only.motion_active.end(), false);
    auto ls = lap_step(problem, state, image_only, config, false);
    alpha_used = ls.alpha_used;
    StepPair<Scalar> step = std::move(ls.step);
    if (image_only.any_image())
      step = combine_gamma(step, projected_gradient_step(problem, state, image_only, alpha_used)).step;
    ObjectiveEval<Scalar> eval = state.eval;
    if (inf_norm(step.dx) > 0.0) {
      const double merit0 = hybrid ? eval.misfit : eval.phi;
      auto res = projected_armijo(problem, x, w, merit0, grad.x, VecR::Zero(w.size()).eval(), step, config, hybrid);
      if (!res.accepted) {
        report.termination = Termination::line_search_failure;
        report.diagnostic = "image line search failed at iteration " + std::to_string(k);
        break;
      }
      x = std::move(res.x);
      eval = std::move(res.eval);
      eta_image = res.eta;
    }

    // (b) motion block at the updated image.
    JwBlocks<Scalar> Jw = assemble_Jw(problem, x, w);
    const VecR gw = Jw.adjoint(eval.residual);
    const ActiveSets motion_sets = active_sets_for(problem, x, w);
    const std::vector<bool> keep_w = negate(motion_sets.motion_active);
    JwBlocks<Scalar> Jw_hat = motion_sets.any_motion() ? Jw.restrict_columns(keep_w) : Jw;
    if (!Jw_hat.factor()) {
      report.termination = Termination::rank_deficient_Jw;
      report.diagnostic = "motion Jacobian is rank deficient at iteration " + std::to_string(k);
      break;
    }
    StepPair<Scalar> mstep{Vec<Scalar>::Zero(x.size()), motion_normal_step(Jw_hat, keep_w, eval.residual, q)};
    if (motion_sets.any_motion()) {
      StepPair<Scalar> pg{Vec<Scalar>::Zero(x.size()), VecR::Zero(w.size())};
      for (Index i = 0; i < w.size(); ++i)
        if (motion_sets.motion_active[i]) pg.dw[i] = -gw[i];
      mstep = combine_gamma(mstep, pg).step;
    }
    if (inf_norm(mstep.dw) > 0.0) {
      const double merit0 = hybrid ? eval.misfit : eval.phi;
      const VecR qgw = projected_gradient<double>(gw, w, problem.bounds_w);
      auto res = projected_armijo(problem, x, w, merit0, Vec<Scalar>::Zero(x.size()).eval(), qgw, mstep, config,
                                  hybrid);
      if (!res.accepted) {
        report.termination = Termination::line_search_failure;
        report.diagnostic = "motion line search failed at iteration " + std::to_string(k);
        break;
      }
      w = std::move(res.w);
    }

    const double step_norm = stacked_norm<Scalar>(x - x_prev, w - w_prev);
    if (step_norm == 0.0) {
      report.history.push_back(
          recorder.make(k, problem, x, w, state.eval, alpha_used, 0.0, 0.0, report.history.back().pgrad_norm));
      report.termination = converged_reason(mode);
      break;
    }
    state = linearize(problem, x, w, counter);
    grad = projected_full_gradient(problem, state);
    report.history.push_back(recorder.make(k, problem, x, w, state.eval, alpha_used, step_norm, eta_image,
                                           stacked_norm(grad.x, grad.w)));
    if (observer) observer(x, w);
    const auto decision = stopping_check(report.history, config, mode);
    if (decision.stop) {
      report.termination = decision.reason;
      break;
    }
  }
  report.final_x = std::move(x);
  report.final_w = std::move(w);
  return report;
}

template <class Scalar>
SolveReport<Scalar> solve_varpro(const CoupledProblem<Scalar>& problem_in, const Vec<Scalar>& x0, const VecR& w0,
                                 const SolverConfig& config, const AcceptObserver<Scalar>& observer) {
  if (problem_in.regularizer == Regularizer::hybrid)
    throw std::invalid_argument("solve_varpro: hybrid regularization is not supported");
  CoupledProblem<Scalar> problem = effective_problem(problem_in, config);
  problem.bounds_x.reset();  // the image is eliminated without constraints
  check_start(problem, x0, w0);
  const int q = problem.q();
  auto counter = std::make_shared<MatvecCounter>();
  Recorder recorder(counter);
  const LinearMap<Scalar> L = problem.regularization_op();
  const Vec<Scalar> d = problem.data();

  LsqrOptions inner_opts;
  if (config.varpro_inner.fixed) {
    inner_opts = {0.0, 0.0, config.varpro_inner.iters};
  } else {
    inner_opts = {config.varpro_inner.tol, config.varpro_inner.tol, config.varpro_inner.max_iters};
  }
  int capped_solves = 0;
  // x(w): image minimizing Phi at fixed w, warm-started from `warm`.
  auto eliminate = [&](const VecR& w, const Vec<Scalar>& warm) {
    const LinearMap<Scalar> J = image_jacobian(problem, w, counter);
    const Vec<Scalar> r0 = J.apply(warm) - d;
    const auto sys = tikhonov_stack(J, L, problem.alpha, warm, r0);
    auto res = lsqr<Scalar>(sys.A, sys.b, inner_opts);
    if (!config.varpro_inner.fixed && !res.stats.converged) ++capped_solves;
    return Vec<Scalar>(warm + res.x);
  };

  SolveReport<Scalar> report;
  VecR w = project_box<double>(w0, problem.bounds_w);
  Vec<Scalar> x = eliminate(w, x0);
  auto eval = residual_and_objective(problem, x, w);
  JwBlocks<Scalar> Jw = assemble_Jw(problem, x, w);
  VecR gw = projected_gradient<double>(Jw.adjoint(eval.residual), w, problem.bounds_w);
  report.history.push_back(recorder.make(0, problem, x, w, eval, problem.alpha, 0.0, 0.0, gw.norm()));
  if (observer) observer(x, w);

  for (int k = 1; k <= config.max_outer; ++k) {
    if (!Jw.factor()) {
      report.termination = Termination::rank_deficient_Jw;
      report.diagnostic = "motion Jacobian is rank deficient at iteration " + std::to_string(k);
      break;
    }
    const std::vector<bool> keep_all(static_cast<std::size_t>(w.size()), true);
    const VecR dw = motion_normal_step(Jw, keep_all, eval.residual, q);
    if (inf_norm(dw) == 0.0) {
      report.history.push_back(recorder.make(k, problem, x, w, eval, problem.alpha, 0.0, 0.0, gw.norm()));
      report.termination = Termination::converged_fixed;
      break;
    }
    const double slope = std::min(gw.dot(dw), 0.0);
    bool accepted = false;
    double eta = 1.0;
    Vec<Scalar> xt;
    VecR wt;
    ObjectiveEval<Scalar> et;
    for (int bt = 0; bt <= config.armijo_max_backtracks; ++bt, eta *= config.armijo_shrink) {
      wt = project_box<double>(w + eta * dw, problem.bounds_w);
      xt = eliminate(wt, x);
      et = residual_and_objective(problem, xt, wt);
      if (std::isfinite(et.phi) && et.phi <= eval.phi + config.armijo_c * eta * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      report.termination = Termination::line_search_failure;
      report.diagnostic = "line search failed at iteration " + std::to_string(k);
      break;
    }
    const double step_norm = stacked_norm<Scalar>(xt - x, wt - w);
    x = std::move(xt);
    w = std::move(wt);
    eval = std::move(et);
    Jw = assemble_Jw(problem, x, w);
    gw = projected_gradient<double>(Jw.adjoint(eval.residual), w, problem.bounds_w);
    report.history.push_back(recorder.make(k, problem, x, w, eval, problem.alpha, step_norm, eta, gw.norm()));
    if (observer) observer(x, w);
    const auto decision = stopping_check(report.history, config, StopMode::fixed);
    if (decision.stop) {
      report.termination = decision.reason;
      break;
    }
  }
  if (capped_solves > 0) {
    std::ostringstream msg;
    if (!report.diagnostic.empty()) msg << report.diagnostic << "; ";
    msg << capped_solves << " inner solves stopped at the iteration cap";
    report.diagnostic = msg.str();
  }
  report.final_x = std::move(x);
  report.final_w = std::move(w);
  return report;
}

template <class Scalar>
SolveReport<Scalar> solve(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0,
                          const SolverConfig& config, const AcceptObserver<Scalar>& observer) {
  switch (config.method) {
    case Method::lap: return solve_lap(problem, x0, w0, config, observer);
    case Method::varpro: return solve_varpro(problem, x0, w0, config, observer);
    case Method::bcd: return solve_bcd(problem, x0, w0, config, observer);
  }
  throw std::invalid_argument("solve: unknown method");
}

template <class Scalar>
double relative_error(const Vec<Scalar>& v, const Vec<Scalar>& truth) {
  if (v.size() != truth.size()) throw std::invalid_argument("relative_error: length mismatch");
  const double nt = truth.norm();
  if (nt == 0.0) throw std::invalid_argument("relative_error: truth has zero norm");
  return (v - truth).norm() / nt;
}

#define LAP_INSTANTIATE_SOLVERS(S)                                                                                   \
  template Vec<S> project_box<S>(const Vec<S>&, const std::optional<Bounds>&);                                       \
  template ActiveSets split_active<S>(const Vec<S>&, const VecR&, const std::optional<Bounds>&,                       \
                                      const std::optional<Bounds>&);                                                 \
  template Vec<S> projected_gradient<S>(const Vec<S>&, const Vec<S>&, const std::optional<Bounds>&);                 \
  template Vec<S> projector_perp_apply<S>(const JwBlocks<S>&, const Vec<S>&);                                        \
  template LinearizedState<S> linearize<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&,                     \
                                           std::shared_ptr<MatvecCounter>, bool);                                    \
  template LapStepResult<S> lap_step<S>(const CoupledProblem<S>&, const LinearizedState<S>&, const ActiveSets&,      \
                                        const SolverConfig&, bool);                                                  \
  template StepPair<S> projected_gradient_step<S>(const CoupledProblem<S>&, const LinearizedState<S>&,               \
                                                  const ActiveSets&, double);                                        \
  template CombinedStep<S> combine_gamma<S>(const StepPair<S>&, const StepPair<S>&);                                 \
  template LineSearchResult<S> projected_armijo<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&, double,     \
                                                   const Vec<S>&, const VecR&, const StepPair<S>&,                   \
                                                   const SolverConfig&, bool);                                       \
  template SolveReport<S> solve_lap<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&, const SolverConfig&,    \
                                       const AcceptObserver<S>&);                                                    \
  template SolveReport<S> solve_varpro<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&, const SolverConfig&, \
                                          const AcceptObserver<S>&);                                                 \
  template SolveReport<S> solve_bcd<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&, const SolverConfig&,    \
                                       const AcceptObserver<S>&);                                                    \
  template SolveReport<S> solve<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&, const SolverConfig&,        \
                                   const AcceptObserver<S>&);                                                        \
  template double relative_error<S>(const Vec<S>&, const Vec<S>&);

LAP_INSTANTIATE_SOLVERS(double)
LAP_INSTANTIATE_SOLVERS(Complex)

}  // namespace lap
