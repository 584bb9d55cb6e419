#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "lap/krylov.hpp"
#include "lap/models.hpp"

namespace lap {

enum class Method { lap, varpro, bcd };

enum class Termination { converged_fixed, stagnated_hybrid, max_iters, line_search_failure, rank_deficient_Jw };

const char* to_string(Method m);
const char* to_string(Termination t);

/// Variables sitting on a bound (within 1e-12, absolute).
struct ActiveSets {
  std::vector<bool> image_active;   // length n
  std::vector<bool> motion_active;  // length p

  bool any_image() const;
  bool any_motion() const;
};

inline constexpr double kActiveTol = 1e-12;

/// Inner solve used by VarPro to eliminate the image: either a fixed number
/// of LSQR iterations or a tolerance with an iteration cap.
struct VarProInner {
  bool fixed = true;
  int iters = 20;
  double tol = 1e-8;
  int max_iters = 100;
};

struct FixedStopping {
  double obj_rel_tol = 1e-6;
  double pgrad_rel_tol = 1e-6;
};

struct HybridStopping {
  double step_tol = 1e-6;
  double misfit_change_tol = 1e-6;
};

struct SolverConfig {
  Method method = Method::lap;
  LsqrOptions lsqr{1e-2, 1e-2, 50};
  HybridOptions hybrid{};
  VarProInner varpro_inner{};
  int max_outer = 50;
  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  int armijo_max_backtracks = 20;
  FixedStopping stop_fixed{};
  HybridStopping stop_hybrid{};
  /// Disables bound handling entirely (plain Gauss-Newton path).
  bool use_active_sets = true;
};

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
  double data_misfit = 0.0;
  double relerr_x = std::numeric_limits<double>::quiet_NaN();
  double relerr_w = std::numeric_limits<double>::quiet_NaN();
  long matvecs_cumulative = 0;
  double alpha_used = 0.0;
  double step_norm = 0.0;
  double line_search_eta = 0.0;
  double wall_time_s = 0.0;
  double pgrad_norm = 0.0;
  double iterate_norm = 0.0;
};

template <class Scalar>
struct SolveReport {
  std::vector<IterationRecord> history;
  Vec<Scalar> final_x;
  VecR final_w;
  Termination termination = Termination::max_iters;
  std::string diagnostic;
};

/// Called with every accepted iterate (including the initial one).
template <class Scalar>
using AcceptObserver = std::function<void(const Vec<Scalar>&, const VecR&)>;

// ---------------------------------------------------------------------------
// Building blocks

/// Componentwise clamp onto [lo, hi]; identity without bounds or for
/// complex images.
template <class Scalar>
Vec<Scalar> project_box(const Vec<Scalar>& v, const std::optional<Bounds>& bounds);

template <class Scalar>
ActiveSets split_active(const Vec<Scalar>& x, const VecR& w, const std::optional<Bounds>& bounds_x,
                        const std::optional<Bounds>& bounds_w);

/// Projected gradient: components of g that would push an at-bound variable
/// out of the box under a descent step are zeroed.
template <class Scalar>
Vec<Scalar> projected_gradient(const Vec<Scalar>& g, const Vec<Scalar>& v, const std::optional<Bounds>& bounds);

/// v - Q Re(Q^H v) per frame, with the frame QR factors of J_w.
template <class Scalar>
Vec<Scalar> projector_perp_apply(const JwBlocks<Scalar>& jw, const Vec<Scalar>& v);

/// Everything evaluated once per outer iterate.
template <class Scalar>
struct LinearizedState {
  Vec<Scalar> x;
  VecR w;
  ObjectiveEval<Scalar> eval;
  LinearMap<Scalar> Jx;
  JwBlocks<Scalar> Jw;
  Vec<Scalar> Jx_adj_r;  // J_x^H r
};

template <class Scalar>
LinearizedState<Scalar> linearize(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w,
                                  std::shared_ptr<MatvecCounter> counter, bool with_motion = true);

template <class Scalar>
struct StepPair {
  Vec<Scalar> dx;
  VecR dw;
};

template <class Scalar>
struct LapStepResult {
  StepPair<Scalar> step;
  double alpha_used = 0.0;
  SolveStats inner;
  bool rank_deficient = false;
};

/// Gauss-Newton step on the inactive set: projected image problem solved
/// by Tikhonov + LSQR (or hybrid LSQR), followed by the motion step from
/// the normal equations of J_w. With include_motion false, J_w is treated as
/// having no columns.
template <class Scalar>
LapStepResult<Scalar> lap_step(const CoupledProblem<Scalar>& problem, const LinearizedState<Scalar>& state,
                               const ActiveSets& active, const SolverConfig& config, bool include_motion = true);

/// Scaled projected-gradient step on the active set.
template <class Scalar>
StepPair<Scalar> projected_gradient_step(const CoupledProblem<Scalar>& problem, const LinearizedState<Scalar>& state,
                                         const ActiveSets& active, double alpha_used);

template <class Scalar>
struct CombinedStep {
  StepPair<Scalar> step;
  double gamma = 0.0;
};

template <class Scalar>
CombinedStep<Scalar> combine_gamma(const StepPair<Scalar>& inactive, const StepPair<Scalar>& active_step);

template <class Scalar>
struct LineSearchResult {
  bool accepted = false;
  double eta = 0.0;
  Vec<Scalar> x;
  VecR w;
  ObjectiveEval<Scalar> eval;
};

/// Backtracking on Phi(P(x + eta dx), P(w + eta dw)) <= Phi + c eta Q(g)^T d.
/// `merit` selects the objective (phi, or data misfit in hybrid mode).
/// Throws std::invalid_argument for a zero step.
template <class Scalar>
LineSearchResult<Scalar> projected_armijo(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w,
                                          double merit0, const Vec<Scalar>& grad_x, const VecR& grad_w,
                                          const StepPair<Scalar>& step, const SolverConfig& config, bool hybrid_merit);

enum class StopMode { fixed, hybrid };

struct StopDecision {
  bool stop = false;
  Termination reason = Termination::max_iters;
};

StopDecision stopping_check(const std::vector<IterationRecord>& history, const SolverConfig& config, StopMode mode);

// ---------------------------------------------------------------------------
// Methods

template <class Scalar>
SolveReport<Scalar> solve_lap(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0,
                              const SolverConfig& config, const AcceptObserver<Scalar>& observer = {});

template <class Scalar>
SolveReport<Scalar> solve_varpro(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0,
                                 const SolverConfig& config, const AcceptObserver<Scalar>& observer = {});

template <class Scalar>
SolveReport<Scalar> solve_bcd(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0,
                              const SolverConfig& config, const AcceptObserver<Scalar>& observer = {});

template <class Scalar>
SolveReport<Scalar> solve(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x0, const VecR& w0,
                          const SolverConfig& config, const AcceptObserver<Scalar>& observer = {});

/// ||x - x*|| / ||x*||; throws std::invalid_argument for a zero-norm truth.
template <class Scalar>
double relative_error(const Vec<Scalar>& v, const Vec<Scalar>& truth);

}  // namespace lap
