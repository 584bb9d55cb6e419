#include <cmath>

#include "doctest.h"
#include "lap/solvers.hpp"
#include "oracles.hpp"

using namespace lap;
using lap::testing::random_of;
using lap::testing::random_vec;
using lap::testing::rel_diff;
using lap::testing::small_mri;
using lap::testing::small_superres;

namespace {

template <class Scalar>
CoupledProblem<Scalar> make_problem(Index frames, double noise, std::uint64_t seed) {
  // Frame counts must divide the 16 Fourier rows.
  if constexpr (is_complex_v<Scalar>)
    return small_mri(frames == 3 ? 4 : frames, noise, seed);
  else
    return small_superres(frames, noise, seed);
}

/// State near the truth: image and motion perturbed by a few percent.
template <class Scalar>
std::pair<Vec<Scalar>, VecR> nearby_state(const CoupledProblem<Scalar>& p, double scale = 0.05) {
  Vec<Scalar> x = *p.truth_x + scale * p.truth_x->norm() / std::sqrt(double(p.n())) * random_of<Scalar>(p.n());
  VecR w = *p.truth_w + scale * random_vec(p.p());
  return {x, w};
}

SolverConfig tight_config(Method m = Method::lap) {
  SolverConfig c;
  c.method = m;
  c.lsqr = {1e-12, 1e-12, 2000};
  c.varpro_inner = {false, 20, 1e-12, 2000};
  c.max_outer = 60;
  c.stop_fixed = {1e-14, 1e-9};
  return c;
}

bool same_history(const std::vector<IterationRecord>& a, const std::vector<IterationRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& u = a[i];
    const auto& v = b[i];
    if (u.objective != v.objective || u.data_misfit != v.data_misfit || u.step_norm != v.step_norm ||
        u.line_search_eta != v.line_search_eta || u.matvecs_cumulative != v.matvecs_cumulative)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE_TEMPLATE("one LAP step equals the dense coupled Gauss-Newton step", Scalar, double, Complex) {
  SolverConfig config;
  config.lsqr = {1e-10, 1e-10, 5000};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = make_problem<Scalar>(2 + seed % 3, 0.02, seed);
    const auto [x, w] = nearby_state(p);
    const auto state = linearize(p, x, w, std::make_shared<MatvecCounter>());
    const ActiveSets none = split_active<Scalar>(x, w, std::nullopt, std::nullopt);
    const auto step = lap_step(p, state, none, config);
    REQUIRE(!step.rank_deficient);
    const auto oracle = lap::testing::dense_coupled_step(p, x, w);
    CHECK(rel_diff(step.step.dx, oracle.dx) <= 1e-6);
    CHECK(rel_diff(step.step.dw, oracle.dw) <= 1e-6);
  }
}

TEST_CASE_TEMPLATE("projector", Scalar, double, Complex) {
  const auto p = make_problem<Scalar>(3, 0.0, 4);
  const auto [x, w] = nearby_state(p, 0.2);
  JwBlocks<Scalar> jw = assemble_Jw(p, x, w);
  REQUIRE(jw.factor());
  const Vec<Scalar> v = random_of<Scalar>(p.m());
  const Vec<Scalar> Pv = projector_perp_apply(jw, v);
  CHECK(rel_diff(projector_perp_apply(jw, Pv), Pv) <= 1e-12);
  // Self-adjoint under the real inner product.
  const Vec<Scalar> u = random_of<Scalar>(p.m());
  CHECK(std::abs(inner(Pv, u) - inner(v, projector_perp_apply(jw, u))) <= 1e-10 * v.norm() * u.norm());
  for (Index k = 0; k < jw.n_frames(); ++k) {
    const Mat<Scalar>& B = jw.blocks[k];
    CHECK((jw.qr[k].Q * jw.qr[k].R.template cast<Scalar>() - B).norm() <= 1e-12 * B.norm());
  }
  for (Index c = 0; c < p.p(); ++c) {
    VecR e = VecR::Zero(p.p());
    e[c] = 1.0;
    const Vec<Scalar> col = jw.apply(e);
    CHECK(projector_perp_apply(jw, col).norm() <= 1e-10 * col.norm());
  }
  CHECK_THROWS_AS(projector_perp_apply(jw, Vec<Scalar>(Vec<Scalar>::Zero(3))), std::invalid_argument);
  CHECK_THROWS_AS(projector_perp_apply(assemble_Jw(p, x, w), v), std::logic_error);
}

TEST_CASE_TEMPLATE("gradient of Phi passes the Taylor test", Scalar, double, Complex) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = make_problem<Scalar>(3, 0.02, 20 + seed);
    const auto [x, w] = nearby_state(p, 0.3);
    const double order =
        lap::testing::taylor_order_phi(p, x, w, random_of<Scalar>(p.n()), random_vec(p.p()));
    CHECK(order >= 1.9);
    CHECK(lap::testing::taylor_order_Jw(p, x, w, random_vec(p.p())) >= 1.9);
  }
}

TEST_CASE("bounds helpers") {
  const Bounds b{0.0, 1.0};
  const VecR v = (VecR(4) << -0.5, 0.3, 1.0, 2.0).finished();
  CHECK(project_box<double>(v, b) == (VecR(4) << 0.0, 0.3, 1.0, 1.0).finished());
  CHECK(project_box<double>(v, std::nullopt) == v);
  const VecC c = random_of<Complex>(4);
  CHECK(project_box<Complex>(c, b) == c);

  const VecR x = (VecR(4) << 0.0, 0.5, 1.0, 1.0 - 1e-13).finished();
  const ActiveSets s = split_active<double>(x, VecR::Zero(2), b, std::nullopt);
  CHECK(s.image_active == std::vector<bool>{true, false, true, true});
  CHECK(s.motion_active == std::vector<bool>{false, false});
  CHECK(s.any_image());
  CHECK(!s.any_motion());
  CHECK(!split_active<Complex>(VecC::Zero(3), VecR::Zero(1), b, std::nullopt).any_image());

  // Lower bound with positive gradient and upper bound with negative gradient are blocked.
  const VecR g = (VecR(4) << 1.0, 1.0, -1.0, 1.0).finished();
  CHECK(projected_gradient<double>(g, x, b) == (VecR(4) << 0.0, 1.0, 0.0, 1.0).finished());
  CHECK(projected_gradient<double>(-g, x, b) == (VecR(4) << -1.0, -1.0, 1.0, 0.0).finished());
  CHECK_THROWS_AS(projected_gradient<double>(g, VecR::Zero(3), b), std::invalid_argument);
}

TEST_CASE("combine_gamma") {
  StepPair<double> in{(VecR(3) << 0.0, 2.0, -4.0).finished(), (VecR(1) << 1.0).finished()};
  StepPair<double> act{(VecR(3) << 0.5, 0.0, 0.0).finished(), VecR::Zero(1)};
  const auto c = combine_gamma(in, act);
  CHECK(c.gamma == doctest::Approx(8.0));
  CHECK(c.step.dx == (VecR(3) << 4.0, 2.0, -4.0).finished());
  CHECK(c.step.dw == in.dw);

  const auto z = combine_gamma(in, StepPair<double>{VecR::Zero(3), VecR::Zero(1)});
  CHECK(z.gamma == 0.0);
  CHECK(z.step.dx == in.dx);
  CHECK_THROWS_AS(combine_gamma(in, StepPair<double>{VecR::Zero(2), VecR::Zero(1)}), std::invalid_argument);
}

TEST_CASE("projected Armijo") {
  auto p = small_superres(2, 0.02, 3);
  const auto [x, w] = nearby_state(p);
  const auto g = lap::testing::phi_gradient(p, x, w);
  const double phi0 = residual_and_objective(p, x, w).phi;
  SolverConfig config;

  SUBCASE("steepest descent is accepted with sufficient decrease") {
    const StepPair<double> step{-g.x, -g.w};
    const auto r = projected_armijo(p, x, w, phi0, g.x, g.w, step, config, false);
    REQUIRE(r.accepted);
    const double slope = g.x.dot(step.dx) + g.w.dot(step.dw);
    CHECK(r.eval.phi <= phi0 + config.armijo_c * r.eta * slope);
    CHECK(rel_diff(r.x, x + r.eta * step.dx) <= 1e-15);
  }
  SUBCASE("ascent direction is rejected") {
    const StepPair<double> step{g.x, g.w};
    CHECK(!projected_armijo(p, x, w, phi0, g.x, g.w, step, config, false).accepted);
  }
  SUBCASE("iterates are projected") {
    p.bounds_x = Bounds{0.0, 1.0};
    const StepPair<double> step{VecR::Constant(p.n(), -10.0), VecR::Zero(p.p())};
    SolverConfig loose = config;
    loose.armijo_c = 0.0;
    const auto r = projected_armijo(p, x, w, 1e300, g.x, g.w, step, loose, false);
    REQUIRE(r.accepted);
    CHECK(r.x.minCoeff() >= 0.0);
    CHECK(r.eta == 1.0);
  }
  CHECK_THROWS_AS(projected_armijo(p, x, w, phi0, g.x, g.w, StepPair<double>{VecR::Zero(p.n()), VecR::Zero(p.p())},
                                   config, false),
                  std::invalid_argument);
}

TEST_CASE("stopping_check") {
  SolverConfig c;
  c.max_outer = 5;
  auto rec = [](int iter, double obj, double misfit, double pg, double step, double norm) {
    IterationRecord r;
    r.iter = iter;
    r.objective = obj;
    r.data_misfit = misfit;
    r.pgrad_norm = pg;
    r.step_norm = step;
    r.iterate_norm = norm;
    return r;
  };
  std::vector<IterationRecord> h{rec(0, 10.0, 10.0, 1.0, 0.0, 1.0)};
  CHECK(!stopping_check(h, c, StopMode::fixed).stop);
  h.push_back(rec(1, 5.0, 5.0, 0.5, 1.0, 1.0));
  CHECK(!stopping_check(h, c, StopMode::fixed).stop);
  h.push_back(rec(2, 5.0 - 1e-6, 5.0, 0.5, 1.0, 1.0));
  CHECK(stopping_check(h, c, StopMode::fixed).stop);
  CHECK(stopping_check(h, c, StopMode::fixed).reason == Termination::converged_fixed);
  h.back() = rec(2, 4.0, 4.0, 1e-7, 1.0, 1.0);
  CHECK(stopping_check(h, c, StopMode::fixed).stop);

  h.back() = rec(2, 4.0, 4.0, 0.5, 1e-7, 1.0);
  CHECK(stopping_check(h, c, StopMode::hybrid).reason == Termination::stagnated_hybrid);
  h.back() = rec(2, 4.0, 5.0 - 1e-6, 0.5, 1.0, 1.0);
  CHECK(stopping_check(h, c, StopMode::hybrid).stop);
  h.back() = rec(2, 4.0, 4.0, 0.5, 1.0, 1.0);
  CHECK(!stopping_check(h, c, StopMode::hybrid).stop);

  h.back() = rec(5, 4.0, 4.0, 0.5, 1.0, 1.0);
  CHECK(stopping_check(h, c, StopMode::fixed).reason == Termination::max_iters);
}

TEST_CASE_TEMPLATE("VarPro eliminates the image exactly", Scalar, double, Complex) {
  const auto p = make_problem<Scalar>(2, 0.02, 8);
  const auto [x0, w0] = nearby_state(p, 0.1);
  SolverConfig c = tight_config(Method::varpro);
  c.max_outer = 0;
  const auto r = solve_varpro(p, x0, w0, c);
  // Dense Tikhonov solution at fixed w0.
  const MatR J = lap::testing::realify(to_dense(image_jacobian(p, w0)));
  const MatR L = lap::testing::realify(to_dense(p.regularization_op()));
  const VecR d = lap::testing::realify_vec(p.data());
  const VecR x = (J.transpose() * J + p.alpha * L.transpose() * L).ldlt().solve(J.transpose() * d);
  CHECK(rel_diff(lap::testing::realify_vec(r.final_x), x) <= 1e-8);
  // With x = x(w) the image part of the full gradient vanishes.
  const auto g = lap::testing::phi_gradient(p, r.final_x, w0);
  CHECK(g.x.norm() <= 1e-8 * (J.transpose() * d).norm());
}

TEST_CASE_TEMPLATE("LAP and VarPro reach comparable objectives", Scalar, double, Complex) {
  const auto p = make_problem<Scalar>(3, 0.02, 8);
  const auto [x0, w0] = nearby_state(p, 0.1);
  const auto a = solve_lap(p, x0, w0, tight_config());
  const auto b = solve_varpro(p, x0, w0, tight_config(Method::varpro));
  const double fa = a.history.back().objective, fb = b.history.back().objective;
  CHECK(fa < a.history.front().objective);
  CHECK(fb < b.history.front().objective);
  CHECK(std::abs(fa - fb) <= 0.02 * std::min(fa, fb));
}

TEST_CASE_TEMPLATE("solvers decrease the objective", Scalar, double, Complex) {
  const auto p = make_problem<Scalar>(3, 0.02, 12);
  const auto [x0, w0] = nearby_state(p, 0.1);
  for (Method m : {Method::lap, Method::varpro, Method::bcd}) {
    SolverConfig c;
    c.method = m;
    c.max_outer = 15;
    int calls = 0;
    const auto r = solve<Scalar>(p, x0, w0, c, [&](const Vec<Scalar>&, const VecR&) { ++calls; });
    REQUIRE(r.history.size() >= 2);
    CHECK(calls == static_cast<int>(r.history.size()));
    for (std::size_t i = 1; i < r.history.size(); ++i)
      CHECK(r.history[i].objective <= r.history[i - 1].objective);
    CHECK(r.history.back().relerr_w < r.history.front().relerr_w);
    CHECK(r.history.back().matvecs_cumulative > 0);
  }
}

TEST_CASE("hybrid LAP on a small MRI problem") {
  auto p = small_mri(4, 0.05, 9);
  p.regularizer = Regularizer::hybrid;
  const VecR w0 = VecR::Zero(p.p());
  const VecC x0 = initial_image(w0, p);
  SolverConfig c;
  c.max_outer = 40;
  const auto r = solve_lap(p, x0, w0, c);
  CHECK(r.history.back().relerr_x < 0.5 * r.history.front().relerr_x);
  CHECK(r.history.back().relerr_w < 0.5);
  for (const auto& h : r.history) CHECK(h.alpha_used >= 0.0);
  CHECK_THROWS_AS(solve_varpro(p, x0, w0, c), std::invalid_argument);
}

TEST_CASE("start at the truth without noise stagnates") {
  const auto p = small_superres(3, 0.0, 13);
  for (Method m : {Method::lap, Method::varpro, Method::bcd}) {
    SolverConfig c;
    c.method = m;
    auto q = p;
    q.alpha = 0.0;
    const auto r = solve<double>(q, *q.truth_x, *q.truth_w, c);
    CHECK(r.history.size() <= 3);
    CHECK(r.history.back().relerr_x <= 1e-8);
    CHECK(r.history.back().relerr_w <= 1e-8);
  }
}

TEST_CASE("bounded iterates are feasible and Phi is monotone") {
  auto p = small_superres(3, 0.05, 14, 0.05, 1.5);
  p.bounds_x = Bounds{0.0, 1.0};
  const VecR w0 = VecR::Zero(p.p());
  const VecR x0 = initial_image(w0, p);
  for (Method m : {Method::lap, Method::bcd}) {
    SolverConfig c;
    c.method = m;
    bool feasible = true;
    bool touched = false;
    const auto r = solve<double>(p, x0, w0, c, [&](const VecR& x, const VecR&) {
      feasible = feasible && x.minCoeff() >= 0.0 && x.maxCoeff() <= 1.0;
      touched = touched || x.minCoeff() == 0.0;
    });
    CHECK(feasible);
    CHECK(touched);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].objective <= r.history[i - 1].objective);
  }
}

TEST_CASE("infinite bounds follow the unconstrained path") {
  auto p = small_superres(3, 0.05, 15);
  const VecR w0 = VecR::Zero(p.p());
  const VecR x0 = initial_image(w0, p);
  for (Method m : {Method::lap, Method::bcd, Method::varpro}) {
    SolverConfig off;
    off.method = m;
    off.max_outer = 10;
    off.use_active_sets = false;
    SolverConfig on = off;
    on.use_active_sets = true;
    auto bounded = p;
    bounded.bounds_x = Bounds{};
    bounded.bounds_w = Bounds{};
    const auto a = solve<double>(p, x0, w0, off);
    const auto b = solve<double>(bounded, x0, w0, on);
    CHECK(same_history(a.history, b.history));
    CHECK(a.final_x == b.final_x);
    CHECK(a.final_w == b.final_w);
  }
}

TEST_CASE("degenerate inputs") {
  const auto p = small_superres(2, 0.0, 16);
  SolverConfig c;
  const auto r = solve_lap(p, VecR(VecR::Zero(p.n())), VecR(VecR::Zero(p.p())), c);
  CHECK(r.termination == Termination::rank_deficient_Jw);
  CHECK(!r.diagnostic.empty());
  CHECK_THROWS_AS(solve_lap(p, VecR(VecR::Zero(3)), VecR(VecR::Zero(p.p())), c), std::invalid_argument);
  CHECK_THROWS_AS(relative_error<double>(VecR::Ones(2), VecR::Zero(2)), std::invalid_argument);
  CHECK(relative_error<double>(VecR::Ones(2), VecR::Constant(2, 2.0)) == doctest::Approx(0.5));
}
