#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lap/experiment.hpp"
#include "testing.hpp"

using namespace lap;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lap_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// CSV text with the last column removed from every line.
std::string drop_last_column(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

IterationRecord record(int iter, double scale) {
  IterationRecord r;
  r.iter = iter;
  r.objective = 1.0 / 3.0 * scale;
  r.data_misfit = 0.1 * scale;
  r.relerr_x = 2.0e-2 * scale;
  r.relerr_w = iter == 0 ? std::numeric_limits<double>::quiet_NaN() : 1e-17;
  r.matvecs_cumulative = 7 * iter;
  r.alpha_used = 0.01;
  r.line_search_eta = 0.5;
  r.wall_time_s = 1.25 * iter;
  return r;
}

}  // namespace

TEST_CASE("parsers and validation") {
  CHECK(parse_problem("mri") == ProblemKind::mri);
  CHECK(parse_problem("sr3d") == ProblemKind::sr3d);
  CHECK(parse_method("varpro") == Method::varpro);
  CHECK(parse_regularizer("hybrid") == Regularizer::hybrid);
  CHECK(parse_scale("paper") == Scale::paper);
  CHECK_THROWS_AS(parse_problem("sr4d"), std::invalid_argument);
  CHECK_THROWS_AS(parse_method("newton"), std::invalid_argument);
  CHECK_THROWS_AS(parse_regularizer("tv"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scale("huge"), std::invalid_argument);
  for (auto p : {ProblemKind::sr2d, ProblemKind::sr3d, ProblemKind::mri}) CHECK(parse_problem(to_string(p)) == p);

  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.noise = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.noise = 0.02;
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.alpha = 0.01;
  c.trials = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("solver_config_for") {
  ExperimentConfig c;
  CHECK(solver_config_for(c).max_outer == 50);
  c.problem = ProblemKind::mri;
  CHECK(solver_config_for(c).max_outer == 200);
  c.max_outer = 3;
  CHECK(solver_config_for(c).max_outer == 3);
  c.solver = Method::bcd;
  CHECK(solver_config_for(c).method == Method::bcd);
}

TEST_CASE("convergence csv round trip") {
  const fs::path dir = scratch_dir("conv");
  std::vector<IterationRecord> h{record(0, 1.0), record(1, 0.5), record(2, 0.25)};
  write_convergence_csv(dir / "c.csv", h);
  const std::string text = slurp(dir / "c.csv");
  CHECK(text.rfind(std::string(kConvergenceHeader) + "\n", 0) == 0);
  const auto back = read_convergence_csv(dir / "c.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].iter == h[i].iter);
    CHECK(back[i].objective == h[i].objective);
    CHECK(back[i].data_misfit == h[i].data_misfit);
    CHECK(back[i].relerr_x == h[i].relerr_x);
    CHECK(back[i].matvecs_cumulative == h[i].matvecs_cumulative);
    CHECK(back[i].alpha_used == h[i].alpha_used);
    CHECK(back[i].line_search_eta == h[i].line_search_eta);
    CHECK(back[i].wall_time_s == h[i].wall_time_s);
  }
  CHECK(std::isnan(back[0].relerr_w));
  CHECK(back[1].relerr_w == 1e-17);

  CHECK_THROWS_AS(write_convergence_csv(dir / "e.csv", {}), std::invalid_argument);
  std::ofstream(dir / "bad.csv") << "iter,objective\n1,2\n";
  CHECK_THROWS_AS(read_convergence_csv(dir / "bad.csv"), std::runtime_error);
  CHECK_THROWS_AS(read_convergence_csv(dir / "missing.csv"), std::runtime_error);
}

TEST_CASE("pgm output") {
  const fs::path dir = scratch_dir("pgm");
  // 3 x 2 image, x fastest; image row 0 is written last.
  const VecR v = (VecR(6) << 0.0, 0.5, 1.0, -0.3, 1.7, 0.2).finished();
  write_pgm(dir / "a.pgm", v, 3, 2);
  const std::string bytes = slurp(dir / "a.pgm");
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.substr(0, header.size()) == header);
  const auto px = [&](int i) { return static_cast<unsigned char>(bytes[header.size() + i]); };
  CHECK(px(0) == 0);    // -0.3 clamped
  CHECK(px(1) == 255);  // 1.7 clamped
  CHECK(px(2) == 51);   // floor(0.2 * 255 + 0.5)
  CHECK(px(3) == 0);
  CHECK(px(4) == 128);  // floor(127.5 + 0.5)
  CHECK(px(5) == 255);
  CHECK_THROWS_AS(write_pgm(dir / "b.pgm", v, 4, 2), std::invalid_argument);
}

TEST_CASE("display helpers, raw volume and motion csv") {
  const VecC z = (VecC(2) << Complex(3, 4), Complex(0, -2)).finished();
  CHECK(display_values<Complex>(z) == (VecR(2) << 5.0, 2.0).finished());

  const Grid g({2, 2, 3}, {0, 0, 0}, {2, 2, 3});
  VecR vol(12);
  for (Index i = 0; i < 12; ++i) vol[i] = static_cast<double>(i);
  CHECK(mid_slice(g, vol) == (VecR(4) << 4, 5, 6, 7).finished());
  const Grid g2({2, 2}, {0, 0}, {2, 2});
  CHECK(mid_slice(g2, vol.head(4)) == vol.head(4));

  const fs::path dir = scratch_dir("raw");
  write_raw_volume(dir / "v.raw", g, vol);
  const std::string raw = slurp(dir / "v.raw");
  REQUIRE(raw.size() == 48);
  float f;
  std::memcpy(&f, raw.data() + 4 * 5, 4);
  CHECK(f == 5.0f);
  CHECK(slurp(dir / "v.raw.txt") == "format=float32le\norder=axis0-fastest\nshape=2x2x3\n");

  write_motion_csv(dir / "m.csv", (VecR(6) << 0.5, 1, 2, -0.25, 3, 4).finished(), 3);
  CHECK(slurp(dir / "m.csv") == "0.5,1,2\n-0.25,3,4\n");
  CHECK_THROWS_AS(write_motion_csv(dir / "n.csv", VecR::Zero(5), 3), std::invalid_argument);
}

TEST_CASE("summary round trip and table") {
  ExperimentConfig c;
  std::vector<TrialResult> trials(3);
  for (int i = 0; i < 3; ++i) {
    trials[i].trial = i;
    trials[i].ok = i != 1;
    trials[i].iterations = 10 + i;
    trials[i].relerr_x = 0.01 * (i + 1);
    trials[i].relerr_w = 0.001 * (i + 1);
    trials[i].matvecs = 100 * (i + 1);
    trials[i].time_s = 1.0;
  }
  const SummaryRow row = summarize(c, trials);
  CHECK(row.trials == 2);
  CHECK(row.failed == 1);
  CHECK(row.mean_iters == doctest::Approx(11.0));
  CHECK(row.mean_relerr_x == doctest::Approx(0.02));
  CHECK(row.mean_matvecs == doctest::Approx(200.0));

  const fs::path dir = scratch_dir("summary");
  write_summary_csv(dir / "s.csv", {row, row});
  const auto back = read_summary_csv(dir / "s.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].problem == "sr2d");
  CHECK(back[1].solver == "lap");
  CHECK(back[1].regularizer == "grad");
  CHECK(back[1].mean_relerr_w == row.mean_relerr_w);
  CHECK(back[1].mean_time_s == row.mean_time_s);

  const std::string table = format_table(back);
  CHECK(table.find("lap + grad") != std::string::npos);
  CHECK(table.find("2%") != std::string::npos);
  CHECK(table.find("2.00e-02") != std::string::npos);
}

TEST_CASE("mri instance layout") {
  ExperimentConfig c;
  c.problem = ProblemKind::mri;
  c.regularizer = Regularizer::hybrid;
  c.noise = 0.1;
  const auto inst = make_mri_instance(c, 0);
  const auto& p = inst.problem;
  CHECK(p.n_frames() == 16);
  CHECK(p.m() == 524288);
  CHECK(p.data().size() == 524288);
  CHECK(inst.w0 == VecR::Zero(48));
  CHECK(p.truth_w->reshaped(3, 16).rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(relative_error<double>(inst.w0, *p.truth_w) == 1.0);
  CHECK_THROWS_AS(make_superres_instance(c, 0), std::invalid_argument);
}

TEST_CASE("super-resolution instance layout") {
  ExperimentConfig c;
  c.start_at_truth = true;
  const auto inst = make_superres_instance(c, 2);
  const auto& p = inst.problem;
  CHECK(p.n() == 128 * 128);
  CHECK(p.n_frames() == 32);
  CHECK(p.m() == 32 * 32 * 32);
  CHECK(p.truth_w->head(3) == VecR::Zero(3));
  CHECK(inst.x0 == *p.truth_x);
  CHECK(p.bounds_x->lo == 0.0);
  CHECK(p.bounds_x->hi == 1.0);
  CHECK(p.truth_x->minCoeff() >= 0.0);
  CHECK(p.truth_x->maxCoeff() <= 1.0);
  CHECK_THROWS_AS(make_mri_instance(c, 0), std::invalid_argument);
  // Trials draw different instances.
  CHECK(*make_superres_instance(c, 3).problem.truth_w != *p.truth_w);
}

TEST_CASE("repeated runs write identical artifacts") {
  ExperimentConfig c;
  c.max_outer = 2;
  c.seed = 11;
  const fs::path da = scratch_dir("det_a"), db = scratch_dir("det_b");
  c.out_dir = da;
  const auto a = run_experiment(c);
  c.out_dir = db;
  const auto b = run_experiment(c);
  REQUIRE(a.trials.size() == 1);
  CHECK(a.trials[0].ok);
  CHECK(a.trials[0].iterations == 2);
  const fs::path ta = da / "trial_00", tb = db / "trial_00";
  const std::string ca = slurp(ta / "convergence.csv"), cb = slurp(tb / "convergence.csv");
  CHECK(!ca.empty());
  CHECK(drop_last_column(ca) == drop_last_column(cb));
  for (const char* f : {"motion_est.csv", "motion_true.csv", "image_est.pgm", "image_init.pgm", "image_true.pgm"})
    CHECK(slurp(ta / f) == slurp(tb / f));
  CHECK(fs::exists(c.out_dir / "summary.csv"));
  CHECK(slurp(c.out_dir / "config.txt").find("max_outer=2\n") != std::string::npos);
  CHECK(b.summary.mean_relerr_x == a.summary.mean_relerr_x);
}
