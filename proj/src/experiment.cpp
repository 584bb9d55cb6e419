#include "lap/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lap {

namespace fs = std::filesystem;

namespace {

// Motion draws. Super-resolution: +-5 degrees, +-2 coarse cells (in fine cells).
constexpr double kSrMaxAngle = 5.0 * std::numbers::pi / 180.0;
constexpr double kSrMaxShift = 2.0 * 4.0;
constexpr double kMriMaxAngle = 0.03;
constexpr double kMriMaxShift = 1.0;

struct SrDims {
  std::vector<Index> fine;
  std::vector<Index> factor;
  Index frames;
};

SrDims superres_dims(const ExperimentConfig& c) {
  if (c.problem == ProblemKind::sr2d) return {{128, 128}, {4, 4}, 32};
  if (c.scale == Scale::paper) return {{160, 96, 144}, {4, 4, 4}, 128};
  return {{80, 48, 72}, {4, 4, 4}, 64};
}

/// Unit-size cells over [0, cells] per axis.
Grid unit_grid(const std::vector<Index>& cells) {
  std::vector<double> lo(cells.size(), 0.0), hi(cells.size());
  for (std::size_t a = 0; a < cells.size(); ++a) hi[a] = static_cast<double>(cells[a]);
  return Grid(cells, lo, hi);
}

std::uint64_t trial_seed(const ExperimentConfig& c, int trial) { return c.seed ^ static_cast<std::uint64_t>(trial); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void check_written(const std::ofstream& out, const fs::path& path) {
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

template <class Scalar>
TrialResult run_trial(const ExperimentConfig& config, int trial, ProblemInstance<Scalar> inst) {
  TrialResult out;
  out.trial = trial;
  const auto& prob = inst.problem;
  const RelativeErrors init = relative_errors(inst.x0, inst.w0, *prob.truth_x, *prob.truth_w);
  out.initial_relerr_x = init.x;
  out.initial_relerr_w = init.w;

  const auto start = std::chrono::steady_clock::now();
  const SolveReport<Scalar> report = solve(prob, inst.x0, inst.w0, solver_config_for(config));
  out.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.termination = report.termination;
  out.diagnostic = report.diagnostic;
  out.history = report.history;
  out.iterations = report.history.back().iter;
  out.matvecs = report.history.back().matvecs_cumulative;
  const RelativeErrors fin = relative_errors(report.final_x, report.final_w, *prob.truth_x, *prob.truth_w);
  out.relerr_x = fin.x;
  out.relerr_w = fin.w;
  out.ok = report.termination != Termination::rank_deficient_Jw;
  if (!out.ok) out.error = report.diagnostic;

  if (!config.out_dir.empty()) {
    char name[32];
    std::snprintf(name, sizeof name, "trial_%02d", trial);
    const fs::path dir = config.out_dir / name;
    write_convergence_csv(dir / "convergence.csv", report.history);
    write_motion_csv(dir / "motion_true.csv", *prob.truth_w, prob.q());
    write_motion_csv(dir / "motion_est.csv", report.final_w, prob.q());
    const Grid& g = prob.grid;
    const Index w = g.cells(0), h = g.cells(1);
    write_pgm(dir / "image_true.pgm", mid_slice(g, display_values<Scalar>(*prob.truth_x)), w, h);
    write_pgm(dir / "image_init.pgm", mid_slice(g, display_values<Scalar>(inst.x0)), w, h);
    write_pgm(dir / "image_est.pgm", mid_slice(g, display_values<Scalar>(report.final_x)), w, h);
    if (g.dim() == 3) write_raw_volume(dir / "image_est.raw", g, display_values<Scalar>(report.final_x));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(ProblemKind p) {
  switch (p) {
    case ProblemKind::sr2d: return "sr2d";
    case ProblemKind::sr3d: return "sr3d";
    case ProblemKind::mri: return "mri";
  }
  return "?";
}

const char* to_string(Scale s) { return s == Scale::desk ? "desk" : "paper"; }

const char* to_string(Regularizer r) {
  switch (r) {
    case Regularizer::grad: return "grad";
    case Regularizer::identity: return "identity";
    case Regularizer::hybrid: return "hybrid";
  }
  return "?";
}

ProblemKind parse_problem(const std::string& s) {
  if (s == "sr2d") return ProblemKind::sr2d;
  if (s == "sr3d") return ProblemKind::sr3d;
  if (s == "mri") return ProblemKind::mri;
  throw std::invalid_argument("unknown problem '" + s + "'");
}

Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw std::invalid_argument("unknown scale '" + s + "'");
}

Method parse_method(const std::string& s) {
  if (s == "lap") return Method::lap;
  if (s == "varpro") return Method::varpro;
  if (s == "bcd") return Method::bcd;
  throw std::invalid_argument("unknown solver '" + s + "'");
}

Regularizer parse_regularizer(const std::string& s) {
  if (s == "grad") return Regularizer::grad;
  if (s == "identity") return Regularizer::identity;
  if (s == "hybrid") return Regularizer::hybrid;
  throw std::invalid_argument("unknown regularizer '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (!(noise >= 0.0)) throw std::invalid_argument("noise must be nonnegative");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be nonnegative");
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  if (max_outer && *max_outer < 0) throw std::invalid_argument("max_outer must be nonnegative");
}

SolverConfig solver_config_for(const ExperimentConfig& c) {
  SolverConfig s;
  s.method = c.solver;
  s.max_outer = c.max_outer.value_or(c.problem == ProblemKind::mri ? 200 : 50);
  // The image systems use the LSQR tolerance 1e-2 in both regularization modes.
  s.hybrid.atol = s.lsqr.atol;
  s.hybrid.btol = s.lsqr.btol;
  switch (c.problem) {
    case ProblemKind::sr2d: s.varpro_inner = {true, 20, 1e-8, 100}; break;
    case ProblemKind::sr3d: s.varpro_inner = {true, 50, 1e-8, 100}; break;
    case ProblemKind::mri: s.varpro_inner = {false, 20, 1e-8, 100}; break;
  }
  return s;
}

ProblemInstance<double> make_superres_instance(const ExperimentConfig& config, int trial) {
  if (config.problem == ProblemKind::mri) throw std::invalid_argument("make_superres_instance: not a super-resolution config");
  config.validate();
  const SrDims dims = superres_dims(config);
  const SuperResModel model = make_superres_model(unit_grid(dims.fine), dims.factor, dims.frames);
  const int dim = model.fine.dim();
  const std::uint64_t seed = trial_seed(config, trial);

  auto phantom_rng = make_rng(seed, trial, "phantom");
  VecR truth_x = ellipse_phantom(model.fine, phantom_rng);
  auto motion_rng = make_rng(seed, trial, "motion");
  VecR truth_w = random_motion(dim, dims.frames, kSrMaxAngle, kSrMaxShift, motion_rng);
  truth_w.head(rigid_param_count(dim)).setZero();  // frame 0 is the registration reference

  ProblemInstance<double> inst;
  auto& p = inst.problem;
  p.grid = model.fine;
  const LinearMap<double> K = block_average_operator(model);
  p.frame_ops.assign(static_cast<std::size_t>(dims.frames), K);
  auto noise_rng = make_rng(seed, trial, "noise");
  auto sim = simulate_data<double>(truth_x, truth_w, model.fine, p.frame_ops, NoiseScaling::per_frame_l2, config.noise,
                                   noise_rng);
  p.frame_data = std::move(sim.noisy);
  p.regularizer = config.regularizer;
  p.alpha = config.alpha;
  p.bounds_x = Bounds{0.0, 1.0};
  p.truth_x = truth_x;
  p.truth_w = truth_w;
  p.validate();

  if (config.start_at_truth) {
    inst.x0 = truth_x;
    inst.w0 = truth_w;
  } else {
    inst.w0 = register_frames_init(p.frame_data, model).flatten();
    inst.x0 = initial_image(inst.w0, p);
  }
  return inst;
}

ProblemInstance<Complex> make_mri_instance(const ExperimentConfig& config, int trial) {
  if (config.problem != ProblemKind::mri) throw std::invalid_argument("make_mri_instance: not an MRI config");
  config.validate();
  constexpr Index kCells = 128, kCoils = 32, kFrames = 16;
  const MriModel model = make_mri_model(unit_grid({kCells, kCells}), kCoils, kFrames);
  const std::uint64_t seed = trial_seed(config, trial);

  auto phantom_rng = make_rng(seed, trial, "phantom");
  VecC truth_x = complex_phantom(model.grid, phantom_rng);
  auto motion_rng = make_rng(seed, trial, "motion");
  VecR truth_w = random_motion(2, kFrames, kMriMaxAngle, kMriMaxShift, motion_rng);
  // w = 0 is the start, so the truth is centered per parameter.
  const int q = rigid_param_count(2);
  for (int j = 0; j < q; ++j) {
    double mean = 0.0;
    for (Index k = 0; k < kFrames; ++k) mean += truth_w[k * q + j];
    mean /= static_cast<double>(kFrames);
    for (Index k = 0; k < kFrames; ++k) truth_w[k * q + j] -= mean;
  }

  ProblemInstance<Complex> inst;
  auto& p = inst.problem;
  p.grid = model.grid;
  for (Index k = 0; k < kFrames; ++k) p.frame_ops.push_back(mri_frame_operator(model, k));
  auto noise_rng = make_rng(seed, trial, "noise");
  auto sim = simulate_data<Complex>(truth_x, truth_w, model.grid, p.frame_ops, NoiseScaling::global_inf, config.noise,
                                    noise_rng);
  p.frame_data = std::move(sim.noisy);
  p.regularizer = config.regularizer;
  p.alpha = config.alpha;
  p.truth_x = truth_x;
  p.truth_w = truth_w;
  p.validate();

  if (config.start_at_truth) {
    inst.x0 = truth_x;
    inst.w0 = truth_w;
  } else {
    inst.w0 = VecR::Zero(p.p());
    inst.x0 = initial_image(inst.w0, p);
  }
  return inst;
}

template <class Scalar>
RelativeErrors relative_errors(const Vec<Scalar>& x, const VecR& w, const Vec<Scalar>& truth_x, const VecR& truth_w) {
  return {relative_error<Scalar>(x, truth_x), relative_error<double>(w, truth_w)};
}

template RelativeErrors relative_errors<double>(const VecR&, const VecR&, const VecR&, const VecR&);
template RelativeErrors relative_errors<Complex>(const VecC&, const VecR&, const VecC&, const VecR&);

SummaryRow summarize(const ExperimentConfig& config, const std::vector<TrialResult>& trials) {
  SummaryRow row;
  row.problem = to_string(config.problem);
  row.solver = to_string(config.solver);
  row.regularizer = to_string(config.regularizer);
  row.noise = config.noise;
  for (const auto& t : trials) {
    if (!t.ok) {
      ++row.failed;
      continue;
    }
    ++row.trials;
    row.mean_iters += t.iterations;
    row.mean_relerr_x += t.relerr_x;
    row.mean_relerr_w += t.relerr_w;
    row.mean_matvecs += static_cast<double>(t.matvecs);
    row.mean_time_s += t.time_s;
  }
  if (row.trials > 0) {
    const double n = row.trials;
    row.mean_iters /= n;
    row.mean_relerr_x /= n;
    row.mean_relerr_w /= n;
    row.mean_matvecs /= n;
    row.mean_time_s /= n;
  }
  return row;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult result;
  if (!config.out_dir.empty()) write_config(config.out_dir / "config.txt", config);
  for (int t = 0; t < config.trials; ++t) {
    TrialResult tr;
    try {
      if (config.problem == ProblemKind::mri)
        tr = run_trial<Complex>(config, t, make_mri_instance(config, t));
      else
        tr = run_trial<double>(config, t, make_superres_instance(config, t));
    } catch (const std::exception& e) {
      tr = TrialResult{};
      tr.trial = t;
      tr.ok = false;
      tr.error = e.what();
    }
    result.trials.push_back(std::move(tr));
  }
  result.summary = summarize(config, result.trials);
  if (!config.out_dir.empty()) write_summary_csv(config.out_dir / "summary.csv", {result.summary});
  return result;
}

// ---------------------------------------------------------------------------

void write_convergence_csv(const fs::path& path, const std::vector<IterationRecord>& history) {
  if (history.empty()) throw std::invalid_argument("write_convergence_csv: empty history");
  auto out = open_out(path);
  out << kConvergenceHeader << '\n';
  for (const auto& r : history) {
    out << r.iter << ',' << fmt(r.objective) << ',' << fmt(r.data_misfit) << ',' << fmt(r.relerr_x) << ','
        << fmt(r.relerr_w) << ',' << r.matvecs_cumulative << ',' << fmt(r.alpha_used) << ',' << fmt(r.line_search_eta)
        << ',' << fmt(r.wall_time_s) << '\n';
  }
  check_written(out, path);
}

std::vector<IterationRecord> read_convergence_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kConvergenceHeader)
    throw std::runtime_error("unexpected convergence header in " + path.string());
  std::vector<IterationRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw std::runtime_error("malformed row in " + path.string() + ": " + line);
    IterationRecord r;
    r.iter = std::stoi(f[0]);
    r.objective = parse_double(f[1]);
    r.data_misfit = parse_double(f[2]);
    r.relerr_x = parse_double(f[3]);
    r.relerr_w = parse_double(f[4]);
    r.matvecs_cumulative = std::stol(f[5]);
    r.alpha_used = parse_double(f[6]);
    r.line_search_eta = parse_double(f[7]);
    r.wall_time_s = parse_double(f[8]);
    out.push_back(r);
  }
  return out;
}

void write_pgm(const fs::path& path, const VecR& values, Index width, Index height) {
  if (width < 1 || height < 1 || values.size() != width * height)
    throw std::invalid_argument("write_pgm: size mismatch for " + path.string());
  auto out = open_out(path, true);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  // PGM rows run top to bottom; row r holds image row (height - 1 - r).
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width * height));
  for (Index r = 0; r < height; ++r)
    for (Index c = 0; c < width; ++c) {
      const double v = std::clamp(values[(height - 1 - r) * width + c], 0.0, 1.0);
      bytes[static_cast<std::size_t>(r * width + c)] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
    }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check_written(out, path);
}

template <class Scalar>
VecR display_values(const Vec<Scalar>& x) {
  if constexpr (is_complex_v<Scalar>)
    return x.cwiseAbs();
  else
    return x;
}

template VecR display_values<double>(const VecR&);
template VecR display_values<Complex>(const VecC&);

VecR mid_slice(const Grid& grid, const VecR& values) {
  if (values.size() != grid.size()) throw std::invalid_argument("mid_slice: size mismatch");
  if (grid.dim() == 2) return values;
  const Index plane = grid.cells(0) * grid.cells(1);
  return values.segment(grid.cells(2) / 2 * plane, plane);
}

void write_raw_volume(const fs::path& path, const Grid& grid, const VecR& values) {
  if (values.size() != grid.size()) throw std::invalid_argument("write_raw_volume: size mismatch");
  {
    auto out = open_out(path, true);
    for (Index i = 0; i < values.size(); ++i) {
      const float f = static_cast<float>(values[i]);
      unsigned char b[4];
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
    check_written(out, path);
  }
  fs::path side = path;
  side += ".txt";
  auto out = open_out(side);
  out << "format=float32le\norder=axis0-fastest\nshape=";
  for (int a = 0; a < grid.dim(); ++a) out << (a ? "x" : "") << grid.cells(a);
  out << '\n';
  check_written(out, side);
}

void write_motion_csv(const fs::path& path, const VecR& w, int q) {
  if (q < 1 || w.size() % q != 0) throw std::invalid_argument("write_motion_csv: length not a multiple of q");
  auto out = open_out(path);
  for (Index k = 0; k < w.size() / q; ++k) {
    for (int j = 0; j < q; ++j) out << (j ? "," : "") << fmt(w[k * q + j]);
    out << '\n';
  }
  check_written(out, path);
}

void write_config(const fs::path& path, const ExperimentConfig& c) {
  auto out = open_out(path);
  out << "problem=" << to_string(c.problem) << '\n'
      << "solver=" << to_string(c.solver) << '\n'
      << "regularizer=" << to_string(c.regularizer) << '\n'
      << "alpha=" << fmt(c.alpha) << '\n'
      << "noise=" << fmt(c.noise) << '\n'
      << "seed=" << c.seed << '\n'
      << "trials=" << c.trials << '\n'
      << "scale=" << to_string(c.scale) << '\n'
      << "start_at_truth=" << (c.start_at_truth ? 1 : 0) << '\n'
      << "max_outer=" << solver_config_for(c).max_outer << '\n';
  check_written(out, path);
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  auto out = open_out(path);
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << r.problem << ',' << r.solver << ',' << r.regularizer << ',' << fmt(r.noise) << ',' << r.trials << ','
        << r.failed << ',' << fmt(r.mean_iters) << ',' << fmt(r.mean_relerr_x) << ',' << fmt(r.mean_relerr_w) << ','
        << fmt(r.mean_matvecs) << ',' << fmt(r.mean_time_s) << '\n';
  check_written(out, path);
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader)
    throw std::runtime_error("unexpected summary header in " + path.string());
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw std::runtime_error("malformed row in " + path.string() + ": " + line);
    SummaryRow r;
    r.problem = f[0];
    r.solver = f[1];
    r.regularizer = f[2];
    r.noise = parse_double(f[3]);
    r.trials = std::stoi(f[4]);
    r.failed = std::stoi(f[5]);
    r.mean_iters = parse_double(f[6]);
    r.mean_relerr_x = parse_double(f[7]);
    r.mean_relerr_w = parse_double(f[8]);
    r.mean_matvecs = parse_double(f[9]);
    r.mean_time_s = parse_double(f[10]);
    rows.push_back(r);
  }
  return rows;
}

std::string format_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "problem" << std::setw(8) << "noise" << std::setw(20) << "method" << std::right
     << std::setw(8) << "iters" << std::setw(12) << "relerr_x" << std::setw(12) << "relerr_w" << std::setw(12)
     << "matvecs" << std::setw(10) << "time_s" << std::setw(8) << "trials" << '\n';
  for (const auto& r : rows) {
    char noise[16], iters[16], ex[16], ew[16], mv[16], ts[16];
    std::snprintf(noise, sizeof noise, "%g%%", 100.0 * r.noise);
    std::snprintf(iters, sizeof iters, "%.1f", r.mean_iters);
    std::snprintf(ex, sizeof ex, "%.2e", r.mean_relerr_x);
    std::snprintf(ew, sizeof ew, "%.2e", r.mean_relerr_w);
    std::snprintf(mv, sizeof mv, "%.1f", r.mean_matvecs);
    std::snprintf(ts, sizeof ts, "%.1f", r.mean_time_s);
    os << std::left << std::setw(8) << r.problem << std::setw(8) << noise << std::setw(20)
       << (r.solver + " + " + r.regularizer) << std::right << std::setw(8) << iters << std::setw(12) << ex
       << std::setw(12) << ew << std::setw(12) << mv << std::setw(10) << ts << std::setw(8) << r.trials << '\n';
  }
  return os.str();
}

}  // namespace lap
