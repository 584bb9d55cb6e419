#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lap/models.hpp"
#include "lap/solvers.hpp"

namespace lap {

enum class ProblemKind { sr2d, sr3d, mri };
enum class Scale { desk, paper };

const char* to_string(ProblemKind p);
const char* to_string(Scale s);
const char* to_string(Regularizer r);

/// Parsers for the CLI spellings; throw std::invalid_argument on unknown names.
ProblemKind parse_problem(const std::string& s);
Scale parse_scale(const std::string& s);
Method parse_method(const std::string& s);
Regularizer parse_regularizer(const std::string& s);

struct ExperimentConfig {
  ProblemKind problem = ProblemKind::sr2d;
  Method solver = Method::lap;
  Regularizer regularizer = Regularizer::grad;
  double alpha = 0.01;
  double noise = 0.02;
  std::uint64_t seed = 7;
  int trials = 1;
  Scale scale = Scale::desk;
  std::filesystem::path out_dir;  // empty: no files are written
  /// Debug: start the solver at the true image and motion.
  bool start_at_truth = false;
  std::optional<int> max_outer;

  /// Throws std::invalid_argument for negative noise or alpha, or trials < 1.
  void validate() const;
};

/// A generated problem instance together with its starting point.
template <class Scalar>
struct ProblemInstance {
  CoupledProblem<Scalar> problem;
  Vec<Scalar> x0;
  VecR w0;
};

ProblemInstance<double> make_superres_instance(const ExperimentConfig& config, int trial);
ProblemInstance<Complex> make_mri_instance(const ExperimentConfig& config, int trial);

/// Solver settings used for a configuration (iteration caps, inner solves).
SolverConfig solver_config_for(const ExperimentConfig& config);

struct RelativeErrors {
  double x = 0.0;
  double w = 0.0;
};

/// ||x - x*|| / ||x*|| and ||w - w*|| / ||w*||; throws std::invalid_argument
/// for a zero-norm truth.
template <class Scalar>
RelativeErrors relative_errors(const Vec<Scalar>& x, const VecR& w, const Vec<Scalar>& truth_x, const VecR& truth_w);

struct TrialResult {
  int trial = 0;
  bool ok = false;
  std::string error;
  Termination termination = Termination::max_iters;
  std::string diagnostic;
  int iterations = 0;
  double initial_relerr_x = 0.0;
  double initial_relerr_w = 0.0;
  double relerr_x = 0.0;
  double relerr_w = 0.0;
  long matvecs = 0;
  double time_s = 0.0;
  std::vector<IterationRecord> history;
};

struct SummaryRow {
  std::string problem;
  std::string solver;
  std::string regularizer;
  double noise = 0.0;
  int trials = 0;  // successful trials entering the means
  int failed = 0;
  double mean_iters = 0.0;
  double mean_relerr_x = 0.0;
  double mean_relerr_w = 0.0;
  double mean_matvecs = 0.0;
  double mean_time_s = 0.0;
};

struct ExperimentResult {
  SummaryRow summary;
  std::vector<TrialResult> trials;
};

/// Runs all trials (trial t uses sub-seed seed ^ t) and, when out_dir is set,
/// writes per-trial artifacts plus summary.csv and config.txt.
ExperimentResult run_experiment(const ExperimentConfig& config);

SummaryRow summarize(const ExperimentConfig& config, const std::vector<TrialResult>& trials);

// ---------------------------------------------------------------------------
// Artifacts

inline constexpr const char* kConvergenceHeader = "iter,objective,data_misfit,relerr_x,relerr_w,matvecs,alpha,eta,time_s";

/// Throws std::invalid_argument for an empty history, std::runtime_error on
/// I/O failure.
void write_convergence_csv(const std::filesystem::path& path, const std::vector<IterationRecord>& history);
std::vector<IterationRecord> read_convergence_csv(const std::filesystem::path& path);

/// Binary 8-bit PGM of a width x height image stored x-fastest. Values are
/// mapped by floor(255 v + 0.5) after clamping v to [0, 1].
void write_pgm(const std::filesystem::path& path, const VecR& values, Index width, Index height);

/// Image as displayable real values: the values themselves, or the modulus.
template <class Scalar>
VecR display_values(const Vec<Scalar>& x);

/// Middle slice along the last axis of a 3D image (the image itself in 2D).
VecR mid_slice(const Grid& grid, const VecR& values);

/// Raw little-endian float32 dump plus a "<path>.txt" sidecar with the shape.
void write_raw_volume(const std::filesystem::path& path, const Grid& grid, const VecR& values);

/// One line per frame, q comma-separated parameters.
void write_motion_csv(const std::filesystem::path& path, const VecR& w, int q);

void write_config(const std::filesystem::path& path, const ExperimentConfig& config);

inline constexpr const char* kSummaryHeader =
    "problem,solver,regularizer,noise,trials,failed,mean_iters,mean_relerr_x,mean_relerr_w,mean_matvecs,mean_time_s";

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Fixed-width comparison table in the layout of the paper's result tables.
std::string format_table(const std::vector<SummaryRow>& rows);

}  // namespace lap
