#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "lap/fourier.hpp"
#include "lap/geometry.hpp"
#include "lap/krylov.hpp"
#include "lap/linops.hpp"

namespace lap {

enum class Regularizer { grad, identity, hybrid };

/// Uniform elementwise bounds [lo, hi].
struct Bounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

/// Independent stream for a (seed, trial, purpose) triple.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t trial, std::string_view purpose);

// ---------------------------------------------------------------------------
// Imaging operators

struct SuperResModel {
  Grid fine;
  Grid coarse;
  std::vector<Index> factor;
  Index n_frames = 0;
};

/// Coarse grid over the same box with cells = fine cells / factor. Throws
/// std::invalid_argument when a factor does not divide the fine cell count.
SuperResModel make_superres_model(const Grid& fine, std::vector<Index> factor, Index n_frames);

/// Averaging matrix from the fine to the coarse grid.
SparseMatrix block_average_matrix(const SuperResModel& model);
LinearMap<double> block_average_operator(const SuperResModel& model);

struct MriModel {
  Grid grid;
  Index n_coils = 0;
  MatC sensitivities;                     // n_coils x n
  std::shared_ptr<const MatC> coil_maps;  // n x n_coils, shared by the frame operators
  std::vector<std::vector<Index>> masks;  // selected ky rows per frame
  std::shared_ptr<const CartesianFft> fft;

  Index n_frames() const { return static_cast<Index>(masks.size()); }
  /// Boolean view of mask k over the ny Fourier rows.
  std::vector<bool> row_mask(Index k) const;
};

/// Smooth normalized synthetic coil sensitivities (n_coils x n) with
/// sum_j |S_j|^2 = 1 at every pixel.
MatC synth_coils(const Grid& grid, Index n_coils);

/// Interleaved Cartesian line masks: frame k gets rows {k, k+N, k+2N, ...}.
/// Throws std::invalid_argument unless N divides the number of rows.
std::vector<std::vector<Index>> sampling_masks(const Grid& grid, Index n_frames);

MriModel make_mri_model(const Grid& grid, Index n_coils, Index n_frames);

/// K_k = A_k F S: coil weighting, unitary 2D DFT, row selection. Output is
/// coil-major, then selected row, then kx.
LinearMap<Complex> mri_frame_operator(const MriModel& model, Index k);

// ---------------------------------------------------------------------------
// Coupled problem

/// min_x,w 1/2 ||K T(w) x - d||^2 + alpha/2 ||L x||^2 over box constraints.
template <class Scalar>
struct CoupledProblem {
  Grid grid;
  std::vector<LinearMap<Scalar>> frame_ops;  // K_k
  std::vector<Vec<Scalar>> frame_data;       // d_k
  Regularizer regularizer = Regularizer::grad;
  double alpha = 0.01;
  std::optional<Bounds> bounds_x;
  std::optional<Bounds> bounds_w;
  std::optional<Vec<Scalar>> truth_x;
  std::optional<VecR> truth_w;

  Index n_frames() const { return static_cast<Index>(frame_ops.size()); }
  Index n() const { return grid.size(); }
  int q() const { return rigid_param_count(grid.dim()); }
  Index p() const { return q() * n_frames(); }
  Index m() const;
  Index frame_offset(Index k) const;
  Vec<Scalar> data() const;
  LinearMap<Scalar> imaging_op() const { return block_diagonal(frame_ops); }
  /// L: forward-difference gradient for Regularizer::grad, identity otherwise.
  LinearMap<Scalar> regularization_op() const;
  /// Validates sizes and bounds; throws std::invalid_argument.
  void validate() const;
};

/// Per-frame interpolation matrices T(y(w_k)).
std::vector<SparseMatrix> frame_transforms(const Grid& grid, const VecR& w);

/// K T(w) x.
template <class Scalar>
Vec<Scalar> forward(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w);

template <class Scalar>
struct ObjectiveEval {
  Vec<Scalar> residual;  // K T(w) x - d
  double misfit = 0.0;   // 1/2 ||r||^2
  double phi = 0.0;      // misfit + alpha/2 ||L x||^2 (alpha = 0 in hybrid mode)
};

template <class Scalar>
ObjectiveEval<Scalar> residual_and_objective(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x,
                                             const VecR& w);

/// J_x = K T(w) as a matrix-free map, optionally instrumented.
template <class Scalar>
LinearMap<Scalar> image_jacobian(const CoupledProblem<Scalar>& problem, const VecR& w,
                                 std::shared_ptr<MatvecCounter> counter = nullptr);

template <class Scalar>
Vec<Scalar> apply_Jx(const CoupledProblem<Scalar>& problem, const VecR& w, const Vec<Scalar>& v,
                     std::shared_ptr<MatvecCounter> counter = nullptr);
template <class Scalar>
Vec<Scalar> apply_Jx_adjoint(const CoupledProblem<Scalar>& problem, const VecR& w, const Vec<Scalar>& u,
                             std::shared_ptr<MatvecCounter> counter = nullptr);

/// Block-diagonal motion Jacobian: block k = K_k d(T(y(w_k)) x)/dw_k.
template <class Scalar>
struct JwBlocks {
  std::vector<Mat<Scalar>> blocks;  // m_k x q
  std::vector<RealQr<Scalar>> qr;   // filled by factor()

  Index n_frames() const { return static_cast<Index>(blocks.size()); }
  /// Thin QR of every block over the reals. Returns false on rank deficiency.
  bool factor();
  /// J_w dw.
  Vec<Scalar> apply(const VecR& dw) const;
  /// Re(J_w^H u).
  VecR adjoint(const Vec<Scalar>& u) const;
  /// Keeps only the listed columns of each block (motion inactive set).
  JwBlocks restrict_columns(const std::vector<bool>& keep_w) const;
};

template <class Scalar>
JwBlocks<Scalar> assemble_Jw(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w);

// ---------------------------------------------------------------------------
// Data generation and initialization

enum class NoiseScaling { per_frame_l2, global_inf };

template <class Scalar>
struct SimulatedData {
  std::vector<Vec<Scalar>> clean;
  std::vector<Vec<Scalar>> noisy;
};

/// Clean frames K_k T(y(w_k)) x plus Gaussian noise. per_frame_l2 scales each
/// frame's noise to noise_frac ||clean_k||; global_inf scales the stacked
/// complex noise to noise_frac ||clean||_inf.
template <class Scalar>
SimulatedData<Scalar> simulate_data(const Vec<Scalar>& truth, const VecR& motion, const Grid& grid,
                                    const std::vector<LinearMap<Scalar>>& frame_ops, NoiseScaling scaling,
                                    double noise_frac, std::mt19937_64& rng);

/// Uniform random rigid parameters: angles in +-max_angle, translations in
/// +-max_shift (domain units).
VecR random_motion(int dim, Index n_frames, double max_angle, double max_shift, std::mt19937_64& rng);

struct RegistrationOptions {
  int max_iters = 20;
  double step_tol = 1e-8;
  int search_cells = 2;  // integer translations in +-search_cells coarse cells seed Gauss-Newton
};

/// Registers every coarse frame onto frame 0 with Gauss-Newton; w_0 = 0.
/// Each frame starts from the best integer-cell translation found by search.
/// Frames whose registration fails to reduce the misfit fall back to zero.
MotionStack register_frames_init(const std::vector<VecR>& frames, const SuperResModel& model,
                                 const RegistrationOptions& opts = {});

/// Linear reconstruction at fixed motion w0 via Tikhonov + LSQR, or hybrid
/// LSQR for Regularizer::hybrid.
template <class Scalar>
Vec<Scalar> initial_image(const VecR& w0, const CoupledProblem<Scalar>& problem, const LsqrOptions& opts = {1e-2, 1e-2, 100});

// ---------------------------------------------------------------------------
// Phantoms

/// Piecewise-constant superposition of ellipses with values in [0, 1] and a
/// zero background, antialiased by supersampling.
VecR ellipse_phantom(const Grid& grid, std::mt19937_64& rng);
/// Ellipse magnitude with a smooth phase.
VecC complex_phantom(const Grid& grid, std::mt19937_64& rng);

}  // namespace lap
