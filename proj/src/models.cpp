#include "lap/models.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lap {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t trial, std::string_view purpose) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ splitmix64(trial + 0x632BE59BD9B4E019ULL));
  h = splitmix64(h ^ fnv1a(purpose));
  return std::mt19937_64(h);
}

// ---------------------------------------------------------------------------

SuperResModel make_superres_model(const Grid& fine, std::vector<Index> factor, Index n_frames) {
  if (static_cast<int>(factor.size()) != fine.dim()) throw std::invalid_argument("superres: factor dimension mismatch");
  if (n_frames < 1) throw std::invalid_argument("superres: need at least one frame");
  std::vector<Index> coarse_cells(fine.dim());
  std::vector<double> lo(fine.dim()), hi(fine.dim());
  for (int a = 0; a < fine.dim(); ++a) {
    if (factor[a] < 1 || fine.cells(a) % factor[a] != 0)
      throw std::invalid_argument("superres: factor does not divide fine cells on axis " + std::to_string(a));
    coarse_cells[a] = fine.cells(a) / factor[a];
    lo[a] = fine.lo(a);
    hi[a] = fine.hi(a);
  }
  return {fine, Grid(coarse_cells, lo, hi), std::move(factor), n_frames};
}

SparseMatrix block_average_matrix(const SuperResModel& model) {
  const Grid& fine = model.fine;
  const int d = fine.dim();
  double block = 1.0;
  for (auto f : model.factor) block *= static_cast<double>(f);
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(static_cast<std::size_t>(fine.size()));
  std::vector<Index> multi(d, 0);
  Index coarse_multi[3];
  for (Index i = 0; i < fine.size(); ++i) {
    for (int a = 0; a < d; ++a) coarse_multi[a] = multi[a] / model.factor[a];
    trip.emplace_back(static_cast<int>(model.coarse.linear_index(coarse_multi)), static_cast<int>(i), 1.0 / block);
    for (int a = 0; a < d; ++a) {
      if (++multi[a] < fine.cells(a)) break;
      multi[a] = 0;
    }
  }
  SparseMatrix K(model.coarse.size(), fine.size());
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  return K;
}

LinearMap<double> block_average_operator(const SuperResModel& model) {
  return sparse_map<double>(block_average_matrix(model));
}

// ---------------------------------------------------------------------------

std::vector<bool> MriModel::row_mask(Index k) const {
  std::vector<bool> mask(static_cast<std::size_t>(grid.cells(1)), false);
  for (Index r : masks.at(k)) mask[r] = true;
  return mask;
}

MatC synth_coils(const Grid& grid, Index n_coils) {
  if (n_coils < 1) throw std::invalid_argument("synth_coils: need at least one coil");
  if (grid.dim() != 2) throw std::invalid_argument("synth_coils: 2D grids only");
  const TransformedGrid pts = cell_centers(grid);
  const VecR c = grid.center();
  const double extent = std::min(grid.hi(0) - grid.lo(0), grid.hi(1) - grid.lo(1));
  const double radius = 0.45 * extent;
  const double width = 0.5 * extent;
  MatC S(n_coils, grid.size());
  for (Index j = 0; j < n_coils; ++j) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_coils);
    const double cx = c[0] + radius * std::cos(theta), cy = c[1] + radius * std::sin(theta);
    for (Index i = 0; i < grid.size(); ++i) {
      const double dx = pts.points(i, 0) - cx, dy = pts.points(i, 1) - cy;
      const double mag = std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
      const double ux = pts.points(i, 0) - c[0], uy = pts.points(i, 1) - c[1];
      const double phase = std::numbers::pi * (std::cos(theta) * ux + std::sin(theta) * uy) / extent;
      S(j, i) = std::polar(mag, phase);
    }
  }
  for (Index i = 0; i < grid.size(); ++i) S.col(i) /= S.col(i).norm();
  return S;
}

std::vector<std::vector<Index>> sampling_masks(const Grid& grid, Index n_frames) {
  const Index rows = grid.cells(1);
  if (n_frames < 1 || rows % n_frames != 0)
    throw std::invalid_argument("sampling_masks: frame count must divide the number of Fourier rows");
  std::vector<std::vector<Index>> masks(static_cast<std::size_t>(n_frames));
  for (Index k = 0; k < n_frames; ++k)
    for (Index r = k; r < rows; r += n_frames) masks[k].push_back(r);
  return masks;
}

MriModel make_mri_model(const Grid& grid, Index n_coils, Index n_frames) {
  MriModel model;
  model.grid = grid;
  model.n_coils = n_coils;
  model.sensitivities = synth_coils(grid, n_coils);
  model.coil_maps = std::make_shared<const MatC>(model.sensitivities.transpose());
  model.masks = sampling_masks(grid, n_frames);
  model.fft = std::make_shared<CartesianFft>(grid.cells(0), grid.cells(1));
  return model;
}

LinearMap<Complex> mri_frame_operator(const MriModel& model, Index k) {
  if (k < 0 || k >= model.n_frames()) throw std::invalid_argument("mri_frame_operator: frame index out of range");
  const Index n = model.grid.size();
  const Index nx = model.grid.cells(0);
  const auto rows = std::make_shared<const std::vector<Index>>(model.masks[k]);
  const auto sens = model.coil_maps ? model.coil_maps : std::make_shared<const MatC>(model.sensitivities.transpose());
  const auto fft = model.fft;
  const Index coils = model.n_coils;
  const Index per_coil = static_cast<Index>(rows->size()) * nx;
  auto fwd = [=](const VecC& x) {
    VecC out(coils * per_coil);
    for (Index j = 0; j < coils; ++j) {
      const VecC weighted = sens->col(j).cwiseProduct(x);
      out.segment(j * per_coil, per_coil) = fft->forward_rows(weighted, *rows);
    }
    return out;
  };
  auto adj = [=](const VecC& u) {
    VecC out = VecC::Zero(n);
    for (Index j = 0; j < coils; ++j)
      out += sens->col(j).conjugate().cwiseProduct(fft->adjoint_rows(u.segment(j * per_coil, per_coil), *rows));
    return out;
  };
  return {coils * per_coil, n, fwd, adj};
}

// ---------------------------------------------------------------------------

template <class Scalar>
Index CoupledProblem<Scalar>::m() const {
  Index total = 0;
  for (const auto& op : frame_ops) total += op.rows();
  return total;
}

template <class Scalar>
Index CoupledProblem<Scalar>::frame_offset(Index k) const {
  Index off = 0;
  for (Index j = 0; j < k; ++j) off += frame_ops[j].rows();
  return off;
}

template <class Scalar>
Vec<Scalar> CoupledProblem<Scalar>::data() const {
  Vec<Scalar> d(m());
  for (Index k = 0; k < n_frames(); ++k) d.segment(frame_offset(k), frame_ops[k].rows()) = frame_data[k];
  return d;
}

template <class Scalar>
LinearMap<Scalar> CoupledProblem<Scalar>::regularization_op() const {
  if (regularizer == Regularizer::grad) return grad_operator<Scalar>(grid);
  return identity_map<Scalar>(n());
}

template <class Scalar>
void CoupledProblem<Scalar>::validate() const {
  if (frame_ops.empty()) throw std::invalid_argument("CoupledProblem: no frames");
  if (frame_data.size() != frame_ops.size()) throw std::invalid_argument("CoupledProblem: frame data count mismatch");
  for (Index k = 0; k < n_frames(); ++k) {
    if (frame_ops[k].cols() != n()) throw std::invalid_argument("CoupledProblem: imaging operator width mismatch");
    if (frame_data[k].size() != frame_ops[k].rows())
      throw std::invalid_argument("CoupledProblem: frame data length mismatch at frame " + std::to_string(k));
  }
  for (const auto& b : {bounds_x, bounds_w})
    if (b && !(b->lo <= b->hi)) throw std::invalid_argument("CoupledProblem: empty bound interval");
  if (alpha < 0.0) throw std::invalid_argument("CoupledProblem: negative alpha");
  if (truth_x && truth_x->size() != n()) throw std::invalid_argument("CoupledProblem: truth image size mismatch");
  if (truth_w && truth_w->size() != p()) throw std::invalid_argument("CoupledProblem: truth motion size mismatch");
}

std::vector<SparseMatrix> frame_transforms(const Grid& grid, const VecR& w) {
  const int q = rigid_param_count(grid.dim());
  if (w.size() % q != 0) throw std::invalid_argument("frame_transforms: motion length not a multiple of q");
  std::vector<SparseMatrix> out;
  out.reserve(static_cast<std::size_t>(w.size() / q));
  for (Index k = 0; k < w.size() / q; ++k)
    out.push_back(interp_matrix(rigid_apply(RigidMotion::from_params(grid.dim(), w.segment(k * q, q)), grid), grid));
  return out;
}

template <class Scalar>
Vec<Scalar> forward(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w) {
  if (w.size() != problem.p()) throw std::invalid_argument("forward: motion length mismatch");
  const auto T = frame_transforms(problem.grid, w);
  Vec<Scalar> out(problem.m());
  Index off = 0;
  for (Index k = 0; k < problem.n_frames(); ++k) {
    const auto& K = problem.frame_ops[k];
    out.segment(off, K.rows()) = K.apply(sparse_times<Scalar>(T[k], x));
    off += K.rows();
  }
  return out;
}

template <class Scalar>
ObjectiveEval<Scalar> residual_and_objective(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x,
                                             const VecR& w) {
  ObjectiveEval<Scalar> ev;
  ev.residual = forward(problem, x, w) - problem.data();
  ev.misfit = 0.5 * ev.residual.squaredNorm();
  ev.phi = ev.misfit;
  if (problem.regularizer != Regularizer::hybrid && problem.alpha > 0.0)
    ev.phi += 0.5 * problem.alpha * problem.regularization_op().apply(x).squaredNorm();
  return ev;
}

template <class Scalar>
LinearMap<Scalar> image_jacobian(const CoupledProblem<Scalar>& problem, const VecR& w,
                                 std::shared_ptr<MatvecCounter> counter) {
  if (w.size() != problem.p()) throw std::invalid_argument("image_jacobian: motion length mismatch");
  auto T = std::make_shared<const std::vector<SparseMatrix>>(frame_transforms(problem.grid, w));
  auto ops = std::make_shared<const std::vector<LinearMap<Scalar>>>(problem.frame_ops);
  const Index m = problem.m(), n = problem.n();
  auto fwd = [T, ops, m](const Vec<Scalar>& v) {
    Vec<Scalar> out(m);
    Index off = 0;
    for (std::size_t k = 0; k < ops->size(); ++k) {
      const auto& K = (*ops)[k];
      out.segment(off, K.rows()) = K.apply(sparse_times<Scalar>((*T)[k], v));
      off += K.rows();
    }
    return out;
  };
  auto adj = [T, ops, n](const Vec<Scalar>& u) {
    Vec<Scalar> out = Vec<Scalar>::Zero(n);
    Index off = 0;
    for (std::size_t k = 0; k < ops->size(); ++k) {
      const auto& K = (*ops)[k];
      out += sparse_adjoint_times<Scalar>((*T)[k], K.adjoint(u.segment(off, K.rows())));
      off += K.rows();
    }
    return out;
  };
  LinearMap<Scalar> J(m, n, fwd, adj);
  return counter ? counting(J, std::move(counter)) : J;
}

template <class Scalar>
Vec<Scalar> apply_Jx(const CoupledProblem<Scalar>& problem, const VecR& w, const Vec<Scalar>& v,
                     std::shared_ptr<MatvecCounter> counter) {
  return image_jacobian(problem, w, std::move(counter)).apply(v);
}

template <class Scalar>
Vec<Scalar> apply_Jx_adjoint(const CoupledProblem<Scalar>& problem, const VecR& w, const Vec<Scalar>& u,
                             std::shared_ptr<MatvecCounter> counter) {
  return image_jacobian(problem, w, std::move(counter)).adjoint(u);
}

template <class Scalar>
bool JwBlocks<Scalar>::factor() {
  qr.clear();
  bool ok = true;
  for (const auto& b : blocks) {
    qr.push_back(thin_qr_over_reals<Scalar>(b));
    ok = ok && !qr.back().rank_deficient;
  }
  return ok;
}

template <class Scalar>
Vec<Scalar> JwBlocks<Scalar>::apply(const VecR& dw) const {
  Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  if (dw.size() != cols) throw std::invalid_argument("JwBlocks::apply: length mismatch");
  Vec<Scalar> out(rows);
  Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.segment(r, b.rows()) = b * dw.segment(c, b.cols()).template cast<Scalar>();
    r += b.rows();
    c += b.cols();
  }
  return out;
}

template <class Scalar>
VecR JwBlocks<Scalar>::adjoint(const Vec<Scalar>& u) const {
  Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  VecR out(cols);
  Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.segment(c, b.cols()) = (b.adjoint() * u.segment(r, b.rows())).real();
    r += b.rows();
    c += b.cols();
  }
  return out;
}

template <class Scalar>
JwBlocks<Scalar> JwBlocks<Scalar>::restrict_columns(const std::vector<bool>& keep_w) const {
  JwBlocks out;
  std::size_t idx = 0;
  for (const auto& b : blocks) {
    std::vector<Index> keep;
    for (Index j = 0; j < b.cols(); ++j, ++idx)
      if (keep_w.at(idx)) keep.push_back(j);
    Mat<Scalar> sub(b.rows(), static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) sub.col(static_cast<Index>(j)) = b.col(keep[j]);
    out.blocks.push_back(std::move(sub));
  }
  return out;
}

template <class Scalar>
JwBlocks<Scalar> assemble_Jw(const CoupledProblem<Scalar>& problem, const Vec<Scalar>& x, const VecR& w) {
  if (w.size() != problem.p()) throw std::invalid_argument("assemble_Jw: motion length mismatch");
  const int q = problem.q();
  JwBlocks<Scalar> out;
  for (Index k = 0; k < problem.n_frames(); ++k) {
    const auto motion = RigidMotion::from_params(problem.grid.dim(), w.segment(k * q, q));
    const Mat<Scalar> G = transformed_image_jacobian(x, motion, problem.grid);
    const auto& K = problem.frame_ops[k];
    Mat<Scalar> block(K.rows(), q);
    for (int j = 0; j < q; ++j) block.col(j) = K.apply(G.col(j));
    out.blocks.push_back(std::move(block));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class Scalar>
Vec<Scalar> standard_normal(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec<Scalar> v(n);
  for (Index i = 0; i < n; ++i) {
    if constexpr (is_complex_v<Scalar>) {
      const double re = normal(rng);
      const double im = normal(rng);
      v[i] = Scalar(re, im);
    } else {
      v[i] = normal(rng);
    }
  }
  return v;
}

}  // namespace

template <class Scalar>
SimulatedData<Scalar> simulate_data(const Vec<Scalar>& truth, const VecR& motion, const Grid& grid,
                                    const std::vector<LinearMap<Scalar>>& frame_ops, NoiseScaling scaling,
                                    double noise_frac, std::mt19937_64& rng) {
  if (noise_frac < 0.0) throw std::invalid_argument("simulate_data: negative noise fraction");
  const auto T = frame_transforms(grid, motion);
  if (T.size() != frame_ops.size()) throw std::invalid_argument("simulate_data: motion/frame count mismatch");
  SimulatedData<Scalar> out;
  for (std::size_t k = 0; k < frame_ops.size(); ++k)
    out.clean.push_back(frame_ops[k].apply(sparse_times<Scalar>(T[k], truth)));
  out.noisy = out.clean;
  if (noise_frac == 0.0) return out;
  if (scaling == NoiseScaling::per_frame_l2) {
    for (std::size_t k = 0; k < frame_ops.size(); ++k) {
      const Vec<Scalar> noise = standard_normal<Scalar>(out.clean[k].size(), rng);
      out.noisy[k] += (noise_frac * out.clean[k].norm() / noise.norm()) * noise;
    }
  } else {
    Index total = 0;
    double peak = 0.0;
    for (const auto& c : out.clean) {
      total += c.size();
      if (c.size() > 0) peak = std::max(peak, c.cwiseAbs().maxCoeff());
    }
    const Vec<Scalar> noise = standard_normal<Scalar>(total, rng);
    const double scale = noise_frac * peak / noise.norm();
    Index off = 0;
    for (auto& d : out.noisy) {
      d += scale * noise.segment(off, d.size());
      off += d.size();
    }
  }
  return out;
}

VecR random_motion(int dim, Index n_frames, double max_angle, double max_shift, std::mt19937_64& rng) {
  const int q = rigid_param_count(dim);
  const int n_angles = q - dim;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VecR w(q * n_frames);
  for (Index k = 0; k < n_frames; ++k) {
    for (int j = 0; j < n_angles; ++j) w[k * q + j] = max_angle * unit(rng);
    for (int a = 0; a < dim; ++a) w[k * q + n_angles + a] = max_shift * unit(rng);
  }
  return w;
}

MotionStack register_frames_init(const std::vector<VecR>& frames, const SuperResModel& model,
                                 const RegistrationOptions& opts) {
  if (frames.size() < 2) throw std::invalid_argument("register_frames_init: need at least two frames");
  const Grid& grid = model.coarse;
  const int dim = grid.dim();
  const int q = rigid_param_count(dim);
  const VecR& reference = frames.front();
  MotionStack out;
  out.frames.push_back(RigidMotion::identity(dim));

  auto misfit = [&](const VecR& w, const VecR& target) {
    const SparseMatrix T = interp_matrix(rigid_apply(RigidMotion::from_params(dim, w), grid), grid);
    return 0.5 * (T * reference - target).squaredNorm();
  };

  for (std::size_t k = 1; k < frames.size(); ++k) {
    const VecR& target = frames[k];
    VecR w = VecR::Zero(q);
    const double f0 = misfit(w, target);
    double f = f0;
    const int span = 2 * opts.search_cells + 1;
    Index n_shifts = 1;
    for (int a = 0; a < dim; ++a) n_shifts *= span;
    for (Index c = 0; c < n_shifts; ++c) {
      VecR trial = VecR::Zero(q);
      for (Index a = 0, rest = c; a < dim; ++a, rest /= span)
        trial[q - dim + a] = static_cast<double>(rest % span - opts.search_cells) * grid.cell_size(static_cast<int>(a));
      const double ft = misfit(trial, target);
      if (ft < f) {
        f = ft;
        w = trial;
      }
    }
    for (int it = 0; it < opts.max_iters; ++it) {
      const auto motion = RigidMotion::from_params(dim, w);
      const SparseMatrix T = interp_matrix(rigid_apply(motion, grid), grid);
      const VecR r = T * reference - target;
      const MatR J = transformed_image_jacobian<double>(reference, motion, grid);
      const VecR g = J.transpose() * r;
      Eigen::LDLT<MatR> ldlt(J.transpose() * J);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
      const VecR step = -ldlt.solve(g);
      if (!step.allFinite()) break;
      double eta = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 20; ++bt, eta *= 0.5) {
        const double trial = misfit(w + eta * step, target);
        if (trial <= f + 1e-4 * eta * g.dot(step)) {
          w += eta * step;
          f = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted || (eta * step).norm() < opts.step_tol) break;
    }
    if (!(f <= f0) || !w.allFinite()) {
      std::cerr << "warning: registration of frame " << k << " did not reduce the misfit; using zero motion\n";
      w.setZero();
    }
    out.frames.push_back(RigidMotion::from_params(dim, w));
  }
  return out;
}

template <class Scalar>
Vec<Scalar> initial_image(const VecR& w0, const CoupledProblem<Scalar>& problem, const LsqrOptions& opts) {
  const LinearMap<Scalar> J = image_jacobian(problem, w0);
  if (problem.regularizer == Regularizer::hybrid) return hybrid_lsqr<Scalar>(J, problem.data(), HybridOptions{}).x;
  const Vec<Scalar> zero = Vec<Scalar>::Zero(problem.n());
  const Vec<Scalar> r0 = -problem.data();
  const auto sys = tikhonov_stack(J, problem.regularization_op(), problem.alpha, zero, r0);
  return lsqr(sys.A, sys.b, opts).x;
}

#define LAP_INSTANTIATE_MODELS(S)                                                                                 \
  template struct CoupledProblem<S>;                                                                              \
  template struct JwBlocks<S>;                                                                                    \
  template Vec<S> forward<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&);                               \
  template ObjectiveEval<S> residual_and_objective<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&);      \
  template LinearMap<S> image_jacobian<S>(const CoupledProblem<S>&, const VecR&, std::shared_ptr<MatvecCounter>); \
  template Vec<S> apply_Jx<S>(const CoupledProblem<S>&, const VecR&, const Vec<S>&, std::shared_ptr<MatvecCounter>); \
  template Vec<S> apply_Jx_adjoint<S>(const CoupledProblem<S>&, const VecR&, const Vec<S>&,                       \
                                      std::shared_ptr<MatvecCounter>);                                            \
  template JwBlocks<S> assemble_Jw<S>(const CoupledProblem<S>&, const Vec<S>&, const VecR&);                      \
  template SimulatedData<S> simulate_data<S>(const Vec<S>&, const VecR&, const Grid&,                             \
                                             const std::vector<LinearMap<S>>&, NoiseScaling, double,              \
                                             std::mt19937_64&);                                                   \
  template Vec<S> initial_image<S>(const VecR&, const CoupledProblem<S>&, const LsqrOptions&);

LAP_INSTANTIATE_MODELS(double)
LAP_INSTANTIATE_MODELS(Complex)

}  // namespace lap
