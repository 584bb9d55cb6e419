#include "lap/fourier.hpp"

#include <fftw3.h>

#include <cmath>
#include <stdexcept>

namespace lap {

struct CartesianFft::Plans {
  fftw_plan columns_forward = nullptr;
  fftw_plan columns_backward = nullptr;
  fftw_plan row_forward = nullptr;
  fftw_plan row_backward = nullptr;

  ~Plans() {
    for (auto p : {columns_forward, columns_backward, row_forward, row_backward})
      if (p) fftw_destroy_plan(p);
  }
};

namespace {
fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }
}  // namespace

CartesianFft::CartesianFft(Index nx, Index ny) : nx_(nx), ny_(ny) {
  if (nx <= 0 || ny <= 0) throw std::invalid_argument("CartesianFft: empty grid");
  auto plans = std::make_shared<Plans>();
  std::vector<Complex> scratch(static_cast<std::size_t>(nx * ny));
  auto* buf = as_fftw(scratch.data());
  const int len_y = static_cast<int>(ny), len_x = static_cast<int>(nx);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  plans->columns_forward = fftw_plan_many_dft(1, &len_y, len_x, buf, nullptr, len_x, 1, buf, nullptr, len_x, 1,
                                              FFTW_FORWARD, flags);
  plans->columns_backward = fftw_plan_many_dft(1, &len_y, len_x, buf, nullptr, len_x, 1, buf, nullptr, len_x, 1,
                                               FFTW_BACKWARD, flags);
  plans->row_forward = fftw_plan_dft_1d(len_x, buf, buf, FFTW_FORWARD, flags);
  plans->row_backward = fftw_plan_dft_1d(len_x, buf, buf, FFTW_BACKWARD, flags);
  plans_ = std::move(plans);
}

VecC CartesianFft::forward_rows(const VecC& image, const std::vector<Index>& rows) const {
  if (image.size() != nx_ * ny_) throw std::invalid_argument("CartesianFft: image size mismatch");
  VecC work = image;
  fftw_execute_dft(plans_->columns_forward, as_fftw(work.data()), as_fftw(work.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(nx_ * ny_));
  VecC out(static_cast<Index>(rows.size()) * nx_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Complex* dst = out.data() + static_cast<Index>(r) * nx_;
    const Complex* src = work.data() + rows[r] * nx_;
    std::copy(src, src + nx_, dst);
    fftw_execute_dft(plans_->row_forward, as_fftw(dst), as_fftw(dst));
  }
  out *= scale;
  return out;
}

VecC CartesianFft::adjoint_rows(const VecC& data, const std::vector<Index>& rows) const {
  if (data.size() != static_cast<Index>(rows.size()) * nx_)
    throw std::invalid_argument("CartesianFft: data size mismatch");
  VecC work = VecC::Zero(nx_ * ny_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Complex* dst = work.data() + rows[r] * nx_;
    const Complex* src = data.data() + static_cast<Index>(r) * nx_;
    std::copy(src, src + nx_, dst);
    fftw_execute_dft(plans_->row_backward, as_fftw(dst), as_fftw(dst));
  }
  fftw_execute_dft(plans_->columns_backward, as_fftw(work.data()), as_fftw(work.data()));
  work *= 1.0 / std::sqrt(static_cast<double>(nx_ * ny_));
  return work;
}

}  // namespace lap
