#pragma once

#include <memory>
#include <vector>

#include "lap/types.hpp"

namespace lap {

/// Unitary 2D DFT on an nx x ny image (axis 0 fastest) that returns only a
/// subset of the ky rows. Transforming along y first and then along x for the
/// kept rows avoids the full second pass. Safe for concurrent use.
class CartesianFft {
 public:
  CartesianFft(Index nx, Index ny);

  Index nx() const { return nx_; }
  Index ny() const { return ny_; }

  /// Output is row-major over the kept rows: out[r * nx + kx] for rows[r].
  VecC forward_rows(const VecC& image, const std::vector<Index>& rows) const;
  /// Adjoint (zero fill, then inverse transform) of forward_rows.
  VecC adjoint_rows(const VecC& data, const std::vector<Index>& rows) const;

 private:
  struct Plans;
  Index nx_;
  Index ny_;
  std::shared_ptr<const Plans> plans_;
};

}  // namespace lap
