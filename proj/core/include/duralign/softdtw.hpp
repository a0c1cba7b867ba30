#pragma once

// Banded soft dynamic time warping with L1 frame costs, plus exact oracles
// (hard-min DP and full path enumeration) used for verification.
//
// The DP follows the three-branch recursion with r_{0,0} = 0 and +inf borders;
// vertical/horizontal branches pay the warp penalty, the diagonal does not.
// Out-of-band cells are +inf and soft_min drops +inf branches, so the result
// stays differentiable at band edges.

#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "duralign/tensor.hpp"

namespace duralign {

enum class CostIndexing {
  paper,      // vertical |x_{i-1} - xbar_j|, horizontal |x_i - xbar_{j-1}| as printed
  symmetric,  // every branch pays |x_i - xbar_j| of the destination cell
};

struct SoftDtwConfig {
  double gamma = 0.05;
  double warp = 128.0;
  int band_half_width = 30;  // total band width 60
  CostIndexing cost_indexing = CostIndexing::paper;
  // Test hook: added to the vertical branch only, so oracle checks can detect
  // a deliberately corrupted recursion.
  double debug_vertical_warp_bias = 0.0;
};

/// -gamma * log sum exp(-a_i / gamma), max-shifted. +inf entries drop out;
/// the result never exceeds min(values).
template <class T>
T soft_min(std::span<const T> values, T gamma) {
  if (values.empty()) throw std::invalid_argument("soft_min: empty value list");
  if (!(gamma > T(0))) throw std::invalid_argument("soft_min: gamma must be positive");
  const T inf = std::numeric_limits<T>::infinity();
  T lo = inf;
  for (T a : values) lo = std::min(lo, a);
  if (lo == inf) return inf;
  T acc = 0;
  for (T a : values) {
    if (a == inf) continue;
    acc += std::exp(-(a - lo) / gamma);
  }
  return lo - gamma * std::log(acc);
}

template <class T>
T soft_min(std::initializer_list<T> values, T gamma) {
  return soft_min(std::span<const T>(values.begin(), values.size()), gamma);
}

/// DP values restricted to a diagonal band. Row i of the (T_x+1) x (T_y+1)
/// table stores columns [lo[i], hi[i]]; everything else reads as +inf.
template <class T>
struct BandTable {
  int tx = 0, ty = 0;
  std::vector<int> lo, hi;         // per row 0..tx, inclusive
  std::vector<int64_t> offset;     // row start into cells
  std::vector<T> cells;

  static BandTable make(int tx, int ty, int band_half_width) {
    BandTable b;
    b.tx = tx;
    b.ty = ty;
    b.lo.resize(static_cast<size_t>(tx) + 1);
    b.hi.resize(static_cast<size_t>(tx) + 1);
    b.offset.resize(static_cast<size_t>(tx) + 2);
    double slope = static_cast<double>(ty) / static_cast<double>(tx);
    // widen the half width so (1,1) stays reachable and consecutive rows
    // overlap when the lengths are very unequal
    int h = std::max(band_half_width, static_cast<int>(std::ceil(slope)));
    b.lo[0] = 0;
    b.hi[0] = 0;  // row 0 holds only r_{0,0}
    for (int i = 1; i <= tx; ++i) {
      double center = slope * i;
      b.lo[static_cast<size_t>(i)] = std::max(1, static_cast<int>(std::floor(center)) - h);
      b.hi[static_cast<size_t>(i)] = std::min(ty, static_cast<int>(std::ceil(center)) + h);
    }
    int64_t off = 0;
    for (int i = 0; i <= tx; ++i) {
      b.offset[static_cast<size_t>(i)] = off;
      off += b.hi[static_cast<size_t>(i)] - b.lo[static_cast<size_t>(i)] + 1;
    }
    b.offset[static_cast<size_t>(tx) + 1] = off;
    b.cells.assign(static_cast<size_t>(off), std::numeric_limits<T>::infinity());
    return b;
  }

  bool in_band(int i, int j) const {
    return i >= 0 && i <= tx && j >= lo[static_cast<size_t>(i)] && j <= hi[static_cast<size_t>(i)];
  }

  T at(int i, int j) const {
    if (!in_band(i, j)) return std::numeric_limits<T>::infinity();
    return cells[static_cast<size_t>(offset[static_cast<size_t>(i)] + j - lo[static_cast<size_t>(i)])];
  }

  T& ref(int i, int j) {
    return cells[static_cast<size_t>(offset[static_cast<size_t>(i)] + j - lo[static_cast<size_t>(i)])];
  }
};

namespace dtw_detail {

template <class T>
inline T l1_rows(const T* a, const T* b, int f) {
  T s = 0;
  for (int q = 0; q < f; ++q) s += std::abs(a[q] - b[q]);
  return s;
}

/// Branch costs entering cell (i,j), 1-based DP indices over 0-based frames.
/// In paper mode the printed costs reference one frame past the end on the
/// last row/column; those indices clamp to the final frame.
template <class T>
struct CostEval {
  const T* x;
  const T* xb;
  int tx, ty, f;
  CostIndexing mode;

  T vertical(int i, int j) const {
    int jj = (mode == CostIndexing::paper) ? std::min(j, ty - 1) : j - 1;
    return l1_rows(&x[static_cast<size_t>(i - 1) * f], &xb[static_cast<size_t>(jj) * f], f);
  }
  T horizontal(int i, int j) const {
    int ii = (mode == CostIndexing::paper) ? std::min(i, tx - 1) : i - 1;
    return l1_rows(&x[static_cast<size_t>(ii) * f], &xb[static_cast<size_t>(j - 1) * f], f);
  }
  T diagonal(int i, int j) const {
    return l1_rows(&x[static_cast<size_t>(i - 1) * f], &xb[static_cast<size_t>(j - 1) * f], f);
  }
};

template <class T>
inline T soft_min3(T a, T b, T c, T gamma) {
  const T inf = std::numeric_limits<T>::infinity();
  T lo = std::min(a, std::min(b, c));
  if (lo == inf) return inf;
  T acc = 0;
  if (a != inf) acc += std::exp(-(a - lo) / gamma);
  if (b != inf) acc += std::exp(-(b - lo) / gamma);
  if (c != inf) acc += std::exp(-(c - lo) / gamma);
  return lo - gamma * std::log(acc);
}

template <class T>
void validate_pair(const Tensor<T>& x, const Tensor<T>& xbar) {
  if (x.rank() != 2 || xbar.rank() != 2)
    throw std::invalid_argument("soft_dtw: rank-2 spectrograms required");
  if (x.dim(0) < 1 || xbar.dim(0) < 1) throw std::invalid_argument("soft_dtw: empty sequence");
  if (x.dim(1) != xbar.dim(1))
    throw std::invalid_argument("soft_dtw: feature dimension mismatch");
}

}  // namespace dtw_detail

/// Banded Soft-DTW between target x [T_x x F] and prediction xbar [T_y x F].
/// Returns the loss r_{T_x,T_y} and the filled band table.
template <class T>
std::pair<T, BandTable<T>> soft_dtw(const Tensor<T>& x, const Tensor<T>& xbar,
                                    const SoftDtwConfig& cfg) {
  dtw_detail::validate_pair(x, xbar);
  if (!(cfg.gamma > 0)) throw std::invalid_argument("soft_dtw: gamma must be positive");
  if (cfg.band_half_width < 1) throw std::invalid_argument("soft_dtw: band_half_width must be >= 1");
  const int tx = x.dim(0), ty = xbar.dim(0), f = x.dim(1);
  auto band = BandTable<T>::make(tx, ty, cfg.band_half_width);
  band.ref(0, 0) = T(0);
  dtw_detail::CostEval<T> cost{x.data(), xbar.data(), tx, ty, f, cfg.cost_indexing};
  const T gamma = static_cast<T>(cfg.gamma);
  const T warp = static_cast<T>(cfg.warp);
  const T vbias = static_cast<T>(cfg.debug_vertical_warp_bias);
  const T inf = std::numeric_limits<T>::infinity();
  for (int i = 1; i <= tx; ++i) {
    const int jlo = band.lo[static_cast<size_t>(i)], jhi = band.hi[static_cast<size_t>(i)];
    for (int j = jlo; j <= jhi; ++j) {
      T rv = band.at(i - 1, j);
      T rh = band.at(i, j - 1);
      T rd = band.at(i - 1, j - 1);
      T a = (rv == inf) ? inf : rv + cost.vertical(i, j) + warp + vbias;
      T b = (rh == inf) ? inf : rh + cost.horizontal(i, j) + warp;
      T c = (rd == inf) ? inf : rd + cost.diagonal(i, j);
      band.ref(i, j) = dtw_detail::soft_min3(a, b, c, gamma);
    }
  }
  return {band.at(tx, ty), std::move(band)};
}

/// Gradient of the banded Soft-DTW loss with respect to the prediction xbar,
/// via reverse accumulation over the DP cells. Frames outside the band get
/// zero gradient. sign(0) = 0 at L1 kinks.
template <class T>
Tensor<T> soft_dtw_grad(const Tensor<T>& x, const Tensor<T>& xbar, const SoftDtwConfig& cfg) {
  auto [loss, band] = soft_dtw(x, xbar, cfg);
  const int tx = x.dim(0), ty = xbar.dim(0), f = x.dim(1);
  Tensor<T> grad(Shape{ty, f});
  if (!std::isfinite(static_cast<double>(loss))) return grad;

  dtw_detail::CostEval<T> cost{x.data(), xbar.data(), tx, ty, f, cfg.cost_indexing};
  const T gamma = static_cast<T>(cfg.gamma);
  const T warp = static_cast<T>(cfg.warp);
  const T vbias = static_cast<T>(cfg.debug_vertical_warp_bias);
  const T inf = std::numeric_limits<T>::infinity();

  // adjoint of r over the same band layout
  std::vector<T> adj(band.cells.size(), T(0));
  auto adj_ref = [&](int i, int j) -> T& {
    return adj[static_cast<size_t>(band.offset[static_cast<size_t>(i)] + j -
                                   band.lo[static_cast<size_t>(i)])];
  };
  adj_ref(tx, ty) = T(1);

  // d|x_row - xbar_row| / d xbar_row, scaled by weight, into grad
  auto push_cost_grad = [&](int xi, int ji, T weight) {
    const T* xr = &x.data()[static_cast<size_t>(xi) * f];
    const T* br = &xbar.data()[static_cast<size_t>(ji) * f];
    T* gr = &grad.v[static_cast<size_t>(ji) * f];
    for (int q = 0; q < f; ++q) {
      T diff = xr[q] - br[q];
      if (diff > T(0))
        gr[q] -= weight;
      else if (diff < T(0))
        gr[q] += weight;
    }
  };

  for (int i = tx; i >= 1; --i) {
    const int jlo = band.lo[static_cast<size_t>(i)], jhi = band.hi[static_cast<size_t>(i)];
    for (int j = jhi; j >= jlo; --j) {
      T a = adj_ref(i, j);
      if (a == T(0)) continue;
      T r = band.at(i, j);
      if (r == inf) continue;
      T rv = band.at(i - 1, j);
      T rh = band.at(i, j - 1);
      T rd = band.at(i - 1, j - 1);
      // rX != inf implies the source cell is inside the band
      if (rv != inf) {
        T branch = rv + cost.vertical(i, j) + warp + vbias;
        T wgt = a * std::exp((r - branch) / gamma);
        if (wgt != T(0)) {
          adj_ref(i - 1, j) += wgt;
          int jj = (cfg.cost_indexing == CostIndexing::paper) ? std::min(j, ty - 1) : j - 1;
          push_cost_grad(i - 1, jj, wgt);
        }
      }
      if (rh != inf) {
        T branch = rh + cost.horizontal(i, j) + warp;
        T wgt = a * std::exp((r - branch) / gamma);
        if (wgt != T(0)) {
          adj_ref(i, j - 1) += wgt;
          int ii = (cfg.cost_indexing == CostIndexing::paper) ? std::min(i, tx - 1) : i - 1;
          push_cost_grad(ii, j - 1, wgt);
        }
      }
      if (rd != inf) {
        T branch = rd + cost.diagonal(i, j);
        T wgt = a * std::exp((r - branch) / gamma);
        if (wgt != T(0)) {
          adj_ref(i - 1, j - 1) += wgt;
          push_cost_grad(i - 1, j - 1, wgt);
        }
      }
    }
  }
  return grad;
}

/// Classic min-based DP over the full table with the same branch costs and
/// warp penalty; the gamma -> 0 limit of soft_dtw.
template <class T>
T hard_dtw_oracle(const Tensor<T>& x, const Tensor<T>& xbar, double warp,
                  CostIndexing mode = CostIndexing::paper) {
  dtw_detail::validate_pair(x, xbar);
  const int tx = x.dim(0), ty = xbar.dim(0), f = x.dim(1);
  if (static_cast<int64_t>(tx) * ty > 1000000)
    throw std::invalid_argument("hard_dtw_oracle: table too large");
  dtw_detail::CostEval<T> cost{x.data(), xbar.data(), tx, ty, f, mode};
  const T inf = std::numeric_limits<T>::infinity();
  std::vector<T> table(static_cast<size_t>(tx + 1) * (ty + 1), inf);
  auto r = [&](int i, int j) -> T& { return table[static_cast<size_t>(i) * (ty + 1) + j]; };
  r(0, 0) = T(0);
  for (int i = 1; i <= tx; ++i)
    for (int j = 1; j <= ty; ++j) {
      T best = inf;
      if (r(i - 1, j) != inf) best = std::min(best, r(i - 1, j) + cost.vertical(i, j) + static_cast<T>(warp));
      if (r(i, j - 1) != inf) best = std::min(best, r(i, j - 1) + cost.horizontal(i, j) + static_cast<T>(warp));
      if (r(i - 1, j - 1) != inf) best = std::min(best, r(i - 1, j - 1) + cost.diagonal(i, j));
      r(i, j) = best;
    }
  return r(tx, ty);
}

/// Enumerates every monotone alignment path and combines the per-path totals
/// with one soft_min; exact reference for the full-band recursion. Costs are
/// recomputed inline so the oracle shares no code path with the DP.
template <class T>
T soft_dtw_path_oracle(const Tensor<T>& x, const Tensor<T>& xbar, const SoftDtwConfig& cfg) {
  dtw_detail::validate_pair(x, xbar);
  const int tx = x.dim(0), ty = xbar.dim(0), f = x.dim(1);
  const T* xa = x.data();
  const T* xb = xbar.data();
  auto l1 = [&](int xi, int ji) {
    T s = 0;
    for (int q = 0; q < f; ++q)
      s += std::abs(xa[static_cast<size_t>(xi) * f + q] - xb[static_cast<size_t>(ji) * f + q]);
    return s;
  };
  auto move_cost = [&](int i, int j, int di, int dj) -> T {
    // cost of entering cell (i,j) via a (di,dj) move, mirroring the printed
    // branch costs (paper mode clamps the trailing index); the oracle is the
    // clean reference, so the debug warp hook is deliberately ignored
    if (di == 1 && dj == 1) return l1(i - 1, j - 1);
    if (cfg.cost_indexing == CostIndexing::symmetric)
      return l1(i - 1, j - 1) + static_cast<T>(cfg.warp);
    if (di == 1) return l1(i - 1, std::min(j, ty - 1)) + static_cast<T>(cfg.warp);  // vertical
    return l1(std::min(i, tx - 1), j - 1) + static_cast<T>(cfg.warp);               // horizontal
  };
  std::vector<T> totals;
  // depth-first over all monotone paths (0,0) -> (tx,ty); interior cells only
  struct Frame {
    int i, j;
    T acc;
  };
  std::vector<Frame> stack{{0, 0, T(0)}};
  while (!stack.empty()) {
    Frame fr = stack.back();
    stack.pop_back();
    if (fr.i == tx && fr.j == ty) {
      totals.push_back(fr.acc);
      continue;
    }
    const int moves[3][2] = {{1, 1}, {1, 0}, {0, 1}};
    for (const auto& mv : moves) {
      int ni = fr.i + mv[0], nj = fr.j + mv[1];
      if (ni > tx || nj > ty) continue;
      if (ni < 1 || nj < 1) continue;  // borders beyond the origin are +inf
      stack.push_back({ni, nj, fr.acc + move_cost(ni, nj, mv[0], mv[1])});
    }
  }
  return soft_min(std::span<const T>(totals.data(), totals.size()), static_cast<T>(cfg.gamma));
}

}  // namespace duralign
