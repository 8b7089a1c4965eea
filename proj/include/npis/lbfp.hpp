#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace npis::lbfp {

/**
 * Axis-aligned multivariate histogram with a single bin width.
 *
 * Bin k along axis i is [t_k - h/2, t_k + h/2) with mid-point
 * t_k = origin[i] + k h. Heights are stored row-major (last axis fastest)
 * and are probability densities: sum(heights) * h^d == 1 for a normalized
 * grid. Indexing one step outside the stored range on any axis yields an
 * implicit zero bin, so the blend below is defined on the whole ring.
 */
class HistogramGrid {
 public:
  HistogramGrid(std::vector<double> origin, double bin_width, std::vector<std::size_t> counts,
                std::vector<double> heights, double total_weight = 0.0);

  std::size_t dim() const noexcept { return origin_.size(); }
  const std::vector<double>& origin() const noexcept { return origin_; }
  double bin_width() const noexcept { return bin_width_; }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  const std::vector<double>& heights() const noexcept { return heights_; }
  const std::vector<std::size_t>& strides() const noexcept { return strides_; }
  /// Sum of the raw sample weights before normalization (diagnostic only).
  double total_weight() const noexcept { return total_weight_; }
  std::size_t size() const noexcept { return heights_.size(); }

  double midpoint(std::size_t axis, std::ptrdiff_t k) const noexcept {
    return origin_[axis] + static_cast<double>(k) * bin_width_;
  }

  /// Height of the bin with multi-index `index`; zero outside the grid.
  double height(std::span<const std::ptrdiff_t> index) const noexcept;

  /// sum(heights) * h^d.
  double integral() const noexcept;

 private:
  std::vector<double> origin_;
  double bin_width_;
  std::vector<std::size_t> counts_;
  std::vector<double> heights_;
  double total_weight_;
  std::vector<std::size_t> strides_;
};

/// How build_histogram places bin edges.
struct OriginPolicy {
  /// When set, bin mid-points sit at anchor + k h on every axis. When empty,
  /// bin edges sit at integer multiples of h.
  std::optional<std::vector<double>> anchor;

  static OriginPolicy automatic() { return {}; }
  static OriginPolicy explicit_anchor(std::vector<double> a) { return OriginPolicy{std::move(a)}; }
};

/**
 * Weighted histogram of `points` (row-major, `dim` columns).
 *
 * The grid covers the bounding box of the positive-weight samples plus one
 * empty bin on each side of every axis. Heights are bin weight sums divided
 * by (total weight * h^d).
 *
 * Throws DegenerateWeights when no weight is positive and InvalidSample on
 * non-finite coordinates or negative/non-finite weights.
 */
HistogramGrid build_histogram(std::span<const double> points, std::size_t dim, std::span<const double> weights,
                              double bin_width, const OriginPolicy& origin = OriginPolicy::automatic());

/// Marginal histogram over axes [0, prefix_len): trailing axes summed and
/// scaled by h^(d - prefix_len), so it integrates to one again.
HistogramGrid marginalize(const HistogramGrid& grid, std::size_t prefix_len);

/// Multilinear blend of the 2^d histogram heights surrounding x.
double blend(const HistogramGrid& grid, std::span<const double> x) noexcept;

/// One piece of a univariate frequency polygon: on [t_k, t_k + h) the
/// density is intercept + slope (x - t_k) and the CDF runs from cdf_low to
/// cdf_high.
struct BinSegment {
  double intercept = 0.0;
  double slope = 0.0;
  double cdf_low = 0.0;
  double cdf_high = 0.0;
  double left_midpoint = 0.0;
  double width = 0.0;
};

/// CDF of the polygon at x, for x in [left_midpoint, left_midpoint + width].
double segment_cdf(const BinSegment& seg, double x) noexcept;

/**
 * Inverse CDF inside one segment.
 *
 * Solves y - cdf_low = a z + b z^2 / 2 for z in [0, h] and returns
 * left_midpoint + z. The sloped case uses the rationalized root
 * 2c / (a + sqrt(a^2 + 2 b c)), which equals the textbook root but keeps full
 * precision when |b| is small. Flat segments interpolate linearly between
 * the end points. Throws ContractViolation unless cdf_low <= y < cdf_high.
 */
double invert_segment(const BinSegment& seg, double y);

/**
 * Linear blend frequency polygon over a normalized HistogramGrid.
 *
 * Immutable after construction. All marginal grids, and the unconditional
 * CDF table of the first axis, are computed once in the constructor; the
 * per-sample work is one conditional table per remaining axis.
 */
class LbfpDensity {
 public:
  /// Throws ContractViolation if the grid does not integrate to one within 1e-9.
  explicit LbfpDensity(HistogramGrid grid);

  std::size_t dim() const noexcept { return marginals_.back().dim(); }
  const HistogramGrid& grid() const noexcept { return marginals_.back(); }
  double bin_width() const noexcept { return grid().bin_width(); }

  /// Marginal histogram over the first `prefix_len` axes (1..d).
  const HistogramGrid& marginal(std::size_t prefix_len) const;

  /// Density at x; zero outside the interpolation support.
  double operator()(std::span<const double> x) const noexcept { return blend(grid(), x); }

  /// Marginal density of the leading coordinates; an empty prefix gives 1.
  double prefix_density(std::span<const double> prefix) const;

  /// Segments of the conditional polygon of axis prefix.size() given the
  /// prefix. Throws OutsideSupport where the prefix has zero density.
  std::vector<BinSegment> conditional_cdf_table(std::span<const double> prefix) const;

  /// Inversion sample: coordinate i is F^{-1}(u_i | x_1..x_{i-1}).
  std::vector<double> sample(std::span<const double> u) const;
  void sample_into(std::span<const double> u, std::span<double> out) const;

  /// Lowest / highest point of the support along `axis`.
  double support_lower(std::size_t axis) const noexcept;
  double support_upper(std::size_t axis) const noexcept;

  /// CDF of the first coordinate.
  double marginal_cdf(double x) const noexcept;

  /// Mean of the first coordinate.
  double marginal_mean() const noexcept;

 private:
  void conditional_table_into(std::size_t axis, std::span<const double> prefix, std::vector<BinSegment>& segs,
                              std::vector<double>& scratch) const;

  std::vector<HistogramGrid> marginals_;
  std::vector<BinSegment> first_axis_;
};

/// Versioned text form: "LBFP1 d h", one "axis i origin count" line per axis,
/// an optional "total_weight w" line, then "heights" and the row-major values.
std::string serialize_grid(const HistogramGrid& grid);
void write_grid(std::ostream& os, const HistogramGrid& grid);

/// Parses serialize_grid output. Lines starting with '#' are ignored.
/// Throws ParseError with the offending line and column.
HistogramGrid deserialize_grid(std::string_view text);

}  // namespace npis::lbfp
