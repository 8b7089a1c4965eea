#include "npis/lbfp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <locale>
#include <numeric>
#include <ostream>
#include <sstream>

#include "npis/error.hpp"

namespace npis::lbfp {

namespace {

constexpr std::size_t kMaxDim = 16;
constexpr std::size_t kMaxBins = std::size_t{1} << 28;

// Coordinates within 1e-12 bins of a mid-point are treated as the mid-point,
// so evaluation there returns the stored height exactly.
double snap(double s) noexcept {
  const double r = std::nearbyint(s);
  return std::abs(s - r) <= 1e-12 * std::max(1.0, std::abs(r)) ? r : s;
}

struct CellCoord {
  std::ptrdiff_t k;
  double u;
};

// Interpolation cell [t_k, t_k + h) of x along one axis, or nullopt outside
// the ring [t_{-1}, t_n).
std::optional<CellCoord> locate(double x, double origin, double h, std::size_t n) noexcept {
  const double s = snap((x - origin) / h);
  if (!(s >= -1.0) || !(s < static_cast<double>(n))) return std::nullopt;
  const double k = std::floor(s);
  return CellCoord{static_cast<std::ptrdiff_t>(k), s - k};
}

double invert_unchecked(const BinSegment& seg, double y) noexcept {
  const double c = y - seg.cdf_low;
  if (!(c > 0.0)) return seg.left_midpoint;
  double z;
  if (seg.slope == 0.0) {
    const double span = seg.cdf_high - seg.cdf_low;
    const double right = seg.left_midpoint + seg.width;
    return std::clamp(((seg.cdf_high - y) * seg.left_midpoint + (y - seg.cdf_low) * right) / span,
                      seg.left_midpoint, right);
  }
  const double disc = std::max(0.0, seg.intercept * seg.intercept + 2.0 * seg.slope * c);
  const double denom = seg.intercept + std::sqrt(disc);
  z = denom > 0.0 ? 2.0 * c / denom : seg.width;
  return seg.left_midpoint + std::clamp(z, 0.0, seg.width);
}

std::size_t checked_product(const std::vector<std::size_t>& counts) {
  std::size_t total = 1;
  for (std::size_t c : counts) {
    if (c == 0) throw ContractViolation("histogram axis with zero bins");
    if (total > kMaxBins / c) throw ContractViolation("histogram grid too large");
    total *= c;
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// HistogramGrid

HistogramGrid::HistogramGrid(std::vector<double> origin, double bin_width, std::vector<std::size_t> counts,
                             std::vector<double> heights, double total_weight)
    : origin_(std::move(origin)),
      bin_width_(bin_width),
      counts_(std::move(counts)),
      heights_(std::move(heights)),
      total_weight_(total_weight) {
  const std::size_t d = origin_.size();
  if (d == 0 || d > kMaxDim) throw ContractViolation("histogram dimension must be in 1..16");
  if (counts_.size() != d) throw ContractViolation("counts and origin differ in dimension");
  if (!(bin_width_ > 0.0) || !std::isfinite(bin_width_)) throw ContractViolation("bin width must be positive");
  for (double o : origin_)
    if (!std::isfinite(o)) throw ContractViolation("non-finite grid origin");
  if (heights_.size() != checked_product(counts_)) throw ContractViolation("height count does not match axes");
  for (double v : heights_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractViolation("heights must be finite and non-negative");
  if (!(total_weight_ >= 0.0) || !std::isfinite(total_weight_)) throw ContractViolation("invalid total weight");

  strides_.assign(d, 1);
  for (std::size_t a = d - 1; a-- > 0;) strides_[a] = strides_[a + 1] * counts_[a + 1];
}

double HistogramGrid::height(std::span<const std::ptrdiff_t> index) const noexcept {
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dim(); ++a) {
    if (index[a] < 0 || static_cast<std::size_t>(index[a]) >= counts_[a]) return 0.0;
    flat += static_cast<std::size_t>(index[a]) * strides_[a];
  }
  return heights_[flat];
}

double HistogramGrid::integral() const noexcept {
  const double sum = std::accumulate(heights_.begin(), heights_.end(), 0.0);
  return sum * std::pow(bin_width_, static_cast<double>(dim()));
}

// ---------------------------------------------------------------------------
// Construction and marginals

HistogramGrid build_histogram(std::span<const double> points, std::size_t dim, std::span<const double> weights,
                              double bin_width, const OriginPolicy& origin) {
  if (dim == 0 || dim > kMaxDim) throw ContractViolation("dimension must be in 1..16");
  if (!(bin_width > 0.0) || !std::isfinite(bin_width)) throw ContractViolation("bin width must be positive");
  if (points.size() != weights.size() * dim) throw ContractViolation("points and weights differ in length");
  if (origin.anchor && origin.anchor->size() != dim) throw ContractViolation("anchor dimension mismatch");

  std::vector<double> edge0(dim, 0.0);
  if (origin.anchor) {
    for (std::size_t a = 0; a < dim; ++a) {
      if (!std::isfinite((*origin.anchor)[a])) throw InvalidSample("non-finite anchor");
      edge0[a] = (*origin.anchor)[a] - 0.5 * bin_width;
    }
  }

  const std::size_t n = weights.size();
  std::vector<std::int64_t> kmin(dim, std::numeric_limits<std::int64_t>::max());
  std::vector<std::int64_t> kmax(dim, std::numeric_limits<std::int64_t>::min());
  double total = 0.0;
  std::size_t positive = 0;
  auto bin_of = [&](double x, std::size_t a) { return static_cast<std::int64_t>(std::floor((x - edge0[a]) / bin_width)); };

  for (std::size_t j = 0; j < n; ++j) {
    const double w = weights[j];
    if (!std::isfinite(w) || w < 0.0) throw InvalidSample("weight must be finite and non-negative");
    for (std::size_t a = 0; a < dim; ++a)
      if (!std::isfinite(points[j * dim + a])) throw InvalidSample("non-finite coordinate");
    if (w == 0.0) continue;
    ++positive;
    total += w;
    for (std::size_t a = 0; a < dim; ++a) {
      const auto k = bin_of(points[j * dim + a], a);
      kmin[a] = std::min(kmin[a], k);
      kmax[a] = std::max(kmax[a], k);
    }
  }
  if (positive == 0 || !(total > 0.0)) throw DegenerateWeights();
  if (!std::isfinite(total)) throw InvalidSample("weight sum overflows");

  std::vector<std::size_t> counts(dim);
  std::vector<double> grid_origin(dim);
  for (std::size_t a = 0; a < dim; ++a) {
    counts[a] = static_cast<std::size_t>(kmax[a] - kmin[a]) + 3;
    grid_origin[a] = edge0[a] + (static_cast<double>(kmin[a] - 1) + 0.5) * bin_width;
  }
  std::vector<double> sums(checked_product(counts), 0.0);
  std::vector<std::size_t> strides(dim, 1);
  for (std::size_t a = dim - 1; a-- > 0;) strides[a] = strides[a + 1] * counts[a + 1];

  for (std::size_t j = 0; j < n; ++j) {
    if (weights[j] == 0.0) continue;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dim; ++a)
      flat += static_cast<std::size_t>(bin_of(points[j * dim + a], a) - kmin[a] + 1) * strides[a];
    sums[flat] += weights[j];
  }
  const double scale = 1.0 / (total * std::pow(bin_width, static_cast<double>(dim)));
  for (double& s : sums) s *= scale;
  return HistogramGrid(std::move(grid_origin), bin_width, std::move(counts), std::move(sums), total);
}

HistogramGrid marginalize(const HistogramGrid& grid, std::size_t prefix_len) {
  const std::size_t d = grid.dim();
  if (prefix_len < 1 || prefix_len > d) throw ContractViolation("marginal prefix length out of range");
  if (prefix_len == d) return grid;
  std::vector<std::size_t> counts(grid.counts().begin(), grid.counts().begin() + static_cast<std::ptrdiff_t>(prefix_len));
  std::vector<double> origin(grid.origin().begin(), grid.origin().begin() + static_cast<std::ptrdiff_t>(prefix_len));
  const std::size_t inner = grid.strides()[prefix_len - 1];
  const std::size_t outer = grid.size() / inner;
  const double scale = std::pow(grid.bin_width(), static_cast<double>(d - prefix_len));
  std::vector<double> heights(outer);
  const auto& h = grid.heights();
  for (std::size_t j = 0; j < outer; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < inner; ++r) s += h[j * inner + r];
    heights[j] = s * scale;
  }
  return HistogramGrid(std::move(origin), grid.bin_width(), std::move(counts), std::move(heights),
                       grid.total_weight());
}

double blend(const HistogramGrid& grid, std::span<const double> x) noexcept {
  const std::size_t d = grid.dim();
  std::array<CellCoord, kMaxDim> cell{};
  for (std::size_t a = 0; a < d; ++a) {
    const auto c = locate(x[a], grid.origin()[a], grid.bin_width(), grid.counts()[a]);
    if (!c) return 0.0;
    cell[a] = *c;
  }
  const auto& heights = grid.heights();
  const auto& counts = grid.counts();
  const auto& strides = grid.strides();
  double value = 0.0;
  const std::size_t corners = std::size_t{1} << d;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t flat = 0;
    bool inside = true;
    for (std::size_t a = 0; a < d; ++a) {
      const bool up = (c >> a) & 1U;
      const std::ptrdiff_t k = cell[a].k + (up ? 1 : 0);
      if (k < 0 || static_cast<std::size_t>(k) >= counts[a]) {
        inside = false;
        break;
      }
      w *= up ? cell[a].u : 1.0 - cell[a].u;
      flat += static_cast<std::size_t>(k) * strides[a];
    }
    if (inside && w != 0.0) value += w * heights[flat];
  }
  return value;
}

// ---------------------------------------------------------------------------
// Segments

double segment_cdf(const BinSegment& seg, double x) noexcept {
  const double z = std::clamp(x - seg.left_midpoint, 0.0, seg.width);
  return seg.cdf_low + seg.intercept * z + 0.5 * seg.slope * z * z;
}

double invert_segment(const BinSegment& seg, double y) {
  if (!(y >= seg.cdf_low && y < seg.cdf_high))
    throw ContractViolation("inversion target outside [cdf_low, cdf_high)");
  return invert_unchecked(seg, y);
}

// ---------------------------------------------------------------------------
// LbfpDensity

LbfpDensity::LbfpDensity(HistogramGrid grid) {
  const double mass = grid.integral();
  if (std::abs(mass - 1.0) > 1e-9) throw ContractViolation("histogram does not integrate to one");
  const std::size_t d = grid.dim();
  marginals_.reserve(d);
  for (std::size_t i = 1; i < d; ++i) marginals_.push_back(marginalize(grid, i));
  marginals_.push_back(std::move(grid));
  std::vector<double> scratch;
  conditional_table_into(0, {}, first_axis_, scratch);
}

const HistogramGrid& LbfpDensity::marginal(std::size_t prefix_len) const {
  if (prefix_len < 1 || prefix_len > dim()) throw ContractViolation("marginal prefix length out of range");
  return marginals_[prefix_len - 1];
}

double LbfpDensity::prefix_density(std::span<const double> prefix) const {
  if (prefix.empty()) return 1.0;
  return blend(marginal(prefix.size()), prefix);
}

void LbfpDensity::conditional_table_into(std::size_t axis, std::span<const double> prefix,
                                         std::vector<BinSegment>& segs, std::vector<double>& g) const {
  const HistogramGrid& m = marginals_[axis];
  const double h = m.bin_width();
  std::array<CellCoord, kMaxDim> cell{};
  for (std::size_t a = 0; a < axis; ++a) {
    const auto c = locate(prefix[a], m.origin()[a], h, m.counts()[a]);
    if (!c) throw OutsideSupport();
    cell[a] = *c;
  }

  const std::size_t n = m.counts()[axis];
  g.assign(n, 0.0);
  const auto& heights = m.heights();
  const std::size_t corners = std::size_t{1} << axis;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t base = 0;
    bool inside = true;
    for (std::size_t a = 0; a < axis; ++a) {
      const bool up = (c >> a) & 1U;
      const std::ptrdiff_t k = cell[a].k + (up ? 1 : 0);
      if (k < 0 || static_cast<std::size_t>(k) >= m.counts()[a]) {
        inside = false;
        break;
      }
      w *= up ? cell[a].u : 1.0 - cell[a].u;
      base += static_cast<std::size_t>(k) * m.strides()[a];
    }
    if (!inside || w == 0.0) continue;
    const double* row = heights.data() + base;
    for (std::size_t j = 0; j < n; ++j) g[j] += w * row[j];
  }

  // h * sum(g) is the marginal density of the prefix.
  const double total = h * std::accumulate(g.begin(), g.end(), 0.0);
  if (!(total > 0.0)) throw OutsideSupport();
  const double inv = 1.0 / total;

  segs.resize(n + 1);
  double left = 0.0;
  double cdf = 0.0;
  for (std::size_t s = 0; s <= n; ++s) {
    const double right = s < n ? g[s] * inv : 0.0;
    BinSegment& seg = segs[s];
    seg.intercept = left;
    seg.slope = (right - left) / h;
    seg.cdf_low = cdf;
    cdf += 0.5 * h * (left + right);
    seg.cdf_high = cdf;
    seg.left_midpoint = m.midpoint(axis, static_cast<std::ptrdiff_t>(s) - 1);
    seg.width = h;
    left = right;
  }
}

std::vector<BinSegment> LbfpDensity::conditional_cdf_table(std::span<const double> prefix) const {
  if (prefix.size() >= dim()) throw ContractViolation("prefix must be shorter than the dimension");
  if (prefix.empty()) return first_axis_;
  std::vector<BinSegment> segs;
  std::vector<double> scratch;
  conditional_table_into(prefix.size(), prefix, segs, scratch);
  return segs;
}

void LbfpDensity::sample_into(std::span<const double> u, std::span<double> out) const {
  const std::size_t d = dim();
  if (u.size() != d || out.size() != d) throw ContractViolation("uniform vector has wrong dimension");
  thread_local std::vector<BinSegment> segs;
  thread_local std::vector<double> scratch;
  for (std::size_t i = 0; i < d; ++i) {
    const std::vector<BinSegment>* table = &first_axis_;
    if (i > 0) {
      conditional_table_into(i, out.first(i), segs, scratch);
      table = &segs;
    }
    const double y = u[i];
    auto it = std::upper_bound(table->begin(), table->end(), y,
                               [](double v, const BinSegment& s) { return v < s.cdf_high; });
    if (it == table->end()) {
      // y at or above the rounded total mass: take the top of the last
      // segment that carries mass.
      auto last = std::find_if(table->rbegin(), table->rend(),
                               [](const BinSegment& s) { return s.cdf_high > s.cdf_low; });
      out[i] = last->left_midpoint + last->width;
      continue;
    }
    out[i] = invert_unchecked(*it, y);
  }
}

std::vector<double> LbfpDensity::sample(std::span<const double> u) const {
  std::vector<double> out(dim());
  sample_into(u, out);
  return out;
}

double LbfpDensity::support_lower(std::size_t axis) const noexcept { return grid().midpoint(axis, -1); }

double LbfpDensity::support_upper(std::size_t axis) const noexcept {
  return grid().midpoint(axis, static_cast<std::ptrdiff_t>(grid().counts()[axis]));
}

double LbfpDensity::marginal_cdf(double x) const noexcept {
  const BinSegment& first = first_axis_.front();
  if (x <= first.left_midpoint) return 0.0;
  const double s = std::floor((x - first.left_midpoint) / first.width);
  if (s >= static_cast<double>(first_axis_.size())) return std::min(1.0, first_axis_.back().cdf_high);
  return std::min(1.0, segment_cdf(first_axis_[static_cast<std::size_t>(s)], x));
}

double LbfpDensity::marginal_mean() const noexcept {
  const HistogramGrid& m = marginals_.front();
  double acc = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k)
    acc += m.heights()[k] * m.midpoint(0, static_cast<std::ptrdiff_t>(k));
  return acc * m.bin_width();
}

// ---------------------------------------------------------------------------
// Serialization

void write_grid(std::ostream& os, const HistogramGrid& grid) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf.precision(17);
  buf << "LBFP1 " << grid.dim() << ' ' << grid.bin_width() << '\n';
  for (std::size_t a = 0; a < grid.dim(); ++a)
    buf << "axis " << a << ' ' << grid.origin()[a] << ' ' << grid.counts()[a] << '\n';
  buf << "total_weight " << grid.total_weight() << '\n';
  buf << "heights\n";
  const std::size_t row = grid.counts().back();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    buf << grid.heights()[k];
    buf << ((k + 1) % row == 0 ? '\n' : ' ');
  }
  os << buf.str();
}

std::string serialize_grid(const HistogramGrid& grid) {
  std::ostringstream os;
  write_grid(os, grid);
  return os.str();
}

namespace {

struct Token {
  std::string_view text;
  std::size_t line;
  std::size_t column;
};

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) {
    std::size_t line = 1;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view ln = text.substr(pos, end - pos);
      std::vector<Token> toks;
      std::size_t i = 0;
      while (i < ln.size()) {
        while (i < ln.size() && std::isspace(static_cast<unsigned char>(ln[i]))) ++i;
        if (i >= ln.size()) break;
        const std::size_t start = i;
        while (i < ln.size() && !std::isspace(static_cast<unsigned char>(ln[i]))) ++i;
        toks.push_back({ln.substr(start, i - start), line, start + 1});
      }
      if (!toks.empty() && toks.front().text.front() != '#') lines_.push_back(std::move(toks));
      pos = end + 1;
      ++line;
    }
    last_line_ = line;
  }

  bool done() const { return cur_ >= lines_.size(); }
  const std::vector<Token>& next_line(const char* expecting) {
    if (done()) throw ParseError(last_line_, 1, std::string("unexpected end of input, expected ") + expecting);
    return lines_[cur_++];
  }
  std::size_t last_line() const { return last_line_; }
  const std::vector<std::vector<Token>>& lines() const { return lines_; }
  std::size_t cursor() const { return cur_; }

 private:
  std::vector<std::vector<Token>> lines_;
  std::size_t cur_ = 0;
  std::size_t last_line_ = 1;
};

double parse_double(const Token& t) {
  double v = 0.0;
  const auto* b = t.text.data();
  const auto* e = b + t.text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v))
    throw ParseError(t.line, t.column, "expected a finite number, got '" + std::string(t.text) + "'");
  return v;
}

std::size_t parse_size(const Token& t) {
  std::size_t v = 0;
  const auto* b = t.text.data();
  const auto* e = b + t.text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e)
    throw ParseError(t.line, t.column, "expected a non-negative integer, got '" + std::string(t.text) + "'");
  return v;
}

void expect_word(const Token& t, std::string_view word) {
  if (t.text != word)
    throw ParseError(t.line, t.column, "expected '" + std::string(word) + "', got '" + std::string(t.text) + "'");
}

void expect_arity(const std::vector<Token>& ln, std::size_t n) {
  if (ln.size() != n) {
    const Token& t = ln.size() > n ? ln[n] : ln.back();
    throw ParseError(t.line, t.column, "expected " + std::to_string(n) + " fields on this line");
  }
}

}  // namespace

HistogramGrid deserialize_grid(std::string_view text) {
  Tokenizer tz(text);
  if (tz.done()) throw ParseError(1, 1, "empty input");

  const auto& header = tz.next_line("header");
  expect_word(header[0], "LBFP1");
  expect_arity(header, 3);
  const std::size_t d = parse_size(header[1]);
  if (d == 0 || d > kMaxDim) throw ParseError(header[1].line, header[1].column, "dimension must be in 1..16");
  const double h = parse_double(header[2]);
  if (!(h > 0.0)) throw ParseError(header[2].line, header[2].column, "bin width must be positive");

  std::vector<double> origin(d);
  std::vector<std::size_t> counts(d);
  for (std::size_t a = 0; a < d; ++a) {
    const auto& ln = tz.next_line("axis line");
    expect_word(ln[0], "axis");
    expect_arity(ln, 4);
    if (parse_size(ln[1]) != a) throw ParseError(ln[1].line, ln[1].column, "axes must be listed in order");
    origin[a] = parse_double(ln[2]);
    counts[a] = parse_size(ln[3]);
    if (counts[a] == 0) throw ParseError(ln[3].line, ln[3].column, "axis needs at least one bin");
  }

  double total_weight = 0.0;
  const auto* marker = &tz.next_line("'heights'");
  if ((*marker)[0].text == "total_weight") {
    expect_arity(*marker, 2);
    total_weight = parse_double((*marker)[1]);
    if (total_weight < 0.0) throw ParseError((*marker)[1].line, (*marker)[1].column, "negative total weight");
    marker = &tz.next_line("'heights'");
  }
  expect_word((*marker)[0], "heights");
  expect_arity(*marker, 1);

  std::size_t expected = 1;
  for (std::size_t c : counts) {
    if (expected > kMaxBins / c) throw ParseError(marker->front().line, 1, "grid too large");
    expected *= c;
  }
  std::vector<double> heights;
  heights.reserve(expected);
  while (!tz.done()) {
    for (const Token& t : tz.next_line("heights")) {
      if (heights.size() == expected) throw ParseError(t.line, t.column, "more heights than bins");
      const double v = parse_double(t);
      if (v < 0.0) throw ParseError(t.line, t.column, "negative height");
      heights.push_back(v);
    }
  }
  if (heights.size() != expected)
    throw ParseError(tz.last_line(), 1,
                     "expected " + std::to_string(expected) + " heights, found " + std::to_string(heights.size()));
  return HistogramGrid(std::move(origin), h, std::move(counts), std::move(heights), total_weight);
}

}  // namespace npis::lbfp
