#pragma once

// Tile tensor shape notation: grammar, parser, canonical printer, and the
// shape algebra (external extents, elementwise compatibility, summation
// rules).
//
// A shape like [5/2,*3/4,1?/8] has one entry per dimension.  Each entry
// carries the original tensor extent n, a replication count d, the tile
// extent t, and an "unknown" flag meaning unused slots along the dimension
// may hold arbitrary values.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tiletensor {

class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeParseError : public ShapeError {
public:
  ShapeParseError(const std::string& msg, std::size_t position)
      : ShapeError(msg + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const { return position_; }

private:
  std::size_t position_;
};

struct DimSpec {
  std::int64_t n = 1;  // original tensor extent
  std::int64_t d = 1;  // physical replication count
  std::int64_t t = 1;  // tile extent along this dimension
  bool unknown = false;

  // Slots along this dimension that hold data (values or replicas).
  std::int64_t used() const { return n * d; }
  // A fully replicated degenerate dimension can broadcast against any extent.
  bool fully_replicated() const { return n == 1 && d == t; }

  bool operator==(const DimSpec&) const = default;
};

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return (a + b - 1) / b;
}

inline void check_dim_spec(const DimSpec& ds, std::size_t dim_index) {
  auto fail = [&](const std::string& what) {
    throw ShapeError("dimension " + std::to_string(dim_index + 1) + ": " + what);
  };
  if (ds.n < 1 || ds.d < 1 || ds.t < 1) fail("extents must be positive");
  if (ds.d > 1 && ds.n > 1) fail("replication requires original extent 1");
  if (ds.d > ds.t)
    fail("replication count " + std::to_string(ds.d) + " exceeds tile extent " +
         std::to_string(ds.t));
}

}  // namespace detail

using ExternalShape = std::vector<std::int64_t>;

class TileTensorShape {
public:
  explicit TileTensorShape(std::vector<DimSpec> dims, bool relaxed = false)
      : dims_(std::move(dims)), relaxed_(relaxed) {
    if (dims_.empty()) throw ShapeError("shape must have at least one dimension");
    for (std::size_t i = 0; i < dims_.size(); ++i) detail::check_dim_spec(dims_[i], i);
  }

  std::size_t rank() const { return dims_.size(); }
  const std::vector<DimSpec>& dims() const { return dims_; }
  const DimSpec& dim(std::size_t i) const { return dims_.at(i); }  // 0-based
  bool relaxed() const { return relaxed_; }

  // Product of tile extents; equals the backend slot count unless relaxed.
  std::int64_t tile_slots() const {
    std::int64_t p = 1;
    for (const auto& ds : dims_) p *= ds.t;
    return p;
  }

  std::vector<std::int64_t> tensor_extents() const {
    std::vector<std::int64_t> out;
    out.reserve(dims_.size());
    for (const auto& ds : dims_) out.push_back(ds.n);
    return out;
  }

  ExternalShape external_extents() const {
    ExternalShape out;
    out.reserve(dims_.size());
    for (const auto& ds : dims_) out.push_back(detail::ceil_div(ds.used(), ds.t));
    return out;
  }

  std::int64_t tile_count() const {
    std::int64_t p = 1;
    for (const auto& ds : dims_) p *= detail::ceil_div(ds.used(), ds.t);
    return p;
  }

  std::int64_t used_slots() const {
    std::int64_t p = 1;
    for (const auto& ds : dims_) p *= ds.used();
    return p;
  }

  std::int64_t total_slots() const { return tile_count() * tile_slots(); }

  bool has_unknown() const {
    for (const auto& ds : dims_) {
      if (ds.unknown) return true;
    }
    return false;
  }

  TileTensorShape with_dim(std::size_t i, DimSpec ds) const {
    auto dims = dims_;
    dims.at(i) = ds;
    return TileTensorShape(std::move(dims), relaxed_);
  }

  bool operator==(const TileTensorShape&) const = default;

private:
  std::vector<DimSpec> dims_;
  bool relaxed_;
};

// --- parser ---------------------------------------------------------------

namespace detail {

class ShapeParser {
public:
  explicit ShapeParser(std::string_view text) : text_(text) {}

  TileTensorShape run() {
    skip_ws();
    expect('[');
    std::vector<DimSpec> dims;
    dims.push_back(parse_dim(dims.size()));
    while (peek() == ',') {
      ++pos_;
      dims.push_back(parse_dim(dims.size()));
    }
    expect(']');
    skip_ws();
    if (pos_ != text_.size()) throw ShapeParseError("trailing characters after shape", pos_);
    return TileTensorShape(std::move(dims));
  }

private:
  DimSpec parse_dim(std::size_t dim_index) {
    skip_ws();
    const std::size_t dim_start = pos_;
    DimSpec ds;
    bool have_n = false;
    bool star = false;
    bool star_count = false;

    if (is_digit(peek())) {
      ds.n = parse_int();
      have_n = true;
    }
    skip_ws();
    if (peek() == '*') {
      ++pos_;
      star = true;
      skip_ws();
      if (is_digit(peek())) {
        ds.d = parse_int();
        star_count = true;
      }
    }
    skip_ws();
    if (peek() == '?') {
      ++pos_;
      ds.unknown = true;
    }
    skip_ws();
    if (peek() == '/') {
      ++pos_;
      skip_ws();
      if (!is_digit(peek())) throw ShapeParseError("expected tile extent after '/'", pos_);
      ds.t = parse_int();
    }
    skip_ws();

    if (!have_n && !star)
      throw ShapeParseError("expected dimension extent or '*'", dim_start);
    if (star && !have_n) ds.n = 1;
    if (star && !star_count) ds.d = ds.t;  // bare '*' replicates across the tile

    if (ds.n < 1 || ds.d < 1 || ds.t < 1)
      throw ShapeParseError("extents must be positive", dim_start);
    try {
      check_dim_spec(ds, dim_index);
    } catch (const ShapeError& e) {
      throw ShapeParseError(e.what(), dim_start);
    }
    return ds;
  }

  std::int64_t parse_int() {
    std::int64_t v = 0;
    const std::size_t start = pos_;
    while (is_digit(peek())) {
      v = v * 10 + (text_[pos_] - '0');
      if (v > (std::int64_t{1} << 48)) throw ShapeParseError("integer too large", start);
      ++pos_;
    }
    return v;
  }

  static bool is_digit(char c) { return c >= '0' && c <= '9'; }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void expect(char c) {
    skip_ws();
    if (peek() != c)
      throw ShapeParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t')) {
      ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline TileTensorShape parse_shape(std::string_view text) {
  return detail::ShapeParser(text).run();
}

// Canonical text form: no whitespace, t omitted when 1, '*' alone for full
// replication, '?' after the numerator part.
inline std::string format_shape(const TileTensorShape& shape) {
  std::string out = "[";
  bool first = true;
  for (const auto& ds : shape.dims()) {
    if (!first) out += ',';
    first = false;
    if (ds.n > 1) {
      out += std::to_string(ds.n);
    } else if (ds.d > 1) {
      out += '*';
      if (ds.d < ds.t) out += std::to_string(ds.d);
    } else {
      out += '1';
    }
    if (ds.unknown) out += '?';
    if (ds.t > 1) {
      out += '/';
      out += std::to_string(ds.t);
    }
  }
  out += ']';
  return out;
}

inline ExternalShape external_shape(const TileTensorShape& shape) {
  return shape.external_extents();
}

enum class OpKind { add, mul };

// Compatibility and result shape for elementwise operations.  Per-dimension
// rules: tile extents must match, and the packed extents must match or one
// side must be fully replicated.  The result carries n''=max(n,n'),
// d''=min(d,d'), and '?' when the used ranges differ or an input is already
// unknown.  For multiplication the flag is dropped when one operand is known
// to hold zeros in every slot past the result's used range, since zero
// absorbs whatever the other operand has there.
inline TileTensorShape elementwise_result_shape(const TileTensorShape& a,
                                                const TileTensorShape& b,
                                                OpKind op) {
  if (a.rank() != b.rank())
    throw ShapeError("rank mismatch: " + format_shape(a) + " vs " + format_shape(b));
  std::vector<DimSpec> out;
  out.reserve(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    const DimSpec& da = a.dim(i);
    const DimSpec& db = b.dim(i);
    if (da.t != db.t)
      throw ShapeError("dimension " + std::to_string(i + 1) + ": tile extent mismatch (" +
                       std::to_string(da.t) + " vs " + std::to_string(db.t) + ")");
    const bool compatible =
        da.n == db.n || (da.n == 1 && da.fully_replicated()) ||
        (db.n == 1 && db.fully_replicated());
    if (!compatible)
      throw ShapeError("dimension " + std::to_string(i + 1) + ": incompatible extents " +
                       std::to_string(da.n) + " and " + std::to_string(db.n) +
                       " (neither side fully replicated)");
    DimSpec r;
    r.t = da.t;
    r.n = std::max(da.n, db.n);
    r.d = std::min(da.d, db.d);
    bool unk = da.unknown || db.unknown || da.used() != db.used();
    if (op == OpKind::mul && unk) {
      const std::int64_t used_r = r.used();
      const std::int64_t er = detail::ceil_div(used_r, r.t);
      auto covers = [&](const DimSpec& o) {
        if (o.unknown) return false;
        const std::int64_t eo = detail::ceil_div(o.used(), o.t);
        if (eo < er) {
          // broadcast source: its zeros repeat per tile, so they only cover
          // a tail that stays inside the last tile
          return o.used() <= used_r - (er - 1) * r.t;
        }
        return o.used() <= used_r;
      };
      if (covers(da) || covers(db)) unk = false;
    }
    r.unknown = unk;
    out.push_back(r);
  }
  return TileTensorShape(std::move(out), a.relaxed() || b.relaxed());
}

namespace detail {

inline bool is_lowest_nontrivial(const TileTensorShape& shape, std::size_t i) {
  for (std::size_t j = 0; j < i; ++j) {
    if (shape.dim(j).t > 1) return false;
  }
  return shape.dim(i).t > 1;
}

}  // namespace detail

// Result shape of summing over one dimension (1-based), following the
// summation rules: t=1 collapses to 1; the lowest non-trivial tile dimension
// becomes fully replicated (never for relaxed shapes, where the rotations
// wrap through the padding); any other dimension becomes 1?/t; an unknown
// input dimension always yields 1?/t.  A dimension that is already
// degenerate (n=1 with replication) is left untouched: the contained tensor
// has a single entry there, so the summation is the identity.
inline TileTensorShape sum_result_shape(const TileTensorShape& shape, int dim) {
  if (dim < 1 || static_cast<std::size_t>(dim) > shape.rank())
    throw ShapeError("sum dimension " + std::to_string(dim) + " out of range for " +
                     format_shape(shape));
  const std::size_t i = static_cast<std::size_t>(dim - 1);
  const DimSpec& ds = shape.dim(i);
  DimSpec r;
  r.t = ds.t;
  if (ds.unknown) {
    r.unknown = true;
  } else if (ds.n == 1 && ds.d > 1) {
    r = ds;
  } else if (ds.t == 1) {
    r = DimSpec{};
  } else if (detail::is_lowest_nontrivial(shape, i) && !shape.relaxed()) {
    r.d = ds.t;
  } else {
    r.unknown = true;
  }
  return shape.with_dim(i, r);
}

}  // namespace tiletensor
