#pragma once

// Plaintext dense tensors with broadcasting elementwise operators and
// dimension summation.  This is the reference the packed operators are
// checked against.  Storage is row-major.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tiletensor/shape.hpp"  // OpKind, ShapeError

namespace tiletensor {

class DenseTensor {
public:
  DenseTensor(std::vector<std::int64_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty()) throw std::invalid_argument("tensor rank must be >= 1");
    std::int64_t n = 1;
    for (auto e : shape_) {
      if (e < 1) throw std::invalid_argument("tensor extents must be positive");
      n *= e;
    }
    if (n != static_cast<std::int64_t>(values_.size()))
      throw std::invalid_argument("value count " + std::to_string(values_.size()) +
                                  " does not match shape product " + std::to_string(n));
  }

  static DenseTensor zeros(std::vector<std::int64_t> shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return DenseTensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t extent(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  double at(std::span<const std::int64_t> idx) const { return values_[flatten(idx)]; }
  double& at(std::span<const std::int64_t> idx) { return values_[flatten(idx)]; }

  double operator()(std::int64_t i) const { return at(std::array{i}); }
  double operator()(std::int64_t i, std::int64_t j) const { return at(std::array{i, j}); }
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return at(std::array{i, j, k});
  }

  // Metadata-only reshape; the value order is untouched.
  DenseTensor reshape(std::vector<std::int64_t> new_shape) const {
    std::int64_t n = 1;
    for (auto e : new_shape) n *= e;
    if (n != static_cast<std::int64_t>(values_.size()))
      throw std::invalid_argument("reshape must preserve the element count");
    return DenseTensor(std::move(new_shape), values_);
  }

  std::size_t flatten(std::span<const std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("index rank mismatch");
    std::size_t f = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= shape_[i]) throw std::out_of_range("tensor index out of range");
      f = f * static_cast<std::size_t>(shape_[i]) + static_cast<std::size_t>(idx[i]);
    }
    return f;
  }

  bool operator==(const DenseTensor&) const = default;

private:
  std::vector<std::int64_t> shape_;
  std::vector<double> values_;
};

namespace detail {

// Row-major odometer over a box of extents; calls fn with the index vector.
template <typename Fn>
void for_each_index(std::span<const std::int64_t> extents, Fn&& fn) {
  std::vector<std::int64_t> idx(extents.size(), 0);
  while (true) {
    fn(std::span<const std::int64_t>(idx));
    std::size_t i = idx.size();
    while (i > 0) {
      --i;
      if (++idx[i] < extents[i]) break;
      idx[i] = 0;
      if (i == 0) return;
    }
  }
}

}  // namespace detail

// Extended elementwise: extents must match or be 1; a degenerate dimension
// broadcasts by indexing mod its extent.
inline DenseTensor dense_elementwise(const DenseTensor& a, const DenseTensor& b, OpKind op) {
  if (a.rank() != b.rank())
    throw ShapeError("dense elementwise: rank mismatch");
  std::vector<std::int64_t> out_shape(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    const auto na = a.extent(i);
    const auto nb = b.extent(i);
    if (na != nb && na != 1 && nb != 1)
      throw ShapeError("dense elementwise: incompatible extents at dimension " +
                       std::to_string(i + 1));
    out_shape[i] = std::max(na, nb);
  }
  DenseTensor out = DenseTensor::zeros(out_shape);
  std::vector<std::int64_t> ia(a.rank()), ib(a.rank());
  detail::for_each_index(out_shape, [&](std::span<const std::int64_t> idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ia[i] = idx[i] % a.extent(i);
      ib[i] = idx[i] % b.extent(i);
    }
    const double va = a.at(ia);
    const double vb = b.at(ib);
    out.at(idx) = op == OpKind::add ? va + vb : va * vb;
  });
  return out;
}

inline DenseTensor dense_sum(const DenseTensor& a, int dim) {
  if (dim < 1 || static_cast<std::size_t>(dim) > a.rank())
    throw ShapeError("dense sum: dimension out of range");
  const std::size_t i = static_cast<std::size_t>(dim - 1);
  std::vector<std::int64_t> out_shape = a.shape();
  out_shape[i] = 1;
  DenseTensor out = DenseTensor::zeros(out_shape);
  std::vector<std::int64_t> src(a.rank());
  detail::for_each_index(a.shape(), [&](std::span<const std::int64_t> idx) {
    for (std::size_t k = 0; k < idx.size(); ++k) src[k] = idx[k];
    src[i] = 0;
    out.at(src) += a.at(idx);
  });
  return out;
}

inline DenseTensor dense_matmul(const DenseTensor& a, const DenseTensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  if (a.extent(1) != b.extent(0))
    throw ShapeError("matmul: inner extents differ (" + std::to_string(a.extent(1)) + " vs " +
                     std::to_string(b.extent(0)) + ")");
  const auto m = a.extent(0), k = a.extent(1), n = b.extent(1);
  DenseTensor out = DenseTensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t x = 0; x < k; ++x) acc += a(i, x) * b(x, j);
      out.at(std::array{i, j}) = acc;
    }
  return out;
}

// Second route for the matrix product: reshape to [a,b,1] and [1,b,c],
// broadcast-multiply, and sum the shared dimension.
inline DenseTensor dense_matmul_via_broadcast(const DenseTensor& a, const DenseTensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  const auto m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (k != b.extent(0)) throw ShapeError("matmul: inner extents differ");
  const DenseTensor a3 = a.reshape({m, k, 1});
  const DenseTensor b3 = b.reshape({1, k, n});
  const DenseTensor prod = dense_elementwise(a3, b3, OpKind::mul);
  return dense_sum(prod, 2).reshape({m, n});
}

inline DenseTensor transpose2d(const DenseTensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a rank-2 tensor");
  const auto r = a.extent(0), c = a.extent(1);
  DenseTensor out = DenseTensor::zeros({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(std::array{j, i}) = a(i, j);
  return out;
}

inline double max_rel_diff(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double va = a.values()[i];
    const double vb = b.values()[i];
    const double denom = std::max({std::abs(va), std::abs(vb), 1.0});
    worst = std::max(worst, std::abs(va - vb) / denom);
  }
  return worst;
}

// --- text file format -------------------------------------------------------
// Line 1: "shape: n1 n2 ... nk", then whitespace-separated values in
// row-major order.  Lines starting with '#' are comments.

inline DenseTensor read_tensor(std::istream& in) {
  std::string line;
  std::vector<std::int64_t> shape;
  while (std::getline(in, line)) {
    auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    std::istringstream ls(line.substr(pos));
    std::string tag;
    ls >> tag;
    if (tag != "shape:")
      throw std::runtime_error("tensor file must start with a 'shape:' line");
    std::int64_t e;
    while (ls >> e) shape.push_back(e);
    break;
  }
  if (shape.empty()) throw std::runtime_error("tensor file has no shape line");
  std::vector<double> values;
  while (std::getline(in, line)) {
    auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    std::istringstream ls(line.substr(pos));
    double v;
    while (ls >> v) values.push_back(v);
    if (!ls.eof()) throw std::runtime_error("malformed value in tensor file");
  }
  return DenseTensor(std::move(shape), std::move(values));
}

inline void write_tensor(std::ostream& out, const DenseTensor& t) {
  out << "shape:";
  for (auto e : t.shape()) out << ' ' << e;
  out << '\n';
  const std::int64_t row = t.shape().back();
  out.precision(17);
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << t.values()[i];
    out << (((i + 1) % static_cast<std::size_t>(row) == 0) ? '\n' : ' ');
  }
}

}  // namespace tiletensor
