#pragma once

// Rotate-and-sum reductions over a single tile.  Both variants are adapted
// from repeated-squaring power evaluation: with Lx defined as the vector of
// running sums Lx{j} = L{j} + ... + L{j+x-1}, the merge Lx (+) Ly =
// Lx + rot(Ly, x) obeys Lx (+) Ly = L^(x+y), so any power-evaluation
// schedule computes Ln.  The right-to-left variant only ever rotates by
// powers of two.

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>

#include "tiletensor/backend.hpp"

namespace tiletensor {

enum class SumVariant { left_to_right, right_to_left, power_of_two };

namespace detail {

inline int num_bits(std::int64_t n) {
  return 64 - std::countl_zero(static_cast<std::uint64_t>(n));
}

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace detail

// Closed-form rotation counts for the two schedules.
inline std::int64_t rotations_left_to_right(std::int64_t n) {
  return (detail::num_bits(n) - 1) + (std::popcount(static_cast<std::uint64_t>(n)) - 1);
}

inline std::int64_t rotations_right_to_left(std::int64_t n) {
  return (detail::num_bits(n) - 1) + std::popcount(static_cast<std::uint64_t>(n)) - 1;
}

// Sum of n consecutive elements with a fixed stride between them:
// result{j} = sum_{x<n} input{j + x*stride}.  With stride 1 this is the flat
// Ln vector; slot 0 then holds the sum of the first n elements.
inline Tile sum_tile_strided(Session& session, const Tile& tile, std::int64_t n,
                             std::int64_t stride, SumVariant variant) {
  if (n < 1 || n > session.slot_count())
    throw std::invalid_argument("sum length must be in [1, slot count]");
  if (n == 1) return tile;

  switch (variant) {
    case SumVariant::power_of_two: {
      if (!detail::is_pow2(n))
        throw std::invalid_argument("power_of_two variant requires a power-of-two length");
      Tile s = tile;
      for (std::int64_t e = 1; e < n; e *= 2) s = session.add(s, session.rotate(s, e * stride));
      return s;
    }
    case SumVariant::left_to_right: {
      Tile s = tile;
      std::int64_t e = 1;
      for (int j = detail::num_bits(n) - 2; j >= 0; --j) {
        s = session.add(s, session.rotate(s, e * stride));
        e *= 2;
        if ((n >> j) & 1) {
          s = session.add(tile, session.rotate(s, stride));
          e += 1;
        }
      }
      return s;
    }
    case SumVariant::right_to_left: {
      Tile x = tile;
      std::optional<Tile> y;
      std::int64_t e = 1;
      std::int64_t m = n;
      while (true) {
        if (m % 2 == 1) {
          y = y ? session.add(x, session.rotate(*y, e * stride)) : x;
          m = (m - 1) / 2;
        } else {
          m = m / 2;
        }
        if (m == 0) return *y;
        x = session.add(x, session.rotate(x, e * stride));
        e *= 2;
      }
    }
  }
  throw std::logic_error("unreachable");
}

inline Tile sum_tile_flat(Session& session, const Tile& tile, std::int64_t n,
                          SumVariant variant) {
  return sum_tile_strided(session, tile, n, 1, variant);
}

// Picks the cheapest valid schedule: the collapsed power-of-two loop when the
// length allows it, the right-to-left variant otherwise.
inline SumVariant auto_variant(std::int64_t n) {
  return detail::is_pow2(n) ? SumVariant::power_of_two : SumVariant::right_to_left;
}

// Sum along one dimension of a tile reinterpreted as a tensor of the given
// extents.  Rotations move in strides of the product of the later extents.
// For the first dimension the strided rotation is a true cyclic rotation
// along that dimension, so the result is replicated there; for later
// dimensions the slots vacated by the shift hold crossover values and only
// the leading position per block is meaningful.
inline Tile sum_tile_dim(Session& session, const Tile& tile,
                         std::span<const std::int64_t> tile_extents, int dim,
                         std::optional<SumVariant> variant = std::nullopt) {
  if (dim < 1 || static_cast<std::size_t>(dim) > tile_extents.size())
    throw std::invalid_argument("tile dimension out of range");
  std::int64_t stride = 1;
  for (std::size_t x = static_cast<std::size_t>(dim); x < tile_extents.size(); ++x)
    stride *= tile_extents[x];
  const std::int64_t n = tile_extents[static_cast<std::size_t>(dim - 1)];
  if (n == 1) return tile;
  return sum_tile_strided(session, tile, n, stride, variant.value_or(auto_variant(n)));
}

// Spread the value at the leading position of each block across the whole
// dimension: the right-to-left schedule run in reverse, with negative
// power-of-two shifts.  Writing Rx for a prefix of x copies, the merge
// Rx (+) Ry = Rx + rot(Ry, -x) appends without overlap, so the same binary
// decomposition that sums t elements replicates to t copies.  Requires the
// rest of the dimension to hold zeros.
inline Tile replicate_tile_dim(Session& session, const Tile& tile,
                               std::span<const std::int64_t> tile_extents, int dim) {
  if (dim < 1 || static_cast<std::size_t>(dim) > tile_extents.size())
    throw std::invalid_argument("tile dimension out of range");
  std::int64_t stride = 1;
  for (std::size_t x = static_cast<std::size_t>(dim); x < tile_extents.size(); ++x)
    stride *= tile_extents[x];
  const std::int64_t t = tile_extents[static_cast<std::size_t>(dim - 1)];
  if (t == 1) return tile;
  Tile x = tile;
  std::optional<Tile> y;
  std::int64_t e = 1;
  std::int64_t m = t;
  while (true) {
    if (m % 2 == 1) {
      y = y ? session.add(x, session.rotate(*y, -e * stride)) : x;
      m = (m - 1) / 2;
    } else {
      m = m / 2;
    }
    if (m == 0) return *y;
    x = session.add(x, session.rotate(x, -e * stride));
    e *= 2;
  }
}

}  // namespace tiletensor
