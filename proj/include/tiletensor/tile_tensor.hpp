#pragma once

// The tile tensor data structure: a tensor packed into fixed-width tiles,
// addressed through the logical-index map
//
//   j_i = l_i * t_i + floor(h / prod_{x>i} t_x) mod t_i
//
// for tile (l_1..l_k) and slot h.  Packing, unpacking, elementwise
// operators, dimension summation, mask cleaning, and replication all live
// here; they reduce to the backend's add/mul/mask/rotate primitives.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "tiletensor/backend.hpp"
#include "tiletensor/dense.hpp"
#include "tiletensor/rotate_sum.hpp"
#include "tiletensor/shape.hpp"

namespace tiletensor {

namespace detail {

inline std::vector<std::int64_t> tile_strides(const TileTensorShape& shape) {
  std::vector<std::int64_t> strides(shape.rank());
  std::int64_t s = 1;
  for (std::size_t i = shape.rank(); i-- > 0;) {
    strides[i] = s;
    s *= shape.dim(i).t;
  }
  return strides;
}

inline std::vector<std::int64_t> row_major_strides(std::span<const std::int64_t> extents) {
  std::vector<std::int64_t> strides(extents.size());
  std::int64_t s = 1;
  for (std::size_t i = extents.size(); i-- > 0;) {
    strides[i] = s;
    s *= extents[i];
  }
  return strides;
}

// Worker-pool loop used for independent per-tile work.  The thread count is
// a hint (TILETENSOR_THREADS); results never depend on it.
inline int thread_hint() {
  static const int hint = [] {
    const char* env = std::getenv("TILETENSOR_THREADS");
    if (env == nullptr) return 1;
    const int v = std::atoi(env);
    return v < 1 ? 1 : (v > 64 ? 64 : v);
  }();
  return hint;
}

template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
  const int threads = static_cast<int>(std::min<std::int64_t>(thread_hint(), count));
  if (threads <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// Logical indices of slot h in tile (l_1..l_k).
inline std::vector<std::int64_t> logical_indices(const TileTensorShape& shape,
                                                 std::span<const std::int64_t> tile_index,
                                                 std::int64_t h) {
  if (tile_index.size() != shape.rank()) throw ShapeError("tile index rank mismatch");
  if (h < 0 || h >= shape.tile_slots()) throw ShapeError("slot index out of range");
  const auto ext = shape.external_extents();
  const auto strides = detail::tile_strides(shape);
  std::vector<std::int64_t> j(shape.rank());
  for (std::size_t i = 0; i < shape.rank(); ++i) {
    if (tile_index[i] < 0 || tile_index[i] >= ext[i])
      throw ShapeError("tile index out of range");
    const std::int64_t t = shape.dim(i).t;
    j[i] = tile_index[i] * t + (h / strides[i]) % t;
  }
  return j;
}

// Inverse of logical_indices: the (tile index, slot) holding logical index j.
inline std::pair<std::vector<std::int64_t>, std::int64_t> slot_of(
    const TileTensorShape& shape, std::span<const std::int64_t> j) {
  if (j.size() != shape.rank()) throw ShapeError("logical index rank mismatch");
  const auto ext = shape.external_extents();
  const auto strides = detail::tile_strides(shape);
  std::vector<std::int64_t> l(shape.rank());
  std::int64_t h = 0;
  for (std::size_t i = 0; i < shape.rank(); ++i) {
    const std::int64_t t = shape.dim(i).t;
    if (j[i] < 0 || j[i] >= ext[i] * t) throw ShapeError("logical index out of range");
    l[i] = j[i] / t;
    h += (j[i] % t) * strides[i];
  }
  return {std::move(l), h};
}

class TileTensor {
public:
  TileTensor(TileTensorShape shape, std::vector<Tile> tiles, Session& session)
      : shape_(std::move(shape)), tiles_(std::move(tiles)), session_(&session) {
    if (static_cast<std::int64_t>(tiles_.size()) != shape_.tile_count())
      throw ShapeError("tile count does not match external shape");
  }

  const TileTensorShape& shape() const { return shape_; }
  Session& session() const { return *session_; }
  std::size_t tile_count() const { return tiles_.size(); }
  const std::vector<Tile>& tiles() const { return tiles_; }
  std::vector<Tile>& tiles() { return tiles_; }
  const Tile& tile_at(std::size_t flat) const { return tiles_.at(flat); }

  std::int64_t chain_index() const {
    std::int64_t c = session_->max_chain_index();
    for (const auto& t : tiles_) c = std::min(c, t.chain_index());
    return c;
  }

private:
  TileTensorShape shape_;
  std::vector<Tile> tiles_;
  Session* session_;
};

// Prepend a trivial extent-1 dimension; the tile storage is unchanged.
inline TileTensor with_leading_unit_dim(const TileTensor& t) {
  std::vector<DimSpec> dims;
  dims.reserve(t.shape().rank() + 1);
  dims.push_back(DimSpec{});
  for (const auto& ds : t.shape().dims()) dims.push_back(ds);
  return TileTensor(TileTensorShape(std::move(dims), t.shape().relaxed()), t.tiles(),
                    t.session());
}

inline TileTensor pack(const DenseTensor& tensor, const TileTensorShape& shape,
                       Session& session) {
  if (shape.has_unknown())
    throw ShapeError("pack target shape may not contain '?': " + format_shape(shape));
  if (!shape.relaxed() && shape.tile_slots() != session.slot_count())
    throw ShapeError("shape " + format_shape(shape) + " needs " +
                     std::to_string(shape.tile_slots()) + " slots per tile, backend has " +
                     std::to_string(session.slot_count()));
  if (shape.relaxed() && shape.tile_slots() > session.slot_count())
    throw ShapeError("relaxed shape exceeds the backend slot count");

  const auto extents = shape.tensor_extents();
  const DenseTensor* src = &tensor;
  std::optional<DenseTensor> reshaped;
  if (tensor.shape() != extents) {
    std::int64_t want = 1;
    for (auto e : extents) want *= e;
    if (static_cast<std::int64_t>(tensor.size()) != want)
      throw ShapeError("tensor of " + std::to_string(tensor.size()) +
                       " values cannot pack into " + format_shape(shape));
    reshaped = tensor.reshape(extents);
    src = &*reshaped;
  }

  const auto ext = shape.external_extents();
  const auto ext_strides = detail::row_major_strides(ext);
  const auto t_strides = detail::tile_strides(shape);
  const std::int64_t tile_slots = shape.tile_slots();
  const std::int64_t n_tiles = shape.tile_count();
  const std::size_t s = static_cast<std::size_t>(session.slot_count());
  const std::size_t rank = shape.rank();

  std::vector<Tile> tiles(static_cast<std::size_t>(n_tiles));
  detail::parallel_for(n_tiles, [&](std::int64_t flat) {
    std::vector<double> slots(s, 0.0);
    std::vector<std::int64_t> j(rank), mod(rank);
    for (std::int64_t h = 0; h < tile_slots; ++h) {
      bool used = true;
      for (std::size_t i = 0; i < rank; ++i) {
        const DimSpec& ds = shape.dim(i);
        const std::int64_t l = (flat / ext_strides[i]) % ext[i];
        j[i] = l * ds.t + (h / t_strides[i]) % ds.t;
        if (j[i] >= ds.used()) {
          used = false;
          break;
        }
        mod[i] = j[i] % ds.n;
      }
      if (used) slots[static_cast<std::size_t>(h)] = src->at(mod);
    }
    tiles[static_cast<std::size_t>(flat)] = session.make_tile(slots);
  });
  return TileTensor(shape, std::move(tiles), session);
}

inline DenseTensor unpack(const TileTensor& t) {
  const TileTensorShape& shape = t.shape();
  const auto extents = shape.tensor_extents();
  const auto ext = shape.external_extents();
  const auto ext_strides = detail::row_major_strides(ext);
  const auto t_strides = detail::tile_strides(shape);
  DenseTensor out = DenseTensor::zeros(extents);
  std::size_t flat_out = 0;
  detail::for_each_index(extents, [&](std::span<const std::int64_t> j) {
    std::int64_t tile_flat = 0;
    std::int64_t h = 0;
    for (std::size_t i = 0; i < shape.rank(); ++i) {
      const std::int64_t ti = shape.dim(i).t;
      tile_flat += (j[i] / ti) * ext_strides[i];
      h += (j[i] % ti) * t_strides[i];
    }
    out.values()[flat_out++] =
        t.tile_at(static_cast<std::size_t>(tile_flat)).slots()[static_cast<std::size_t>(h)];
  });
  return out;
}

inline TileTensor tt_elementwise(const TileTensor& a, const TileTensor& b, OpKind op) {
  if (&a.session() != &b.session())
    throw std::invalid_argument("operands belong to different sessions");
  Session& session = a.session();
  const TileTensorShape out_shape = elementwise_result_shape(a.shape(), b.shape(), op);

  const auto ext = out_shape.external_extents();
  const auto ext_strides = detail::row_major_strides(ext);
  const auto ea = a.shape().external_extents();
  const auto ea_strides = detail::row_major_strides(ea);
  const auto eb = b.shape().external_extents();
  const auto eb_strides = detail::row_major_strides(eb);
  const std::int64_t n_tiles = out_shape.tile_count();

  std::vector<Tile> tiles(static_cast<std::size_t>(n_tiles));
  detail::parallel_for(n_tiles, [&](std::int64_t flat) {
    std::int64_t fa = 0, fb = 0;
    for (std::size_t i = 0; i < out_shape.rank(); ++i) {
      const std::int64_t l = (flat / ext_strides[i]) % ext[i];
      fa += (l % ea[i]) * ea_strides[i];
      fb += (l % eb[i]) * eb_strides[i];
    }
    const Tile& ta = a.tile_at(static_cast<std::size_t>(fa));
    const Tile& tb = b.tile_at(static_cast<std::size_t>(fb));
    tiles[static_cast<std::size_t>(flat)] =
        op == OpKind::add ? session.add(ta, tb) : session.mul(ta, tb);
  });
  return TileTensor(out_shape, std::move(tiles), session);
}

inline TileTensor tt_add(const TileTensor& a, const TileTensor& b) {
  return tt_elementwise(a, b, OpKind::add);
}
inline TileTensor tt_mul(const TileTensor& a, const TileTensor& b) {
  return tt_elementwise(a, b, OpKind::mul);
}

// Sum over one dimension (1-based).  The external tensor is reduced along
// the dimension with tile additions, then each remaining tile is summed
// internally by strided rotate-and-sum.  A '?' dimension is handled by
// summing the boundary tiles over their known prefix only and adding them
// separately; that path never claims replication.
inline TileTensor tt_sum(const TileTensor& t, int dim,
                         std::optional<SumVariant> variant = std::nullopt) {
  const TileTensorShape& shape = t.shape();
  const TileTensorShape out_shape = sum_result_shape(shape, dim);
  Session& session = t.session();
  const std::size_t di = static_cast<std::size_t>(dim - 1);
  const DimSpec& ds = shape.dim(di);

  // Degenerate dimension: the contained tensor has one entry, nothing to add.
  if (ds.n == 1 && ds.d > 1) return TileTensor(out_shape, t.tiles(), session);

  const auto ext = shape.external_extents();
  const auto ext_strides = detail::row_major_strides(ext);
  const std::int64_t ei = ext[di];
  const std::int64_t stride = detail::tile_strides(shape)[di];

  const bool boundary_split = ds.unknown && ds.used() % ds.t != 0;
  const std::int64_t known_tail = ds.used() - (ei - 1) * ds.t;

  // Iterate over all external positions with the summed coordinate pinned to
  // zero; that enumeration is exactly the result's external order.
  auto group_extents = ext;
  group_extents[di] = 1;
  const std::int64_t n_groups = out_shape.tile_count();
  std::vector<Tile> tiles(static_cast<std::size_t>(n_groups));

  std::size_t flat_out = 0;
  detail::for_each_index(group_extents, [&](std::span<const std::int64_t> g) {
    std::int64_t base = 0;
    for (std::size_t i = 0; i < shape.rank(); ++i) base += g[i] * ext_strides[i];
    const std::int64_t step = ext_strides[di];
    auto tile_in = [&](std::int64_t li) -> const Tile& {
      return t.tile_at(static_cast<std::size_t>(base + li * step));
    };

    Tile acc;
    if (!boundary_split) {
      acc = tile_in(0);
      for (std::int64_t li = 1; li < ei; ++li) acc = session.add(acc, tile_in(li));
      if (ds.t > 1)
        acc = sum_tile_strided(session, acc, ds.t, stride,
                               variant.value_or(auto_variant(ds.t)));
    } else {
      Tile tail = tile_in(ei - 1);
      if (known_tail > 1)
        tail = sum_tile_strided(session, tail, known_tail, stride,
                                variant.value_or(auto_variant(known_tail)));
      if (ei > 1) {
        Tile head = tile_in(0);
        for (std::int64_t li = 1; li < ei - 1; ++li) head = session.add(head, tile_in(li));
        if (ds.t > 1)
          head = sum_tile_strided(session, head, ds.t, stride,
                                  variant.value_or(auto_variant(ds.t)));
        acc = session.add(head, tail);
      } else {
        acc = tail;
      }
    }
    tiles[flat_out++] = std::move(acc);
  });
  return TileTensor(out_shape, std::move(tiles), session);
}

// Multiply by the 0/1 indicator of used slots, clearing every '?' flag.
// Costs one plaintext multiplication per tile (and one chain level); a shape
// without unknowns is returned as is, at zero cost.
inline TileTensor clean_unknowns(const TileTensor& t) {
  const TileTensorShape& shape = t.shape();
  if (!shape.has_unknown()) return t;
  Session& session = t.session();

  const auto ext = shape.external_extents();
  const auto ext_strides = detail::row_major_strides(ext);
  const auto t_strides = detail::tile_strides(shape);
  const std::int64_t tile_slots = shape.tile_slots();
  const std::size_t s = static_cast<std::size_t>(session.slot_count());

  std::vector<Tile> tiles(t.tile_count());
  detail::parallel_for(static_cast<std::int64_t>(t.tile_count()), [&](std::int64_t flat) {
    std::vector<double> mask(s, 0.0);
    for (std::int64_t h = 0; h < tile_slots; ++h) {
      bool used = true;
      for (std::size_t i = 0; i < shape.rank(); ++i) {
        const DimSpec& ds = shape.dim(i);
        const std::int64_t l = (flat / ext_strides[i]) % ext[i];
        const std::int64_t j = l * ds.t + (h / t_strides[i]) % ds.t;
        if (j >= ds.used()) {
          used = false;
          break;
        }
      }
      if (used) mask[static_cast<std::size_t>(h)] = 1.0;
    }
    tiles[static_cast<std::size_t>(flat)] = session.mask_mul(t.tile_at(flat), mask);
  });

  std::vector<DimSpec> dims = shape.dims();
  for (auto& d : dims) d.unknown = false;
  return TileTensor(TileTensorShape(std::move(dims), shape.relaxed()), std::move(tiles),
                    session);
}

// Turn a clean degenerate dimension (1/t) into a fully replicated one (*/t)
// by accumulating negative power-of-two shifts; costs at most ceil(log2 t)
// rotations and additions per tile and no chain level.
inline TileTensor replicate_dim(const TileTensor& t, int dim) {
  const TileTensorShape& shape = t.shape();
  if (dim < 1 || static_cast<std::size_t>(dim) > shape.rank())
    throw ShapeError("replicate dimension out of range");
  const std::size_t di = static_cast<std::size_t>(dim - 1);
  const DimSpec& ds = shape.dim(di);
  if (ds.unknown)
    throw ShapeError("replicate_dim requires a clean dimension (run clean_unknowns first)");
  if (ds.n != 1 || ds.d != 1)
    throw ShapeError("replicate_dim requires a degenerate dimension (n=1, d=1)");
  if (shape.relaxed())
    throw ShapeError("replicate_dim is not defined for relaxed shapes");
  if (ds.t == 1) return t;

  Session& session = t.session();
  std::vector<std::int64_t> tile_extents;
  for (const auto& d : shape.dims()) tile_extents.push_back(d.t);

  std::vector<Tile> tiles(t.tile_count());
  detail::parallel_for(static_cast<std::int64_t>(t.tile_count()), [&](std::int64_t flat) {
    tiles[static_cast<std::size_t>(flat)] =
        replicate_tile_dim(session, t.tile_at(static_cast<std::size_t>(flat)), tile_extents,
                           dim);
  });
  DimSpec r;
  r.n = 1;
  r.d = ds.t;
  r.t = ds.t;
  return TileTensor(shape.with_dim(di, r), std::move(tiles), session);
}

}  // namespace tiletensor
