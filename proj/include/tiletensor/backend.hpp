#pragma once

// Mock SIMD tile backend.  Tiles are fixed-width slot vectors supporting
// only what an HE scheme would offer: elementwise add/mul, plaintext (mask)
// multiply, and cyclic rotation.  A Session owns the configuration and
// counts every primitive; each tile carries a chain index that drops on
// multiplications and is restored by an explicit (counted) bootstrap.

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tiletensor {

class DepthExhaustedError : public std::runtime_error {
public:
  explicit DepthExhaustedError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BackendConfig {
  std::int64_t slot_count = 1;
  std::int64_t max_chain_index = 1;  // multiplication depth
};

struct CostReport {
  std::uint64_t additions = 0;
  std::uint64_t multiplications = 0;        // tile x tile
  std::uint64_t mask_multiplications = 0;   // tile x plaintext
  std::uint64_t rotations = 0;
  std::uint64_t bootstraps = 0;
  std::uint64_t power_of_two_rotations = 0;  // extended report only

  std::string to_text(bool extended = false) const {
    std::string out;
    out += "additions=" + std::to_string(additions) + "\n";
    out += "multiplications=" + std::to_string(multiplications) + "\n";
    out += "mask_multiplications=" + std::to_string(mask_multiplications) + "\n";
    out += "rotations=" + std::to_string(rotations) + "\n";
    out += "bootstraps=" + std::to_string(bootstraps) + "\n";
    if (extended)
      out += "power_of_two_rotations=" + std::to_string(power_of_two_rotations) + "\n";
    return out;
  }

  // Counters accumulated since an earlier snapshot.
  CostReport since(const CostReport& base) const {
    CostReport r;
    r.additions = additions - base.additions;
    r.multiplications = multiplications - base.multiplications;
    r.mask_multiplications = mask_multiplications - base.mask_multiplications;
    r.rotations = rotations - base.rotations;
    r.bootstraps = bootstraps - base.bootstraps;
    r.power_of_two_rotations = power_of_two_rotations - base.power_of_two_rotations;
    return r;
  }

  std::uint64_t total_ops() const {
    return additions + multiplications + mask_multiplications + rotations + bootstraps;
  }
};

class Tile {
public:
  Tile() = default;

  const std::vector<double>& slots() const { return slots_; }
  std::vector<double>& slots() { return slots_; }
  std::size_t size() const { return slots_.size(); }
  std::int64_t chain_index() const { return chain_; }

private:
  friend class Session;
  Tile(std::vector<double> slots, std::int64_t chain)
      : slots_(std::move(slots)), chain_(chain) {}

  std::vector<double> slots_;
  std::int64_t chain_ = 0;
};

class Session {
public:
  explicit Session(BackendConfig cfg) : cfg_(cfg) {
    if (cfg_.slot_count < 1) throw std::invalid_argument("slot count must be >= 1");
    if (cfg_.max_chain_index < 1)
      throw std::invalid_argument("max chain index must be >= 1");
  }
  Session(std::int64_t slots, std::int64_t depth)
      : Session(BackendConfig{slots, depth}) {}

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::int64_t slot_count() const { return cfg_.slot_count; }
  std::int64_t max_chain_index() const { return cfg_.max_chain_index; }
  const BackendConfig& config() const { return cfg_; }

  Tile make_tile(std::span<const double> values) const {
    if (static_cast<std::int64_t>(values.size()) != cfg_.slot_count)
      throw std::invalid_argument("tile expects " + std::to_string(cfg_.slot_count) +
                                  " values, got " + std::to_string(values.size()));
    return Tile(std::vector<double>(values.begin(), values.end()), cfg_.max_chain_index);
  }

  Tile zero_tile() const {
    return Tile(std::vector<double>(static_cast<std::size_t>(cfg_.slot_count), 0.0),
                cfg_.max_chain_index);
  }

  Tile constant_tile(double value) const {
    return Tile(std::vector<double>(static_cast<std::size_t>(cfg_.slot_count), value),
                cfg_.max_chain_index);
  }

  Tile add(const Tile& a, const Tile& b) {
    check_width(a);
    check_width(b);
    std::vector<double> out(a.slots_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.slots_[i] + b.slots_[i];
    adds_.fetch_add(1, std::memory_order_relaxed);
    return Tile(std::move(out), std::min(a.chain_, b.chain_));
  }

  Tile mul(const Tile& a, const Tile& b) {
    check_width(a);
    check_width(b);
    const std::int64_t chain = std::min(a.chain_, b.chain_);
    if (chain < 1)
      throw DepthExhaustedError("multiplication at chain index 0 (bootstrap required)");
    std::vector<double> out(a.slots_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.slots_[i] * b.slots_[i];
    muls_.fetch_add(1, std::memory_order_relaxed);
    return Tile(std::move(out), chain - 1);
  }

  Tile mask_mul(const Tile& a, std::span<const double> mask) {
    check_width(a);
    if (static_cast<std::int64_t>(mask.size()) != cfg_.slot_count)
      throw std::invalid_argument("mask length does not match slot count");
    if (a.chain_ < 1)
      throw DepthExhaustedError("plaintext multiplication at chain index 0 (bootstrap required)");
    std::vector<double> out(a.slots_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.slots_[i] * mask[i];
    masks_.fetch_add(1, std::memory_order_relaxed);
    return Tile(std::move(out), a.chain_ - 1);
  }

  // Cyclic left rotation: result{j} = input{j+offset}.  Offsets are taken
  // mod s; a zero net offset emits no operation and is not counted.
  Tile rotate(const Tile& a, std::int64_t offset) {
    check_width(a);
    const std::int64_t s = cfg_.slot_count;
    std::int64_t r = ((offset % s) + s) % s;
    if (r == 0) return a;
    std::vector<double> out(a.slots_.size());
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = a.slots_[(j + static_cast<std::size_t>(r)) % out.size()];
    rots_.fetch_add(1, std::memory_order_relaxed);
    if ((r & (r - 1)) == 0) rots_pow2_.fetch_add(1, std::memory_order_relaxed);
    return Tile(std::move(out), a.chain_);
  }

  Tile bootstrap(const Tile& a) {
    check_width(a);
    boots_.fetch_add(1, std::memory_order_relaxed);
    return Tile(a.slots_, cfg_.max_chain_index);
  }

  CostReport cost_report() const {
    CostReport r;
    r.additions = adds_.load(std::memory_order_relaxed);
    r.multiplications = muls_.load(std::memory_order_relaxed);
    r.mask_multiplications = masks_.load(std::memory_order_relaxed);
    r.rotations = rots_.load(std::memory_order_relaxed);
    r.bootstraps = boots_.load(std::memory_order_relaxed);
    r.power_of_two_rotations = rots_pow2_.load(std::memory_order_relaxed);
    return r;
  }

  void reset_counters() {
    adds_ = 0;
    muls_ = 0;
    masks_ = 0;
    rots_ = 0;
    boots_ = 0;
    rots_pow2_ = 0;
  }

private:
  void check_width(const Tile& t) const {
    if (static_cast<std::int64_t>(t.slots_.size()) != cfg_.slot_count)
      throw std::invalid_argument("tile belongs to a backend with a different slot count");
  }

  BackendConfig cfg_;
  std::atomic<std::uint64_t> adds_{0};
  std::atomic<std::uint64_t> muls_{0};
  std::atomic<std::uint64_t> masks_{0};
  std::atomic<std::uint64_t> rots_{0};
  std::atomic<std::uint64_t> boots_{0};
  std::atomic<std::uint64_t> rots_pow2_{0};
};

}  // namespace tiletensor
