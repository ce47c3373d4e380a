// Successive-cancellation list decoding over the natural-order transform,
// LLR domain, with lazy-copied per-level workspaces so that cloning a path
// costs O(1) until one of the copies diverges.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cvqkd/polar.hpp"

namespace cvqkd {

namespace {

double softplus(double t) { return t > 35.0 ? t : std::log1p(std::exp(t)); }

// max*(x, y) = log(e^x + e^y)
double max_star(double x, double y) {
  return std::max(x, y) + std::log1p(std::exp(-std::abs(x - y)));
}

double combine_f_minsum(double a, double b) {
  const double sign = ((a < 0.0) == (b < 0.0)) ? 1.0 : -1.0;
  return sign * std::min(std::abs(a), std::abs(b));
}

// log((1 + e^(a+b)) / (e^a + e^b))
double combine_f_exact(double a, double b) { return max_star(0.0, a + b) - max_star(a, b); }

class ListDecoder {
 public:
  ListDecoder(int n_log2, std::uint32_t list_size, bool exact)
      : n_(n_log2), size_(1u << n_log2), list_(list_size), exact_(exact) {
    llr_.resize(n_ + 1);
    banks_.resize(n_ + 1);
    slot_of_.resize(n_ + 1);
    slot_refs_.resize(n_ + 1);
    free_slots_.resize(n_ + 1);
    for (int lam = 0; lam <= n_; ++lam) {
      const std::size_t m = entries(lam);
      // Workspaces are written before they are read on every decode path, so
      // their contents need not be cleared between runs.
      llr_[lam].resize(static_cast<std::size_t>(list_) * m);
      banks_[lam].resize(static_cast<std::size_t>(list_) * 2 * m);
      slot_of_[lam].resize(list_);
      slot_refs_[lam].resize(list_);
    }
    active_.resize(list_);
    metric_.resize(list_);
  }

  std::vector<SclCandidate> run(const PolarCode& code, std::span<const double> channel_llr,
                                std::span<const std::uint8_t> frozen_values) {
    reset();
    const std::uint32_t first = assign_initial_path();
    std::copy(channel_llr.begin(), channel_llr.end(),
              llr_[0].begin() + static_cast<std::size_t>(slot_of_[0][first]) * size_);
    for (std::uint32_t phase = 0; phase < size_; ++phase) {
      calc_llr(n_, phase);
      if (code.is_frozen[phase]) {
        continue_frozen(phase, frozen_values[phase]);
      } else {
        continue_info(phase);
      }
      if (phase & 1u) update_banks(n_, phase);
    }
    return collect();
  }

 private:
  std::size_t entries(int lam) const { return std::size_t(1) << (n_ - lam); }

  void reset() {
    for (int lam = 0; lam <= n_; ++lam) {
      free_slots_[lam].clear();
      for (std::uint32_t s = 0; s < list_; ++s) free_slots_[lam].push_back(list_ - 1 - s);
      std::fill(slot_refs_[lam].begin(), slot_refs_[lam].end(), 0u);
    }
    free_paths_.clear();
    for (std::uint32_t l = 0; l < list_; ++l) free_paths_.push_back(list_ - 1 - l);
    std::fill(active_.begin(), active_.end(), false);
    std::fill(metric_.begin(), metric_.end(), 0.0);
  }

  std::uint32_t assign_initial_path() {
    const std::uint32_t l = free_paths_.back();
    free_paths_.pop_back();
    active_[l] = true;
    metric_[l] = 0.0;
    for (int lam = 0; lam <= n_; ++lam) {
      const std::uint32_t s = free_slots_[lam].back();
      free_slots_[lam].pop_back();
      slot_of_[lam][l] = s;
      slot_refs_[lam][s] = 1;
    }
    return l;
  }

  std::uint32_t clone_path(std::uint32_t src) {
    const std::uint32_t l = free_paths_.back();
    free_paths_.pop_back();
    active_[l] = true;
    metric_[l] = metric_[src];
    for (int lam = 0; lam <= n_; ++lam) {
      const std::uint32_t s = slot_of_[lam][src];
      slot_of_[lam][l] = s;
      ++slot_refs_[lam][s];
    }
    return l;
  }

  void kill_path(std::uint32_t l) {
    active_[l] = false;
    free_paths_.push_back(l);
    for (int lam = 0; lam <= n_; ++lam) {
      const std::uint32_t s = slot_of_[lam][l];
      if (--slot_refs_[lam][s] == 0) free_slots_[lam].push_back(s);
    }
  }

  // Copy-on-write: returns a slot at this level owned solely by path l.
  std::uint32_t ensure_private(int lam, std::uint32_t l) {
    const std::uint32_t s = slot_of_[lam][l];
    if (slot_refs_[lam][s] == 1) return s;
    const std::uint32_t fresh = free_slots_[lam].back();
    free_slots_[lam].pop_back();
    const std::size_t m = entries(lam);
    std::copy_n(llr_[lam].begin() + static_cast<std::size_t>(s) * m, m,
                llr_[lam].begin() + static_cast<std::size_t>(fresh) * m);
    std::copy_n(banks_[lam].begin() + static_cast<std::size_t>(s) * 2 * m, 2 * m,
                banks_[lam].begin() + static_cast<std::size_t>(fresh) * 2 * m);
    --slot_refs_[lam][s];
    slot_refs_[lam][fresh] = 1;
    slot_of_[lam][l] = fresh;
    return fresh;
  }

  void calc_llr(int lam, std::uint32_t phase) {
    if (lam == 0) return;
    if ((phase & 1u) == 0) calc_llr(lam - 1, phase >> 1);
    const std::size_t m = entries(lam);
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (!active_[l]) continue;
      const double* parent =
          llr_[lam - 1].data() + static_cast<std::size_t>(slot_of_[lam - 1][l]) * 2 * m;
      const std::uint32_t s = ensure_private(lam, l);
      double* cur = llr_[lam].data() + static_cast<std::size_t>(s) * m;
      if ((phase & 1u) == 0) {
        if (exact_) {
          for (std::size_t b = 0; b < m; ++b) cur[b] = combine_f_exact(parent[b], parent[b + m]);
        } else {
          for (std::size_t b = 0; b < m; ++b) cur[b] = combine_f_minsum(parent[b], parent[b + m]);
        }
      } else {
        const std::uint8_t* left = banks_[lam].data() + static_cast<std::size_t>(s) * 2 * m;
        for (std::size_t b = 0; b < m; ++b) {
          cur[b] = left[b] ? parent[b + m] - parent[b] : parent[b + m] + parent[b];
        }
      }
    }
  }

  void update_banks(int lam, std::uint32_t phase) {
    const std::uint32_t parent_phase = phase >> 1;
    const std::size_t m = entries(lam);
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (!active_[l]) continue;
      const std::uint8_t* cur =
          banks_[lam].data() + static_cast<std::size_t>(slot_of_[lam][l]) * 2 * m;
      const std::uint32_t ps = ensure_private(lam - 1, l);
      std::uint8_t* parent = banks_[lam - 1].data() + static_cast<std::size_t>(ps) * 4 * m +
                             static_cast<std::size_t>(parent_phase & 1u) * 2 * m;
      for (std::size_t b = 0; b < m; ++b) {
        parent[b] = cur[b] ^ cur[b + m];
        parent[b + m] = cur[b + m];
      }
    }
    if (parent_phase & 1u) update_banks(lam - 1, parent_phase);
  }

  double penalty(double llr, std::uint8_t bit) const {
    if (exact_) return softplus(bit ? llr : -llr);
    const std::uint8_t hard = llr < 0.0 ? 1 : 0;
    return bit == hard ? 0.0 : std::abs(llr);
  }

  void set_leaf_bit(std::uint32_t l, std::uint32_t phase, std::uint8_t bit) {
    const std::uint32_t s = ensure_private(n_, l);
    banks_[n_][static_cast<std::size_t>(s) * 2 + (phase & 1u)] = bit;
  }

  void continue_frozen(std::uint32_t phase, std::uint8_t value) {
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (!active_[l]) continue;
      const double leaf = llr_[n_][slot_of_[n_][l]];
      metric_[l] += penalty(leaf, value);
      set_leaf_bit(l, phase, value);
    }
  }

  void continue_info(std::uint32_t phase) {
    struct Branch {
      double metric;
      std::uint32_t path;
      std::uint8_t bit;
    };
    std::vector<Branch> branches;
    branches.reserve(2 * list_);
    std::uint32_t active_count = 0;
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (!active_[l]) continue;
      ++active_count;
      const double leaf = llr_[n_][slot_of_[n_][l]];
      branches.push_back({metric_[l] + penalty(leaf, 0), l, 0});
      branches.push_back({metric_[l] + penalty(leaf, 1), l, 1});
    }
    std::vector<std::uint8_t> keep(2 * list_, 1);
    if (2 * active_count > list_) {
      std::sort(branches.begin(), branches.end(), [](const Branch& a, const Branch& b) {
        if (a.metric != b.metric) return a.metric < b.metric;
        if (a.path != b.path) return a.path < b.path;
        return a.bit < b.bit;
      });
      std::fill(keep.begin(), keep.end(), 0);
      for (std::uint32_t i = 0; i < list_; ++i) {
        keep[branches[i].path * 2 + branches[i].bit] = 1;
      }
    }
    // Free capacity first, then fork survivors.
    std::vector<std::uint32_t> both;
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (!active_[l]) continue;
      const bool k0 = keep[l * 2] != 0;
      const bool k1 = keep[l * 2 + 1] != 0;
      if (!k0 && !k1) {
        kill_path(l);
      } else if (k0 && k1) {
        both.push_back(l);
      } else {
        const std::uint8_t bit = k1 ? 1 : 0;
        const double leaf = llr_[n_][slot_of_[n_][l]];
        metric_[l] += penalty(leaf, bit);
        set_leaf_bit(l, phase, bit);
      }
    }
    for (const std::uint32_t l : both) {
      const double leaf = llr_[n_][slot_of_[n_][l]];
      const std::uint32_t twin = clone_path(l);
      metric_[l] += penalty(leaf, 0);
      set_leaf_bit(l, phase, 0);
      metric_[twin] += penalty(leaf, 1);
      set_leaf_bit(twin, phase, 1);
    }
  }

  std::vector<SclCandidate> collect() const {
    std::vector<std::uint32_t> paths;
    for (std::uint32_t l = 0; l < list_; ++l) {
      if (active_[l]) paths.push_back(l);
    }
    std::sort(paths.begin(), paths.end(), [this](std::uint32_t a, std::uint32_t b) {
      if (metric_[a] != metric_[b]) return metric_[a] < metric_[b];
      return a < b;
    });
    std::vector<SclCandidate> out;
    out.reserve(paths.size());
    for (const std::uint32_t l : paths) {
      const std::uint8_t* word =
          banks_[0].data() + static_cast<std::size_t>(slot_of_[0][l]) * 2 * size_;
      out.push_back({std::vector<std::uint8_t>(word, word + size_), metric_[l]});
    }
    return out;
  }

  int n_;
  std::uint32_t size_;
  std::uint32_t list_;
  bool exact_;

  std::vector<std::vector<double>> llr_;          // [level][slot * m + beta]
  std::vector<std::vector<std::uint8_t>> banks_;  // [level][slot * 2m + bank * m + beta]
  std::vector<std::vector<std::uint32_t>> slot_of_;
  std::vector<std::vector<std::uint32_t>> slot_refs_;
  std::vector<std::vector<std::uint32_t>> free_slots_;
  std::vector<std::uint32_t> free_paths_;
  std::vector<bool> active_;
  std::vector<double> metric_;
};

}  // namespace

std::vector<SclCandidate> scl_decode(std::span<const double> channel_llr,
                                     const PolarCode& code,
                                     std::span<const std::uint8_t> frozen_values,
                                     std::uint32_t list_size, bool exact_llr) {
  const std::size_t n = code.block_length();
  if (channel_llr.size() != n || frozen_values.size() != n) {
    throw std::invalid_argument("evidence and frozen-value arrays must have block length");
  }
  if (code.is_frozen.size() != n) {
    throw std::invalid_argument("code table is inconsistent with its block length");
  }
  if (list_size < 1 || list_size > 128 || (list_size & (list_size - 1)) != 0) {
    throw std::invalid_argument("list size must be a power of two in [1, 128]");
  }
  // Workspaces scale with list_size * block_length; cache them per shape so
  // repeated decodes (benchmarks, protocol blocks) skip reallocation.
  thread_local std::vector<std::pair<std::uint64_t, std::unique_ptr<ListDecoder>>> cache;
  const std::uint64_t shape = (static_cast<std::uint64_t>(code.n_log2) << 16) |
                              (static_cast<std::uint64_t>(list_size) << 1) |
                              (exact_llr ? 1u : 0u);
  for (auto& [key, decoder] : cache) {
    if (key == shape) return decoder->run(code, channel_llr, frozen_values);
  }
  cache.emplace_back(shape, std::make_unique<ListDecoder>(code.n_log2, list_size, exact_llr));
  return cache.back().second->run(code, channel_llr, frozen_values);
}

}  // namespace cvqkd
