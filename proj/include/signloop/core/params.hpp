#pragma once

// Named parameter collections, the float32 checkpoint format and Adam.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace signloop {

struct Parameter {
  std::string name;
  ad::Var var;
};

class ParamSet {
 public:
  ad::Var add(std::string name, ad::Mat init) {
    for (const auto& p : params_) {
      if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
    }
    ad::Var v(std::move(init), true);
    params_.push_back({std::move(name), v});
    return v;
  }

  /// Normal(0, 1/fan_in) initialization; `scale` multiplies the std.
  ad::Var add_normal(std::string name, Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale / std::sqrt(static_cast<double>(rows)));
    ad::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return add(std::move(name), std::move(m));
  }

  ad::Var add_zeros(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return add(std::move(name), ad::Mat::Zero(rows, cols));
  }

  ad::Var add_ones(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return add(std::move(name), ad::Mat::Ones(rows, cols));
  }

  [[nodiscard]] const std::vector<Parameter>& items() const { return params_; }
  std::vector<Parameter>& items() { return params_; }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
    return n;
  }

  [[nodiscard]] ad::Vec flatten() const {
    ad::Vec out(static_cast<Eigen::Index>(scalar_count()));
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      const auto& v = p.var.value();
      out.segment(off, v.size()) = Eigen::Map<const ad::Vec>(v.data(), v.size());
      off += v.size();
    }
    return out;
  }

  [[nodiscard]] ad::Vec flatten_grad() const {
    ad::Vec out = ad::Vec::Zero(static_cast<Eigen::Index>(scalar_count()));
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      const auto& v = p.var.value();
      const auto& g = p.var.grad();
      if (g.size() == v.size()) out.segment(off, v.size()) = Eigen::Map<const ad::Vec>(g.data(), g.size());
      off += v.size();
    }
    return out;
  }

  void assign(const ad::Vec& flat) {
    if (flat.size() != static_cast<Eigen::Index>(scalar_count())) throw ConfigError("parameter vector size mismatch");
    Eigen::Index off = 0;
    for (auto& p : params_) {
      auto& v = p.var.mutable_value();
      Eigen::Map<ad::Vec>(v.data(), v.size()) = flat.segment(off, v.size());
      off += v.size();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  /// Per-scalar mask: true where the owning parameter's name starts with any prefix.
  [[nodiscard]] std::vector<bool> prefix_mask(const std::vector<std::string>& prefixes) const {
    std::vector<bool> mask;
    mask.reserve(scalar_count());
    for (const auto& p : params_) {
      bool hit = false;
      for (const auto& pre : prefixes) hit = hit || std::string_view(p.name).starts_with(pre);
      mask.insert(mask.end(), static_cast<std::size_t>(p.var.value().size()), hit);
    }
    return mask;
  }

 private:
  std::vector<Parameter> params_;
};

// ---------------------------------------------------------------------------
// Checkpoint: little-endian float32 payload behind a versioned shape header.
//
//   magic "SLCK" | u32 version | u32 tensor_count |
//   per tensor: u32 name_len, name bytes, u32 rows, u32 cols |
//   float32 data for all tensors in header order, row-major

namespace checkpoint {

inline constexpr char kMagic[4] = {'S', 'L', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {
template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T> && sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  os.write(reinterpret_cast<const char*>(&bits), 4);
}
template <typename T>
T get_le(std::istream& is) {
  std::uint32_t bits = 0;
  if (!is.read(reinterpret_cast<char*>(&bits), 4)) throw ConfigError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  T v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

inline void write(std::ostream& os, const ParamSet& params) {
  os.write(kMagic, 4);
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.var.rows()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.var.cols()));
  }
  for (const auto& p : params.items()) {
    const auto& m = p.var.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_le<float>(os, static_cast<float>(m(r, c)));
    }
  }
}

/// Loads into an already-shaped ParamSet; names and shapes must match exactly.
inline void read(std::istream& is, ParamSet& params) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ConfigError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != params.items().size()) throw ConfigError("checkpoint: tensor count mismatch");
  for (const auto& p : params.items()) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ConfigError("checkpoint: truncated name");
    const auto rows = detail::get_le<std::uint32_t>(is);
    const auto cols = detail::get_le<std::uint32_t>(is);
    if (name != p.name || rows != p.var.rows() || cols != p.var.cols()) {
      throw ConfigError("checkpoint: shape/name mismatch at " + name);
    }
  }
  for (auto& p : params.items()) {
    auto& m = p.var.mutable_value();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = detail::get_le<float>(is);
    }
  }
}

inline void save(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("checkpoint: cannot open " + path.string());
  write(os, params);
}

inline void load(const std::filesystem::path& path, ParamSet& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open " + path.string());
  read(is, params);
}

}  // namespace checkpoint

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update over all parameters whose per-scalar `frozen` flag is false.
  /// An empty mask freezes nothing.
  void step(ParamSet& params, const std::vector<bool>& frozen = {}) {
    if (m_.empty()) {
      for (const auto& p : params.items()) {
        m_.push_back(ad::Mat::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(ad::Mat::Zero(p.var.rows(), p.var.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t flat = 0;
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      auto& var = params.items()[i].var;
      auto& value = var.mutable_value();
      const ad::Mat& g = var.grad();
      const bool has_grad = g.size() == value.size();
      for (Eigen::Index j = 0; j < value.size(); ++j, ++flat) {
        if (!frozen.empty() && frozen[flat]) continue;
        const double gj = has_grad ? g.data()[j] : 0.0;
        double& m = m_[i].data()[j];
        double& v = v_[i].data()[j];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gj;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gj * gj;
        value.data()[j] -= cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
      }
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<ad::Mat> m_;
  std::vector<ad::Mat> v_;
  long t_ = 0;
};

}  // namespace signloop
