// Copyright 2026 The dicesm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DICESM_CORE_HPP
#define DICESM_CORE_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dicesm {

enum class ErrorCode {
  OutOfRange,
  SimplexViolation,
  NonFinite,
  HardnessViolation,
  BadMagic,
  TruncatedFile,
  DimOverflow,
  Io,
  ShapeMismatch,
  SoftLabelIncompatible,
  BadParams,
  EmptyStack,
  BadEpsilon,
  SoftInput,
  EmptyRecords,
  EmptyBatch,
  InvalidDistribution,
  BadSpec,
  DivergedLoss,
  EmptyDataset,
  TooFewImages,
  CheckpointMismatch,
  BadConfig,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::SimplexViolation: return "SimplexViolation";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::HardnessViolation: return "HardnessViolation";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimOverflow: return "DimOverflow";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SoftLabelIncompatible: return "SoftLabelIncompatible";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::EmptyStack: return "EmptyStack";
    case ErrorCode::BadEpsilon: return "BadEpsilon";
    case ErrorCode::SoftInput: return "SoftInput";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TooFewImages: return "TooFewImages";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

/// Library-wide exception. `index()` carries the flat element index for
/// validation failures.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> index_;
};

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& dims) {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of doubles. Immutable once constructed.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Dims dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    std::size_t n = 1;
    for (std::size_t d : dims_) {
      if (d == 0) throw Error(ErrorCode::DimOverflow, "dimension must be positive");
      if (n > std::numeric_limits<std::size_t>::max() / d)
        throw Error(ErrorCode::DimOverflow, "element count overflows");
      n *= d;
    }
    if (dims_.empty()) n = 0;
    if (n != data_.size())
      throw Error(ErrorCode::ShapeMismatch,
                  "dims " + dims_to_string(dims_) + " need " + std::to_string(n) +
                      " values, got " + std::to_string(data_.size()));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw Error(ErrorCode::NonFinite, "non-finite value at index " + std::to_string(i), i);
    }
  }

  static Tensor zeros(Dims dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return Tensor(std::move(dims), std::vector<double>(n, 0.0));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Moves the buffer out; the tensor is left empty.
  std::vector<double> release() && { dims_.clear(); return std::move(data_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

enum class Hardness { hard, soft };

inline constexpr double kSimplexTolerance = 1e-9;

namespace detail {

inline void check_chw(const Tensor& t) {
  if (t.rank() != 3)
    throw Error(ErrorCode::ShapeMismatch,
                "field tensors must have dims [C,H,W], got " + dims_to_string(t.dims()));
}

inline void check_values(const Tensor& t, bool require_hard) {
  const auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = data[i];
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFinite, "non-finite value at index " + std::to_string(i), i);
    if (v < 0.0 || v > 1.0)
      throw Error(ErrorCode::OutOfRange,
                  "value " + std::to_string(v) + " outside [0,1] at index " + std::to_string(i), i);
    if (require_hard && v != 0.0 && v != 1.0)
      throw Error(ErrorCode::HardnessViolation,
                  "hard label holds " + std::to_string(v) + " at index " + std::to_string(i), i);
  }
}

inline void check_simplex(const Tensor& t) {
  const std::size_t channels = t.dims()[0];
  if (channels < 2) return;
  const std::size_t plane = t.dims()[1] * t.dims()[2];
  for (std::size_t i = 0; i < plane; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) sum += t[c * plane + i];
    if (std::abs(sum - 1.0) > kSimplexTolerance)
      throw Error(ErrorCode::SimplexViolation,
                  "class probabilities sum to " + std::to_string(sum) + " at pixel " +
                      std::to_string(i),
                  i);
  }
}

}  // namespace detail

/// Shared [C, H, W] accessors for probability and label maps.
class FieldBase {
 public:
  const Tensor& tensor() const noexcept { return tensor_; }
  const Dims& dims() const noexcept { return tensor_.dims(); }
  std::size_t channels() const noexcept { return tensor_.dims()[0]; }
  std::size_t height() const noexcept { return tensor_.dims()[1]; }
  std::size_t width() const noexcept { return tensor_.dims()[2]; }
  std::size_t pixels() const noexcept { return height() * width(); }
  double at(std::size_t c, std::size_t pixel) const { return tensor_[c * pixels() + pixel]; }
  std::span<const double> channel(std::size_t c) const {
    return tensor_.data().subspan(c * pixels(), pixels());
  }

  /// Foreground decision: `> 0.5` for binary maps, argmax otherwise (ties to
  /// the lowest class).
  std::size_t argmax(std::size_t pixel) const {
    if (channels() == 1) return at(0, pixel) > 0.5 ? 1 : 0;
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels(); ++c)
      if (at(c, pixel) > at(best, pixel)) best = c;
    return best;
  }

 protected:
  FieldBase() = default;
  explicit FieldBase(Tensor t) : tensor_(std::move(t)) {}
  Tensor tensor_;
};

/// Per-pixel class probabilities, dims [C, H, W].
class ProbField : public FieldBase {
 public:
  ProbField() = default;
  explicit ProbField(Tensor t) : FieldBase(std::move(t)) {
    detail::check_chw(tensor_);
    detail::check_values(tensor_, false);
    detail::check_simplex(tensor_);
  }

  friend bool operator==(const ProbField& a, const ProbField& b) { return a.tensor_ == b.tensor_; }
};

/// Per-pixel targets, hard ({0,1}) or soft ([0,1]).
class LabelField : public FieldBase {
 public:
  LabelField() = default;
  LabelField(Tensor t, Hardness hardness) : FieldBase(std::move(t)), hardness_(hardness) {
    detail::check_chw(tensor_);
    detail::check_values(tensor_, hardness_ == Hardness::hard);
    detail::check_simplex(tensor_);
  }

  Hardness hardness() const noexcept { return hardness_; }
  bool is_hard() const noexcept { return hardness_ == Hardness::hard; }

  friend bool operator==(const LabelField& a, const LabelField& b) {
    return a.hardness_ == b.hardness_ && a.tensor_ == b.tensor_;
  }

 private:
  Hardness hardness_ = Hardness::hard;
};

/// K hard annotations of the same image.
class RaterStack {
 public:
  RaterStack() = default;
  explicit RaterStack(std::vector<LabelField> raters) : raters_(std::move(raters)) {
    for (const auto& r : raters_) {
      if (!r.is_hard()) throw Error(ErrorCode::HardnessViolation, "rater annotations must be hard");
      if (r.dims() != raters_.front().dims())
        throw Error(ErrorCode::ShapeMismatch, "raters disagree on dims");
    }
  }

  std::size_t size() const noexcept { return raters_.size(); }
  bool empty() const noexcept { return raters_.empty(); }
  const LabelField& operator[](std::size_t k) const { return raters_[k]; }
  const std::vector<LabelField>& raters() const noexcept { return raters_; }
  const Dims& dims() const { return raters_.front().dims(); }

 private:
  std::vector<LabelField> raters_;
};

/// Checks every ProbField invariant on a raw tensor; throws the first violation.
inline void validate_prob(const Tensor& t) {
  detail::check_chw(t);
  detail::check_values(t, false);
  detail::check_simplex(t);
}

inline void validate_label(const Tensor& t, Hardness hardness) {
  detail::check_chw(t);
  detail::check_values(t, hardness == Hardness::hard);
  detail::check_simplex(t);
}

inline void validate(const ProbField& f) { validate_prob(f.tensor()); }
inline void validate(const LabelField& f) { validate_label(f.tensor(), f.hardness()); }

inline bool is_hard_valued(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

inline void require_same_dims(const FieldBase& a, const FieldBase& b) {
  if (a.dims() != b.dims())
    throw Error(ErrorCode::ShapeMismatch,
                "dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
}

// ---------------------------------------------------------------------------
// SDT1 tensor files: "SDT1", u32 rank, rank x u32 dims, f32 values; all
// little-endian.

inline constexpr std::array<char, 4> kTensorMagic{'S', 'D', 'T', '1'};
inline constexpr std::uint32_t kMaxRank = 16;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  if (t.rank() > kMaxRank) throw Error(ErrorCode::DimOverflow, "rank exceeds 16");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw Error(ErrorCode::DimOverflow, "dimension exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_u32(out, bits);
  }
  return out;
}

inline Tensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0)
      throw Error(ErrorCode::BadMagic, "missing SDT1 magic");
    throw Error(ErrorCode::TruncatedFile, "header shorter than 8 bytes");
  }
  if (std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0)
    throw Error(ErrorCode::BadMagic, "missing SDT1 magic");
  const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
  if (rank == 0 || rank > kMaxRank)
    throw Error(ErrorCode::DimOverflow, "rank " + std::to_string(rank) + " outside [1,16]");
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw Error(ErrorCode::TruncatedFile, "dims truncated");
  Dims dims(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
    if (dims[i] == 0) throw Error(ErrorCode::DimOverflow, "zero dimension");
    if (count > (std::uint64_t{1} << 40) / dims[i])
      throw Error(ErrorCode::DimOverflow, "element count exceeds 2^40");
    count *= dims[i];
  }
  const std::uint64_t need = header + 4 * count;
  if (bytes.size() < need)
    throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(count) +
                                              " values, file holds " +
                                              std::to_string((bytes.size() - header) / 4));
  std::vector<double> data(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = detail::get_u32(bytes.data() + header + 4 * i);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    data[i] = static_cast<double>(f);
  }
  return Tensor(std::move(dims), std::move(data));
}

inline Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

inline void write_tensor(const std::string& path, const Tensor& t) {
  const std::string bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

// Small constructors used throughout tests and tools.

/// Binary (C = 1) probability map laid out as a 1 x p row.
inline ProbField binary_prob(std::vector<double> values) {
  const std::size_t p = values.size();
  return ProbField(Tensor({1, 1, p}, std::move(values)));
}

inline LabelField binary_label(std::vector<double> values) {
  const std::size_t p = values.size();
  Tensor t({1, 1, p}, std::move(values));
  const Hardness h = is_hard_valued(t) ? Hardness::hard : Hardness::soft;
  return LabelField(std::move(t), h);
}

}  // namespace dicesm

#endif  // DICESM_CORE_HPP
