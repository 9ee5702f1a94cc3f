#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace seqenc {

enum class EncoderKind { kSupervector, kFisherVector, kVlad, kTap, kNetFv, kNetVlad };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

// Post-aggregation normalisation.
//   none                  identity
//   l2                    v / |v|
//   intra_l2_then_l2      every dim-sized block L2-normalised, then global L2
//   signed_power_then_l2  sign(v)|v|^p elementwise, then global L2
// A zero vector (or zero block) passes through unchanged.
struct NormScheme {
  enum class Kind { kNone, kL2, kIntraL2ThenL2, kSignedPowerThenL2 };
  Kind kind = Kind::kNone;
  double power = 0.5;

  static NormScheme none() { return {}; }
  static NormScheme l2() { return {Kind::kL2, 0.5}; }
  static NormScheme intra_l2_then_l2() { return {Kind::kIntraL2ThenL2, 0.5}; }
  static NormScheme signed_power_then_l2(double p);

  // Accepts "none", "l2", "intra_l2_then_l2", "signed_power_then_l2(p)".
  static NormScheme parse(const std::string& text);
  std::string to_string() const;

  friend bool operator==(const NormScheme&, const NormScheme&) = default;
};

// Describes how an encoded vector is laid out. The descriptor string is what
// gets written to disk alongside the values.
struct EncodingLayout {
  EncoderKind encoder = EncoderKind::kTap;
  std::size_t clusters = 1;  // K (C for the supervector)
  std::size_t dim = 0;       // D
  NormScheme norm;

  std::size_t expected_size() const;
  std::string block_order() const;
  std::string descriptor() const;
  static EncodingLayout parse(const std::string& descriptor);

  friend bool operator==(const EncodingLayout&, const EncodingLayout&) = default;
};

struct EncodedVector {
  std::vector<double> values;
  EncodingLayout layout;

  std::size_t size() const noexcept { return values.size(); }
};

// Normalises a raw encoding; block is the intra-normalisation block length.
std::vector<double> normalize(std::span<const double> raw, std::size_t block, const NormScheme& scheme);

// Gradient w.r.t. the raw encoding given the gradient w.r.t. normalize(raw).
std::vector<double> normalize_backward(std::span<const double> raw, std::size_t block, const NormScheme& scheme,
                                       std::span<const double> upstream);

// Applies scheme using the layout's dim as block length; records the scheme in
// the result's layout.
EncodedVector normalize_encoding(const EncodedVector& v, const NormScheme& scheme);

}  // namespace seqenc
