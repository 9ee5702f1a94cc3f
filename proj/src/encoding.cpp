#include "seqenc/encoding.hpp"

#include <cmath>
#include <sstream>

#include "seqenc/error.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kSupervector: return "supervector";
    case EncoderKind::kFisherVector: return "fisher_vector";
    case EncoderKind::kVlad: return "vlad";
    case EncoderKind::kTap: return "tap";
    case EncoderKind::kNetFv: return "netfv";
    case EncoderKind::kNetVlad: return "netvlad";
  }
  return "unknown";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "supervector") return EncoderKind::kSupervector;
  if (name == "fisher_vector" || name == "fv") return EncoderKind::kFisherVector;
  if (name == "vlad") return EncoderKind::kVlad;
  if (name == "tap") return EncoderKind::kTap;
  if (name == "netfv") return EncoderKind::kNetFv;
  if (name == "netvlad") return EncoderKind::kNetVlad;
  throw Error(ErrorCode::kInvalidArgument, "unknown encoder '" + name + "'");
}

NormScheme NormScheme::signed_power_then_l2(double p) {
  if (!(p > 0.0)) throw Error(ErrorCode::kInvalidArgument, "signed power exponent must be positive");
  return {Kind::kSignedPowerThenL2, p};
}

NormScheme NormScheme::parse(const std::string& text) {
  if (text == "none") return none();
  if (text == "l2") return l2();
  if (text == "intra_l2_then_l2") return intra_l2_then_l2();
  const std::string prefix = "signed_power_then_l2";
  if (text.rfind(prefix, 0) == 0) {
    std::string rest = text.substr(prefix.size());
    if (rest.empty()) return signed_power_then_l2(0.5);
    if (rest.size() >= 2 && rest.front() == '(' && rest.back() == ')') {
      const std::string num = rest.substr(1, rest.size() - 2);
      std::size_t used = 0;
      double p = 0.0;
      try {
        p = std::stod(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == num.size() && used > 0) return signed_power_then_l2(p);
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown normalization scheme '" + text + "'");
}

std::string NormScheme::to_string() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kL2: return "l2";
    case Kind::kIntraL2ThenL2: return "intra_l2_then_l2";
    case Kind::kSignedPowerThenL2: {
      std::ostringstream os;
      os.precision(17);
      os << "signed_power_then_l2(" << power << ")";
      return os.str();
    }
  }
  return "none";
}

std::size_t EncodingLayout::expected_size() const {
  switch (encoder) {
    case EncoderKind::kFisherVector:
    case EncoderKind::kNetFv: return 2 * clusters * dim;
    case EncoderKind::kTap: return dim;
    default: return clusters * dim;
  }
}

std::string EncodingLayout::block_order() const {
  switch (encoder) {
    case EncoderKind::kFisherVector:
    case EncoderKind::kNetFv: return "mean_blocks_then_sigma_blocks";
    case EncoderKind::kTap: return "single";
    default: return "cluster_major";
  }
}

std::string EncodingLayout::descriptor() const {
  std::ostringstream os;
  os << "encoder=" << to_string(encoder) << ";K=" << clusters << ";D=" << dim << ";order=" << block_order()
     << ";norm=" << norm.to_string();
  return os.str();
}

EncodingLayout EncodingLayout::parse(const std::string& descriptor) {
  EncodingLayout layout;
  std::istringstream is(descriptor);
  std::string field;
  bool have_encoder = false;
  bool have_dim = false;
  while (std::getline(is, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "bad layout field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    try {
      if (key == "encoder") {
        layout.encoder = encoder_kind_from_string(value);
        have_encoder = true;
      } else if (key == "K") {
        layout.clusters = std::stoul(value);
      } else if (key == "D") {
        layout.dim = std::stoul(value);
        have_dim = true;
      } else if (key == "norm") {
        layout.norm = NormScheme::parse(value);
      } else if (key != "order") {
        throw Error(ErrorCode::kFormat, "unknown layout key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::kFormat, "bad layout value '" + value + "'");
    }
  }
  if (!have_encoder || !have_dim) throw Error(ErrorCode::kFormat, "incomplete layout descriptor");
  return layout;
}

namespace {

void l2_inplace(std::span<double> v) {
  const double n = norm2(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

// Backward of y = v / |v| at v; identity when v == 0 (forward passes it through).
void l2_backward_inplace(std::span<const double> v, std::span<double> g) {
  const double n = norm2(v);
  if (n == 0.0) return;
  double yg = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) yg += v[i] / n * g[i];
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = (g[i] - v[i] / n * yg) / n;
}

double signed_power(double x, double p) {
  if (x == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(x), p), x);
}

// d/dx sign(x)|x|^p. At x == 0 the derivative is 1 for p == 1 and taken as 0
// otherwise (it is infinite for p < 1).
double signed_power_derivative(double x, double p) {
  if (x == 0.0) return p == 1.0 ? 1.0 : 0.0;
  return p * std::pow(std::abs(x), p - 1.0);
}

void check_block(std::size_t size, std::size_t block) {
  if (block == 0 || size % block != 0)
    throw Error(ErrorCode::kShapeMismatch, "encoding length is not a multiple of the block length");
}

}  // namespace

std::vector<double> normalize(std::span<const double> raw, std::size_t block, const NormScheme& scheme) {
  std::vector<double> out(raw.begin(), raw.end());
  switch (scheme.kind) {
    case NormScheme::Kind::kNone:
      break;
    case NormScheme::Kind::kL2:
      l2_inplace(out);
      break;
    case NormScheme::Kind::kIntraL2ThenL2:
      check_block(out.size(), block);
      for (std::size_t b = 0; b < out.size(); b += block) l2_inplace(std::span<double>(out).subspan(b, block));
      l2_inplace(out);
      break;
    case NormScheme::Kind::kSignedPowerThenL2:
      if (!(scheme.power > 0.0)) throw Error(ErrorCode::kInvalidArgument, "signed power exponent must be positive");
      for (double& x : out) x = signed_power(x, scheme.power);
      l2_inplace(out);
      break;
  }
  return out;
}

std::vector<double> normalize_backward(std::span<const double> raw, std::size_t block, const NormScheme& scheme,
                                       std::span<const double> upstream) {
  if (upstream.size() != raw.size()) throw Error(ErrorCode::kShapeMismatch, "upstream gradient size mismatch");
  std::vector<double> g(upstream.begin(), upstream.end());
  switch (scheme.kind) {
    case NormScheme::Kind::kNone:
      break;
    case NormScheme::Kind::kL2:
      l2_backward_inplace(raw, g);
      break;
    case NormScheme::Kind::kIntraL2ThenL2: {
      check_block(raw.size(), block);
      std::vector<double> intra(raw.begin(), raw.end());
      for (std::size_t b = 0; b < intra.size(); b += block) l2_inplace(std::span<double>(intra).subspan(b, block));
      l2_backward_inplace(intra, g);
      for (std::size_t b = 0; b < raw.size(); b += block)
        l2_backward_inplace(raw.subspan(b, block), std::span<double>(g).subspan(b, block));
      break;
    }
    case NormScheme::Kind::kSignedPowerThenL2: {
      std::vector<double> powered(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i) powered[i] = signed_power(raw[i], scheme.power);
      l2_backward_inplace(powered, g);
      for (std::size_t i = 0; i < raw.size(); ++i) g[i] *= signed_power_derivative(raw[i], scheme.power);
      break;
    }
  }
  return g;
}

EncodedVector normalize_encoding(const EncodedVector& v, const NormScheme& scheme) {
  for (double x : v.values)
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "encoding has non-finite entries");
  EncodedVector out;
  out.layout = v.layout;
  out.layout.norm = scheme;
  const std::size_t block = v.layout.dim == 0 ? v.values.size() : v.layout.dim;
  out.values = normalize(v.values, block, scheme);
  return out;
}

}  // namespace seqenc
