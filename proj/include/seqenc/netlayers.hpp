#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqenc/encoding.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

// ---------------------------------------------------------------------------
// Parameters. Every learnable tensor is a Matrix so optimisers and checkpoints
// can treat them uniformly.

// Learnable Fisher-vector layer. At canonical init w_k = 1/sigma_k, b_k = -mu_k.
struct NetFvParams {
  Matrix w;  // K x D
  Matrix b;  // K x D

  std::size_t clusters() const noexcept { return w.rows(); }
  std::size_t dim() const noexcept { return w.cols(); }
  void validate() const;
};

// Learnable VLAD layer with soft assignment softmax_k(w_k . x + b_k).
struct NetVladParams {
  Matrix mu;  // K x D anchors
  Matrix w;   // K x D assignment weights
  Matrix b;   // 1 x K assignment biases

  std::size_t clusters() const noexcept { return mu.rows(); }
  std::size_t dim() const noexcept { return mu.cols(); }
  void validate() const;
};

enum class Activation { kIdentity, kTanh, kIsru };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// y = act(x W + b) applied to each frame.
struct AffineLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct FrontEndParams {
  std::vector<AffineLayer> layers;
  Activation activation = Activation::kTanh;  // applied after every layer

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  void validate() const;
};

// scores = W e + b.
struct ClassifierParams {
  Matrix weight;  // C_out x E
  Matrix bias;    // 1 x C_out

  std::size_t classes() const noexcept { return weight.rows(); }
  std::size_t input_dim() const noexcept { return weight.cols(); }
};

// ---------------------------------------------------------------------------
// Gradients mirror the parameter shapes plus the gradient w.r.t. the input.

struct NetFvGrads {
  Matrix w, b;
  Matrix frames;
};

struct NetVladGrads {
  Matrix mu, w, b;
  Matrix frames;
};

struct FrontEndGrads {
  std::vector<AffineLayer> layers;
  Matrix frames;
};

struct ClassifierGrads {
  Matrix weight, bias;
  std::vector<double> encoding;
};

// ---------------------------------------------------------------------------
// Temporal average pooling.

EncodedVector tap_forward(const Matrix& frames);
Matrix tap_backward(std::size_t frame_count, std::span<const double> upstream);

// ---------------------------------------------------------------------------
// NetFV: per-frame soft posterior gamma_i(k) = softmax_k(-1/2 |w_k*(x_i+b_k)|^2),
// mean block gamma z, sigma block gamma (z^2 - 1)/sqrt(2) with z = w_k*(x_i+b_k),
// averaged over frames. Layout: K mean blocks then K sigma blocks.

// The optional cache carries forward-pass quantities into the backward pass.
struct NetFvCache {
  Matrix gamma;              // L x K posteriors
  std::vector<double> raw;   // encoding before normalisation
};
Matrix netfv_posteriors(const NetFvParams& p, const Matrix& frames);
EncodedVector netfv_forward(const NetFvParams& p, const Matrix& frames, const NormScheme& scheme = {},
                            NetFvCache* cache = nullptr);
NetFvGrads netfv_backward(const NetFvParams& p, const Matrix& frames, std::span<const double> upstream,
                          const NormScheme& scheme = {}, const NetFvCache* cache = nullptr);

// ---------------------------------------------------------------------------
// NetVLAD: V(k) = sum_i beta_k(x_i) (x_i - mu_k), rows concatenated, then
// normalised by the scheme with D-sized blocks.

struct NetVladCache {
  Matrix beta;              // L x K assignments
  std::vector<double> raw;  // encoding before normalisation
};
Matrix netvlad_assignments(const NetVladParams& p, const Matrix& frames);
EncodedVector netvlad_forward(const NetVladParams& p, const Matrix& frames, const NormScheme& scheme,
                              NetVladCache* cache = nullptr);
NetVladGrads netvlad_backward(const NetVladParams& p, const Matrix& frames, std::span<const double> upstream,
                              const NormScheme& scheme, const NetVladCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Front-end.

struct FrontEndCache {
  std::vector<Matrix> inputs;  // input to each layer; inputs[l + 1] is layer l's output
  Matrix output;
};

Matrix frontend_forward(const FrontEndParams& p, const Matrix& frames);
FrontEndCache frontend_forward_cached(const FrontEndParams& p, const Matrix& frames);
FrontEndGrads frontend_backward(const FrontEndParams& p, const FrontEndCache& cache, const Matrix& upstream);

// ---------------------------------------------------------------------------
// Classifier head and loss.

std::vector<double> classifier_forward(const ClassifierParams& p, std::span<const double> encoding);
ClassifierGrads classifier_backward(const ClassifierParams& p, std::span<const double> encoding,
                                    std::span<const double> dscores);

struct XentResult {
  double loss = 0.0;
  std::vector<double> grad;  // softmax(scores) - onehot(label)
};

XentResult softmax_xent(std::span<const double> scores, std::size_t label);
std::vector<double> log_softmax(std::span<const double> scores);

}  // namespace seqenc
