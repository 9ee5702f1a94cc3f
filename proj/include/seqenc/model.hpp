#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "seqenc/encoding.hpp"
#include "seqenc/netlayers.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

struct TapParams {};

using EncoderParams = std::variant<TapParams, NetFvParams, NetVladParams>;

// End-to-end utterance classifier: per-frame front-end, encoding layer,
// affine head. Gradients are stored in a Model of identical shape.
struct Model {
  FrontEndParams frontend;
  EncoderParams encoder;
  NormScheme norm;
  ClassifierParams classifier;

  EncoderKind encoder_kind() const;
  std::size_t channels() const { return frontend.out_dim(); }
  std::size_t clusters() const;
  std::size_t encoding_size() const;
  EncodingLayout encoding_layout() const;

  // Every learnable tensor in a fixed order: front-end layers, encoder, head.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> tensor_names() const;

  // Same shapes, all zeros.
  Model zeros_like() const;
  void validate() const;
};

enum class InitMode { kFromGmm, kRandom };

std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string& name);

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {64};
  std::size_t channels = 32;
  Activation activation = Activation::kTanh;
  EncoderKind encoder = EncoderKind::kTap;
  std::size_t clusters = 8;
  NormScheme norm;
  std::size_t classes = 2;
};

// Default normalisation per encoder: intra_l2_then_l2 for NetVLAD, none otherwise.
NormScheme default_norm(EncoderKind kind);

// Random initialisation. Front-end weights ~ N(0, 1/in), biases 0. Encoder in
// random mode: NetFV w ~ 1 + N(0, 0.1^2), b ~ N(0, 1); NetVLAD mu ~ N(0, 1),
// w ~ N(0, 0.1^2), b = 0. Head weights ~ N(0, 0.01^2), bias 0.
Model init_model(const ModelSpec& spec, Rng& rng);

// Canonical encoder initialisation from data: run the front-end over the
// sample and fit a codebook on its outputs. NetFV gets w = 1/sigma, b = -mu from
// a diagonal GMM; NetVLAD gets mu = centroids, w = 2 s mu, b = -s |mu|^2.
void init_encoder_from_data(Model& model, const Matrix& sample_frames, Rng& rng, double vlad_scale = 1.0);

// Canonical parameter sets for a given codebook.
NetFvParams netfv_from_gmm(const Matrix& means, const Matrix& stds);
NetVladParams netvlad_from_centroids(const Matrix& centroids, double scale);

// Encoding after normalisation.
std::vector<double> encode(const Model& model, const Matrix& frames);
// Pre-softmax scores.
std::vector<double> forward_scores(const Model& model, const Matrix& frames);

// Adds weight * dLoss/dparams of softmax cross-entropy on one utterance into
// grads and returns the unweighted loss. scores_out, when non-null, receives
// the logits.
double accumulate_gradients(const Model& model, const Matrix& frames, std::size_t label, double weight,
                            Model& grads, std::vector<double>* scores_out = nullptr);

}  // namespace seqenc
