#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqenc/encoding.hpp"
#include "seqenc/gmm.hpp"
#include "seqenc/metrics.hpp"
#include "seqenc/model.hpp"
#include "seqenc/numcore.hpp"
#include "seqenc/train.hpp"

namespace seqenc {

// All binary formats are little-endian regardless of host byte order and
// start with a four-byte magic followed by a u32 format version.
//
//   FSEQ  u32 D, u32 L, L*D f32 frame-major
//   DGMM  u32 K, u32 D, K f64 weights, K*D f64 means, K*D f64 stds
//   EVEC  u32 n, n-byte layout descriptor, u32 size, size f64 values
//   NETP  u32 section count, then per section: 4-byte tag, u32 n + n-byte
//         metadata text, u32 tensor count, per tensor u32 rows, u32 cols and
//         rows*cols f64 values. Tags: FRNT (front-end), ENCD (encoder), CLSF
//         (classifier head).
inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kGmmFileVersion = 1;
inline constexpr std::uint32_t kEncodedFileVersion = 1;
inline constexpr std::uint32_t kModelFileVersion = 1;

// Feature sequences are L x D frame matrices; values are stored as f32.
void write_features(std::ostream& os, const Matrix& frames);
Matrix read_features(std::istream& is);
void write_feature_file(const std::filesystem::path& path, const Matrix& frames);
Matrix read_feature_file(const std::filesystem::path& path);

void write_gmm(std::ostream& os, const DiagonalGmm& gmm);
DiagonalGmm read_gmm(std::istream& is);
void write_gmm_file(const std::filesystem::path& path, const DiagonalGmm& gmm);
DiagonalGmm read_gmm_file(const std::filesystem::path& path);

void write_encoded(std::ostream& os, const EncodedVector& v);
EncodedVector read_encoded(std::istream& is);
void write_encoded_file(const std::filesystem::path& path, const EncodedVector& v);
EncodedVector read_encoded_file(const std::filesystem::path& path);

void write_model(std::ostream& os, const Model& model);
Model read_model(std::istream& is);
void write_model_file(const std::filesystem::path& path, const Model& model);
Model read_model_file(const std::filesystem::path& path);

// Manifest: UTF-8 CSV with header "path,label,frames,bucket". Paths are
// relative to the manifest's directory.
struct ManifestEntry {
  std::string path;
  std::size_t label = 0;
  std::size_t frames = 0;
  std::string bucket;
};

void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(std::istream& is);
std::vector<ManifestEntry> read_manifest_file(const std::filesystem::path& path);

// Utterance id for a manifest path: the path without its extension.
std::string utterance_id(const std::string& manifest_path);

// Loads every listed feature file, checking the frame counts, and returns the
// utterances sorted by id.
std::vector<LabeledUtterance> load_manifest_utterances(const std::filesystem::path& manifest);

// Scores TSV: header "id\tlabel\tbucket\tscore_0..score_{C-1}", one row per
// utterance, reals in shortest round-trip form.
void write_scores(std::ostream& os, const TrialScores& scores);
TrialScores read_scores(std::istream& is);
void write_scores_file(const std::filesystem::path& path, const TrialScores& scores);
TrialScores read_scores_file(const std::filesystem::path& path);

// Whole file as bytes / text.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace seqenc
