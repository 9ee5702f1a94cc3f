#include "seqenc/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "seqenc/error.hpp"

namespace seqenc {

namespace {

using Magic = std::array<char, 4>;

constexpr Magic kFseq{'F', 'S', 'E', 'Q'};
constexpr Magic kDgmm{'D', 'G', 'M', 'M'};
constexpr Magic kEvec{'E', 'V', 'E', 'C'};
constexpr Magic kNetp{'N', 'E', 'T', 'P'};

// Upper bound on any count read from a header, to fail cleanly on garbage.
constexpr std::uint32_t kMaxCount = 1u << 28;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }
  void magic(const Magic& m) { bytes(m.data(), m.size()); }

  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    bytes(b, 4);
  }

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    bytes(b, 8);
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void text(const std::string& s) {
    u32(checked_count(s.size()));
    bytes(s.data(), s.size());
  }

  void matrix(const Matrix& m) {
    u32(checked_count(m.rows()));
    u32(checked_count(m.cols()));
    for (double v : m.flat()) f64(v);
  }

  static std::uint32_t checked_count(std::size_t n) {
    if (n > kMaxCount) throw Error(ErrorCode::kInvalidArgument, "value too large for the file format");
    return static_cast<std::uint32_t>(n);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(char* p, std::size_t n) {
    is_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw Error(ErrorCode::kTruncatedPayload, "truncated payload");
  }

  void expect_magic(const Magic& m) {
    Magic got{};
    is_.read(got.data(), 4);
    if (is_.gcount() != 4 || got != m) throw Error(ErrorCode::kBadMagic, "bad magic");
  }

  void expect_version(std::uint32_t version) {
    if (u32() != version) throw Error(ErrorCode::kBadVersion, "bad version");
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::uint32_t count() {
    const std::uint32_t n = u32();
    if (n > kMaxCount) throw Error(ErrorCode::kFormat, "implausible count in header");
    return n;
  }

  std::string text() {
    std::string s(count(), '\0');
    bytes(s.data(), s.size());
    return s;
  }

  Matrix matrix() {
    const std::uint32_t r = count();
    const std::uint32_t c = count();
    if (static_cast<std::uint64_t>(r) * c > kMaxCount) throw Error(ErrorCode::kFormat, "implausible tensor shape");
    Matrix m(r, c);
    for (double& v : m.flat()) v = f64();
    return m;
  }

 private:
  std::istream& is_;
};

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return is;
}

void finish(std::ostream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw Error(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::kFormat, "bad " + what + " '" + s + "'");
  return v;
}

double parse_real(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    // from_chars rejects "inf"/"-inf" spellings produced by some writers.
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::kFormat, "bad number '" + s + "'");
  }
  return v;
}

void write_section(Writer& w, const Magic& tag, const std::string& meta, const std::vector<const Matrix*>& tensors) {
  w.magic(tag);
  w.text(meta);
  w.u32(Writer::checked_count(tensors.size()));
  for (const Matrix* t : tensors) w.matrix(*t);
}

std::string meta_value(const std::string& meta, const std::string& key) {
  for (const auto& item : split(meta, ';')) {
    const auto eq = item.find('=');
    if (eq != std::string::npos && item.substr(0, eq) == key) return item.substr(eq + 1);
  }
  throw Error(ErrorCode::kFormat, "model metadata lacks '" + key + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// FSEQ

void write_features(std::ostream& os, const Matrix& frames) {
  if (frames.rows() == 0 || frames.cols() == 0)
    throw Error(ErrorCode::kEmptyInput, "feature sequence needs D, L >= 1");
  Writer w(os);
  w.magic(kFseq);
  w.u32(kFeatureFileVersion);
  w.u32(Writer::checked_count(frames.cols()));
  w.u32(Writer::checked_count(frames.rows()));
  for (double v : frames.flat()) w.f32(static_cast<float>(v));
}

Matrix read_features(std::istream& is) {
  Reader r(is);
  r.expect_magic(kFseq);
  r.expect_version(kFeatureFileVersion);
  const std::uint32_t d = r.u32();
  const std::uint32_t l = r.u32();
  if (d == 0 || l == 0) throw Error(ErrorCode::kFormat, "feature file declares D or L = 0");
  if (static_cast<std::uint64_t>(d) * l > kMaxCount) throw Error(ErrorCode::kFormat, "implausible feature shape");
  Matrix m(l, d);
  for (double& v : m.flat()) v = static_cast<double>(r.f32());
  return m;
}

void write_feature_file(const std::filesystem::path& path, const Matrix& frames) {
  auto os = open_out(path);
  write_features(os, frames);
  finish(os, path);
}

Matrix read_feature_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_features(is);
}

// ---------------------------------------------------------------------------
// DGMM

void write_gmm(std::ostream& os, const DiagonalGmm& gmm) {
  gmm.validate();
  Writer w(os);
  w.magic(kDgmm);
  w.u32(kGmmFileVersion);
  w.u32(Writer::checked_count(gmm.components()));
  w.u32(Writer::checked_count(gmm.dim()));
  for (double a : gmm.weights) w.f64(a);
  for (double v : gmm.means.flat()) w.f64(v);
  for (double v : gmm.stds.flat()) w.f64(v);
}

DiagonalGmm read_gmm(std::istream& is) {
  Reader r(is);
  r.expect_magic(kDgmm);
  r.expect_version(kGmmFileVersion);
  const std::uint32_t k = r.count();
  const std::uint32_t d = r.count();
  if (static_cast<std::uint64_t>(k) * d > kMaxCount) throw Error(ErrorCode::kFormat, "implausible GMM shape");
  DiagonalGmm g;
  g.weights.resize(k);
  for (double& a : g.weights) a = r.f64();
  g.means = Matrix(k, d);
  for (double& v : g.means.flat()) v = r.f64();
  g.stds = Matrix(k, d);
  for (double& v : g.stds.flat()) v = r.f64();
  g.validate();
  return g;
}

void write_gmm_file(const std::filesystem::path& path, const DiagonalGmm& gmm) {
  auto os = open_out(path);
  write_gmm(os, gmm);
  finish(os, path);
}

DiagonalGmm read_gmm_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_gmm(is);
}

// ---------------------------------------------------------------------------
// EVEC

void write_encoded(std::ostream& os, const EncodedVector& v) {
  if (v.values.size() != v.layout.expected_size())
    throw Error(ErrorCode::kShapeMismatch, "encoded vector length disagrees with its layout");
  Writer w(os);
  w.magic(kEvec);
  w.u32(kEncodedFileVersion);
  w.text(v.layout.descriptor());
  w.u32(Writer::checked_count(v.values.size()));
  for (double x : v.values) w.f64(x);
}

EncodedVector read_encoded(std::istream& is) {
  Reader r(is);
  r.expect_magic(kEvec);
  r.expect_version(kEncodedFileVersion);
  EncodedVector v;
  v.layout = EncodingLayout::parse(r.text());
  v.values.resize(r.count());
  for (double& x : v.values) x = r.f64();
  if (v.values.size() != v.layout.expected_size())
    throw Error(ErrorCode::kFormat, "encoded vector length disagrees with its layout");
  return v;
}

void write_encoded_file(const std::filesystem::path& path, const EncodedVector& v) {
  auto os = open_out(path);
  write_encoded(os, v);
  finish(os, path);
}

EncodedVector read_encoded_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_encoded(is);
}

// ---------------------------------------------------------------------------
// NETP

void write_model(std::ostream& os, const Model& model) {
  model.validate();
  Writer w(os);
  w.magic(kNetp);
  w.u32(kModelFileVersion);
  w.u32(3);

  std::vector<const Matrix*> front;
  for (const auto& layer : model.frontend.layers) {
    front.push_back(&layer.weight);
    front.push_back(&layer.bias);
  }
  write_section(w, {'F', 'R', 'N', 'T'}, "activation=" + to_string(model.frontend.activation), front);

  std::vector<const Matrix*> enc;
  if (const auto* fv = std::get_if<NetFvParams>(&model.encoder)) {
    enc = {&fv->w, &fv->b};
  } else if (const auto* vl = std::get_if<NetVladParams>(&model.encoder)) {
    enc = {&vl->mu, &vl->w, &vl->b};
  }
  write_section(w, {'E', 'N', 'C', 'D'},
                "encoder=" + to_string(model.encoder_kind()) + ";norm=" + model.norm.to_string(), enc);

  write_section(w, {'C', 'L', 'S', 'F'}, "", {&model.classifier.weight, &model.classifier.bias});
}

Model read_model(std::istream& is) {
  Reader r(is);
  r.expect_magic(kNetp);
  r.expect_version(kModelFileVersion);
  const std::uint32_t sections = r.count();
  Model model;
  bool seen_front = false, seen_enc = false, seen_head = false;
  for (std::uint32_t s = 0; s < sections; ++s) {
    Magic tag{};
    r.bytes(tag.data(), 4);
    const std::string meta = r.text();
    std::vector<Matrix> tensors(r.count());
    for (Matrix& t : tensors) t = r.matrix();

    if (tag == Magic{'F', 'R', 'N', 'T'}) {
      if (tensors.size() % 2 != 0) throw Error(ErrorCode::kFormat, "front-end section needs weight/bias pairs");
      model.frontend.activation = activation_from_string(meta_value(meta, "activation"));
      for (std::size_t i = 0; i < tensors.size(); i += 2)
        model.frontend.layers.push_back({std::move(tensors[i]), std::move(tensors[i + 1])});
      seen_front = true;
    } else if (tag == Magic{'E', 'N', 'C', 'D'}) {
      const EncoderKind kind = encoder_kind_from_string(meta_value(meta, "encoder"));
      model.norm = NormScheme::parse(meta_value(meta, "norm"));
      const std::size_t want = kind == EncoderKind::kNetFv ? 2 : kind == EncoderKind::kNetVlad ? 3 : 0;
      if (tensors.size() != want) throw Error(ErrorCode::kFormat, "encoder section has the wrong tensor count");
      if (kind == EncoderKind::kTap) {
        model.encoder = TapParams{};
      } else if (kind == EncoderKind::kNetFv) {
        model.encoder = NetFvParams{std::move(tensors[0]), std::move(tensors[1])};
      } else if (kind == EncoderKind::kNetVlad) {
        model.encoder = NetVladParams{std::move(tensors[0]), std::move(tensors[1]), std::move(tensors[2])};
      } else {
        throw Error(ErrorCode::kFormat, "model files hold only tap, netfv or netvlad encoders");
      }
      seen_enc = true;
    } else if (tag == Magic{'C', 'L', 'S', 'F'}) {
      if (tensors.size() != 2) throw Error(ErrorCode::kFormat, "classifier section needs weight and bias");
      model.classifier = {std::move(tensors[0]), std::move(tensors[1])};
      seen_head = true;
    } else {
      throw Error(ErrorCode::kFormat, "unknown model section '" + std::string(tag.data(), 4) + "'");
    }
  }
  if (!seen_front || !seen_enc || !seen_head) throw Error(ErrorCode::kFormat, "model file is missing a section");
  model.validate();
  return model;
}

void write_model_file(const std::filesystem::path& path, const Model& model) {
  auto os = open_out(path);
  write_model(os, model);
  finish(os, path);
}

Model read_model_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_model(is);
}

// ---------------------------------------------------------------------------
// Manifest

void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& entries) {
  os << "path,label,frames,bucket\n";
  for (const auto& e : entries) {
    if (e.path.find_first_of(",\n") != std::string::npos || e.bucket.find_first_of(",\n") != std::string::npos)
      throw Error(ErrorCode::kInvalidArgument, "manifest fields may not contain commas or newlines");
    os << e.path << ',' << e.label << ',' << e.frames << ',' << e.bucket << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || strip_cr(line) != "path,label,frames,bucket")
    throw Error(ErrorCode::kFormat, "manifest header must be 'path,label,frames,bucket'");
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw Error(ErrorCode::kFormat, "manifest line needs four fields: " + line);
    out.push_back({f[0], parse_size(f[1], "label"), parse_size(f[2], "frame count"), f[3]});
  }
  return out;
}

std::vector<ManifestEntry> read_manifest_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_manifest(is);
}

std::string utterance_id(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  return p.replace_extension().generic_string();
}

std::vector<LabeledUtterance> load_manifest_utterances(const std::filesystem::path& manifest) {
  const auto entries = read_manifest_file(manifest);
  const auto base = manifest.parent_path();
  std::vector<LabeledUtterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    LabeledUtterance u;
    u.id = utterance_id(e.path);
    u.frames = read_feature_file(base / e.path);
    if (u.frames.rows() != e.frames)
      throw Error(ErrorCode::kFormat, "'" + e.path + "' holds " + std::to_string(u.frames.rows()) +
                                          " frames but the manifest says " + std::to_string(e.frames));
    u.label = e.label;
    u.bucket = e.bucket;
    out.push_back(std::move(u));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// ---------------------------------------------------------------------------
// Scores

void write_scores(std::ostream& os, const TrialScores& scores) {
  scores.validate();
  os << "id\tlabel\tbucket";
  for (std::size_t c = 0; c < scores.classes(); ++c) os << "\tscore_" << c;
  os << '\n';
  for (std::size_t i = 0; i < scores.trials(); ++i) {
    os << scores.ids[i] << '\t' << scores.labels[i] << '\t' << (scores.buckets.empty() ? "all" : scores.buckets[i]);
    for (double v : scores.scores.row(i)) os << '\t' << format_real(v);
    os << '\n';
  }
}

TrialScores read_scores(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::kFormat, "scores file is empty");
  const auto header = split(strip_cr(line), '\t');
  if (header.size() < 4 || header[0] != "id" || header[1] != "label" || header[2] != "bucket")
    throw Error(ErrorCode::kFormat, "scores header must be 'id, label, bucket, score_0..'");
  const std::size_t classes = header.size() - 3;
  TrialScores t;
  std::vector<double> data;
  while (std::getline(is, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() != header.size()) throw Error(ErrorCode::kFormat, "scores line has the wrong field count: " + line);
    t.ids.push_back(f[0]);
    t.labels.push_back(parse_size(f[1], "label"));
    t.buckets.push_back(f[2]);
    for (std::size_t c = 0; c < classes; ++c) data.push_back(parse_real(f[3 + c]));
  }
  t.scores = Matrix(t.ids.size(), classes, std::move(data));
  t.validate();
  return t;
}

void write_scores_file(const std::filesystem::path& path, const TrialScores& scores) {
  auto os = open_out(path);
  write_scores(os, scores);
  finish(os, path);
}

TrialScores read_scores_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_scores(is);
}

std::string read_text_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  finish(os, path);
}

}  // namespace seqenc
