#pragma once

#include <array>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "ppmd/baseline.hpp"
#include "ppmd/pipeline.hpp"
#include "ppmd/snapshot.hpp"
#include "ppmd/temporal_pmd.hpp"

namespace ppmd::io {

inline constexpr std::array<char, 4> kSnapshotMagic{'P', 'M', 'D', 'S'};
inline constexpr std::array<char, 4> kArchiveMagic{'P', 'M', 'D', 'M'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kSnapshotHeaderBytes = 40;

// ---------------------------------------------------------------------------
// Little-endian byte buffer
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

  void need(std::size_t n) const {
    require(pos_ + n <= buf_.size(), ErrorCode::TruncatedFile, "unexpected end of file");
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorCode::Io, "write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::Io, "cannot move temporary file onto " + path.string());
  }
}

// ---------------------------------------------------------------------------
// PMDS snapshot files
// ---------------------------------------------------------------------------

inline std::string encode_snapshots(const SnapshotMatrix& m) {
  ByteWriter w;
  w.raw(kSnapshotMagic.data(), 4);
  w.u32(kFormatVersion);
  w.u64(m.rows());
  w.u64(m.cols());
  w.u64(m.n_spatial);
  w.u64(m.n_time);
  for (double p : m.params) w.f64(p);
  for (Eigen::Index j = 0; j < m.data.cols(); ++j)
    for (Eigen::Index i = 0; i < m.data.rows(); ++i) w.f64(m.data(i, j));
  return w.bytes();
}

inline SnapshotMatrix decode_snapshots(std::string bytes) {
  ByteReader r(std::move(bytes));
  const std::string magic = r.raw(4);
  require(std::equal(magic.begin(), magic.end(), kSnapshotMagic.begin()), ErrorCode::BadMagic,
          "not a PMDS snapshot file");
  require(r.u32() == kFormatVersion, ErrorCode::BadVersion, "unsupported PMDS version");
  const std::uint64_t rows = r.u64(), cols = r.u64();
  SnapshotMatrix m;
  m.n_spatial = r.u64();
  m.n_time = r.u64();
  require(m.n_spatial * m.n_time == rows, ErrorCode::MismatchedShape, "rows != n_spatial * n_time");
  require(r.remaining() >= 8 * cols && (r.remaining() - 8 * cols) / 8 >= rows * cols &&
              r.remaining() == 8 * (cols + rows * cols),
          ErrorCode::TruncatedFile, "payload size does not match header");
  for (std::uint64_t j = 0; j < cols; ++j) m.params.push_back(r.f64());
  m.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.data.cols(); ++j)
    for (Eigen::Index i = 0; i < m.data.rows(); ++i) m.data(i, j) = r.f64();
  for (std::size_t i = 1; i < m.params.size(); ++i)
    require(m.params[i - 1] < m.params[i], ErrorCode::UnsortedParams, "parameters are not strictly ascending");
  return m;
}

inline void write_snapshot_file(const std::filesystem::path& path, const SnapshotMatrix& m) {
  require(m.n_spatial * m.n_time == m.rows() && m.params.size() == m.cols(), ErrorCode::MismatchedShape,
          "snapshot bookkeeping is inconsistent");
  write_file_atomic(path, encode_snapshots(m));
}

inline SnapshotMatrix read_snapshot_file(const std::filesystem::path& path) {
  return decode_snapshots(read_file(path));
}

// ---------------------------------------------------------------------------
// CSV fallback: header "mu,0,1,...,N-1", one snapshot per line
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& field) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  require(end != begin && *end == '\0', ErrorCode::MismatchedShape, "malformed number '" + field + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    while (!cur.empty() && cur.front() == ' ') cur.erase(cur.begin());
    out.push_back(cur);
  }
  return out;
}

inline void write_snapshot_csv(const std::filesystem::path& path, const SnapshotMatrix& m) {
  std::string s = "mu";
  for (std::size_t i = 0; i < m.rows(); ++i) s += "," + std::to_string(i);
  s += "\n";
  for (std::size_t j = 0; j < m.cols(); ++j) {
    s += format_double(m.params[j]);
    for (std::size_t i = 0; i < m.rows(); ++i)
      s += "," + format_double(m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    s += "\n";
  }
  write_file_atomic(path, s);
}

/// `n_time` splits each row of N values into n_time blocks of N / n_time.
inline SnapshotMatrix read_snapshot_csv(const std::filesystem::path& path, std::size_t n_time = 1) {
  std::istringstream in(read_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::TruncatedFile, "empty CSV file");
  const auto header = split_csv(line);
  require(header.size() >= 2 && header[0] == "mu", ErrorCode::BadMagic, "CSV header must start with 'mu'");
  const std::size_t n = header.size() - 1;
  require(n_time >= 1 && n % n_time == 0, ErrorCode::MismatchedShape, "row length not divisible by n_time");
  std::vector<std::vector<double>> cols;
  std::vector<double> params;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    require(fields.size() == n + 1, ErrorCode::MismatchedShape, "CSV row has wrong number of fields");
    params.push_back(parse_double(fields[0]));
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = parse_double(fields[i + 1]);
    cols.push_back(std::move(col));
  }
  SnapshotMatrix m;
  m.n_spatial = n / n_time;
  m.n_time = n_time;
  m.params = params;
  m.data.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
  for (std::size_t i = 1; i < params.size(); ++i)
    require(params[i - 1] < params[i], ErrorCode::UnsortedParams, "parameters are not strictly ascending");
  return m;
}

/// Binary when the file starts with the PMDS magic, CSV otherwise.
inline SnapshotMatrix read_snapshots(const std::filesystem::path& path, std::size_t csv_n_time = 1) {
  const std::string head = read_file(path).substr(0, 4);
  if (head == std::string(kSnapshotMagic.begin(), kSnapshotMagic.end())) return read_snapshot_file(path);
  if (path.extension() == ".csv") return read_snapshot_csv(path, csv_n_time);
  return read_snapshot_file(path);
}

// ---------------------------------------------------------------------------
// Named-section archive used for fitted models
// ---------------------------------------------------------------------------

class Archive {
 public:
  void put(const std::string& name, const Matrix& m) { matrices_[name] = m; }
  void put(const std::string& name, const std::vector<double>& v) {
    matrices_[name] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  void put_scalars(const std::string& name, std::initializer_list<double> values) {
    put(name, std::vector<double>(values));
  }
  void put_text(const std::string& name, const std::string& text) { texts_[name] = text; }

  bool has(const std::string& name) const { return matrices_.count(name) || texts_.count(name); }

  const Matrix& matrix(const std::string& name) const {
    auto it = matrices_.find(name);
    require(it != matrices_.end(), ErrorCode::TruncatedFile, "model archive lacks section '" + name + "'");
    return it->second;
  }
  Vector vector(const std::string& name) const {
    const Matrix& m = matrix(name);
    return Eigen::Map<const Vector>(m.data(), m.size());
  }
  std::vector<double> values(const std::string& name) const {
    const Matrix& m = matrix(name);
    return std::vector<double>(m.data(), m.data() + m.size());
  }
  double scalar(const std::string& name, std::size_t i = 0) const {
    const Matrix& m = matrix(name);
    require(static_cast<Eigen::Index>(i) < m.size(), ErrorCode::TruncatedFile, "section '" + name + "' too short");
    return m.data()[i];
  }
  const std::string& text(const std::string& name) const {
    auto it = texts_.find(name);
    require(it != texts_.end(), ErrorCode::TruncatedFile, "model archive lacks section '" + name + "'");
    return it->second;
  }

  std::string encode() const {
    ByteWriter w;
    w.raw(kArchiveMagic.data(), 4);
    w.u32(kFormatVersion);
    w.u64(matrices_.size() + texts_.size());
    for (const auto& [name, text] : texts_) {
      w.u32(static_cast<std::uint32_t>(name.size()));
      w.raw(name.data(), name.size());
      w.u8(1);
      w.u64(text.size());
      w.raw(text.data(), text.size());
    }
    for (const auto& [name, m] : matrices_) {
      w.u32(static_cast<std::uint32_t>(name.size()));
      w.raw(name.data(), name.size());
      w.u8(0);
      w.u64(static_cast<std::uint64_t>(m.rows()));
      w.u64(static_cast<std::uint64_t>(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) w.f64(m(i, j));
    }
    return w.bytes();
  }

  static Archive decode(std::string bytes) {
    ByteReader r(std::move(bytes));
    const std::string magic = r.raw(4);
    require(std::equal(magic.begin(), magic.end(), kArchiveMagic.begin()), ErrorCode::BadMagic,
            "not a model archive");
    require(r.u32() == kFormatVersion, ErrorCode::BadVersion, "unsupported archive version");
    const std::uint64_t count = r.u64();
    Archive a;
    for (std::uint64_t s = 0; s < count; ++s) {
      const std::uint32_t len = r.u32();
      const std::string name = r.raw(len);
      const std::uint8_t kind = r.u8();
      if (kind == 1) {
        const std::uint64_t n = r.u64();
        a.texts_[name] = r.raw(n);
      } else {
        require(kind == 0, ErrorCode::BadMagic, "unknown section kind");
        const std::uint64_t rows = r.u64(), cols = r.u64();
        r.need(8 * rows * cols);
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = r.f64();
        a.matrices_[name] = std::move(m);
      }
    }
    return a;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, encode()); }
  static Archive load(const std::filesystem::path& path) { return decode(read_file(path)); }

 private:
  std::map<std::string, Matrix> matrices_;
  std::map<std::string, std::string> texts_;
};

// ---------------------------------------------------------------------------
// Model (de)serialization
// ---------------------------------------------------------------------------

namespace detail {

inline void put_stats(Archive& a, const ScalingStats& s) {
  a.put("stats.mean", s.mean);
  a.put("stats.scale", s.scale);
}
inline ScalingStats get_stats(const Archive& a) { return {a.vector("stats.mean"), a.vector("stats.scale")}; }

inline void put_basis(Archive& a, const LinearBasis& b) {
  a.put("basis.left", b.left_modes);
  a.put("basis.sigma", b.singular_values);
  a.put("basis.right", b.right_modes);
  a.put_scalars("basis.energy", {b.energy_fraction});
}
inline LinearBasis get_basis(const Archive& a) {
  LinearBasis b;
  b.left_modes = a.matrix("basis.left");
  b.singular_values = a.vector("basis.sigma");
  b.right_modes = a.matrix("basis.right");
  b.energy_fraction = a.scalar("basis.energy");
  return b;
}

inline void put_lifting(Archive& a, const std::string& prefix, const LiftingOperator& op) {
  a.put(prefix + ".embeddings", op.train_embeddings);
  a.put(prefix + ".dual", op.dual);
  a.put_scalars(prefix + ".params", {static_cast<double>(op.params.degree), op.params.offset, op.params.ridge});
}
inline LiftingOperator get_lifting(const Archive& a, const std::string& prefix) {
  LiftingOperator op;
  op.train_embeddings = a.matrix(prefix + ".embeddings");
  op.dual = a.matrix(prefix + ".dual");
  op.params = {static_cast<int>(a.scalar(prefix + ".params", 0)), a.scalar(prefix + ".params", 1),
               a.scalar(prefix + ".params", 2)};
  return op;
}

inline void put_map(Archive& a, const std::string& prefix, const ContinuousLatentMap& m) {
  a.put(prefix + ".knots", m.knots);
  a.put(prefix + ".coeffs", m.coeffs);
  a.put(prefix + ".alphas", m.alphas);
  a.put_scalars(prefix + ".domain", {m.lo, m.hi});
}
inline ContinuousLatentMap get_map(const Archive& a, const std::string& prefix) {
  ContinuousLatentMap m;
  m.knots = a.values(prefix + ".knots");
  m.coeffs = a.matrix(prefix + ".coeffs");
  m.alphas = a.vector(prefix + ".alphas");
  m.lo = a.scalar(prefix + ".domain", 0);
  m.hi = a.scalar(prefix + ".domain", 1);
  return m;
}

inline void check_kind(const Archive& a, const std::string& kind) {
  require(a.has("kind") && a.text("kind") == kind, ErrorCode::BadMagic, "archive does not hold a " + kind + " model");
}

}  // namespace detail

inline Archive to_archive(const PpmdModel& m) {
  Archive a;
  a.put_text("kind", "ppmd");
  detail::put_stats(a, m.stats);
  detail::put_basis(a, m.basis);
  detail::put_lifting(a, "lifting", m.lifting);
  detail::put_map(a, "z_map", m.z_map);
  detail::put_map(a, "phi_map", m.phi_map);
  a.put_scalars("domain", {m.lo, m.hi});
  a.put("train_params", m.train_params);
  a.put_text("data_hash", std::to_string(m.data_hash));
  a.put_text("provenance", m.provenance);
  const auto& d = m.diagnostics;
  a.put_scalars("diagnostics", {d.residual_fraction, d.energy_fraction, static_cast<double>(d.k_used), d.bandwidth,
                                d.linear_only ? 1.0 : 0.0});
  return a;
}

inline PpmdModel ppmd_from_archive(const Archive& a) {
  detail::check_kind(a, "ppmd");
  PpmdModel m;
  m.stats = detail::get_stats(a);
  m.basis = detail::get_basis(a);
  m.lifting = detail::get_lifting(a, "lifting");
  m.z_map = detail::get_map(a, "z_map");
  m.phi_map = detail::get_map(a, "phi_map");
  m.lo = a.scalar("domain", 0);
  m.hi = a.scalar("domain", 1);
  m.train_params = a.values("train_params");
  m.data_hash = std::stoull(a.text("data_hash"));
  m.provenance = a.text("provenance");
  m.diagnostics = {a.scalar("diagnostics", 0), a.scalar("diagnostics", 1), static_cast<int>(a.scalar("diagnostics", 2)),
                   a.scalar("diagnostics", 3), a.scalar("diagnostics", 4) != 0.0};
  return m;
}

inline Archive to_archive(const PodGprModel& m) {
  Archive a;
  a.put_text("kind", "pod_gpr");
  detail::put_stats(a, m.stats);
  detail::put_basis(a, m.basis);
  a.put("train_params", m.train_params);
  const auto r = static_cast<Eigen::Index>(m.regressors.size());
  Matrix alpha(static_cast<Eigen::Index>(m.train_params.size()), r), hyper(4, r);
  for (Eigen::Index k = 0; k < r; ++k) {
    const auto& gp = m.regressors[static_cast<std::size_t>(k)];
    alpha.col(k) = gp.alpha;
    hyper.col(k) << gp.mean, gp.signal_variance, gp.length_scale, gp.jitter;
  }
  a.put("gp.alpha", alpha);
  a.put("gp.hyper", hyper);
  return a;
}

inline PodGprModel pod_gpr_from_archive(const Archive& a) {
  detail::check_kind(a, "pod_gpr");
  PodGprModel m;
  m.stats = detail::get_stats(a);
  m.basis = detail::get_basis(a);
  m.train_params = a.values("train_params");
  const Matrix& alpha = a.matrix("gp.alpha");
  const Matrix& hyper = a.matrix("gp.hyper");
  for (Eigen::Index k = 0; k < hyper.cols(); ++k) {
    ScalarGp gp;
    gp.inputs = m.train_params;
    gp.alpha = alpha.col(k);
    gp.mean = hyper(0, k);
    gp.signal_variance = hyper(1, k);
    gp.length_scale = hyper(2, k);
    gp.jitter = hyper(3, k);
    m.regressors.push_back(std::move(gp));
  }
  return m;
}

inline Archive to_archive(const TemporalPmdModel& m) {
  Archive a;
  a.put_text("kind", "pmd");
  detail::put_stats(a, m.stats);
  detail::put_basis(a, m.basis);
  detail::put_lifting(a, "lifting", m.lifting);
  a.put("linear.A", m.linear.A);
  a.put_scalars("linear.meta", {m.linear.ridge, m.linear.spectral_radius});
  const auto& h = m.manifold.harmonics;
  a.put("harmonics.points", h.points);
  a.put("harmonics.geodesics", h.geodesics);
  a.put("harmonics.degrees", h.degrees);
  a.put("harmonics.eigenvalues", h.eigenvalues);
  a.put("harmonics.vectors", h.vectors);
  a.put_scalars("harmonics.meta", {static_cast<double>(h.k_used), h.bandwidth});
  a.put("manifold.omega", m.manifold.omega);
  a.put("manifold.coefficients", m.manifold.coefficients);
  a.put_scalars("manifold.meta",
                {static_cast<double>(m.manifold.retained), m.manifold.ridge, m.manifold.floor});
  a.put("last_z", m.last_z);
  a.put("last_phi", m.last_phi);
  return a;
}

inline TemporalPmdModel temporal_from_archive(const Archive& a) {
  detail::check_kind(a, "pmd");
  TemporalPmdModel m;
  m.stats = detail::get_stats(a);
  m.basis = detail::get_basis(a);
  m.lifting = detail::get_lifting(a, "lifting");
  m.linear.A = a.matrix("linear.A");
  m.linear.ridge = a.scalar("linear.meta", 0);
  m.linear.spectral_radius = a.scalar("linear.meta", 1);
  auto& h = m.manifold.harmonics;
  h.points = a.matrix("harmonics.points");
  h.geodesics = a.matrix("harmonics.geodesics");
  h.degrees = a.vector("harmonics.degrees");
  h.eigenvalues = a.vector("harmonics.eigenvalues");
  h.vectors = a.matrix("harmonics.vectors");
  h.k_used = static_cast<int>(a.scalar("harmonics.meta", 0));
  h.bandwidth = a.scalar("harmonics.meta", 1);
  m.manifold.omega = a.matrix("manifold.omega");
  m.manifold.coefficients = a.matrix("manifold.coefficients");
  m.manifold.retained = static_cast<Eigen::Index>(a.scalar("manifold.meta", 0));
  m.manifold.ridge = a.scalar("manifold.meta", 1);
  m.manifold.floor = a.scalar("manifold.meta", 2);
  m.last_z = a.vector("last_z");
  m.last_phi = a.vector("last_phi");
  return m;
}

// ---------------------------------------------------------------------------
// Metric reports
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "type,parameter,rank,method,mse,rel\n";
  for (const auto& r : rows)
    s += r.type + "," + format_double(r.parameter) + "," + std::to_string(r.rank) + "," + r.method + "," +
         format_double(r.mse) + "," + format_double(r.rel) + "\n";
  return s;
}

}  // namespace ppmd::io
