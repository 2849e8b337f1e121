#pragma once

// Dataset ingestion, [0,1] scaling and synthetic outlier contamination.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "raeufs/error.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

/// Label value for rows without ground truth (injected outliers, blanks).
inline constexpr int kNoLabel = -1;

struct Dataset {
  Matrix X;                                 // N x D
  std::optional<std::vector<int>> labels;   // length N, ids in [0, c) or kNoLabel
  std::vector<bool> inlier_mask;            // length N
  std::vector<std::string> feature_names;   // empty or length D

  Index rows() const { return X.rows(); }
  Index cols() const { return X.cols(); }

  /// Number of distinct labels among labelled rows (0 if unlabelled).
  int num_classes() const {
    if (!labels) return 0;
    int hi = -1;
    for (int l : *labels) hi = std::max(hi, l);
    return hi + 1;
  }

  std::size_t num_inliers() const {
    return static_cast<std::size_t>(
        std::count(inlier_mask.begin(), inlier_mask.end(), true));
  }

  void validate() const {
    if (inlier_mask.size() != static_cast<std::size_t>(X.rows()))
      throw DimensionError("Dataset: inlier_mask length " +
                           std::to_string(inlier_mask.size()) + " != rows " +
                           std::to_string(X.rows()));
    if (labels && labels->size() != static_cast<std::size_t>(X.rows()))
      throw DimensionError("Dataset: labels length != rows");
    if (!feature_names.empty() &&
        feature_names.size() != static_cast<std::size_t>(X.cols()))
      throw DimensionError("Dataset: feature_names length != cols");
    if (labels) {
      for (int l : *labels)
        if (l < kNoLabel) throw InvalidArgument("Dataset: negative label");
    }
  }

  static Dataset from_matrix(Matrix x) {
    Dataset d;
    d.inlier_mask.assign(static_cast<std::size_t>(x.rows()), true);
    d.X = std::move(x);
    return d;
  }
};

/// Rows `idx` of `d`, in the given order.
inline Dataset select_rows(const Dataset& d, const std::vector<Index>& idx) {
  Dataset out;
  out.X.resize(static_cast<Index>(idx.size()), d.cols());
  out.inlier_mask.resize(idx.size());
  if (d.labels) out.labels.emplace(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.X.row(static_cast<Index>(r)) = d.X.row(idx[r]);
    out.inlier_mask[r] = d.inlier_mask[static_cast<std::size_t>(idx[r])];
    if (d.labels) (*out.labels)[r] = (*d.labels)[static_cast<std::size_t>(idx[r])];
  }
  out.feature_names = d.feature_names;
  return out;
}

inline std::vector<Index> inlier_rows(const Dataset& d) {
  std::vector<Index> idx;
  for (std::size_t i = 0; i < d.inlier_mask.size(); ++i)
    if (d.inlier_mask[i]) idx.push_back(static_cast<Index>(i));
  return idx;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvOptions {
  bool has_header = true;
  std::optional<std::size_t> label_column;  // 0-based column index
  char delimiter = ',';
};

namespace detail {

// Splits one record; handles RFC-4180 quoting ("" escapes a quote).
inline std::vector<std::string> split_csv_record(std::string_view line,
                                                 char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// Parses a rectangular numeric table. Labels are remapped to 0..c-1 in
/// ascending order of their original values; an empty label cell means
/// "unlabelled".
inline Dataset load_csv(std::istream& in, const CsvOptions& opt,
                        const std::string& path = "<stream>") {
  std::vector<std::vector<double>> rows;
  std::vector<std::optional<double>> raw_labels;
  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_record(line, opt.delimiter);
    if (first && opt.has_header) {
      header = std::move(fields);
      width = header.size();
      first = false;
      continue;
    }
    if (width == 0) width = fields.size();
    first = false;
    if (fields.size() != width) {
      throw ParseError(path, line_no, 0,
                       "ragged row: expected " + std::to_string(width) +
                           " fields, found " + std::to_string(fields.size()));
    }
    if (opt.label_column && *opt.label_column >= width) {
      throw ParseError(path, line_no, *opt.label_column + 1,
                       "label column out of range");
    }
    std::vector<double> vals;
    vals.reserve(width);
    std::optional<double> label;
    for (std::size_t c = 0; c < width; ++c) {
      const bool is_label = opt.label_column && c == *opt.label_column;
      if (is_label && detail::trim(fields[c]).empty()) continue;
      auto v = detail::parse_double(fields[c]);
      if (!v) {
        throw ParseError(path, line_no, c + 1,
                         "non-numeric cell '" + fields[c] + "'");
      }
      if (is_label) {
        if (*v != std::floor(*v) || *v < 0)
          throw ParseError(path, line_no, c + 1,
                           "label must be a non-negative integer");
        label = *v;
      } else {
        vals.push_back(*v);
      }
    }
    rows.push_back(std::move(vals));
    raw_labels.push_back(label);
  }
  if (rows.empty()) throw ParseError(path, line_no, 0, "no data rows");

  Dataset d;
  const std::size_t nfeat = rows.front().size();
  d.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(nfeat));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < nfeat; ++c)
      d.X(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  d.inlier_mask.assign(rows.size(), true);
  if (opt.label_column) {
    std::map<double, int> remap;
    for (const auto& l : raw_labels)
      if (l) remap.emplace(*l, 0);
    int next = 0;
    for (auto& [k, v] : remap) v = next++;
    d.labels.emplace();
    for (const auto& l : raw_labels) d.labels->push_back(l ? remap[*l] : kNoLabel);
  }
  if (!header.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (!(opt.label_column && c == *opt.label_column))
        d.feature_names.emplace_back(detail::trim(header[c]));
  }
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  return load_csv(in, opt, path);
}

/// Writes features (and a trailing "label" column when labels exist) with
/// shortest round-trip decimal formatting.
inline void save_csv(std::ostream& out, const Dataset& d) {
  const bool labelled = d.labels.has_value();
  for (Index c = 0; c < d.cols(); ++c) {
    if (c) out << ',';
    out << (d.feature_names.empty()
                ? "f" + std::to_string(c)
                : detail::csv_escape(d.feature_names[static_cast<std::size_t>(c)]));
  }
  if (labelled) out << (d.cols() ? "," : "") << "label";
  out << '\n';
  for (Index r = 0; r < d.rows(); ++r) {
    for (Index c = 0; c < d.cols(); ++c) {
      if (c) out << ',';
      out << detail::format_double(d.X(r, c));
    }
    if (labelled) {
      const int l = (*d.labels)[static_cast<std::size_t>(r)];
      out << ',';
      if (l != kNoLabel) out << l;
    }
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_csv: cannot open " + path);
  save_csv(out, d);
  if (!out) throw Error("save_csv: write failed for " + path);
}

/// Options matching the file layout produced by save_csv.
inline CsvOptions saved_csv_options(std::size_t num_features, bool labelled) {
  CsvOptions o;
  o.has_header = true;
  if (labelled) o.label_column = num_features;
  return o;
}

// ---------------------------------------------------------------------------
// Binary matrix format: "RFSM", version byte, u64 rows, u64 cols, then
// rows*cols little-endian f64 values in row-major order.

inline constexpr std::array<char, 4> kBinaryMagic = {'R', 'F', 'S', 'M'};
inline constexpr std::uint8_t kBinaryVersion = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_matrix_binary(std::ostream& out, const Matrix& m) {
  out.write(kBinaryMagic.data(), 4);
  out.put(static_cast<char>(kBinaryVersion));
  detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      detail::put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
}

/// Reads one record; returns nullopt at a clean end of stream.
inline std::optional<Matrix> read_matrix_binary(std::istream& in,
                                                const std::string& path = "<stream>") {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() == 0) return std::nullopt;
  if (in.gcount() != 4 || magic != kBinaryMagic)
    throw ParseError(path, 0, 0, "bad magic bytes");
  const int version = in.get();
  if (version != kBinaryVersion)
    throw ParseError(path, 0, 0, "unsupported version " + std::to_string(version));
  const std::uint64_t rows = detail::get_u64(in);
  const std::uint64_t cols = detail::get_u64(in);
  if (!in) throw ParseError(path, 0, 0, "truncated header");
  if (rows > (1ULL << 32) || cols > (1ULL << 32))
    throw ParseError(path, 0, 0, "implausible shape");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      m(r, c) = std::bit_cast<double>(detail::get_u64(in));
  if (!in) throw ParseError(path, 0, 0, "truncated payload");
  return m;
}

inline void save_matrix_binary(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  write_matrix_binary(out, m);
}

inline Matrix load_matrix_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  auto m = read_matrix_binary(in, path);
  if (!m) throw ParseError(path, 0, 0, "empty file");
  return *m;
}

/// Binary dataset: X record, optionally followed by an N x 1 label record
/// (kNoLabel stored as -1).
inline Dataset load_dataset_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  auto x = read_matrix_binary(in, path);
  if (!x) throw ParseError(path, 0, 0, "empty file");
  Dataset d = Dataset::from_matrix(std::move(*x));
  if (auto lab = read_matrix_binary(in, path)) {
    if (lab->rows() != d.rows() || lab->cols() != 1)
      throw ParseError(path, 0, 0, "label record must be N x 1");
    d.labels.emplace();
    for (Index i = 0; i < lab->rows(); ++i)
      d.labels->push_back(static_cast<int>((*lab)(i, 0)));
  }
  d.validate();
  return d;
}

inline void save_dataset_binary(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  write_matrix_binary(out, d.X);
  if (d.labels) {
    Matrix lab(d.rows(), 1);
    for (Index i = 0; i < d.rows(); ++i)
      lab(i, 0) = (*d.labels)[static_cast<std::size_t>(i)];
    write_matrix_binary(out, lab);
  }
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Per-feature min-max scaling using inlier rows only. Constant features
/// map to 0; outlier rows reuse the inlier statistics and may leave [0,1].
inline Dataset scale_unit_interval(const Dataset& d) {
  d.validate();
  if (d.rows() < 1) throw InvalidArgument("scale_unit_interval: empty dataset");
  const auto idx = inlier_rows(d);
  if (idx.empty()) throw InvalidArgument("scale_unit_interval: no inlier rows");
  Dataset out = d;
  for (Index c = 0; c < d.cols(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Index r : idx) {
      lo = std::min(lo, d.X(r, c));
      hi = std::max(hi, d.X(r, c));
    }
    const double range = hi - lo;
    for (Index r = 0; r < d.rows(); ++r)
      out.X(r, c) = range > 0.0 ? (d.X(r, c) - lo) / range : 0.0;
  }
  return out;
}

struct ContaminationSpec {
  double fraction = 0.0;  // outliers / total, in [0, 1)
  std::uint64_t seed = 0;
};

/// N_out with N_out / (N_clean + N_out) as close as possible to `fraction`.
inline std::size_t outlier_count(std::size_t n_clean, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw InvalidArgument("contamination fraction must lie in [0, 1)");
  return static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n_clean) / (1.0 - fraction)));
}

/// Appends N(0, I_D) rows (unlabelled, inlier_mask false) and shuffles all
/// rows; both steps are driven by spec.seed.
inline Dataset inject_outliers(const Dataset& d, const ContaminationSpec& spec) {
  d.validate();
  if (d.num_inliers() != static_cast<std::size_t>(d.rows()))
    throw InvalidArgument("inject_outliers: dataset already contains outliers");
  const std::size_t n_clean = static_cast<std::size_t>(d.rows());
  const std::size_t n_out = outlier_count(n_clean, spec.fraction);
  Rng rng(spec.seed);
  Dataset all;
  all.X.resize(static_cast<Index>(n_clean + n_out), d.cols());
  all.X.topRows(static_cast<Index>(n_clean)) = d.X;
  if (n_out > 0)
    all.X.bottomRows(static_cast<Index>(n_out)) =
        gaussian_matrix(static_cast<Index>(n_out), d.cols(), rng);
  all.inlier_mask.assign(n_clean + n_out, false);
  std::fill_n(all.inlier_mask.begin(), n_clean, true);
  if (d.labels) {
    all.labels = *d.labels;
    all.labels->resize(n_clean + n_out, kNoLabel);
  }
  all.feature_names = d.feature_names;

  std::vector<Index> order(n_clean + n_out);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  rng.shuffle(order);
  return select_rows(all, order);
}

}  // namespace raeufs
