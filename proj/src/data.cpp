#include "tsvr/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tsvr/error.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- validation -------------------------------------------------------------

namespace {

void check_labels(const std::vector<std::size_t>& labels, std::size_t classes,
                  const char* block) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ValidationError(std::string(block) + ": entry " + std::to_string(i) + " has label " +
                            std::to_string(labels[i]) + ", expected < " + std::to_string(classes));
    }
  }
}

void check_finite(const Matrix& m, const char* block) {
  if (!all_finite(m)) throw ValidationError(std::string(block) + ": contains non-finite values");
}

}  // namespace

void validate_dataset(const ZslDataset& ds) {
  const std::size_t d = ds.source_features.cols();
  const std::size_t r = ds.source_attributes.cols();
  if (ds.source_attributes.rows() == 0) {
    throw ValidationError("source_attributes: expected at least 1 category, found 0");
  }
  if (ds.target_attributes.rows() == 0) {
    throw ValidationError("target_attributes: expected at least 1 category, found 0");
  }
  if (ds.source_features.rows() == 0) throw ValidationError("source_features: no images");
  if (ds.target_features.rows() == 0) throw ValidationError("target_features: no images");
  if (ds.target_features.cols() != d) {
    throw ValidationError("target_features: expected " + std::to_string(d) +
                          " columns, found " + std::to_string(ds.target_features.cols()));
  }
  if (ds.target_attributes.cols() != r) {
    throw ValidationError("target_attributes: expected " + std::to_string(r) +
                          " columns, found " + std::to_string(ds.target_attributes.cols()));
  }
  if (ds.source_labels.size() != ds.source_features.rows()) {
    throw ValidationError("source_labels: expected " + std::to_string(ds.source_features.rows()) +
                          " labels, found " + std::to_string(ds.source_labels.size()));
  }
  if (ds.target_labels.size() != ds.target_features.rows()) {
    throw ValidationError("target_labels: expected " + std::to_string(ds.target_features.rows()) +
                          " labels, found " + std::to_string(ds.target_labels.size()));
  }
  check_labels(ds.source_labels, ds.source_attributes.rows(), "source_labels");
  check_labels(ds.target_labels, ds.target_attributes.rows(), "target_labels");
  check_finite(ds.source_features, "source_features");
  check_finite(ds.target_features, "target_features");
  check_finite(ds.source_attributes, "source_attributes");
  check_finite(ds.target_attributes, "target_attributes");
  if (!ds.source_classes.empty() && ds.source_classes.size() != ds.source_attributes.rows()) {
    throw ValidationError("source_classes: expected " +
                          std::to_string(ds.source_attributes.rows()) + " names, found " +
                          std::to_string(ds.source_classes.size()));
  }
  if (!ds.target_classes.empty() && ds.target_classes.size() != ds.target_attributes.rows()) {
    throw ValidationError("target_classes: expected " +
                          std::to_string(ds.target_attributes.rows()) + " names, found " +
                          std::to_string(ds.target_classes.size()));
  }
  const std::set<std::string> seen(ds.source_classes.begin(), ds.source_classes.end());
  for (const auto& name : ds.target_classes) {
    if (seen.contains(name)) {
      throw ValidationError("target_classes: '" + name +
                            "' is also a source class; seen and unseen classes must be disjoint");
    }
  }
}

std::string dataset_summary(const ZslDataset& ds) {
  std::ostringstream os;
  os << "dataset '" << ds.name << "'";
  if (!ds.split.empty()) os << " split " << ds.split;
  os << ": N_s=" << ds.source_features.rows() << " N_t=" << ds.target_features.rows()
     << " K_s=" << ds.source_categories() << " K_t=" << ds.target_categories()
     << " d=" << ds.feature_dim() << " r=" << ds.attribute_dim();
  return os.str();
}

// ---- matrix files -------------------------------------------------------------

MatrixFormat parse_matrix_format(const std::string& tag) {
  if (tag == "csv") return MatrixFormat::Csv;
  if (tag == "mtxb") return MatrixFormat::Mtxb;
  throw FormatError("unknown matrix format '" + tag + "' (expected csv or mtxb)");
}

std::string matrix_format_name(MatrixFormat format) {
  return format == MatrixFormat::Csv ? "csv" : "mtxb";
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

Matrix load_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = view.find(',', start);
      const std::string_view token =
          trim(view.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                   : comma - start));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) +
                          ": non-numeric token '" + std::string(token) + "'");
      }
      values.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": ragged row (" +
                        std::to_string(count) + " values, expected " + std::to_string(cols) + ")");
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

void save_matrix_csv(const Matrix& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<std::uint8_t> encode_mtxb(const Matrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(13 + 8 * m.size());
  out.insert(out.end(), {'M', 'T', 'X', 'B', 1});
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) put_f64(out, v);
  return out;
}

Matrix decode_mtxb(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MTXB", 4) != 0) {
    throw FormatError(origin + ": bad magic at offset 0 (expected MTXB)");
  }
  if (bytes.size() < 5 || bytes[4] != 1) {
    throw FormatError(origin + ": unsupported version at offset 4");
  }
  if (bytes.size() < 13) throw FormatError(origin + ": truncated header at offset 5");
  const std::size_t rows = get_u32(bytes.data() + 5);
  const std::size_t cols = get_u32(bytes.data() + 9);
  const std::size_t expected = 13 + 8 * rows * cols;
  if (bytes.size() < expected) {
    throw FormatError(origin + ": truncated payload at offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(expected) + " bytes for " +
                      std::to_string(rows) + "x" + std::to_string(cols) + ")");
  }
  if (bytes.size() > expected) {
    throw FormatError(origin + ": trailing bytes after offset " + std::to_string(expected));
  }
  std::vector<double> values(rows * cols);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f64(bytes.data() + 13 + 8 * i);
  return Matrix(rows, cols, std::move(values));
}

Matrix load_matrix_mtxb(const fs::path& path) {
  return decode_mtxb(read_bytes(path), path.string());
}

void save_matrix_mtxb(const Matrix& m, const fs::path& path) { write_bytes(encode_mtxb(m), path); }

Matrix load_matrix(const fs::path& path, MatrixFormat format) {
  return format == MatrixFormat::Csv ? load_matrix_csv(path) : load_matrix_mtxb(path);
}

void save_matrix(const Matrix& m, const fs::path& path, MatrixFormat format) {
  if (format == MatrixFormat::Csv) {
    save_matrix_csv(m, path);
  } else {
    save_matrix_mtxb(m, path);
  }
}

// ---- manifest ---------------------------------------------------------------------

namespace {

constexpr const char* kBlockNames[] = {"source_features",   "source_labels",
                                       "target_features",   "target_labels",
                                       "source_attributes", "target_attributes"};

BlockRef* block_slot(DatasetManifest& m, const std::string& name) {
  if (name == "source_features") return &m.source_features;
  if (name == "source_labels") return &m.source_labels;
  if (name == "target_features") return &m.target_features;
  if (name == "target_labels") return &m.target_labels;
  if (name == "source_attributes") return &m.source_attributes;
  if (name == "target_attributes") return &m.target_attributes;
  return nullptr;
}

const BlockRef& block_slot(const DatasetManifest& m, const std::string& name) {
  return *block_slot(const_cast<DatasetManifest&>(m), name);
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end()) {
      throw FormatError(where + ": unknown key '" + key + "'");
    }
  }
}

std::vector<std::size_t> labels_from_matrix(const Matrix& m, const char* block) {
  if (m.cols() != 1 && !(m.rows() == 0)) {
    throw ValidationError(std::string(block) + ": expected a single column, found " +
                          std::to_string(m.cols()));
  }
  std::vector<std::size_t> labels(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
      throw ValidationError(std::string(block) + ": entry " + std::to_string(i) +
                            " is not a non-negative integer label");
    }
    labels[i] = static_cast<std::size_t>(v);
  }
  return labels;
}

}  // namespace

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  const std::string where = "manifest " + path.string();
  if (!doc.is_object()) throw FormatError(where + ": expected a JSON object");
  reject_unknown(doc, {"name", "split", "dims", "blocks", "source_classes", "target_classes"},
                 where);
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.name = doc.value("name", std::string{});
    m.split = doc.value("split", std::string{});
    const json& dims = doc.at("dims");
    reject_unknown(dims, {"d", "r", "Ks", "Kt"}, where + " dims");
    m.d = dims.at("d").get<std::size_t>();
    m.r = dims.at("r").get<std::size_t>();
    m.ks = dims.at("Ks").get<std::size_t>();
    m.kt = dims.at("Kt").get<std::size_t>();
    const json& blocks = doc.at("blocks");
    reject_unknown(blocks,
                   {"source_features", "source_labels", "target_features", "target_labels",
                    "source_attributes", "target_attributes"},
                   where + " blocks");
    for (const char* name : kBlockNames) {
      if (!blocks.contains(name)) throw FormatError(where + ": missing block '" + name + "'");
      const json& b = blocks.at(name);
      reject_unknown(b, {"path", "format"}, where + " block " + name);
      BlockRef* slot = block_slot(m, name);
      slot->path = b.at("path").get<std::string>();
      slot->format = parse_matrix_format(b.value("format", std::string{"mtxb"}));
    }
    if (doc.contains("source_classes")) {
      m.source_classes = doc.at("source_classes").get<std::vector<std::string>>();
    }
    if (doc.contains("target_classes")) {
      m.target_classes = doc.at("target_classes").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json doc;
  doc["name"] = m.name;
  doc["split"] = m.split;
  doc["dims"] = {{"d", m.d}, {"r", m.r}, {"Ks", m.ks}, {"Kt", m.kt}};
  json blocks = json::object();
  for (const char* name : kBlockNames) {
    const BlockRef& b = block_slot(m, name);
    blocks[name] = {{"path", b.path.generic_string()}, {"format", matrix_format_name(b.format)}};
  }
  doc["blocks"] = blocks;
  if (!m.source_classes.empty()) doc["source_classes"] = m.source_classes;
  if (!m.target_classes.empty()) doc["target_classes"] = m.target_classes;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

ZslDataset load_dataset(const DatasetManifest& m) {
  auto load = [&](const BlockRef& b) {
    const fs::path p = b.path.is_absolute() ? b.path : m.base_dir / b.path;
    return load_matrix(p, b.format);
  };
  ZslDataset ds;
  ds.name = m.name;
  ds.split = m.split;
  ds.source_features = load(m.source_features);
  ds.target_features = load(m.target_features);
  ds.source_attributes = load(m.source_attributes);
  ds.target_attributes = load(m.target_attributes);
  ds.source_labels = labels_from_matrix(load(m.source_labels), "source_labels");
  ds.target_labels = labels_from_matrix(load(m.target_labels), "target_labels");
  ds.source_classes = m.source_classes;
  ds.target_classes = m.target_classes;

  auto expect = [](const char* block, const char* what, std::size_t expected, std::size_t found) {
    if (expected != found) {
      throw ValidationError(std::string(block) + ": declared " + what + "=" +
                            std::to_string(expected) + " but found " + std::to_string(found));
    }
  };
  expect("source_features", "d", m.d, ds.source_features.cols());
  expect("target_features", "d", m.d, ds.target_features.cols());
  expect("source_attributes", "r", m.r, ds.source_attributes.cols());
  expect("target_attributes", "r", m.r, ds.target_attributes.cols());
  expect("source_attributes", "Ks", m.ks, ds.source_attributes.rows());
  expect("target_attributes", "Kt", m.kt, ds.target_attributes.rows());
  validate_dataset(ds);
  return ds;
}

DatasetManifest save_dataset(const ZslDataset& ds, const fs::path& dir, MatrixFormat format) {
  validate_dataset(ds);
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = ds.name;
  m.split = ds.split;
  m.d = ds.feature_dim();
  m.r = ds.attribute_dim();
  m.ks = ds.source_categories();
  m.kt = ds.target_categories();
  m.source_classes = ds.source_classes;
  m.target_classes = ds.target_classes;
  m.base_dir = dir;
  auto labels = [](const std::vector<std::size_t>& y) {
    Matrix out(y.size(), 1);
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<double>(y[i]);
    return out;
  };
  const std::string ext = format == MatrixFormat::Mtxb ? ".mtxb" : ".csv";
  auto put = [&](const char* name, const Matrix& block) {
    BlockRef* slot = block_slot(m, name);
    slot->path = std::string(name) + ext;
    slot->format = format;
    save_matrix(block, dir / slot->path, format);
  };
  put("source_features", ds.source_features);
  put("source_labels", labels(ds.source_labels));
  put("target_features", ds.target_features);
  put("target_labels", labels(ds.target_labels));
  put("source_attributes", ds.source_attributes);
  put("target_attributes", ds.target_attributes);
  write_manifest(m, dir / "manifest.json");
  return m;
}

// ---- synthetic generator ------------------------------------------------------------

namespace {

Matrix broadcast_shift(const std::vector<double>& v, std::size_t d, const char* what) {
  if (v.size() == 1) return Matrix(1, d, v[0]);
  if (v.size() != d) {
    throw ValidationError(std::string("synthetic spec: ") + what + " has " +
                          std::to_string(v.size()) + " entries, expected 1 or " + std::to_string(d));
  }
  return Matrix::row_vector(v);
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.source_classes == 0 || spec.target_classes == 0 || spec.feature_dim == 0 ||
      spec.attribute_dim == 0 || spec.samples_per_class == 0) {
    throw ValidationError(
        "synthetic spec: Ks, Kt, d, r and samples_per_class must all be at least 1");
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) {
    throw ValidationError("synthetic spec: noise must be a finite non-negative number");
  }
  const std::size_t k = spec.source_classes + spec.target_classes;
  const std::size_t r = spec.attribute_dim;
  const std::size_t d = spec.feature_dim;
  if (spec.attribute_style == AttributeStyle::Binary && r < 63 &&
      k > (std::size_t{1} << r)) {
    throw ValidationError("synthetic spec: " + std::to_string(k) +
                          " distinct binary attribute vectors cannot exist with r=" +
                          std::to_string(r));
  }
  Matrix scale = broadcast_shift(spec.shift_scale, d, "shift_scale");
  Matrix offset = broadcast_shift(spec.shift_offset, d, "shift_offset");

  Rng rng(spec.seed);
  Matrix attributes(k, r);
  std::set<std::vector<double>> used;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> a(r);
    do {
      for (double& v : a) {
        v = spec.attribute_style == AttributeStyle::Binary ? (rng.coin() ? 1.0 : 0.0)
                                                           : rng.uniform();
      }
    } while (used.contains(a));
    used.insert(a);
    std::copy(a.begin(), a.end(), attributes.row(c).begin());
  }

  Matrix projection(d, r);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(r));
  for (double& v : projection.values()) v = proj_std * rng.normal();
  const Matrix prototypes = matmul_nt(attributes, projection);  // k x d

  auto sample = [&](std::size_t first_class, std::size_t classes, bool shifted, Matrix& x,
                    std::vector<std::size_t>& y) {
    x = Matrix(classes * spec.samples_per_class, d);
    y.assign(x.rows(), 0);
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      auto proto = prototypes.row(first_class + c);
      for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
        auto out = x.row(row);
        for (std::size_t j = 0; j < d; ++j) {
          double v = proto[j];
          if (spec.noise > 0.0) v += spec.noise * rng.normal();
          if (shifted) v = scale[j] * v + offset[j];
          out[j] = v;
        }
        y[row] = c;
      }
    }
  };

  SyntheticData out;
  ZslDataset& ds = out.dataset;
  ds.name = "synthetic";
  ds.split = "synthetic";
  sample(0, spec.source_classes, false, ds.source_features, ds.source_labels);
  sample(spec.source_classes, spec.target_classes, true, ds.target_features, ds.target_labels);
  std::vector<std::size_t> src(spec.source_classes);
  std::vector<std::size_t> tgt(spec.target_classes);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = i;
  for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = spec.source_classes + i;
  ds.source_attributes = gather_rows(attributes, src);
  ds.target_attributes = gather_rows(attributes, tgt);
  for (std::size_t i = 0; i < src.size(); ++i) ds.source_classes.push_back("seen_" + std::to_string(i));
  for (std::size_t i = 0; i < tgt.size(); ++i) ds.target_classes.push_back("unseen_" + std::to_string(i));
  out.projection = std::move(projection);
  out.shift_scale = std::move(scale);
  out.shift_offset = std::move(offset);
  validate_dataset(ds);
  return out;
}

StandardizeResult standardize_features(const ZslDataset& dataset) {
  if (dataset.source_features.rows() == 0) {
    throw ValidationError("standardize_features: no source features");
  }
  const ColumnStats stats = row_stats(dataset.source_features);
  StandardizeResult out{dataset, {}};
  const std::size_t d = dataset.source_features.cols();
  std::vector<double> inv_std(d, 1.0);
  std::vector<bool> constant(d, false);
  for (std::size_t j = 0; j < d; ++j) {
    if (stats.variance[j] > 0.0) {
      inv_std[j] = 1.0 / std::sqrt(stats.variance[j]);
    } else {
      constant[j] = true;
      out.constant_columns.push_back(j);
    }
  }
  auto apply = [&](Matrix& x) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto row = x.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        if (!constant[j]) row[j] = (row[j] - stats.mean[j]) * inv_std[j];
      }
    }
  };
  apply(out.dataset.source_features);
  apply(out.dataset.target_features);
  return out;
}

void normalize_attribute_rows(ZslDataset& dataset) {
  for (Matrix* m : {&dataset.source_attributes, &dataset.target_attributes}) {
    for (std::size_t i = 0; i < m->rows(); ++i) {
      auto row = m->row(i);
      double norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& v : row) v /= norm;
      }
    }
  }
}

}  // namespace tsvr
