#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsvr/matrix.hpp"

namespace tsvr {

// Source (seen) and target (unseen) blocks. Category indices are 0-based and
// local to each side, so the two index spaces never overlap.
struct ZslDataset {
  std::string name;
  std::string split;
  Matrix source_features;                 // N_s x d
  std::vector<std::size_t> source_labels;  // into [0, K_s)
  Matrix target_features;                 // N_t x d
  std::vector<std::size_t> target_labels;  // into [0, K_t), evaluation only
  Matrix source_attributes;               // K_s x r
  Matrix target_attributes;               // K_t x r
  std::vector<std::string> source_classes;
  std::vector<std::string> target_classes;

  std::size_t feature_dim() const { return source_features.cols(); }
  std::size_t attribute_dim() const { return source_attributes.cols(); }
  std::size_t source_categories() const { return source_attributes.rows(); }
  std::size_t target_categories() const { return target_attributes.rows(); }
};

// What training is allowed to see: everything except the target labels.
class TrainingView {
 public:
  explicit TrainingView(const ZslDataset& dataset) : dataset_(&dataset) {}

  const Matrix& source_features() const { return dataset_->source_features; }
  const std::vector<std::size_t>& source_labels() const { return dataset_->source_labels; }
  const Matrix& target_features() const { return dataset_->target_features; }
  const Matrix& source_attributes() const { return dataset_->source_attributes; }
  const Matrix& target_attributes() const { return dataset_->target_attributes; }

 private:
  const ZslDataset* dataset_;
};

// Throws ValidationError naming the offending block.
void validate_dataset(const ZslDataset& dataset);
std::string dataset_summary(const ZslDataset& dataset);

// ---- matrix files ---------------------------------------------------------

enum class MatrixFormat { Csv, Mtxb };
MatrixFormat parse_matrix_format(const std::string& tag);
std::string matrix_format_name(MatrixFormat format);

// CSV: one row per line, no header, values written with 17 significant digits.
Matrix load_matrix_csv(const std::filesystem::path& path);
void save_matrix_csv(const Matrix& m, const std::filesystem::path& path);

// MTXB: "MTXB", version byte 1, u32 rows, u32 cols (little-endian), then
// rows*cols little-endian IEEE-754 doubles in row-major order.
Matrix load_matrix_mtxb(const std::filesystem::path& path);
void save_matrix_mtxb(const Matrix& m, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_mtxb(const Matrix& m);
Matrix decode_mtxb(const std::vector<std::uint8_t>& bytes, const std::string& origin);

Matrix load_matrix(const std::filesystem::path& path, MatrixFormat format);
void save_matrix(const Matrix& m, const std::filesystem::path& path, MatrixFormat format);

// ---- manifest ---------------------------------------------------------------

struct BlockRef {
  std::filesystem::path path;
  MatrixFormat format = MatrixFormat::Mtxb;
};

struct DatasetManifest {
  std::string name;
  std::string split;
  std::size_t d = 0;
  std::size_t r = 0;
  std::size_t ks = 0;
  std::size_t kt = 0;
  BlockRef source_features, source_labels, target_features, target_labels, source_attributes,
      target_attributes;
  std::vector<std::string> source_classes;  // optional
  std::vector<std::string> target_classes;  // optional
  std::filesystem::path base_dir;           // relative block paths resolve here
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
ZslDataset load_dataset(const DatasetManifest& manifest);

// Writes the six blocks (labels as N x 1 matrices) and manifest.json into
// `dir`, with block paths relative to it. Returns the manifest written.
DatasetManifest save_dataset(const ZslDataset& dataset, const std::filesystem::path& dir,
                             MatrixFormat format = MatrixFormat::Mtxb);

// ---- synthetic generator --------------------------------------------------------

enum class AttributeStyle { Binary, Continuous };

struct SyntheticSpec {
  std::size_t source_classes = 40;
  std::size_t target_classes = 10;
  std::size_t feature_dim = 64;
  std::size_t attribute_dim = 16;
  std::size_t samples_per_class = 50;
  AttributeStyle attribute_style = AttributeStyle::Binary;
  double noise = 0.3;
  // Per-dimension target shift x <- scale * x + offset. A single entry is
  // broadcast over all feature dimensions.
  std::vector<double> shift_scale{1.5};
  std::vector<double> shift_offset{1.0};
  std::uint64_t seed = 0;
};

struct SyntheticData {
  ZslDataset dataset;
  Matrix projection;  // hidden d x r map: prototype = projection * a
  Matrix shift_scale;   // 1 x d
  Matrix shift_offset;  // 1 x d
};

// Attributes: binary fair coins (resampled on collision) or uniform [0,1).
// Projection entries ~ N(0, 1/r). Samples = prototype + noise * N(0, 1);
// target samples then get the affine shift.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Per-dimension z-scoring fitted on the source features only. Zero-variance
// source columns pass through unscaled; their indices are returned.
struct StandardizeResult {
  ZslDataset dataset;
  std::vector<std::size_t> constant_columns;
};
StandardizeResult standardize_features(const ZslDataset& dataset);

// Scales each attribute row to unit L2 norm (zero rows stay zero).
void normalize_attribute_rows(ZslDataset& dataset);

}  // namespace tsvr
