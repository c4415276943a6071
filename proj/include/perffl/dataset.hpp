#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "perffl/linalg.hpp"

namespace perffl {

/// Standardized feature matrix with binary labels.
struct Dataset {
  DenseMatrix features;  // rows x num_features
  std::vector<int> labels;
  std::vector<std::string> feature_names;

  std::size_t size() const { return labels.size(); }
  std::size_t num_features() const { return features.cols(); }
};

/// Reads a CSV with a header row, numeric feature columns and a final 0/1
/// label column. Features are standardized to zero mean and unit variance
/// once, at load. Malformed rows raise ConfigError naming the data row and line.
Dataset ingest_csv(std::istream& in);
Dataset ingest_csv(const std::filesystem::path& path);

/// Even split by row index: shard sizes differ by at most one.
std::vector<Dataset> shard(const Dataset& data, std::size_t num_shards);

/// Writes a deterministic two-class Gaussian CSV in the same schema. Used
/// when no real dataset is supplied.
void write_synthetic_csv(const std::filesystem::path& path, std::size_t rows, std::size_t num_features,
                         std::uint64_t seed);

}  // namespace perffl
