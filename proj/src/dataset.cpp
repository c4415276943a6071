#include "perffl/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>

#include <fmt/format.h>

#include "perffl/rng.hpp"

namespace perffl {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.push_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset ingest_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (split(line).size() == 1 && split(line).front().empty()) continue;
    for (auto cell : split(line)) header.emplace_back(cell);
    break;
  }
  if (header.size() < 2) throw ConfigError("csv: header needs at least one feature column and a label column");
  const std::size_t d = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cells = split(line);
    if (cells.size() == 1 && cells.front().empty()) continue;
    const std::size_t row_no = labels.size() + 1;
    if (cells.size() != header.size())
      throw ConfigError(fmt::format("csv row {} (line {}): expected {} columns, found {}", row_no, line_no, header.size(), cells.size()));
    for (std::size_t c = 0; c < d; ++c) {
      const auto v = parse_double(cells[c]);
      if (!v)
        throw ConfigError(fmt::format("csv row {} (line {}): column '{}' is not a finite number: '{}'", row_no, line_no, header[c],
                                      cells[c]));
      values.push_back(*v);
    }
    const auto y = parse_double(cells[d]);
    if (!y || (*y != 0.0 && *y != 1.0))
      throw ConfigError(fmt::format("csv row {} (line {}): label '{}' is not 0 or 1", row_no, line_no, cells[d]));
    labels.push_back(static_cast<int>(*y));
  }
  if (labels.empty()) throw ConfigError("csv: no data rows");

  Dataset data;
  data.feature_names.assign(header.begin(), header.end() - 1);
  data.labels = std::move(labels);
  data.features = DenseMatrix(data.labels.size(), d, std::move(values));

  const std::size_t n = data.size();
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += data.features(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (data.features(r, c) - mean) * (data.features(r, c) - mean);
    var /= static_cast<double>(n);
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < n; ++r) data.features(r, c) = (data.features(r, c) - mean) / sd;
  }
  return data;
}

Dataset ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open csv file " + path.string());
  return ingest_csv(in);
}

std::vector<Dataset> shard(const Dataset& data, std::size_t num_shards) {
  if (num_shards == 0) throw ConfigError("shard: need at least one shard");
  if (num_shards > data.size())
    throw ConfigError(fmt::format("shard: {} shards for {} rows", num_shards, data.size()));
  std::vector<Dataset> out(num_shards);
  const std::size_t base = data.size() / num_shards;
  const std::size_t extra = data.size() % num_shards;
  std::size_t row = 0;
  for (std::size_t s = 0; s < num_shards; ++s) {
    const std::size_t m = base + (s < extra ? 1 : 0);
    Dataset& part = out[s];
    part.feature_names = data.feature_names;
    part.features = DenseMatrix(m, data.num_features());
    part.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(row),
                       data.labels.begin() + static_cast<std::ptrdiff_t>(row + m));
    for (std::size_t r = 0; r < m; ++r) {
      const auto src = data.features.row(row + r);
      std::copy(src.begin(), src.end(), part.features.row(r).begin());
    }
    row += m;
  }
  return out;
}

void write_synthetic_csv(const std::filesystem::path& path, std::size_t rows, std::size_t num_features,
                         std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write csv file " + path.string());
  for (std::size_t c = 0; c < num_features; ++c) out << "x" << c << ",";
  out << "label\n";
  Rng rng(seed, 0, "synthetic-csv");
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    for (std::size_t c = 0; c < num_features; ++c) {
      // class-dependent location on the first half of the features
      const double shift = c < (num_features + 1) / 2 ? (y == 1 ? -0.75 : 0.75) : 0.0;
      out << fmt::format("{:.10g},", rng.normal(shift, 1.0));
    }
    out << y << "\n";
  }
}

}  // namespace perffl
