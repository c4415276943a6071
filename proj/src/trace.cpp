#include "perffl/trace.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace perffl {

std::size_t RunTrace::total_samples() const {
  std::size_t s = 0;
  for (const auto& r : rows) s += r.n_total;
  return s;
}

void RunTrace::write_csv(std::ostream& out) const {
  const std::size_t d = dim();
  out << "t,loss";
  for (std::size_t j = 0; j < d; ++j) out << ",theta_" << j;
  out << ",enrolled,removed_total,n_total\n";
  for (const auto& r : rows) {
    out << r.t << ',' << fmt::format("{:.17g}", r.loss);
    for (double v : r.theta) out << ',' << fmt::format("{:.17g}", v);
    out << ',' << r.enrolled << ',' << r.removed_total << ',' << r.n_total << '\n';
  }
}

void RunTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw RunError("cannot write trace file " + path.string());
  write_csv(out);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

RunTrace RunTrace::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw RunError("trace csv: empty file");
  const auto header = split_csv(line);
  if (header.size() < 6 || header[0] != "t" || header[1] != "loss")
    throw RunError("trace csv: unexpected header");
  const std::size_t d = header.size() - 5;
  RunTrace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw RunError("trace csv: wrong column count on line " + std::to_string(lineno));
    TraceRow row;
    row.t = std::stoul(cells[0]);
    row.loss = std::stod(cells[1]);
    row.theta.resize(d);
    for (std::size_t j = 0; j < d; ++j) row.theta[j] = std::stod(cells[2 + j]);
    row.enrolled = std::stoul(cells[2 + d]);
    row.removed_total = std::stoul(cells[3 + d]);
    row.n_total = std::stoul(cells[4 + d]);
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

RunTrace RunTrace::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read trace file " + path.string());
  return read_csv(in);
}

bool same_trajectory(const RunTrace& a, const RunTrace& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& x = a.rows[i];
    const auto& y = b.rows[i];
    if (x.t != y.t || x.loss != y.loss || x.theta != y.theta || x.enrolled != y.enrolled ||
        x.removed_total != y.removed_total || x.n_total != y.n_total || x.client_n != y.client_n)
      return false;
  }
  return true;
}

}  // namespace perffl
