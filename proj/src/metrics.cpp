#include "dtvae/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dtvae/data.hpp"
#include "dtvae/errors.hpp"

namespace dtvae {

MetricsRow MetricsRow::from(int epoch, std::string split, const ElboBreakdown& e,
                            double wall_seconds) {
  return {epoch, std::move(split), e.elbo, e.recon, e.kl, wall_seconds};
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.3f", row.epoch, row.split.c_str(),
                row.elbo, row.recon, row.kl, row.wall_seconds);
  return buf;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError("metrics.csv: unexpected header", 0);
  }
  std::vector<MetricsRow> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw FormatError("metrics.csv: expected 6 fields", offset);
    try {
      rows.push_back({std::stoi(fields[0]), fields[1], std::stod(fields[2]), std::stod(fields[3]),
                      std::stod(fields[4]), std::stod(fields[5])});
    } catch (const std::exception&) {
      throw FormatError("metrics.csv: unparsable field", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

void write_pgm(const std::filesystem::path& path, const Vector& means) {
  if (means.size() != kImagePixels) throw ContractError("write_pgm: expected 784 pixel means");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << kImageSide << ' ' << kImageSide << "\n255\n";
  for (Index i = 0; i < means.size(); ++i) {
    const double v = std::clamp(means(i), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace dtvae
