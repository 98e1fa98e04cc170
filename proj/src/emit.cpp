#include "carrierscope/emit.hpp"

#include "carrierscope/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <system_error>

namespace carrierscope {

namespace fs = std::filesystem;

std::string format_fixed(double value, int decimals) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) value = 0.0;  // collapse -0.0
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
  return buffer;
}

AtomicEmitter::AtomicEmitter(fs::path out_dir) : out_dir_(std::move(out_dir)) {
  std::error_code ec;
  fs::create_directories(out_dir_, ec);
  if (ec || !fs::is_directory(out_dir_)) {
    throw IoError("emit: cannot create output directory " + out_dir_.string());
  }
  staging_ = out_dir_ / ".staging";
  fs::remove_all(staging_, ec);
  if (!fs::create_directories(staging_, ec) || ec) {
    throw IoError("emit: cannot create staging directory " +
                  staging_.string());
  }
}

AtomicEmitter::~AtomicEmitter() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void AtomicEmitter::write_text(const std::string& relative_path,
                               const std::string& text) {
  if (committed_) throw IoError("emit: bundle already committed");
  const fs::path target = staging_ / relative_path;
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  std::ofstream out(target, std::ios::binary);
  if (!out) throw IoError("emit: cannot open " + target.string());
  out << text;
  out.flush();
  if (!out) throw IoError("emit: short write to " + target.string());
  staged_.push_back(relative_path);
}

void AtomicEmitter::write_json(const std::string& relative_path,
                               const nlohmann::json& value) {
  write_text(relative_path, value.dump(2) + "\n");
}

void AtomicEmitter::commit() {
  if (committed_) return;
  std::error_code ec;
  for (const std::string& rel : staged_) {
    const fs::path target = out_dir_ / rel;
    fs::create_directories(target.parent_path(), ec);
    fs::rename(staging_ / rel, target, ec);
    if (ec) {
      throw IoError("emit: cannot publish " + target.string() + ": " +
                    ec.message());
    }
  }
  fs::remove_all(staging_, ec);
  committed_ = true;
}

CsvBuilder::CsvBuilder(std::vector<std::string> header)
    : width_(header.size()) {
  if (header.empty()) throw ValidationError("csv: empty header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i > 0) body_.push_back(',');
    body_ += header[i];
  }
  body_.push_back('\n');
}

void CsvBuilder::add_row(std::vector<std::string> cells) {
  if (cells.size() != width_) {
    throw ValidationError("csv: row width " + std::to_string(cells.size()) +
                          " does not match header width " +
                          std::to_string(width_));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) body_.push_back(',');
    body_ += cells[i];
  }
  body_.push_back('\n');
}

std::string CsvBuilder::str() const { return body_; }

}  // namespace carrierscope
