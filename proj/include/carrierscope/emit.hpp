#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace carrierscope {

// Fixed-point rendering for report CSVs; non-finite values print as
// "inf"/"-inf"/"nan", negative zero normalizes to zero.
std::string format_fixed(double value, int decimals);

// Stages every file of a report bundle under <out>/.staging and publishes all
// of them only on commit, so a failed command never leaves partial reports.
class AtomicEmitter {
 public:
  explicit AtomicEmitter(std::filesystem::path out_dir);
  ~AtomicEmitter();

  AtomicEmitter(const AtomicEmitter&) = delete;
  AtomicEmitter& operator=(const AtomicEmitter&) = delete;

  // Relative paths may contain subdirectories (e.g. "figures/fig1.csv").
  void write_text(const std::string& relative_path, const std::string& text);
  void write_json(const std::string& relative_path,
                  const nlohmann::json& value);
  void commit();

  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  std::filesystem::path out_dir_;
  std::filesystem::path staging_;
  std::vector<std::string> staged_;
  bool committed_ = false;
};

// Minimal CSV assembly; cells are trusted not to contain commas or newlines
// (all emitted values are numbers, enum names, or ids).
class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header);
  void add_row(std::vector<std::string> cells);
  std::string str() const;

 private:
  std::size_t width_;
  std::string body_;
};

}  // namespace carrierscope
