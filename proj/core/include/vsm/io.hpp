#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "vsm/datasets.hpp"
#include "vsm/trainer.hpp"

namespace vsm {

inline constexpr const char* kToolVersion = "0.1.0";

// Shared numeric formatting (%.17g): values survive a text round trip
// exactly, which is what makes "byte-identical CSV" a meaningful promise.
std::string csv_num(double v);

// Line-oriented CSV file with a fixed header. Numeric rows go through
// csv_num; mixed-type rows are preformatted by the caller.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header);
  void row(std::span<const double> values);
  void raw_row(const std::string& line);

 private:
  std::ofstream out_;
};

// Provenance sidecar for every tool run: written with status "running"
// before the subcommand produces anything, finalized with the outcome after,
// so any output file in the directory is traceable to its config and seed.
struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string started_at;   // UTC, ISO 8601
  std::string finished_at;  // empty until finalized
  std::string status = "running";
};

// Creates out_dir (parents included) and writes the initial manifest.
// Throws std::runtime_error if the directory already holds a manifest and
// force is false: outputs never overwrite silently.
RunManifest manifest_begin(const std::filesystem::path& out_dir,
                           const std::string& subcommand,
                           const std::string& config_path, std::uint64_t seed,
                           bool force);
void manifest_end(RunManifest& man, const std::filesystem::path& out_dir,
                  const std::string& status);

// Full run record: config echo, per-record metrics (values, errors and the
// sd histogram), divergence bookkeeping, and the final model inline.
std::string run_log_to_json(const RunLog& log);

// Sample dump for plotting, one column per coordinate (x1,x2,...).
std::string dataset_csv(const Dataset& ds);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vsm
