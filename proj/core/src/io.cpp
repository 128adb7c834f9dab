#include "vsm/io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vsm {

namespace {

using nlohmann::json;

std::string utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json manifest_to_json(const RunManifest& m) {
  return json{{"subcommand", m.subcommand}, {"config_path", m.config_path},
              {"out_dir", m.out_dir},       {"seed", m.seed},
              {"tool_version", m.tool_version}, {"started_at", m.started_at},
              {"finished_at", m.finished_at},   {"status", m.status}};
}

json metric_to_json(const MetricValue& v) {
  json j;
  j["value"] = v.value;
  j["se"] = v.se;
  j["diverged"] = v.diverged;
  return j;
}

}  // namespace

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& header) {
  out_.open(path);
  if (!out_) throw std::runtime_error("cannot open " + path.string());
  out_ << header << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  std::string line;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) line += ',';
    line += csv_num(values[i]);
  }
  raw_row(line);
}

void CsvWriter::raw_row(const std::string& line) { out_ << line << '\n'; }

RunManifest manifest_begin(const std::filesystem::path& out_dir,
                           const std::string& subcommand,
                           const std::string& config_path, std::uint64_t seed,
                           bool force) {
  const std::filesystem::path file = out_dir / "manifest.json";
  if (std::filesystem::exists(file) && !force)
    throw std::runtime_error("refusing to overwrite " + file.string() +
                             " (pass --force to replace the run)");
  std::filesystem::create_directories(out_dir);
  RunManifest man;
  man.subcommand = subcommand;
  man.config_path = config_path;
  man.out_dir = out_dir.string();
  man.seed = seed;
  man.started_at = utc_now();
  write_text_file(file, manifest_to_json(man).dump(2) + "\n");
  return man;
}

void manifest_end(RunManifest& man, const std::filesystem::path& out_dir,
                  const std::string& status) {
  man.finished_at = utc_now();
  man.status = status;
  write_text_file(out_dir / "manifest.json", manifest_to_json(man).dump(2) + "\n");
}

std::string run_log_to_json(const RunLog& log) {
  json j;
  j["config"] = json::parse(train_config_to_json(log.config));
  j["steps_done"] = log.steps_done;
  j["diverged"] = log.diverged;
  j["diverged_step"] = log.diverged_step;
  j["wall_seconds"] = log.wall_seconds;
  json records = json::array();
  for (const MetricsRecord& r : log.records) {
    json rec;
    rec["step"] = r.step;
    rec["nll"] = metric_to_json(r.nll);
    rec["fd"] = metric_to_json(r.fd);
    rec["mmd"] = metric_to_json(r.mmd);
    rec["post_fd"] = metric_to_json(r.post_fd);
    rec["recon_mse"] = metric_to_json(r.recon_mse);
    rec["neg_elbo"] = metric_to_json(r.neg_elbo);
    rec["sd_hist"] = r.sd_hist.mass;
    rec["diverged"] = r.diverged();
    records.push_back(std::move(rec));
  }
  j["records"] = std::move(records);
  j["final_model"] = json::parse(model_to_json(log.final_model));
  return j.dump(2);
}

std::string dataset_csv(const Dataset& ds) {
  std::string out;
  for (int c = 0; c < ds.dim; ++c) {
    if (c) out += ',';
    out += 'x';
    out += std::to_string(c + 1);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::span<const double> r = ds.row(i);
    for (int c = 0; c < ds.dim; ++c) {
      if (c) out += ',';
      out += csv_num(r[c]);
    }
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace vsm
