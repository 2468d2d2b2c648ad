#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sectune/losses.hpp"
#include "sectune/tinylm.hpp"
#include "sectune/trainer.hpp"

// Experiment drivers behind the sectune-lab executable. One JSON config drives
// every subcommand; outputs are named by a hash of the subcommand, the
// effective config and the bytes of every input file read.
namespace sectune::cli {

// Bad flags, missing or malformed config fields, unknown component ids.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class RunConfig {
 public:
  // Loads `path` and applies `overrides` ("section.key=value"; the value is
  // parsed as JSON when it parses, else taken as a string). Relative paths in
  // the config resolve against the config file's directory.
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  static RunConfig from_json(nlohmann::json j, const std::filesystem::path& base_dir);

  void set(const std::string& dotted_key, const std::string& value);

  const nlohmann::json& doc() const { return j_; }
  std::uint64_t seed() const;
  std::filesystem::path out_dir() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  bool has(const std::string& section, const std::string& key) const;
  std::filesystem::path path(const std::string& section, const std::string& key) const;  // throws UsageError
  std::optional<std::filesystem::path> optional_path(const std::string& section, const std::string& key) const;

  template <typename T>
  T get(const std::string& section, const std::string& key, const T& fallback) const {
    if (!has(section, key)) return fallback;
    try {
      return j_.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config field " + section + "." + key + ": " + e.what());
    }
  }

  ModelConfig model() const;
  TrainConfig train() const;           // section "train"
  TrainConfig pretrain() const;        // "train" with "pretrain" fields layered on top
  SvenConfig sven() const;

 private:
  nlohmann::json j_;
  std::filesystem::path base_dir_;
};

struct Artifacts {
  std::map<std::string, std::filesystem::path> files;
  nlohmann::json summary;
};

// 16 hex digits of FNV-1a over the command, the config and each input's bytes.
// "out" and strings naming existing files are left out of the config part, so
// the name depends on what the files contain and not on where they live.
std::string content_hash(const std::string& command, const RunConfig& cfg, const std::vector<std::filesystem::path>& inputs);

// Writes every synthetic input named in section "data": commit corpus, planted
// triples, pretraining and instruction datasets, scenarios and probes.
Artifacts cmd_synth(const RunConfig& cfg, std::ostream& log);

// collect_dataset + rebalance_clean on pipeline.corpus; writes the dataset,
// the skip log and a metadata record with the funnel counts.
Artifacts cmd_mine(const RunConfig& cfg, std::ostream& log);

// train.mode: standard_only (train.std_dataset), safecoder (std + sec
// datasets), sven (sec dataset from train.base_checkpoint).
Artifacts cmd_train(const RunConfig& cfg, std::ostream& log);

// Every scenario under every eval.variants entry plus the utility probe.
Artifacts cmd_eval(const RunConfig& cfg, std::ostream& log);

// SVEN from sweep.base_checkpoint for each kl weight 2^n / 10, n in sweep.n.
Artifacts cmd_sweep_sven(const RunConfig& cfg, std::ostream& log);

// Pretrain, then none / standard_only / safecoder from the same checkpoint,
// evaluated on the scenarios and probes.
Artifacts cmd_study(const RunConfig& cfg, std::ostream& log);

// Renders eval, study and sweep reports (report.inputs) as markdown tables.
Artifacts cmd_report(const RunConfig& cfg, std::ostream& log);

// Drops the "metadata" member so reruns can be compared byte for byte.
nlohmann::json strip_metadata(nlohmann::json j);

// Least-squares slope of ys against xs; empty when xs has no spread.
std::optional<double> fit_slope(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace sectune::cli
