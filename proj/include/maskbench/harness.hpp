#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskbench/error.hpp"
#include "maskbench/estimator.hpp"
#include "maskbench/metrics.hpp"
#include "maskbench/signal.hpp"

namespace maskbench {

inline constexpr int kReportSchemaVersion = 1;

/// `key = value` file with [section] headers. Keys are addressed as "section.key".
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

  /// Sorted "key=value" lines; the input to config hashes.
  std::string canonical() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Hex SHA-256 of `text`.
std::string sha256_hex(const std::string& text);

struct ManifestRecord {
  std::string utt_id;
  std::filesystem::path mixture;
  std::vector<std::filesystem::path> sources;
  std::optional<std::filesystem::path> noise;
  std::optional<std::filesystem::path> features;
  double duration = 0.0;
  std::string split = "train";
  /// Seeds, gains and levels used to build the mixture.
  nlohmann::json meta = nlohmann::json::object();
};

/// JSONL manifest; paths are stored relative to the manifest file and held absolute in memory.
struct Manifest {
  std::vector<ManifestRecord> records;

  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Unique ids, constant S, known splits, referenced files present.
  void validate() const;
  std::size_t sources() const;
  std::vector<const ManifestRecord*> split(const std::string& name) const;
};

struct RunOptions {
  std::size_t workers = 1;
  bool force = false;
};

/// MASKBENCH_WORKERS if set and valid, else 1.
std::size_t default_workers();

/// Errors that count as usage/config problems (exit code 2) rather than runtime failures.
bool is_usage_error(const Error& e);

// ---------------------------------------------------------------------------
// simulate

struct SimulateSpec {
  std::string style = "lufs";  // lufs | snr
  std::size_t sources = 2;     // lufs style only; snr style is always S = 1
  bool noise = false;          // lufs style: add a noise component
  /// lufs style: "speechlike" or "tonal" per source; empty means all speechlike.
  std::vector<std::string> source_kinds;
  std::size_t n_train = 50;
  std::size_t n_dev = 10;
  std::size_t n_test = 10;
  double duration = 1.5;
  double duration_max = 1.5;
  std::vector<double> snrs = {15.0, 10.0, 5.0, 0.0};
  std::uint64_t seed = 0;

  /// Reads the [simulate] section.
  static SimulateSpec from_config(const Config& config);
  void validate() const;
};

/// Writes WAVs (float32) under out_dir/wav and out_dir/manifest.jsonl.
/// Refuses a non-empty out_dir unless options.force.
Manifest cmd_simulate(const SimulateSpec& spec, const std::filesystem::path& out_dir,
                      const RunOptions& options);

/// Rebuilds one utterance's mixture and components from its recorded metadata alone.
std::vector<AudioBuffer> regenerate_utterance(const ManifestRecord& record);

// ---------------------------------------------------------------------------
// extract

enum class FeatureKind { stft_mag, fbank, toy_layers };
FeatureKind parse_feature_kind(const std::string& name);

struct ExtractSpec {
  FeatureKind kind = FeatureKind::stft_mag;
  std::size_t hop = 160;
  std::size_t toy_layers = 4;  // K for toy_layers
};

/// Mixture features for one buffer. stft_mag uses frame = fft = max(512, 2 * hop).
FeatureStack extract_features(const AudioBuffer& mixture, const ExtractSpec& spec);

/// One feature file per utterance under out_dir/features; returns (and writes)
/// out_dir/manifest.jsonl with feature paths filled in.
Manifest cmd_extract(const Manifest& manifest, const ExtractSpec& spec,
                     const std::filesystem::path& out_dir, const RunOptions& options);

// ---------------------------------------------------------------------------
// evaluation

/// STFT grid used for a given hop: frame = fft = max(512, 2 * hop), sqrt-Hann.
StftConfig stft_for_hop(std::size_t hop);

struct OracleSpec {
  StftConfig stft;
  double mask_ceiling = kDefaultMaskCeiling;
  bool identity_mask = false;
  std::string split = "test";
};

EvalReport cmd_oracle_eval(const Manifest& manifest, const OracleSpec& spec,
                           const RunOptions& options);

/// Trained-estimator evaluation on one split.
EvalReport evaluate_params(const Manifest& manifest, const EstimatorParams& params,
                           const std::string& split, const RunOptions& options);

EvalReport cmd_evaluate(const Manifest& manifest, const std::filesystem::path& checkpoint,
                        const std::string& split, const RunOptions& options);

/// Headline metric: SI-SNRi for S >= 2, SI-SNR for S = 1.
double headline_metric(const EvalReport& report, std::size_t sources);

nlohmann::json report_json(const EvalReport& report, const std::string& command,
                           const std::string& config_hash, std::size_t sources);
/// One row per utterance per source; no permutation column when S = 1.
std::string report_csv(const EvalReport& report, std::size_t sources);
/// Writes <stem>.json and <stem>.csv.
void write_report(const std::filesystem::path& stem, const EvalReport& report,
                  const std::string& command, const std::string& config_hash,
                  std::size_t sources);

// ---------------------------------------------------------------------------
// train

struct TrainSpec {
  EstimatorConfig estimator;  // layers/input_dim/sources/bins are filled from the data
  TrainOptions options;

  /// Reads the [estimator], [stft] and [train] sections.
  static TrainSpec from_config(const Config& config);
  std::string canonical() const;
};

/// Features + INPSM targets for one split on the estimator's STFT grid.
std::vector<TrainingExample> load_examples(const Manifest& manifest, const std::string& split,
                                           const EstimatorConfig& config,
                                           const RunOptions& options);

/// Fills data-dependent config fields (K, D, S, F) from the manifest's feature files.
EstimatorConfig complete_config(const Manifest& manifest, EstimatorConfig config);

struct TrainRun {
  TrainResult result;
  EvalReport test_report;  // best checkpoint on the test split (empty if no test split)
  std::string config_hash;
};

/// Trains on the train split, selects on dev, writes best.mbck, last.mbck, train_log.csv
/// under out_dir. When `resume` is set training continues from that checkpoint.
TrainRun cmd_train(const Manifest& manifest, const TrainSpec& spec,
                   const std::filesystem::path& out_dir, const RunOptions& options,
                   const std::optional<std::filesystem::path>& resume = std::nullopt);

// ---------------------------------------------------------------------------
// ablations

struct LayerRow {
  std::string name;  // layer name, or "weighted"
  double dev_metric = 0.0;
  double test_metric = 0.0;
};

struct LayerAnalysis {
  std::vector<LayerRow> rows;
  std::vector<double> weights;  // learned fusion weights of the weighted row
};

LayerAnalysis cmd_layer_analysis(const Manifest& manifest, const TrainSpec& spec,
                                 const std::filesystem::path& out_dir,
                                 const RunOptions& options);

struct StrideRow {
  std::size_t stride = 0;
  std::size_t bins = 0;
  double dev_metric = 0.0;
  double test_metric = 0.0;
};

/// For each stride: upsample features to it, move the STFT grid to hop = stride, train, evaluate.
std::vector<StrideRow> cmd_stride_ablation(const Manifest& manifest, const TrainSpec& spec,
                                           const std::vector<std::size_t>& strides,
                                           const std::filesystem::path& out_dir,
                                           const RunOptions& options);

}  // namespace maskbench
