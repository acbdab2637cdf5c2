#include "maskbench/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "maskbench/featureio.hpp"
#include "maskbench/masking.hpp"
#include "maskbench/parallel.hpp"
#include "maskbench/pit.hpp"
#include "maskbench/random.hpp"
#include "maskbench/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskbench {

// ---------------------------------------------------------------------------
// Config

Config Config::parse(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::config, std::string("config parse: ") + e.what());
  }
  Config out;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      out.values_[name] = node.data();
      continue;
    }
    for (const auto& [key, leaf] : node) out.values_[name + "." + key] = leaf.data();
  }
  return out;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

namespace {

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (text.find_first_not_of(" \t", used) == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::config, key + ": expected a number, got '" + text + "'");
}

}  // namespace

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, get(key, "")) : fallback;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string text = get(key, "");
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] != '-') {
      const auto v = std::stoull(text, &used);
      if (used == text.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::config, key + ": expected a non-negative integer, got '" + text + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::config, key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> Config::get_list(const std::string& key,
                                     const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  std::stringstream in(get(key, ""));
  for (std::string item; std::getline(in, item, ',');) out.push_back(parse_double(key, item));
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) == 1,
          ErrorKind::io, "sha256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i)
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

const std::set<std::string> kSplits = {"train", "dev", "test"};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  const fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(base);
  return rel.empty() ? fs::absolute(p).string() : rel.generic_string();
}

}  // namespace

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  Manifest m;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.utt_id = j.at("utt_id").get<std::string>();
      r.mixture = resolve(base, j.at("mixture").get<std::string>());
      for (const auto& s : j.at("sources")) r.sources.push_back(resolve(base, s.get<std::string>()));
      if (j.contains("noise") && !j["noise"].is_null())
        r.noise = resolve(base, j["noise"].get<std::string>());
      if (j.contains("features") && !j["features"].is_null())
        r.features = resolve(base, j["features"].get<std::string>());
      r.duration = j.value("duration", 0.0);
      r.split = j.value("split", std::string("train"));
      if (j.contains("meta")) r.meta = j["meta"];
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::format, where + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

void Manifest::save(const fs::path& path) const {
  const fs::path base = fs::absolute(path).parent_path().lexically_normal();
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest " + path.string());
  for (const auto& r : records) {
    json j;
    j["utt_id"] = r.utt_id;
    j["mixture"] = relative_to(r.mixture, base);
    j["sources"] = json::array();
    for (const auto& s : r.sources) j["sources"].push_back(relative_to(s, base));
    if (r.noise) j["noise"] = relative_to(*r.noise, base);
    if (r.features) j["features"] = relative_to(*r.features, base);
    j["duration"] = r.duration;
    j["split"] = r.split;
    j["meta"] = r.meta;
    out << j.dump() << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    require(!r.utt_id.empty(), ErrorKind::data, "manifest record without utt_id");
    require(ids.insert(r.utt_id).second, ErrorKind::data, "duplicate utt_id " + r.utt_id);
    require(!r.sources.empty(), ErrorKind::data, r.utt_id + ": no sources");
    require(r.sources.size() == records.front().sources.size(), ErrorKind::data,
            r.utt_id + ": source count differs from the rest of the manifest");
    require(kSplits.count(r.split) > 0, ErrorKind::data,
            r.utt_id + ": unknown split '" + r.split + "'");
    auto exists = [&](const fs::path& p) {
      require(fs::exists(p), ErrorKind::io, r.utt_id + ": missing file " + p.string());
    };
    exists(r.mixture);
    for (const auto& s : r.sources) exists(s);
    if (r.noise) exists(*r.noise);
    if (r.features) exists(*r.features);
  }
}

std::size_t Manifest::sources() const {
  return records.empty() ? 0 : records.front().sources.size();
}

std::vector<const ManifestRecord*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

std::size_t default_workers() {
  if (const char* env = std::getenv("MASKBENCH_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

bool is_usage_error(const Error& e) {
  return e.kind() == ErrorKind::config || e.kind() == ErrorKind::unsupported;
}

// ---------------------------------------------------------------------------
// simulate

SimulateSpec SimulateSpec::from_config(const Config& c) {
  SimulateSpec s;
  s.style = c.get("simulate.style", s.style);
  s.sources = c.get_uint("simulate.sources", s.sources);
  s.noise = c.get_bool("simulate.noise", s.noise);
  if (c.has("simulate.source_kinds")) {
    std::istringstream in(c.get("simulate.source_kinds", ""));
    for (std::string item; std::getline(in, item, ',');) {
      boost::algorithm::trim(item);
      s.source_kinds.push_back(item);
    }
  }
  s.n_train = c.get_uint("simulate.n_train", s.n_train);
  s.n_dev = c.get_uint("simulate.n_dev", s.n_dev);
  s.n_test = c.get_uint("simulate.n_test", s.n_test);
  s.duration = c.get_double("simulate.duration", s.duration);
  s.duration_max = c.get_double("simulate.duration_max", s.duration);
  s.snrs = c.get_list("simulate.snrs", s.snrs);
  s.seed = c.get_uint("simulate.seed", s.seed);
  return s;
}

void SimulateSpec::validate() const {
  require(style == "lufs" || style == "snr", ErrorKind::config,
          "simulate.style must be lufs or snr, got '" + style + "'");
  require(style == "snr" || sources >= 1, ErrorKind::config, "simulate.sources must be >= 1");
  require(duration >= 0.5 && duration_max >= duration && duration_max <= 30.0,
          ErrorKind::config, "simulate durations must satisfy 0.5 <= duration <= duration_max <= 30");
  require(style == "lufs" || !snrs.empty(), ErrorKind::config, "simulate.snrs is empty");
  require(source_kinds.empty() || source_kinds.size() == sources, ErrorKind::config,
          "simulate.source_kinds needs one entry per source");
  for (const auto& k : source_kinds)
    require(k == "speechlike" || k == "tonal", ErrorKind::config,
            "simulate.source_kinds entries must be speechlike or tonal, got '" + k + "'");
}

namespace {

constexpr double kXcorrLimit = 0.2;
constexpr double kNoiseExtra = 0.5;  // noise is longer than speech so crops vary

SourceKind source_kind(const std::string& name) {
  if (name == "speechlike") return SourceKind::speechlike;
  if (name == "tonal") return SourceKind::tonal;
  throw Error(ErrorKind::data, "unknown source kind '" + name + "'");
}

double draw_duration(const SimulateSpec& spec, std::uint64_t seed) {
  if (spec.duration_max <= spec.duration) return spec.duration;
  Rng rng(derive_seed(seed, 7));
  return std::round(rng.uniform(spec.duration, spec.duration_max) * 100.0) / 100.0;
}

std::string split_of(std::size_t i, const SimulateSpec& s) {
  if (i < s.n_train) return "train";
  if (i < s.n_train + s.n_dev) return "dev";
  return "test";
}

bool dir_has_entries(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

}  // namespace

Manifest cmd_simulate(const SimulateSpec& spec, const fs::path& out_dir, const RunOptions& options) {
  spec.validate();
  const fs::path wav_dir = out_dir / "wav";
  const fs::path manifest_path = out_dir / "manifest.jsonl";
  if (!options.force)
    require(!dir_has_entries(out_dir), ErrorKind::config,
            "output directory " + out_dir.string() + " is not empty (use --force)");
  fs::remove_all(wav_dir);
  fs::create_directories(wav_dir);

  const std::size_t total = spec.n_train + spec.n_dev + spec.n_test;
  Manifest manifest;
  manifest.records.resize(total);
  if (total == 0) std::cerr << "warning: simulate: no utterances requested\n";

  parallel_for(total, options.workers, [&](std::size_t i) {
    const std::string split = split_of(i, spec);
    const std::size_t index = split == "train" ? i
                              : split == "dev" ? i - spec.n_train
                                               : i - spec.n_train - spec.n_dev;
    std::ostringstream id;
    id << split << '_' << std::setw(4) << std::setfill('0') << index;

    const std::uint64_t seed = derive_seed(spec.seed, i);
    const double duration = draw_duration(spec, seed);
    ManifestRecord r;
    r.utt_id = id.str();
    r.split = split;
    json meta;
    meta["style"] = spec.style;
    meta["seed"] = seed;
    meta["duration"] = duration;

    std::vector<AudioBuffer> components;
    AudioBuffer mixture;
    bool has_noise = false;
    if (spec.style == "snr") {
      const std::uint64_t speech_seed = derive_seed(seed, 0);
      const std::uint64_t noise_seed = derive_seed(seed, 1000);
      const double snr = spec.snrs[Rng(derive_seed(seed, 3000)).below(spec.snrs.size())];
      const auto speech = synth_source(SourceKind::speechlike, duration, speech_seed);
      const auto noise = synth_source(SourceKind::noise, std::min(30.0, duration + kNoiseExtra),
                                      noise_seed);
      auto mix = mix_snr(speech, noise, snr, derive_seed(seed, 2000));
      meta["source_kinds"] = {"speechlike"};
      meta["source_seeds"] = {speech_seed};
      meta["noise_seed"] = noise_seed;
      meta["snr_db"] = snr;
      meta["gains"] = {1.0, mix.noise_gain};
      meta["peak_gain"] = mix.peak_gain;
      meta["noise_offset"] = mix.noise_offset;
      components = {std::move(mix.speech), std::move(mix.noise)};
      mixture = std::move(mix.mixture);
      has_noise = true;
    } else {
      const auto kinds = spec.source_kinds.empty()
                             ? std::vector<std::string>(spec.sources, "speechlike")
                             : spec.source_kinds;
      std::vector<std::uint64_t> seeds;
      std::vector<AudioBuffer> sources;
      for (std::size_t s = 0; s < spec.sources; ++s) {
        // Redraw a source whose waveform correlates with an earlier one.
        for (std::uint64_t attempt = 0;; ++attempt) {
          const std::uint64_t src_seed = derive_seed(seed, s + 16 * attempt);
          auto buf = synth_source(source_kind(kinds[s]), duration, src_seed);
          bool ok = true;
          for (const auto& prev : sources) ok = ok && max_normalized_xcorr(prev, buf) < kXcorrLimit;
          if (ok || attempt == 15) {
            seeds.push_back(src_seed);
            sources.push_back(std::move(buf));
            break;
          }
        }
      }
      std::optional<AudioBuffer> noise;
      if (spec.noise) {
        const std::uint64_t noise_seed = derive_seed(seed, 1000);
        noise = synth_source(SourceKind::noise, std::min(30.0, duration + kNoiseExtra), noise_seed);
        meta["noise_seed"] = noise_seed;
        has_noise = true;
      }
      auto mix = mix_librimix_style(sources, noise, kSpeechLoudness, kNoiseLoudness,
                                    derive_seed(seed, 2000));
      meta["source_kinds"] = kinds;
      meta["source_seeds"] = seeds;
      meta["targets_lufs"] = mix.targets;
      meta["gains"] = mix.gains;
      meta["peak_gain"] = mix.peak_gain;
      meta["noise_offset"] = mix.noise_offset;
      components = std::move(mix.components);
      mixture = std::move(mix.mixture);
    }

    r.mixture = fs::absolute(wav_dir / (r.utt_id + "_mix.wav"));
    write_wav(r.mixture, mixture, WavCodec::float32);
    const std::size_t speakers = components.size() - (has_noise ? 1 : 0);
    for (std::size_t s = 0; s < speakers; ++s) {
      r.sources.push_back(fs::absolute(wav_dir / (r.utt_id + "_s" + std::to_string(s) + ".wav")));
      write_wav(r.sources.back(), components[s], WavCodec::float32);
    }
    if (has_noise) {
      r.noise = fs::absolute(wav_dir / (r.utt_id + "_noise.wav"));
      write_wav(*r.noise, components.back(), WavCodec::float32);
    }
    r.duration = static_cast<double>(mixture.size()) / kHarnessSampleRate;
    r.meta = std::move(meta);
    manifest.records[i] = std::move(r);
  });

  manifest.save(manifest_path);
  return manifest;
}

std::vector<AudioBuffer> regenerate_utterance(const ManifestRecord& record) {
  const json& m = record.meta;
  try {
    const double duration = m.at("duration").get<double>();
    const auto seeds = m.at("source_seeds").get<std::vector<std::uint64_t>>();
    const auto gains = m.at("gains").get<std::vector<double>>();
    const double peak_gain = m.at("peak_gain").get<double>();
    const auto offset = m.at("noise_offset").get<std::size_t>();

    const auto kinds = m.at("source_kinds").get<std::vector<std::string>>();
    require(kinds.size() == seeds.size(), ErrorKind::data,
            record.utt_id + ": source_kinds and source_seeds differ in length");
    std::vector<AudioBuffer> raw;
    for (std::size_t s = 0; s < seeds.size(); ++s)
      raw.push_back(synth_source(source_kind(kinds[s]), duration, seeds[s]));
    std::size_t length = raw.front().size();
    for (const auto& r : raw) length = std::min(length, r.size());
    for (auto& r : raw) r = crop_or_loop(r, length, 0);
    if (m.contains("noise_seed")) {
      const auto noise = synth_source(SourceKind::noise, std::min(30.0, duration + kNoiseExtra),
                                      m.at("noise_seed").get<std::uint64_t>());
      raw.push_back(crop_or_loop(noise, length, offset));
    }
    auto components = apply_gains(raw, gains, peak_gain);
    std::vector<AudioBuffer> out{sum_components(components)};
    for (auto& c : components) out.push_back(std::move(c));
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::data, record.utt_id + ": incomplete simulation metadata: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// extract

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "stft_mag") return FeatureKind::stft_mag;
  if (name == "fbank") return FeatureKind::fbank;
  if (name == "toy_layers") return FeatureKind::toy_layers;
  throw Error(ErrorKind::config, "unknown feature kind '" + name + "'");
}

StftConfig stft_for_hop(std::size_t hop) {
  StftConfig c;
  c.hop = hop;
  c.frame_size = c.fft_size = std::max<std::size_t>(512, 2 * hop);
  c.validate();
  return c;
}

namespace {

FeatureStack magnitude_stack(const AudioBuffer& x, const StftConfig& c, bool compress) {
  const auto spec = stft(x, c);
  FeatureStack out(1, spec.num_frames, spec.bins(), static_cast<std::uint32_t>(c.hop));
  for (std::size_t i = 0; i < spec.frames.size(); ++i) {
    const double m = std::abs(spec.frames[i]);
    out.values[i] = static_cast<float>(compress ? std::log1p(m) : m);
  }
  return out;
}

// Synthetic multi-layer stack: band-pooled log magnitudes, smoothed over time by an
// amount that grows with distance from the middle layer, so one layer is clearly best.
FeatureStack toy_layer_stack(const AudioBuffer& x, std::size_t hop, std::size_t layers) {
  constexpr std::size_t kBands = 64;
  const auto base = magnitude_stack(x, stft_for_hop(hop), true);
  const std::size_t T = base.frames, F = base.dims;
  std::vector<float> pooled(T * kBands, 0.0f);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < kBands; ++b) {
      const std::size_t lo = b * F / kBands, hi = std::max(lo + 1, (b + 1) * F / kBands);
      double acc = 0.0;
      for (std::size_t f = lo; f < hi; ++f) acc += base.at(0, t, f);
      pooled[t * kBands + b] = static_cast<float>(acc / static_cast<double>(hi - lo));
    }

  FeatureStack out(layers, T, kBands, static_cast<std::uint32_t>(hop));
  const std::size_t middle = layers / 2;
  for (std::size_t k = 0; k < layers; ++k) {
    out.layer_names.push_back("layer_" + std::to_string(k));
    const long radius = static_cast<long>(k > middle ? k - middle : middle - k) * 2;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t b = 0; b < kBands; ++b) {
        double acc = 0.0;
        for (long o = -radius; o <= radius; ++o) {
          const long src = std::clamp<long>(static_cast<long>(t) + o, 0, static_cast<long>(T) - 1);
          acc += pooled[static_cast<std::size_t>(src) * kBands + b];
        }
        out.at(k, t, b) = static_cast<float>(acc / static_cast<double>(2 * radius + 1));
      }
  }
  return out;
}

}  // namespace

FeatureStack extract_features(const AudioBuffer& mixture, const ExtractSpec& spec) {
  require(spec.hop > 0, ErrorKind::config, "extract: hop must be positive");
  switch (spec.kind) {
    case FeatureKind::stft_mag: {
      auto out = magnitude_stack(mixture, stft_for_hop(spec.hop), false);
      out.layer_names = {"stft_mag"};
      return out;
    }
    case FeatureKind::fbank: {
      require(spec.hop % 160 == 0, ErrorKind::config, "fbank hop must be a multiple of 160");
      auto full = fbank(mixture);
      const std::size_t step = spec.hop / 160;
      FeatureStack out(1, (full.frames + step - 1) / step, full.dims,
                       static_cast<std::uint32_t>(spec.hop));
      for (std::size_t t = 0; t < out.frames; ++t)
        std::copy_n(full.frame(0, t * step), full.dims, &out.at(0, t, 0));
      out.layer_names = {"fbank"};
      return out;
    }
    case FeatureKind::toy_layers:
      require(spec.toy_layers >= 1, ErrorKind::config, "toy_layers needs K >= 1");
      return toy_layer_stack(mixture, spec.hop, spec.toy_layers);
  }
  throw Error(ErrorKind::config, "unknown feature kind");
}

Manifest cmd_extract(const Manifest& manifest, const ExtractSpec& spec, const fs::path& out_dir,
                     const RunOptions& options) {
  const fs::path feature_dir = out_dir / "features";
  if (!options.force)
    require(!dir_has_entries(feature_dir), ErrorKind::config,
            feature_dir.string() + " is not empty (use --force)");
  fs::remove_all(feature_dir);
  fs::create_directories(feature_dir);
  Manifest out = manifest;
  parallel_for(out.records.size(), options.workers, [&](std::size_t i) {
    auto& r = out.records[i];
    const auto stack = extract_features(read_wav(r.mixture), spec);
    r.features = fs::absolute(feature_dir / (r.utt_id + ".sslf"));
    write_features(*r.features, stack);
  });
  out.save(out_dir / "manifest.jsonl");
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

struct Utterance {
  std::string id;
  AudioBuffer mixture;
  std::vector<AudioBuffer> sources;
  FeatureStack features;  // aligned to the STFT grid; empty for oracle runs
};

FeatureStack aligned_features(const ManifestRecord& r, const StftConfig& stft,
                              std::size_t samples) {
  require(r.features.has_value(), ErrorKind::data,
          "utterance " + r.utt_id + " has no feature file (run extract first)");
  FeatureStack stack;
  try {
    stack = read_features(*r.features);
  } catch (const Error& e) {
    throw Error(e.kind(), "utterance " + r.utt_id + ": " + e.what());
  }
  require(stack.stride_samples % stft.hop == 0, ErrorKind::config,
          "feature stride " + std::to_string(stack.stride_samples) +
              " is not a multiple of the STFT hop " + std::to_string(stft.hop));
  stack = adapt_stride(stack, static_cast<std::uint32_t>(stft.hop));
  try {
    return align_to_frames(stack, frame_count(samples, stft.hop));
  } catch (const Error& e) {
    throw Error(e.kind(), "utterance " + r.utt_id + ": " + e.what());
  }
}

std::vector<Utterance> load_split(const Manifest& manifest, const std::string& split,
                                  const std::optional<StftConfig>& feature_grid,
                                  const RunOptions& options) {
  const auto records = manifest.split(split);
  std::vector<Utterance> out(records.size());
  parallel_for(records.size(), options.workers, [&](std::size_t i) {
    const auto& r = *records[i];
    Utterance u{r.utt_id, read_wav(r.mixture), {}, {}};
    for (const auto& s : r.sources) {
      u.sources.push_back(read_wav(s));
      require(u.sources.back().size() == u.mixture.size(), ErrorKind::data,
              r.utt_id + ": source length differs from the mixture");
    }
    if (feature_grid) u.features = aligned_features(r, *feature_grid, u.mixture.size());
    out[i] = std::move(u);
  });
  return out;
}

UtteranceResult score(const Utterance& u, const std::vector<AudioBuffer>& estimates) {
  const PitEval eval = pit_eval(u.sources, estimates);
  UtteranceResult r;
  r.utt_id = u.id;
  for (std::size_t s = 0; s < u.sources.size(); ++s) {
    r.si_snr.push_back(eval.scores[s]);
    r.si_snri.push_back(eval.scores[s] - si_snr(u.sources[s], u.mixture));
  }
  if (u.sources.size() > 1) r.permutation = eval.permutation;
  return r;
}

EvalReport evaluate_loaded(const std::vector<Utterance>& utts, const EstimatorParams& params,
                           const RunOptions& options) {
  EvalReport report;
  report.per_utterance.resize(utts.size());
  parallel_for(utts.size(), options.workers, [&](std::size_t i) {
    const auto masks = predict(params, utts[i].features);
    report.per_utterance[i] = score(
        utts[i],
        reconstruct_all(utts[i].mixture, masks, params.config.stft, params.config.mask_ceiling));
  });
  report.finalize();
  return report;
}

}  // namespace

EvalReport cmd_oracle_eval(const Manifest& manifest, const OracleSpec& spec,
                           const RunOptions& options) {
  spec.stft.validate();
  const auto utts = load_split(manifest, spec.split, std::nullopt, options);
  EvalReport report;
  report.per_utterance.resize(utts.size());
  parallel_for(utts.size(), options.workers, [&](std::size_t i) {
    const auto& u = utts[i];
    const auto mix_spec = stft(u.mixture, spec.stft);
    MaskSet masks;
    if (spec.identity_mask) {
      masks = MaskSet(u.sources.size(), mix_spec.num_frames, mix_spec.bins(), 1.0);
    } else {
      std::vector<Spectrogram> refs;
      for (const auto& s : u.sources) refs.push_back(stft(s, spec.stft));
      masks = inpsm(mix_spec, refs, spec.mask_ceiling);
    }
    report.per_utterance[i] =
        score(u, reconstruct_all(u.mixture, masks, spec.stft, spec.mask_ceiling));
  });
  report.finalize();
  return report;
}

EvalReport evaluate_params(const Manifest& manifest, const EstimatorParams& params,
                           const std::string& split, const RunOptions& options) {
  return evaluate_loaded(load_split(manifest, split, params.config.stft, options), params,
                         options);
}

EvalReport cmd_evaluate(const Manifest& manifest, const fs::path& checkpoint,
                        const std::string& split, const RunOptions& options) {
  const auto params = load_checkpoint(checkpoint);
  require(params.config.sources == manifest.sources(), ErrorKind::config,
          "checkpoint predicts " + std::to_string(params.config.sources) +
              " sources, manifest has " + std::to_string(manifest.sources()));
  return evaluate_params(manifest, params, split, options);
}

double headline_metric(const EvalReport& report, std::size_t sources) {
  return sources >= 2 ? report.mean_si_snri : report.mean_si_snr;
}

json report_json(const EvalReport& report, const std::string& command,
                 const std::string& config_hash, std::size_t sources) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["sources"] = sources;
  j["count"] = report.count;
  j["mean_si_snr"] = report.mean_si_snr;
  j["mean_si_snri"] = report.mean_si_snri;
  j["utterances"] = json::array();
  for (const auto& u : report.per_utterance) {
    json row;
    row["utt_id"] = u.utt_id;
    row["si_snr"] = u.si_snr;
    row["si_snri"] = u.si_snri;
    if (sources > 1) row["permutation"] = u.permutation;
    j["utterances"].push_back(std::move(row));
  }
  return j;
}

std::string report_csv(const EvalReport& report, std::size_t sources) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "utt_id,source,si_snr,si_snri" << (sources > 1 ? ",permutation" : "") << '\n';
  for (const auto& u : report.per_utterance)
    for (std::size_t s = 0; s < u.si_snr.size(); ++s) {
      out << u.utt_id << ',' << s << ',' << u.si_snr[s] << ',' << u.si_snri[s];
      if (sources > 1) out << ',' << u.permutation[s];
      out << '\n';
    }
  return out.str();
}

void write_report(const fs::path& stem, const EvalReport& report, const std::string& command,
                  const std::string& config_hash, std::size_t sources) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const auto write = [](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + p.string());
    out << text;
  };
  write(fs::path(stem.string() + ".json"),
        report_json(report, command, config_hash, sources).dump(2) + "\n");
  write(fs::path(stem.string() + ".csv"), report_csv(report, sources));
}

// ---------------------------------------------------------------------------
// train

TrainSpec TrainSpec::from_config(const Config& c) {
  TrainSpec s;
  auto& e = s.estimator;
  e.context = c.get_uint("estimator.context", e.context);
  if (c.has("estimator.hidden_dims")) {
    e.hidden_dims.clear();
    for (double h : c.get_list("estimator.hidden_dims", {})) {
      require(h >= 1 && h == std::floor(h), ErrorKind::config, "hidden_dims must be positive integers");
      e.hidden_dims.push_back(static_cast<std::size_t>(h));
    }
  }
  e.mask_ceiling = c.get_double("estimator.mask_ceiling", e.mask_ceiling);
  e.chunk_frames = c.get_uint("estimator.chunk_frames", e.chunk_frames);
  const std::string transform = c.get("estimator.input_transform", "none");
  require(transform == "none" || transform == "log1p", ErrorKind::config,
          "estimator.input_transform must be none or log1p");
  e.input_transform = transform == "log1p" ? InputTransform::log1p : InputTransform::none;
  if (c.has("estimator.fixed_layer")) e.fixed_layer = c.get_uint("estimator.fixed_layer", 0);
  e.seed = c.get_uint("estimator.seed", e.seed);

  e.stft = stft_for_hop(c.get_uint("stft.hop", 160));
  e.stft.frame_size = c.get_uint("stft.frame_size", e.stft.frame_size);
  e.stft.fft_size = c.get_uint("stft.fft_size", e.stft.fft_size);
  const std::string window = c.get("stft.window", "sqrt_hann");
  require(window == "sqrt_hann" || window == "hann" || window == "rect", ErrorKind::config,
          "stft.window must be sqrt_hann, hann or rect");
  e.stft.window = window == "hann" ? WindowKind::hann
                  : window == "rect" ? WindowKind::rect
                                     : WindowKind::sqrt_hann;
  e.stft.validate();
  e.bins = e.stft.bins();

  auto& o = s.options;
  o.steps = c.get_uint("train.steps", o.steps);
  o.learning_rate = c.get_double("train.lr", o.learning_rate);
  o.batch_size = c.get_uint("train.batch_size", o.batch_size);
  o.dev_every = c.get_uint("train.dev_every", o.dev_every);
  return s;
}

std::string TrainSpec::canonical() const {
  const auto& e = estimator;
  std::ostringstream out;
  out << std::setprecision(17);
  out << "context=" << e.context << "\nhidden_dims=";
  for (std::size_t h : e.hidden_dims) out << h << ',';
  out << "\nlayers=" << e.layers << "\ninput_dim=" << e.input_dim << "\nsources=" << e.sources
      << "\nbins=" << e.bins << "\nseed=" << e.seed
      << "\nfixed_layer=" << (e.fixed_layer ? static_cast<long>(*e.fixed_layer) : -1L)
      << "\ninput_transform=" << static_cast<int>(e.input_transform)
      << "\nchunk_frames=" << e.chunk_frames << "\nmask_ceiling=" << e.mask_ceiling
      << "\nstft=" << e.stft.frame_size << '/' << e.stft.hop << '/' << e.stft.fft_size << '/'
      << static_cast<int>(e.stft.window) << "\nsteps=" << options.steps
      << "\nlr=" << options.learning_rate << "\nbatch_size=" << options.batch_size
      << "\ndev_every=" << options.dev_every << "\nbetas=" << options.beta1 << ','
      << options.beta2 << "\neps=" << options.epsilon << '\n';
  return out.str();
}

EstimatorConfig complete_config(const Manifest& manifest, EstimatorConfig config) {
  const auto train = manifest.split("train");
  require(!train.empty(), ErrorKind::data, "manifest has no train split");
  const auto& first = *train.front();
  require(first.features.has_value(), ErrorKind::data,
          "utterance " + first.utt_id + " has no feature file (run extract first)");
  const auto stack = read_features(*first.features);
  config.layers = stack.layers;
  config.input_dim = stack.dims;
  config.sources = manifest.sources();
  config.bins = config.stft.bins();
  config.validate();
  return config;
}

std::vector<TrainingExample> load_examples(const Manifest& manifest, const std::string& split,
                                           const EstimatorConfig& config,
                                           const RunOptions& options) {
  auto utts = load_split(manifest, split, config.stft, options);
  std::vector<TrainingExample> out(utts.size());
  parallel_for(utts.size(), options.workers, [&](std::size_t i) {
    auto& u = utts[i];
    std::vector<Spectrogram> refs;
    for (const auto& s : u.sources) refs.push_back(stft(s, config.stft));
    out[i] = {u.id, std::move(u.features),
              inpsm(stft(u.mixture, config.stft), refs, config.mask_ceiling)};
  });
  return out;
}

namespace {

void check_features_consistent(const std::vector<TrainingExample>& data,
                               const EstimatorConfig& config) {
  for (const auto& ex : data)
    require(ex.features.layers == config.layers && ex.features.dims == config.input_dim,
            ErrorKind::data,
            "utterance " + ex.id + ": feature shape K=" + std::to_string(ex.features.layers) +
                " D=" + std::to_string(ex.features.dims) + " differs from the train split");
}

}  // namespace

TrainRun cmd_train(const Manifest& manifest, const TrainSpec& spec, const fs::path& out_dir,
                   const RunOptions& options,
                   const std::optional<fs::path>& resume) {
  const EstimatorConfig config = complete_config(manifest, spec.estimator);
  EstimatorParams initial;
  if (resume) {
    initial = load_checkpoint(*resume);
    const auto& c = initial.config;
    require(c.layers == config.layers && c.input_dim == config.input_dim &&
                c.sources == config.sources && c.stft == config.stft,
            ErrorKind::config, "checkpoint " + resume->string() + " does not match this data");
  } else {
    initial = init_params(config);
  }
  const auto& cfg = initial.config;

  const auto train_data = load_examples(manifest, "train", cfg, options);
  check_features_consistent(train_data, cfg);
  const auto dev = load_split(manifest, "dev", cfg.stft, options);
  const auto test = load_split(manifest, "test", cfg.stft, options);

  TrainOptions opt = spec.options;
  opt.workers = options.workers;
  if (!dev.empty()) {
    opt.dev_metric = [&](const EstimatorParams& p) {
      return headline_metric(evaluate_loaded(dev, p, options), cfg.sources);
    };
  }

  TrainSpec effective = spec;
  effective.estimator = cfg;
  TrainRun run;
  run.config_hash = sha256_hex(effective.canonical());
  run.result = train(train_data, initial, opt);

  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "best.mbck", run.result.best);
  save_checkpoint(out_dir / "last.mbck", run.result.last);
  write_training_log(out_dir / "train_log.csv", run.result.log);
  if (!test.empty()) {
    run.test_report = evaluate_loaded(test, run.result.best, options);
    write_report(out_dir / "test_report", run.test_report, "train", run.config_hash, cfg.sources);
  }
  return run;
}

// ---------------------------------------------------------------------------
// ablations

namespace {

double dev_or_nan(const TrainResult& r) {
  return r.best_dev_metric ? *r.best_dev_metric : std::nan("");
}

}  // namespace

LayerAnalysis cmd_layer_analysis(const Manifest& manifest, const TrainSpec& spec,
                                 const fs::path& out_dir, const RunOptions& options) {
  const EstimatorConfig base = complete_config(manifest, spec.estimator);
  const auto first = read_features(*manifest.split("train").front()->features);
  LayerAnalysis out;
  const std::size_t S = base.sources;
  for (std::size_t k = 0; k < base.layers; ++k) {
    TrainSpec one = spec;
    one.estimator = base;
    one.estimator.fixed_layer = k;
    const std::string name =
        first.layer_names.empty() ? "layer_" + std::to_string(k) : first.layer_names[k];
    const auto run = cmd_train(manifest, one, out_dir / ("layer_" + std::to_string(k)), options);
    out.rows.push_back({name, dev_or_nan(run.result), headline_metric(run.test_report, S)});
  }
  if (base.layers > 1) {
    TrainSpec weighted = spec;
    weighted.estimator = base;
    weighted.estimator.fixed_layer.reset();
    const auto run = cmd_train(manifest, weighted, out_dir / "weighted", options);
    out.rows.push_back(
        {"weighted", dev_or_nan(run.result), headline_metric(run.test_report, S)});
    out.weights = run.result.best.fusion.weights();
  } else {
    out.weights = {1.0};
  }

  std::ofstream csv(out_dir / "layer_analysis.csv", std::ios::trunc);
  require(static_cast<bool>(csv), ErrorKind::io, "cannot write layer_analysis.csv");
  csv << std::setprecision(10) << "layer,dev_metric,test_metric\n";
  for (const auto& r : out.rows) csv << r.name << ',' << r.dev_metric << ',' << r.test_metric << '\n';
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "layer-analysis";
  j["config_hash"] = sha256_hex(spec.canonical());
  j["weights"] = out.weights;
  j["rows"] = json::array();
  for (const auto& r : out.rows)
    j["rows"].push_back({{"layer", r.name}, {"dev_metric", r.dev_metric}, {"test_metric", r.test_metric}});
  if (base.layers > 1) {
    // Logged only: the weighted row is expected, not required, to beat every single layer.
    double best_single = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < base.layers; ++k)
      best_single = std::max(best_single, out.rows[k].test_metric);
    const double w = out.rows.back().test_metric;
    j["weighted_vs_best_single"] = {
        {"weighted", w}, {"best_single", best_single}, {"weighted_ge_best_single", w >= best_single}};
  }
  std::ofstream(out_dir / "layer_analysis.json", std::ios::trunc) << j.dump(2) << '\n';
  return out;
}

std::vector<StrideRow> cmd_stride_ablation(const Manifest& manifest, const TrainSpec& spec,
                                           const std::vector<std::size_t>& strides,
                                           const fs::path& out_dir, const RunOptions& options) {
  require(!strides.empty(), ErrorKind::config, "stride-ablation needs at least one stride");
  const auto train = manifest.split("train");
  require(!train.empty() && train.front()->features, ErrorKind::data,
          "stride-ablation needs extracted features for the train split");
  const auto feature_stride = read_features(*train.front()->features).stride_samples;
  for (std::size_t s : strides)
    require(s > 0 && s <= feature_stride && feature_stride % s == 0, ErrorKind::config,
            "stride " + std::to_string(s) + " does not divide the feature stride " +
                std::to_string(feature_stride));

  std::vector<StrideRow> rows;
  for (std::size_t s : strides) {
    TrainSpec one = spec;
    one.estimator.stft = stft_for_hop(s);
    one.estimator.bins = one.estimator.stft.bins();
    const auto run = cmd_train(manifest, one, out_dir / ("stride_" + std::to_string(s)), options);
    rows.push_back({s, one.estimator.bins, dev_or_nan(run.result),
                    headline_metric(run.test_report, manifest.sources())});
  }

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "stride_ablation.csv", std::ios::trunc);
  require(static_cast<bool>(csv), ErrorKind::io, "cannot write stride_ablation.csv");
  csv << std::setprecision(10) << "stride,bins,dev_metric,test_metric\n";
  for (const auto& r : rows)
    csv << r.stride << ',' << r.bins << ',' << r.dev_metric << ',' << r.test_metric << '\n';
  return rows;
}

}  // namespace maskbench
