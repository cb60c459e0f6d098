#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cnapwp/engine.hpp"
#include "cnapwp/stream.hpp"

namespace cnapwp {

/// How to build a drift stream from concept pools.
struct GenConfig {
  DriftSchedule schedule;
  /// Concept name -> "builtin:<id>" or a path to an event-log CSV.
  std::map<std::string, std::string> concepts;
  std::size_t traces_per_concept = 200;
  std::size_t concurrency = 6;
  std::uint64_t seed = 1;
};

/// Grid for the sweep command.
struct SweepGrid {
  std::vector<std::size_t> window_size{250, 500, 1000};
  std::vector<std::size_t> buffer_size{50, 100, 150};
  std::vector<double> threshold{0.2, 0.4, 0.5, 0.6, 0.8};
};

/// Contents of one INI file. Every section is optional.
struct ConfigFile {
  EngineConfig engine;
  std::string strategy = "cnapwp";
  std::vector<std::uint64_t> seeds{1};
  GenConfig gen;
  SweepGrid sweep;
};

/// Parses `[engine]`, `[model]`, `[run]`, `[gen]`, `[concepts]` and
/// `[sweep]`. Throws ConfigError on unknown keys or malformed values.
/// Relative concept paths are resolved against `base_dir`.
ConfigFile parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ConfigFile load_config(const std::filesystem::path& path);

/// INI text that parses back to the same configuration.
std::string dump_config(const ConfigFile& config);

/// Builds the concept pools named in `gen`. Built-in pools are simulated
/// with a seed derived from (`seed`, concept position).
std::vector<ConceptPool> resolve_concepts(const GenConfig& gen, std::uint64_t seed);

}  // namespace cnapwp
