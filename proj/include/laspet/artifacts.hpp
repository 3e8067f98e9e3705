#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laspet/pipeline.hpp"
#include "laspet/registration.hpp"

namespace laspet {

inline constexpr const char* kToolVersion = "1.0.0";

// Provenance record written next to every output directory. Artifacts embed
// deterministic_hash(), which covers everything except wall time, so reports
// stay byte identical across reruns of the same config and seed.
struct RunManifest {
  int schema_version = 1;
  std::string command;
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
  double wall_time_s = 0.0;

  std::string deterministic_hash() const;
  std::string to_json() const;
};

void write_manifest(const RunManifest& m, const std::string& path);

// FNV-1a 64 of a canonical JSON rendering, as a hex string.
std::string content_hash(const std::string& canonical_json);

// Declarative experiment config. Every key is optional and defaults to the
// in-code value; unknown keys are rejected so typos fail loudly.
std::string pipeline_config_json(const PipelineConfig& cfg);
PipelineConfig parse_pipeline_config(const std::string& text);
PipelineConfig read_pipeline_config(const std::string& path);

std::string phantom_config_json(const PhantomConfig& cfg);
PhantomConfig parse_phantom_config(const std::string& text);

// Rigid transform as a flat JSON array of 12 numbers: rotation rows, then
// translation.
std::string transform_json(const RigidTransform& t);
RigidTransform parse_transform_json(const std::string& text);

// Study directory: mvol volumes plus study.json carrying the patient id,
// demographics, a config echo, and per-lesion tables (centroid, volume,
// SUV statistics, LDS, equivocal flag). Voxel lists are rebuilt from the
// label volumes on read; the annotations come from the table.
void write_study(const PatientStudy& st, const std::string& dir);
PatientStudy read_study(const std::string& dir);

}  // namespace laspet
