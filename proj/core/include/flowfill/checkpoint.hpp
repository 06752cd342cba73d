#pragma once

// On-disk checkpoint chain.
//
// A chain directory holds `chain.manifest`, a plain-text key=value file, and
// two parameter files per snapshot:
//
//   snapshot_<k>_flow.bin    flow parameters
//   snapshot_<k>_latent.bin  latent-network parameters
//
// Parameter files are flat little-endian float64 arrays in ParamSet order.
// Flow order: for each coupling layer k, the scale network then the shift
// network, each as layer 0..3 with weight (out x in, row-major) followed by
// bias. Latent order: layer 0..4, weight then bias. The manifest records the
// SHA-256 of every parameter file; loading verifies them.

#include <filesystem>
#include <map>
#include <string>

#include "flowfill/trainer.hpp"

namespace flowfill {

inline constexpr int kChainFormatVersion = 1;
inline constexpr const char* kChainManifestName = "chain.manifest";

void save_chain(const std::filesystem::path& dir, const CheckpointChain& chain);
CheckpointChain load_chain(const std::filesystem::path& dir);

// Ordered key=value text used by chain and run manifests.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

void write_params(const std::filesystem::path& path, const diff::ParamSet& params);
void read_params(const std::filesystem::path& path, diff::ParamSet& params);

}  // namespace flowfill
