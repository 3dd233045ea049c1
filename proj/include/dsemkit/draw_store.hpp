#pragma once

#include "dsemkit/sampler.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace dsemkit {

// File names inside a draws directory.
std::string draws_file(int chain);       // draws_chain<c>.csv
std::string states_file(int chain);      // states_chain<c>.csv
std::string transition_file(int chain);  // transition_chain<c>.csv
inline constexpr const char* kManifestFile = "manifest.json";

std::string format_draws_csv(const DrawStore& store, int chain);
std::string format_states_csv(const DrawStore& store, int chain);
std::string format_transition_csv(const DrawStore& store, int chain);

// Manifest: run identity, timing, acceptance rates and an inventory of the
// files written with their FNV-1a fingerprints.
nlohmann::json manifest_json(const DrawStore& store,
                             const std::vector<std::pair<std::string, std::string>>& files);

// Writes every chain file atomically, then the manifest. Returns the file
// names written (manifest last).
std::vector<std::string> write_draws(const DrawStore& store, const std::string& dir);

// Reads a draws directory back. A missing or malformed manifest, missing
// chain files, row-count or fingerprint mismatches all throw ContractError
// prefixed "integrity:" (or "manifest:").
DrawStore read_draws(const std::string& dir);

// Spec the draws were produced with, rebuilt from the stored config.
ModelConfig stored_config(const DrawStore& store);

}  // namespace dsemkit
