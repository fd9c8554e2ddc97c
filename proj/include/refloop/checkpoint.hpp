#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "refloop/agent.hpp"

namespace refloop {

/// Content hash of the parameter bytes, 16 hex digits. Identical
/// parameters always share an id.
std::string checkpoint_id(const ModelParams& params);

/// Text format:
///   refloop-checkpoint 1
///   vocab <V> dim <d> features <D> schema <hash>
///   <one hexadecimal float per line>
/// Round-trips bit-exactly.
void write_checkpoint(std::ostream& out, const ModelParams& params, std::uint64_t schema_hash);
ModelParams read_checkpoint(std::istream& in, std::uint64_t expected_schema_hash);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t schema_hash);
ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_schema_hash);

}  // namespace refloop
