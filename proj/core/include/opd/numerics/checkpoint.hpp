#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "opd/numerics/autodiff.hpp"

namespace opd {

using CheckpointMeta = std::map<std::string, std::string>;

struct Checkpoint {
  CheckpointMeta meta;
  ParameterStore params;
};

// File layout: a text manifest
//
//   opd-checkpoint 1
//   meta <key> <value>            (zero or more)
//   param <name> <rank> <dims...> (one per parameter, in store order)
//   end
//
// followed by every parameter's values as little-endian IEEE-754 doubles in
// manifest order. Meta keys and values must be free of whitespace.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const CheckpointMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into `target`; names and shapes must match exactly.
void assign_parameters(ParameterStore& target, const ParameterStore& source);

}  // namespace opd
