#pragma once

#include <cstdint>
#include <string>

#include "hetsurv/survival.hpp"

namespace hetsurv {

inline constexpr const char* kCheckpointFormat = "hetsurv-ckpt-v1";

// Versioned JSON container with the config echo, rng seed, and every named
// parameter tensor (name -> shape + flat values). Loading validates names and
// shapes against the pipeline built from the current config and fails with a
// CheckpointError naming both shapes on any mismatch.
std::string checkpoint_to_json(const Pipeline& pipeline, std::uint64_t seed);
void save_checkpoint(const Pipeline& pipeline, std::uint64_t seed, const std::string& path);

struct LoadedCheckpoint {
    Config config;
    std::uint64_t seed = 0;
};

LoadedCheckpoint load_checkpoint_into(Pipeline& pipeline, const std::string& path);
// Reads only the config echo / seed (to build a compatible pipeline first).
LoadedCheckpoint peek_checkpoint(const std::string& path);

// Shared atomic file write (temp + rename); all command outputs go through it.
void atomic_write_file(const std::string& path, const std::string& payload);

}  // namespace hetsurv
