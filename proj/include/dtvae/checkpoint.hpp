#pragma once

// Checkpoint files.
//
// Layout:
//   line 1   "DTVAE1"
//   line 2   one-line JSON header: config snapshot, epoch, Adam step, block
//            list (name, rows, cols) and the byte order / layout tags
//   payload  little-endian IEEE-754 doubles, three sections in order:
//            parameters, Adam first moments, Adam second moments. Each
//            section walks the layers enc1, enc2, mu_head, log_var_head,
//            u_head, v_head, dec1, dec2, dec_out and writes W (column-major)
//            then b for each.

#include <filesystem>
#include <string>

#include "dtvae/vae.hpp"

namespace dtvae {

inline constexpr const char* kCheckpointVersion = "DTVAE1";

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

/// Writes to a sibling temporary file and renames it into place, so an
/// interrupted write never clobbers the previous checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws FormatError on a version mismatch, a malformed header or a
/// payload whose size does not match the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dtvae
