#pragma once
// Checkpoint container.
//
//   "IONCKPT\0"             8-byte magic
//   u32 version             currently 1
//   u32 n, n bytes          config JSON (model config plus caller metadata)
//   u32 record count
//   per record:
//     u32 n, n bytes        name
//     u8 kind               0 parameter f32, 1 buffer f32, 2 counter u64
//     u32 rank, rank x u64  shape (counters: rank 0)
//     payload               little-endian f32 values or one u64
//
// Loading requires the model to carry exactly the stored names and shapes.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ion/nn/model.hpp"

namespace ion::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// `meta` is merged into the stored header under the key "meta".
void save_checkpoint(const std::filesystem::path& path, Model<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

// Returns the stored header JSON ({"model": ..., "meta": ...}).
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

// Overwrites the model's parameters, buffers and counters; returns the header.
nlohmann::json load_checkpoint(const std::filesystem::path& path, Model<float>& model);

}  // namespace ion::nn
