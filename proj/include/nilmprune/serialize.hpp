#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nilmprune/model.hpp"

namespace nilmprune {

// Model file layout:
//   "NPRM" | version u8 (0x01) | header length u32 LE | UTF-8 JSON header |
//   parameter blocks (weight then bias per parameterized layer, LE IEEE-754) |
//   theta_0 blocks in the same order (when header.has_initial) |
//   mask bitsets, one per masked layer, LSB-first, each padded to a byte.

enum class StorageDtype { F64, F32 };

inline constexpr std::uint8_t kModelFormatVersion = 0x01;

std::vector<std::uint8_t> serialize_model(const ModelGraph& model,
                                          StorageDtype dtype = StorageDtype::F64);
ModelGraph deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const ModelGraph& model, const std::filesystem::path& path,
                StorageDtype dtype = StorageDtype::F64);
ModelGraph load_model(const std::filesystem::path& path);

}  // namespace nilmprune
