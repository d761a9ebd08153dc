#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

#include "featup/trainer.hpp"

namespace featup {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { implicit = 1, jbu = 2 };

using Model = std::variant<ImplicitModel, JbuModel>;

/// Container layout: "FUP1", u32 version, u32 kind, u64 metadata length, UTF-8
/// JSON metadata, then every tensor listed in the metadata as little-endian
/// float32 in listed order.
std::string encode_checkpoint(const ImplicitModel& model);
std::string encode_checkpoint(const JbuModel& model);
Model decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const ImplicitModel& model, const std::filesystem::path& path);
void save_checkpoint(const JbuModel& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const JitterTransform& t);
JitterTransform transform_from_json(const nlohmann::json& j);

}  // namespace featup
