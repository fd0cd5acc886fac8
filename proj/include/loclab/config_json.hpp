#pragma once

#include <json.hpp>

#include "loclab/corpus.hpp"
#include "loclab/locality.hpp"
#include "loclab/model.hpp"
#include "loclab/partition.hpp"
#include "loclab/train.hpp"

namespace loclab {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const LocalityScheduleSpec& s);
void from_json(const nlohmann::json& j, LocalityScheduleSpec& s);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

void to_json(nlohmann::json& j, const BoundaryPolicy& p);
void from_json(const nlohmann::json& j, BoundaryPolicy& p);

void to_json(nlohmann::json& j, const RunResult& r);
void from_json(const nlohmann::json& j, RunResult& r);

// "uniform_distributed", "uniform_localist:0.5", "progressive:3:1.0"
LocalityScheduleSpec parse_schedule(const std::string& text);
std::string schedule_to_string(const LocalityScheduleSpec& spec);

} // namespace loclab
