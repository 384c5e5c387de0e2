#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "framescope/consistency.hpp"
#include "framescope/dataset.hpp"
#include "framescope/layout.hpp"
#include "framescope/metrics.hpp"

// JSON shapes for the line-delimited record files the toolkit reads and
// writes: datasets, triplets, metric records, eval records, training logs.

namespace framescope {

void to_json(nlohmann::json& j, const PixelBox& b);
void from_json(const nlohmann::json& j, PixelBox& b);

void to_json(nlohmann::json& j, const Span& s);
void from_json(const nlohmann::json& j, Span& s);

void to_json(nlohmann::json& j, const TokenLayout& l);
void from_json(const nlohmann::json& j, TokenLayout& l);

void to_json(nlohmann::json& j, const QAItem& item);
void from_json(const nlohmann::json& j, QAItem& item);

void to_json(nlohmann::json& j, const FramingTriplet& t);
void from_json(const nlohmann::json& j, FramingTriplet& t);

void to_json(nlohmann::json& j, const VisualStats& s);
void from_json(const nlohmann::json& j, VisualStats& s);

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);

// One parsed object per non-empty line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);

std::vector<QAItem> load_items(const std::filesystem::path& path);
void save_items(const std::filesystem::path& path, const std::vector<QAItem>& items);

std::vector<FramingTriplet> load_triplets(const std::filesystem::path& path);
void save_triplets(const std::filesystem::path& path, const std::vector<FramingTriplet>& triplets);

}  // namespace framescope
