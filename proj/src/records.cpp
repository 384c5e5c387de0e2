#include "framescope/records.hpp"

#include <fstream>

#include "framescope/errors.hpp"

namespace framescope {

using nlohmann::json;

void to_json(json& j, const PixelBox& b) {
    j = json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
}
void from_json(const json& j, PixelBox& b) {
    j.at("x").get_to(b.x);
    j.at("y").get_to(b.y);
    j.at("w").get_to(b.w);
    j.at("h").get_to(b.h);
}

void to_json(json& j, const Span& s) {
    j = json{{"begin", s.begin}, {"end", s.end}};
}
void from_json(const json& j, Span& s) {
    j.at("begin").get_to(s.begin);
    j.at("end").get_to(s.end);
}

void to_json(json& j, const TokenLayout& l) {
    j = json{{"image_span", l.image_span},
             {"question_span", l.question_span},
             {"instruction_span", l.instruction_span},
             {"soft_span", l.soft_span},
             {"output_span", l.output_span},
             {"grid_rows", l.grid.rows},
             {"grid_cols", l.grid.cols},
             {"image_width", l.image_width},
             {"image_height", l.image_height}};
}
void from_json(const json& j, TokenLayout& l) {
    j.at("image_span").get_to(l.image_span);
    j.at("question_span").get_to(l.question_span);
    j.at("instruction_span").get_to(l.instruction_span);
    j.at("soft_span").get_to(l.soft_span);
    j.at("output_span").get_to(l.output_span);
    j.at("grid_rows").get_to(l.grid.rows);
    j.at("grid_cols").get_to(l.grid.cols);
    j.at("image_width").get_to(l.image_width);
    j.at("image_height").get_to(l.image_height);
}

void to_json(json& j, const QAItem& item) {
    j = json{{"id", item.id},
             {"image_ref", item.image_ref},
             {"framing", to_string(item.framing)},
             {"question", item.question},
             {"answer", item.answer}};
    if (!item.full_answer.empty()) j["full_answer"] = item.full_answer;
    if (!item.options.empty()) j["options"] = item.options;
    if (!item.origin_options.empty()) j["origin_options"] = item.origin_options;
    if (!item.scene_graph.empty()) j["scene_graph"] = item.scene_graph;
    if (item.bbox) j["bbox"] = *item.bbox;
    if (!item.task_label.empty()) j["task_label"] = item.task_label;
}
void from_json(const json& j, QAItem& item) {
    j.at("id").get_to(item.id);
    item.image_ref = j.value("image_ref", "");
    item.framing = framing_from_string(j.at("framing").get<std::string>());
    j.at("question").get_to(item.question);
    item.answer = j.value("answer", "");
    item.full_answer = j.value("full_answer", "");
    item.options = j.value("options", std::vector<std::string>{});
    item.origin_options = j.value("origin_options", std::vector<std::string>{});
    item.scene_graph = j.value("scene_graph", "");
    if (j.contains("bbox")) item.bbox = j.at("bbox").get<PixelBox>();
    item.task_label = j.value("task_label", "");
}

void to_json(json& j, const FramingTriplet& t) {
    j = json{{"source_id", t.source_id},
             {"provenance", t.provenance},
             {"open", t.open},
             {"yesno", t.yesno},
             {"mcq", t.mcq}};
}
void from_json(const json& j, FramingTriplet& t) {
    j.at("source_id").get_to(t.source_id);
    t.provenance = j.value("provenance", "");
    j.at("open").get_to(t.open);
    j.at("yesno").get_to(t.yesno);
    j.at("mcq").get_to(t.mcq);
}

void to_json(json& j, const VisualStats& s) {
    j = json{{"visual_energy", s.visual_energy},
             {"box_attention", s.box_attention},
             {"sink_attention", s.sink_attention},
             {"entropy", s.entropy}};
}
void from_json(const json& j, VisualStats& s) {
    j.at("visual_energy").get_to(s.visual_energy);
    s.box_attention = j.value("box_attention", 0.0);
    s.sink_attention = j.value("sink_attention", 0.0);
    s.entropy = j.value("entropy", 0.0);
}

void to_json(json& j, const EvalRecord& r) {
    j = json{{"item_id", r.item_id},
             {"framing", to_string(r.framing)},
             {"prediction", r.prediction},
             {"gold", r.gold},
             {"matched", r.matched},
             {"match_rule", r.match_rule}};
}
void from_json(const json& j, EvalRecord& r) {
    j.at("item_id").get_to(r.item_id);
    r.framing = framing_from_string(j.at("framing").get<std::string>());
    j.at("prediction").get_to(r.prediction);
    j.at("gold").get_to(r.gold);
    j.at("matched").get_to(r.matched);
    r.match_rule = j.value("match_rule", "");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<json> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& r : records) out << r.dump() << '\n';
}

void append_jsonl(const std::filesystem::path& path, const json& record) {
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw Error("cannot append to " + path.string());
    }
    out << record.dump() << '\n';
}

std::vector<QAItem> load_items(const std::filesystem::path& path) {
    std::vector<QAItem> items;
    for (const auto& j : read_jsonl(path)) items.push_back(j.get<QAItem>());
    return items;
}

void save_items(const std::filesystem::path& path, const std::vector<QAItem>& items) {
    std::vector<json> records;
    records.reserve(items.size());
    for (const auto& item : items) records.emplace_back(item);
    write_jsonl(path, records);
}

std::vector<FramingTriplet> load_triplets(const std::filesystem::path& path) {
    std::vector<FramingTriplet> triplets;
    for (const auto& j : read_jsonl(path)) triplets.push_back(j.get<FramingTriplet>());
    return triplets;
}

void save_triplets(const std::filesystem::path& path,
                   const std::vector<FramingTriplet>& triplets) {
    std::vector<json> records;
    records.reserve(triplets.size());
    for (const auto& t : triplets) records.emplace_back(t);
    write_jsonl(path, records);
}

}  // namespace framescope
