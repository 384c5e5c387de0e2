#include "framescope/reframe.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "framescope/errors.hpp"
#include "framescope/records.hpp"
#include "framescope/rng.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace framescope {

using nlohmann::json;

std::filesystem::path default_template_dir() {
    if (const char* env = std::getenv("FRAMESCOPE_PROMPT_DIR")) {
        return env;
    }
#ifdef FRAMESCOPE_DATA_DIR
    return std::filesystem::path(FRAMESCOPE_DATA_DIR) / "prompts";
#else
    return std::filesystem::path("data") / "prompts";
#endif
}

std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& values,
                            const std::map<std::string, bool>& conditions) {
    // Pass 1: resolve {?key}...{/key} blocks, innermost-safe because blocks
    // only nest distinct keys.
    std::string out;
    out.reserve(text.size());
    std::vector<std::pair<std::string, bool>> block_stack;  // (key, emitting)
    bool emitting = true;

    size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{' && i + 1 < text.size() && (text[i + 1] == '?' || text[i + 1] == '/')) {
            const size_t close = text.find('}', i);
            if (close == std::string::npos) {
                throw TemplateError("unterminated block marker");
            }
            const bool opening = text[i + 1] == '?';
            const std::string key = text.substr(i + 2, close - i - 2);
            if (opening) {
                const auto it = conditions.find(key);
                if (it == conditions.end()) {
                    throw TemplateError("unknown template condition '" + key + "'");
                }
                block_stack.emplace_back(key, emitting);
                emitting = emitting && it->second;
            } else {
                if (block_stack.empty() || block_stack.back().first != key) {
                    throw TemplateError("mismatched block close '" + key + "'");
                }
                emitting = block_stack.back().second;
                block_stack.pop_back();
            }
            i = close + 1;
            continue;
        }
        if (emitting) out.push_back(text[i]);
        ++i;
    }
    if (!block_stack.empty()) {
        throw TemplateError("unclosed block '" + block_stack.back().first + "'");
    }

    // Pass 2: substitute known placeholders; anything else inside braces is
    // literal template text (JSON skeletons, "{yes|no}").
    std::string result;
    result.reserve(out.size());
    i = 0;
    while (i < out.size()) {
        if (out[i] == '{') {
            const size_t close = out.find('}', i);
            if (close != std::string::npos) {
                const std::string key = out.substr(i + 1, close - i - 1);
                const auto it = values.find(key);
                if (it != values.end()) {
                    if (it->second.empty()) {
                        throw TemplateError("placeholder '" + key + "' has no value");
                    }
                    result += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        result.push_back(out[i]);
        ++i;
    }
    return result;
}

namespace {

std::string load_template(const std::filesystem::path& dir, const std::string& name) {
    const std::filesystem::path path =
        (dir.empty() ? default_template_dir() : dir) / name;
    std::ifstream in(path);
    if (!in) {
        throw TemplateError("cannot read prompt template " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string render_options(const std::vector<std::string>& options) {
    std::string out = "[";
    for (size_t i = 0; i < options.size(); ++i) {
        if (i) out += ", ";
        out += "\"" + options[i] + "\"";
    }
    out += "]";
    return out;
}

}  // namespace

std::string build_prompt(const QAItem& item, ReframeDirection direction, YnPolarity polarity,
                         const std::filesystem::path& template_dir) {
    if (polarity == YnPolarity::alternate) {
        throw TemplateError("build_prompt needs a resolved polarity (affirm or negate)");
    }

    if (direction == ReframeDirection::open_to_yn_mcq) {
        if (item.framing != Framing::open) {
            throw FramingError("open_to_yn_mcq expects an open-ended item");
        }
        const std::vector<std::string>& opts =
            item.origin_options.empty() ? item.options : item.origin_options;
        std::map<std::string, std::string> values = {
            {"original_question", item.question},
            {"correct_answer", item.answer},
        };
        if (!opts.empty()) values["options"] = render_options(opts);
        if (!item.scene_graph.empty()) values["scene_graph"] = item.scene_graph;
        const std::map<std::string, bool> conds = {
            {"options", !opts.empty()},
            {"no_options", opts.empty()},
            {"scene_graph", !item.scene_graph.empty()},
            {"affirm", polarity == YnPolarity::affirm},
            {"negate", polarity == YnPolarity::negate},
        };
        return render_template(load_template(template_dir, "open_to_yn_mcq.txt"), values, conds);
    }

    if (item.framing != Framing::yesno) {
        throw FramingError("yn_to_open_mcq expects a yes/no item");
    }
    const std::map<std::string, std::string> values = {
        {"original_question", item.question},
        {"original_answer", item.answer},
        {"original_full_answer", item.full_answer.empty() ? item.answer : item.full_answer},
        {"scene_graph", item.scene_graph},
    };
    const std::map<std::string, bool> conds = {
        {"scene_graph", !item.scene_graph.empty()},
    };
    return render_template(load_template(template_dir, "yn_to_open_mcq.txt"), values, conds);
}

namespace {

std::string strip_fences_and_prose(const std::string& text) {
    std::string body = text;
    const size_t fence = body.find("```");
    if (fence != std::string::npos) {
        size_t start = fence + 3;
        // optional language tag up to end of line
        const size_t eol = body.find('\n', start);
        const size_t close = body.find("```", start);
        if (close == std::string::npos) {
            throw ReframeParseError("unterminated code fence");
        }
        if (eol != std::string::npos && eol < close) {
            const std::string tag = body.substr(start, eol - start);
            if (tag.find('{') == std::string::npos) start = eol + 1;
        }
        body = body.substr(start, close - start);
    }
    const size_t open = body.find('{');
    const size_t close = body.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw ReframeParseError("no JSON object in response");
    }
    return body.substr(open, close - open + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

QAItem parse_mcq_field(const json& j) {
    if (!j.is_object() || !j.contains("question") || !j.contains("options") ||
        !j.contains("answer_text")) {
        throw ReframeParseError("mcq field missing question/options/answer_text");
    }
    QAItem item;
    item.framing = Framing::mcq;
    item.question = j.at("question").get<std::string>();
    if (!j.at("options").is_array() || j.at("options").size() != 4) {
        throw ReframeParseError("mcq needs exactly 4 options");
    }
    for (const auto& opt : j.at("options")) {
        if (!opt.is_string()) throw ReframeParseError("mcq option is not a string");
        item.options.push_back(opt.get<std::string>());
    }
    item.answer = j.at("answer_text").get<std::string>();
    if (std::find(item.options.begin(), item.options.end(), item.answer) == item.options.end()) {
        throw ReframeParseError("mcq answer_text not among options");
    }
    if (item.question.empty()) throw ReframeParseError("mcq question empty");
    return item;
}

}  // namespace

ReframeFields parse_reframe_response(const std::string& text, ReframeDirection direction) {
    json j;
    try {
        j = json::parse(strip_fences_and_prose(text));
    } catch (const json::parse_error& e) {
        throw ReframeParseError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ReframeParseError("response is not a JSON object");
    }

    ReframeFields fields;
    if (direction == ReframeDirection::open_to_yn_mcq) {
        if (!j.contains("yes_no") || !j.contains("mcq")) {
            throw ReframeParseError("expected keys yes_no and mcq");
        }
        const json& yn = j.at("yes_no");
        if (!yn.is_object() || !yn.contains("question") || !yn.contains("answer")) {
            throw ReframeParseError("yes_no field missing question/answer");
        }
        QAItem yn_item;
        yn_item.framing = Framing::yesno;
        yn_item.question = yn.at("question").get<std::string>();
        yn_item.answer = lower(yn.at("answer").get<std::string>());
        if (yn_item.answer != "yes" && yn_item.answer != "no") {
            throw ReframeParseError("yes_no answer must be yes or no");
        }
        if (yn_item.question.empty()) throw ReframeParseError("yes_no question empty");
        fields.yesno = std::move(yn_item);
        fields.mcq = parse_mcq_field(j.at("mcq"));
    } else {
        if (!j.contains("mcq") || !j.contains("open_ended")) {
            throw ReframeParseError("expected keys mcq and open_ended");
        }
        fields.mcq = parse_mcq_field(j.at("mcq"));
        const json& open = j.at("open_ended");
        if (!open.is_object() || !open.contains("question") || !open.contains("answer")) {
            throw ReframeParseError("open_ended field missing question/answer");
        }
        QAItem open_item;
        open_item.framing = Framing::open;
        open_item.question = open.at("question").get<std::string>();
        open_item.answer = open.at("answer").get<std::string>();
        if (open_item.question.empty() || open_item.answer.empty()) {
            throw ReframeParseError("open_ended question/answer empty");
        }
        const std::string a = lower(open_item.answer);
        if (a == "yes" || a == "no") {
            throw ReframeParseError("open_ended answer must not be yes/no");
        }
        fields.open = std::move(open_item);
    }
    return fields;
}

QAItem mcq_to_open(const QAItem& item) {
    if (item.framing != Framing::mcq) {
        throw FramingError("mcq_to_open expects an mcq item, got " + to_string(item.framing));
    }
    QAItem out = item;
    out.framing = Framing::open;
    out.answer = item.answer;  // already the option text
    out.origin_options = item.options;
    out.options.clear();

    // Strip an option list embedded in the question text: "(A) red (B) blue"
    // or "A. red B. blue" style runs, plus an introducing "Options:" label.
    static const std::regex embedded(
        R"((\s*(Options?|Choices?)\s*:)?\s*\(?A[\.\):]\s*[^()]*?\(?B[\.\):].*$)",
        std::regex::icase);
    out.question = std::regex_replace(out.question, embedded, "");
    while (!out.question.empty() &&
           (out.question.back() == ' ' || out.question.back() == '\n')) {
        out.question.pop_back();
    }
    return out;
}

// -- clients -----------------------------------------------------------------

HttpChatClient::HttpChatClient(const ReframeConfig& config) : endpoint_url_(config.endpoint_url) {
    if (const char* key = std::getenv(config.api_key_env.c_str())) {
        api_key_ = key;
    }
}

std::string HttpChatClient::complete(const ChatRequest& request) {
    // endpoint_url_ = scheme://host[:port]/path
    const size_t scheme_end = endpoint_url_.find("://");
    if (scheme_end == std::string::npos) {
        throw EndpointError("endpoint URL missing scheme: " + endpoint_url_);
    }
    const size_t path_start = endpoint_url_.find('/', scheme_end + 3);
    const std::string base =
        path_start == std::string::npos ? endpoint_url_ : endpoint_url_.substr(0, path_start);
    const std::string path =
        path_start == std::string::npos ? "/" : endpoint_url_.substr(path_start);

    httplib::Client client(base);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(request.timeout_s * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(static_cast<int>(request.timeout_s * 1000)));

    httplib::Headers headers;
    if (!api_key_.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key_);
    }
    const json body = {
        {"model", request.model},
        {"messages", json::array({json{{"role", "user"}, {"content", request.user_content}}})},
        {"temperature", request.temperature},
    };
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw EndpointError("no response from " + endpoint_url_);
    }
    if (res->status != 200) {
        throw EndpointError("endpoint returned status " + std::to_string(res->status));
    }
    try {
        const json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw EndpointError(std::string("malformed endpoint reply: ") + e.what());
    }
}

CannedChatClient::CannedChatClient(std::vector<std::string> responses)
    : responses_(std::move(responses)) {}

std::string CannedChatClient::complete(const ChatRequest&) {
    const int idx = calls_.fetch_add(1);
    if (idx >= static_cast<int>(responses_.size())) {
        throw EndpointError("canned client exhausted after " +
                            std::to_string(responses_.size()) + " responses");
    }
    return responses_[static_cast<size_t>(idx)];
}

// -- pipeline ----------------------------------------------------------------

namespace {

struct JournalEntry {
    bool ok = false;
    FramingTriplet triplet;
};

std::map<std::string, JournalEntry> load_journal(const std::filesystem::path& path) {
    std::map<std::string, JournalEntry> done;
    if (path.empty() || !std::filesystem::exists(path)) return done;
    for (const auto& j : read_jsonl(path)) {
        JournalEntry entry;
        entry.ok = j.at("ok").get<bool>();
        if (entry.ok) entry.triplet = j.at("triplet").get<FramingTriplet>();
        done[j.at("id").get<std::string>()] = std::move(entry);
    }
    return done;
}

YnPolarity resolve_polarity(YnPolarity configured, const std::string& item_id) {
    if (configured != YnPolarity::alternate) return configured;
    // Hash-based so the yes/no gold labels stay balanced and resume-stable.
    return fnv1a(item_id) % 2 == 0 ? YnPolarity::affirm : YnPolarity::negate;
}

FramingTriplet assemble_triplet(const QAItem& source, const ReframeFields& fields,
                                ReframeDirection direction) {
    FramingTriplet triplet;
    triplet.source_id = source.id;

    auto fill_common = [&](QAItem& item, Framing framing) {
        item.id = source.id;
        item.image_ref = source.image_ref;
        item.framing = framing;
        item.scene_graph = source.scene_graph;
        item.bbox = source.bbox;
        item.task_label = source.task_label;
    };

    if (direction == ReframeDirection::open_to_yn_mcq) {
        triplet.open = source;
        triplet.yesno = *fields.yesno;
        fill_common(triplet.yesno, Framing::yesno);
        triplet.mcq = *fields.mcq;
        fill_common(triplet.mcq, Framing::mcq);
        triplet.provenance = "open->yn,mcq";
    } else {
        triplet.yesno = source;
        triplet.open = *fields.open;
        fill_common(triplet.open, Framing::open);
        triplet.mcq = *fields.mcq;
        fill_common(triplet.mcq, Framing::mcq);
        triplet.provenance = "yn->open,mcq";
    }
    triplet.validate();
    return triplet;
}

}  // namespace

std::vector<FramingTriplet> reframe_dataset(const std::vector<QAItem>& items,
                                            const ReframeConfig& config, ChatClient& client,
                                            const std::filesystem::path& journal_path,
                                            ReframeRunStats* stats) {
    const auto journal = load_journal(journal_path);
    ReframeRunStats local;
    std::map<std::string, FramingTriplet> results;
    for (const auto& [id, entry] : journal) {
        if (entry.ok) results[id] = entry.triplet;
    }

    std::vector<size_t> pending;
    for (size_t i = 0; i < items.size(); ++i) {
        if (journal.count(items[i].id)) {
            ++local.skipped;
        } else {
            pending.push_back(i);
        }
    }

    std::mutex state_mutex;  // guards journal file, results, stats
    std::exception_ptr failure;
    std::atomic<size_t> cursor{0};

    auto process = [&](size_t item_index) {
        QAItem source = items[item_index];
        if (source.framing == Framing::mcq) {
            source = mcq_to_open(source);  // rule-based, then reframe as open
        }
        const ReframeDirection direction = source.framing == Framing::open
                                               ? ReframeDirection::open_to_yn_mcq
                                               : ReframeDirection::yn_to_open_mcq;
        const YnPolarity polarity = resolve_polarity(config.yn_polarity, source.id);
        const std::string prompt = build_prompt(source, direction, polarity, config.template_dir);

        ChatRequest request;
        request.model = config.model_name;
        request.user_content = prompt;
        request.temperature = config.temperature;
        request.timeout_s = config.timeout_s;

        std::string response;
        int attempt = 0;
        for (;;) {
            try {
                response = client.complete(request);
                break;
            } catch (const EndpointError&) {
                if (attempt >= config.max_retries) throw;
                const double delay = config.retry_backoff_s * std::pow(2.0, attempt);
                if (delay > 0) {
                    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
                }
                ++attempt;
            }
        }

        std::lock_guard<std::mutex> lock(state_mutex);
        ++local.sent;
        try {
            const ReframeFields fields = parse_reframe_response(response, direction);
            const FramingTriplet triplet = assemble_triplet(source, fields, direction);
            if (!journal_path.empty()) {
                append_jsonl(journal_path,
                             nlohmann::json{{"id", source.id}, {"ok", true}, {"triplet", triplet}});
            }
            results[source.id] = triplet;
            ++local.completed;
        } catch (const ReframeParseError& e) {
            if (!journal_path.empty()) {
                append_jsonl(journal_path,
                             nlohmann::json{{"id", source.id}, {"ok", false}, {"error", e.what()}});
            }
            ++local.dropped;
        }
    };

    const int workers = std::max(1, std::min<int>(config.concurrency,
                                                  static_cast<int>(pending.size())));
    if (workers <= 1) {
        for (size_t idx : pending) process(idx);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (;;) {
                    const size_t at = cursor.fetch_add(1);
                    if (at >= pending.size()) return;
                    try {
                        process(pending[at]);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(state_mutex);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    std::vector<FramingTriplet> ordered;
    for (const auto& item : items) {
        const auto it = results.find(item.id);
        if (it != results.end()) ordered.push_back(it->second);
    }
    if (stats) *stats = local;
    return ordered;
}

}  // namespace framescope
