#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "framescope/dataset.hpp"

namespace framescope {

enum class YnPolarity { affirm, negate, alternate };
enum class ReframeDirection { open_to_yn_mcq, yn_to_open_mcq };

struct ReframeConfig {
    std::string endpoint_url;
    std::string model_name;
    std::string api_key_env = "FRAMESCOPE_API_KEY";
    YnPolarity yn_polarity = YnPolarity::alternate;
    int max_retries = 3;
    double retry_backoff_s = 0.5;  // doubled per attempt
    double timeout_s = 60.0;
    double temperature = 0.2;
    int concurrency = 4;
    std::filesystem::path template_dir;  // empty -> default_template_dir()
};

// Where the prompt templates live. FRAMESCOPE_PROMPT_DIR overrides the
// compile-time default.
std::filesystem::path default_template_dir();

// Renders the prompt template for `direction` with the item's fields.
// `polarity` must be resolved to affirm or negate by the caller. Throws
// TemplateError when a required placeholder has no value.
std::string build_prompt(const QAItem& item, ReframeDirection direction, YnPolarity polarity,
                         const std::filesystem::path& template_dir = {});

// Template engine used by build_prompt: {?key}...{/key} blocks kept when the
// condition is set, {name} placeholders substituted. Unknown brace content
// (JSON braces, "{yes|no}") passes through untouched.
std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& values,
                            const std::map<std::string, bool>& conditions);

struct ReframeFields {
    std::optional<QAItem> open;
    std::optional<QAItem> yesno;
    std::optional<QAItem> mcq;
};

// Strips code fences and surrounding prose, parses strict JSON and validates
// the per-direction schema. Any violation raises ReframeParseError; callers
// drop the sample.
ReframeFields parse_reframe_response(const std::string& text, ReframeDirection direction);

// Rule-based mcq -> open: removes the options (including an option list
// embedded in the question text) and promotes the correct option's text to
// the answer. The original options are kept in origin_options.
QAItem mcq_to_open(const QAItem& item);

// -- chat endpoint -----------------------------------------------------------

struct ChatRequest {
    std::string model;
    std::string user_content;
    double temperature = 0.2;
    double timeout_s = 60.0;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    // Returns the assistant message content. Throws EndpointError on
    // transport or protocol failure.
    virtual std::string complete(const ChatRequest& request) = 0;
};

// Minimal chat-completion client over HTTP(S); model, endpoint and key env
// come from ReframeConfig.
class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(const ReframeConfig& config);
    std::string complete(const ChatRequest& request) override;

private:
    std::string endpoint_url_;
    std::string api_key_;
};

// Fixture client: returns scripted responses in order. Thread-safe.
class CannedChatClient : public ChatClient {
public:
    explicit CannedChatClient(std::vector<std::string> responses);
    std::string complete(const ChatRequest& request) override;
    int calls() const { return calls_; }

private:
    std::vector<std::string> responses_;
    std::atomic<int> calls_{0};
};

struct ReframeRunStats {
    int sent = 0;
    int completed = 0;
    int dropped = 0;
    int skipped = 0;  // already journaled
};

// Full pipeline: build prompt, call the endpoint with retries and backoff,
// parse, assemble the triplet, journal progress. Parse failures are logged
// and dropped; transport failure after retries aborts the run with
// EndpointError, leaving the journal intact for resume.
std::vector<FramingTriplet> reframe_dataset(const std::vector<QAItem>& items,
                                            const ReframeConfig& config, ChatClient& client,
                                            const std::filesystem::path& journal_path,
                                            ReframeRunStats* stats = nullptr);

}  // namespace framescope
