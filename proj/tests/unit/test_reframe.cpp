#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "framescope/records.hpp"
#include "framescope/reframe.hpp"

using namespace framescope;

namespace {

const std::filesystem::path kTemplateDir =
    std::filesystem::path(FRAMESCOPE_REPO_DIR) / "data" / "prompts";

QAItem open_item() {
    QAItem item;
    item.id = "q1";
    item.image_ref = "img1";
    item.framing = Framing::open;
    item.question = "What is the person near the garbage bin wearing?";
    item.answer = "a coat";
    return item;
}

QAItem yn_item() {
    QAItem item;
    item.id = "q2";
    item.image_ref = "img2";
    item.framing = Framing::yesno;
    item.question = "Is the helmet light blue?";
    item.answer = "yes";
    item.full_answer = "the helmet in the middle is light blue";
    return item;
}

std::string valid_open_response(const std::string& answer = "a coat") {
    return std::string(R"({
  "yes_no": {"question": "Is the person wearing a coat?", "answer": "yes"},
  "mcq": {"question": "What is the person wearing?",
          "options": [")") +
           answer + R"(", "a hat", "sandals", "a scarf"],
          "answer_text": ")" +
           answer + R"("}
})";
}

std::string valid_yn_response() {
    return R"({
  "mcq": {"question": "What color is the helmet?",
          "options": ["light blue", "red", "yellow", "green"],
          "answer_text": "light blue"},
  "open_ended": {"question": "What color is the helmet in the middle?",
                 "answer": "light blue"}
})";
}

std::filesystem::path temp_journal(const std::string& name) {
    const auto path = std::filesystem::temp_directory_path() / ("framescope-journal-" + name);
    std::filesystem::remove(path);
    return path;
}

}  // namespace

TEST_CASE("build_prompt: open -> yn/mcq") {
    SUBCASE("no options: the 4-distractor branch is active") {
        const std::string prompt =
            build_prompt(open_item(), ReframeDirection::open_to_yn_mcq, YnPolarity::affirm,
                         kTemplateDir);
        CHECK(prompt.find("Available Options") == std::string::npos);
        CHECK(prompt.find("provide 3 easy negative distractors") != std::string::npos);
        CHECK(prompt.find("What is the person near the garbage bin wearing?") !=
              std::string::npos);
        CHECK(prompt.find("Output ONLY valid JSON in this exact format") != std::string::npos);
        CHECK(prompt.find("{original_question}") == std::string::npos);
        // the literal answer-slot marker in the JSON skeleton survives
        CHECK(prompt.find("{yes|no}") != std::string::npos);
    }

    SUBCASE("options present: Available Options branch is active") {
        QAItem item = open_item();
        item.origin_options = {"a coat", "a hat", "sandals", "a scarf"};
        const std::string prompt = build_prompt(item, ReframeDirection::open_to_yn_mcq,
                                                YnPolarity::affirm, kTemplateDir);
        CHECK(prompt.find("Available Options:") != std::string::npos);
        CHECK(prompt.find("with the same options") != std::string::npos);
        CHECK(prompt.find("provide 3 easy negative distractors") == std::string::npos);
    }

    SUBCASE("affirm and negate branches are exclusive") {
        const std::string affirm = build_prompt(open_item(), ReframeDirection::open_to_yn_mcq,
                                                YnPolarity::affirm, kTemplateDir);
        CHECK(affirm.find("affirming that the answer is") != std::string::npos);
        CHECK(affirm.find("distinctly incorrect") == std::string::npos);
        const std::string negate = build_prompt(open_item(), ReframeDirection::open_to_yn_mcq,
                                                YnPolarity::negate, kTemplateDir);
        CHECK(negate.find("distinctly incorrect") != std::string::npos);
        CHECK(negate.find("affirming that the answer is") == std::string::npos);
    }

    SUBCASE("scene graph branch") {
        QAItem item = open_item();
        item.scene_graph = "person, garbage bin, coat";
        const std::string prompt = build_prompt(item, ReframeDirection::open_to_yn_mcq,
                                                YnPolarity::affirm, kTemplateDir);
        CHECK(prompt.find("Avoid using objects from the scene graph") != std::string::npos);
        CHECK(prompt.find("person, garbage bin, coat") != std::string::npos);
    }

    SUBCASE("missing answer raises TemplateError") {
        QAItem item = open_item();
        item.answer = "";
        CHECK_THROWS_AS(build_prompt(item, ReframeDirection::open_to_yn_mcq, YnPolarity::affirm,
                                     kTemplateDir),
                        TemplateError);
    }

    SUBCASE("unresolved polarity raises") {
        CHECK_THROWS_AS(build_prompt(open_item(), ReframeDirection::open_to_yn_mcq,
                                     YnPolarity::alternate, kTemplateDir),
                        TemplateError);
    }
}

TEST_CASE("build_prompt: yn -> open/mcq") {
    const std::string prompt =
        build_prompt(yn_item(), ReframeDirection::yn_to_open_mcq, YnPolarity::affirm,
                     kTemplateDir);
    CHECK(prompt.find("Correct Full Answer (for reference):") != std::string::npos);
    CHECK(prompt.find("the helmet in the middle is light blue") != std::string::npos);
    CHECK(prompt.find("Is the helmet light blue?") != std::string::npos);
    CHECK(prompt.find("open_ended") != std::string::npos);
}

TEST_CASE("parse_reframe_response") {
    SUBCASE("valid yes_no + mcq extracts both framings") {
        const ReframeFields fields =
            parse_reframe_response(valid_open_response(), ReframeDirection::open_to_yn_mcq);
        REQUIRE(fields.yesno);
        REQUIRE(fields.mcq);
        CHECK(fields.yesno->answer == "yes");
        CHECK(fields.mcq->options.size() == 4);
        CHECK(fields.mcq->answer == "a coat");
    }

    SUBCASE("code fences and prose are stripped") {
        const std::string wrapped = "Sure! Here is the JSON you asked for:\n```json\n" +
                                    valid_open_response() + "\n```\nLet me know.";
        const ReframeFields fields =
            parse_reframe_response(wrapped, ReframeDirection::open_to_yn_mcq);
        CHECK(fields.yesno);
    }

    SUBCASE("parsing is a pure function of the text") {
        const std::string text = valid_open_response();
        const ReframeFields a = parse_reframe_response(text, ReframeDirection::open_to_yn_mcq);
        const ReframeFields b = parse_reframe_response(text, ReframeDirection::open_to_yn_mcq);
        CHECK(a.mcq->question == b.mcq->question);
        CHECK(a.yesno->answer == b.yesno->answer);
    }

    SUBCASE("three options raise") {
        const std::string bad = R"({
          "yes_no": {"question": "Is it?", "answer": "yes"},
          "mcq": {"question": "What?", "options": ["a", "b", "c"], "answer_text": "a"}
        })";
        CHECK_THROWS_AS(parse_reframe_response(bad, ReframeDirection::open_to_yn_mcq),
                        ReframeParseError);
    }

    SUBCASE("answer_text not among options raises") {
        const std::string bad = R"({
          "yes_no": {"question": "Is it?", "answer": "yes"},
          "mcq": {"question": "What?", "options": ["a", "b", "c", "d"], "answer_text": "z"}
        })";
        CHECK_THROWS_AS(parse_reframe_response(bad, ReframeDirection::open_to_yn_mcq),
                        ReframeParseError);
    }

    SUBCASE("yes_no answer outside yes/no raises") {
        const std::string bad = R"({
          "yes_no": {"question": "Is it?", "answer": "maybe"},
          "mcq": {"question": "What?", "options": ["a", "b", "c", "d"], "answer_text": "a"}
        })";
        CHECK_THROWS_AS(parse_reframe_response(bad, ReframeDirection::open_to_yn_mcq),
                        ReframeParseError);
    }

    SUBCASE("malformed JSON raises") {
        CHECK_THROWS_AS(parse_reframe_response("{not json", ReframeDirection::open_to_yn_mcq),
                        ReframeParseError);
    }

    SUBCASE("yn direction requires mcq + open_ended") {
        const ReframeFields fields =
            parse_reframe_response(valid_yn_response(), ReframeDirection::yn_to_open_mcq);
        REQUIRE(fields.open);
        REQUIRE(fields.mcq);
        CHECK(fields.open->answer == "light blue");
        CHECK_THROWS_AS(
            parse_reframe_response(valid_open_response(), ReframeDirection::yn_to_open_mcq),
            ReframeParseError);
    }
}

TEST_CASE("mcq_to_open") {
    QAItem item;
    item.id = "m1";
    item.framing = Framing::mcq;
    item.question = "What color is the car?";
    item.options = {"red", "blue", "green", "white"};
    item.answer = "blue";

    SUBCASE("options are stripped and the answer becomes the option text") {
        const QAItem open = mcq_to_open(item);
        CHECK(open.framing == Framing::open);
        CHECK(open.options.empty());
        CHECK(open.answer == "blue");
        CHECK(open.origin_options == item.options);
        CHECK(open.question == "What color is the car?");
    }

    SUBCASE("embedded option lists in the question are stripped") {
        // hand-built MCQ strings in the two common shapes
        const std::vector<std::string> embedded = {
            "What color is the car? (A) red (B) blue (C) green (D) white",
            "What color is the car? (A) red (B) blue (C) green (D) white ",
            "What color is the car?\n(A) red (B) blue (C) green (D) white",
            "What color is the car? A. red B. blue C. green D. white",
            "What color is the car? A) red B) blue C) green D) white",
            "What color is the car? Options: (A) red (B) blue (C) green (D) white",
            "What color is the car? Choices: A. red B. blue C. green D. white",
            "Which picks? (A) one (B) two (C) three (D) four",
            "Pick one: (A) cat (B) dog (C) bird (D) fish",
            "Is it near? (A) yes, close (B) far away (C) medium (D) unsure",
            "What shape? A: circle B: square C: triangle D: star",
            "What size? (A) small (B) large (C) tiny (D) huge",
            "Where is it? (A) left (B) right (C) top (D) bottom",
            "Who is there? (A) a man (B) a woman (C) a child (D) nobody",
            "How many? (A) one (B) two (C) three (D) four",
            "What brand? (A) acme (B) zenith (C) apex (D) none",
            "What time? (A) morning (B) noon (C) evening (D) night",
            "What animal? (A) cat (B) dog (C) cow (D) horse",
            "Which lane? (A) first (B) second (C) third (D) fourth",
            "What texture? (A) rough (B) smooth (C) soft (D) hard",
        };
        for (const auto& q : embedded) {
            QAItem e = item;
            e.question = q;
            const QAItem open = mcq_to_open(e);
            CHECK(open.question.find("(A)") == std::string::npos);
            CHECK(open.question.find("A.") == std::string::npos);
            CHECK(open.question.find("(B)") == std::string::npos);
            CHECK(!open.question.empty());
        }
    }

    SUBCASE("applying to the result raises FramingError") {
        const QAItem open = mcq_to_open(item);
        CHECK_THROWS_AS(mcq_to_open(open), FramingError);
    }
}

TEST_CASE("reframe_dataset pipeline") {
    ReframeConfig config;
    config.model_name = "fake";
    config.yn_polarity = YnPolarity::affirm;
    config.concurrency = 1;
    config.max_retries = 0;
    config.retry_backoff_s = 0.0;
    config.template_dir = kTemplateDir;

    std::vector<QAItem> items;
    for (int i = 0; i < 3; ++i) {
        QAItem item = open_item();
        item.id = "item-" + std::to_string(i);
        items.push_back(item);
    }

    SUBCASE("three valid responses give three triplets") {
        CannedChatClient client({valid_open_response(), valid_open_response("a hat"),
                                 valid_open_response("sandals")});
        ReframeRunStats stats;
        const auto triplets =
            reframe_dataset(items, config, client, temp_journal("ok"), &stats);
        REQUIRE(triplets.size() == 3);
        CHECK(stats.completed == 3);
        CHECK(stats.dropped == 0);
        for (const auto& t : triplets) t.validate();
        CHECK(triplets[0].open.id == "item-0");
        CHECK(triplets[0].yesno.framing == Framing::yesno);
    }

    SUBCASE("one malformed of three: two triplets, one logged drop") {
        CannedChatClient client(
            {valid_open_response(), "sorry, no json here", valid_open_response("a hat")});
        const auto journal = temp_journal("drop");
        ReframeRunStats stats;
        const auto triplets = reframe_dataset(items, config, client, journal, &stats);
        CHECK(triplets.size() == 2);
        CHECK(stats.dropped == 1);
        // the drop is journaled with its reason
        int failed = 0;
        for (const auto& j : read_jsonl(journal)) {
            if (!j.at("ok").get<bool>()) {
                ++failed;
                CHECK(j.contains("error"));
            }
        }
        CHECK(failed == 1);
    }

    SUBCASE("resume re-sends nothing already journaled") {
        const auto journal = temp_journal("resume");
        std::vector<QAItem> four = items;
        QAItem extra = open_item();
        extra.id = "item-3";
        four.push_back(extra);

        // first run crashes after two items: simulate by truncating the list
        {
            CannedChatClient client({valid_open_response(), valid_open_response("a hat")});
            const std::vector<QAItem> first_two(four.begin(), four.begin() + 2);
            reframe_dataset(first_two, config, client, journal);
        }
        // resumed run over the full list: only items 3 and 4 hit the client
        CannedChatClient client({valid_open_response("sandals"), valid_open_response("a scarf")});
        ReframeRunStats stats;
        const auto triplets = reframe_dataset(four, config, client, journal, &stats);
        CHECK(client.calls() == 2);
        CHECK(stats.skipped == 2);
        REQUIRE(triplets.size() == 4);
        CHECK(triplets[0].mcq.answer == "a coat");
        CHECK(triplets[3].mcq.answer == "a scarf");
    }

    SUBCASE("endpoint failure after retries aborts with journal intact") {
        class FailingClient : public ChatClient {
        public:
            std::string complete(const ChatRequest&) override {
                throw EndpointError("connection refused");
            }
        };
        FailingClient client;
        const auto journal = temp_journal("fail");
        ReframeConfig retrying = config;
        retrying.max_retries = 2;
        CHECK_THROWS_AS(reframe_dataset(items, retrying, client, journal), EndpointError);
    }

    SUBCASE("mcq items route through the rule-based conversion first") {
        QAItem mcq;
        mcq.id = "mcq-0";
        mcq.image_ref = "img9";
        mcq.framing = Framing::mcq;
        mcq.question = "What color is the car? (A) red (B) blue (C) green (D) white";
        mcq.options = {"red", "blue", "green", "white"};
        mcq.answer = "blue";
        CannedChatClient client({valid_open_response("blue")});
        const auto triplets =
            reframe_dataset({mcq}, config, client, temp_journal("mcq"), nullptr);
        REQUIRE(triplets.size() == 1);
        CHECK(triplets[0].open.framing == Framing::open);
        CHECK(triplets[0].open.answer == "blue");
    }
}
