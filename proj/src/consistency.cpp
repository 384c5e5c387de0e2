#include "framescope/consistency.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "framescope/errors.hpp"

namespace framescope {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string strip_punct(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool last_space = true;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            out.push_back(static_cast<char>(c));
            last_space = false;
        } else if (!last_space) {
            out.push_back(' ');
            last_space = true;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string strip_leading_articles(std::string s) {
    for (;;) {
        if (s.rfind("a ", 0) == 0) {
            s.erase(0, 2);
        } else if (s.rfind("an ", 0) == 0) {
            s.erase(0, 3);
        } else if (s.rfind("the ", 0) == 0) {
            s.erase(0, 4);
        } else {
            break;
        }
    }
    return s;
}

std::string normalize(const std::string& s) {
    return strip_leading_articles(strip_punct(lowercase(s)));
}

// Leading option letter from "A", "A.", "(A)", "A)" and close variants.
char extract_option_letter(const std::string& raw) {
    size_t i = 0;
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    bool paren = false;
    if (i < raw.size() && raw[i] == '(') {
        paren = true;
        ++i;
    }
    if (i >= raw.size()) return 0;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw[i])));
    if (c < 'A' || c > 'D') return 0;
    ++i;
    if (paren) {
        if (i < raw.size() && raw[i] == ')') return c;
        return 0;
    }
    if (i == raw.size()) return c;
    const char next = raw[i];
    if (next == '.' || next == ')' || next == ':' || next == ',' ||
        std::isspace(static_cast<unsigned char>(next))) {
        return c;
    }
    return 0;
}

MatchResult match_yesno(const std::string& prediction, const std::string& gold) {
    const std::string gold_norm = normalize(gold);
    std::istringstream stream(normalize(prediction));
    std::string token;
    while (stream >> token) {
        if (token == "yes" || token == "no") {
            return {token == gold_norm, "yesno-keyword"};
        }
    }
    return {false, "none"};
}

MatchResult match_open(const std::string& prediction, const std::string& gold) {
    const std::string p = normalize(prediction);
    const std::string g = normalize(gold);
    if (p.empty() || g.empty()) return {false, "none"};
    if (p == g) return {true, "exact"};
    if (p.find(g) != std::string::npos) return {true, "containment"};
    return {false, "none"};
}

}  // namespace

MatchResult match_answer(const std::string& prediction, const std::string& gold,
                         Framing framing) {
    switch (framing) {
        case Framing::yesno:
            return match_yesno(prediction, gold);
        case Framing::mcq: {
            const char pred_letter = extract_option_letter(prediction);
            const std::string gold_norm = normalize(gold);
            const bool gold_is_letter = gold_norm.size() == 1 && gold_norm[0] >= 'a' &&
                                        gold_norm[0] <= 'd';
            if (pred_letter != 0 && gold_is_letter) {
                return {static_cast<char>(std::tolower(pred_letter)) == gold_norm[0], "letter"};
            }
            if (!gold_is_letter) {
                // Gold given as option text.
                return match_open(prediction, gold).matched
                           ? MatchResult{true, "option-text"}
                           : MatchResult{false, "none"};
            }
            return {false, "none"};
        }
        case Framing::open:
            return match_open(prediction, gold);
    }
    return {false, "none"};
}

MatchResult match_mcq_with_options(const std::string& prediction, const std::string& gold_letter,
                                   const std::vector<std::string>& options) {
    const MatchResult by_letter = match_answer(prediction, gold_letter, Framing::mcq);
    if (by_letter.rule == "letter") return by_letter;

    // No letter found: full option-text match against the gold option.
    const std::string g = normalize(gold_letter);
    if (g.size() != 1 || g[0] < 'a' || g[0] > 'd') return {false, "none"};
    const size_t idx = static_cast<size_t>(g[0] - 'a');
    if (idx >= options.size()) return {false, "none"};
    const std::string p = normalize(prediction);
    const std::string opt = normalize(options[idx]);
    if (!opt.empty() && (p == opt || p.find(opt) != std::string::npos)) {
        return {true, "option-text"};
    }
    return {false, "none"};
}

int rank_options(ModelAdapter& adapter, const QAItem& item) {
    if (item.framing != Framing::mcq) {
        throw FramingError("rank_options expects an mcq item");
    }
    adapter.require({Capability::tokenize_with_layout, Capability::score_option});
    const TokenizedItem tokens = adapter.tokenize_with_layout(item);
    int best = 0;
    double best_score = 0.0;
    for (size_t i = 0; i < item.options.size(); ++i) {
        const double score = adapter.score_option(tokens, item.options[i]);
        if (i == 0 || score > best_score) {
            best = static_cast<int>(i);
            best_score = score;
        }
    }
    return best;
}

InconsistencyReport run_inconsistency(const std::vector<QAItem>& open_items,
                                      ModelAdapter& adapter, const TripletSource& triplets,
                                      InconsistencyMode mode, int max_new_tokens) {
    adapter.require({Capability::tokenize_with_layout, Capability::generate});
    if (mode == InconsistencyMode::rank) {
        adapter.require({Capability::score_option});
    }

    InconsistencyReport report;

    // Stage 1: open-ended pass, keep correct answers only.
    std::vector<QAItem> survivors;
    for (const auto& item : open_items) {
        if (item.framing != Framing::open) {
            throw FramingError("run_inconsistency expects open-ended items (got '" +
                               to_string(item.framing) + "' for " + item.id + ")");
        }
        const GenerateResult gen =
            adapter.generate(adapter.tokenize_with_layout(item), max_new_tokens, false);
        const MatchResult match = match_answer(gen.text, item.answer, Framing::open);
        report.records.push_back(
            {item.id, Framing::open, gen.text, item.answer, match.matched, match.rule});
        if (match.matched) survivors.push_back(item);
    }
    report.denominator = static_cast<int>(survivors.size());
    if (report.denominator == 0) {
        throw EmptyDenominatorError("no open-ended item was answered correctly");
    }

    // Stages 2 + 3: reframe each survivor and re-query both constrained forms.
    for (const auto& item : survivors) {
        const FramingTriplet triplet = triplets(item);
        triplet.validate();

        const GenerateResult yn_gen =
            adapter.generate(adapter.tokenize_with_layout(triplet.yesno), max_new_tokens, false);
        const MatchResult yn_match =
            match_answer(yn_gen.text, triplet.yesno.answer, Framing::yesno);
        report.records.push_back({item.id, Framing::yesno, yn_gen.text, triplet.yesno.answer,
                                  yn_match.matched, yn_match.rule});

        MatchResult mcq_match;
        std::string mcq_pred;
        if (mode == InconsistencyMode::rank) {
            const int chosen = rank_options(adapter, triplet.mcq);
            mcq_pred = std::string(1, static_cast<char>('A' + chosen));
            mcq_match = {chosen == triplet.mcq.answer_index(), "rank"};
        } else {
            const GenerateResult mcq_gen = adapter.generate(
                adapter.tokenize_with_layout(triplet.mcq), max_new_tokens, false);
            mcq_pred = mcq_gen.text;
            mcq_match =
                match_mcq_with_options(mcq_pred, triplet.mcq.answer_letter(), triplet.mcq.options);
        }
        report.records.push_back({item.id, Framing::mcq, mcq_pred, triplet.mcq.answer_letter(),
                                  mcq_match.matched, mcq_match.rule});

        const bool yn_failed = !yn_match.matched;
        const bool mcq_failed = !mcq_match.matched;
        if (yn_failed) ++report.yn_fail;
        if (mcq_failed) ++report.mcq_fail;
        auto& cat = report.per_category[item.task_label.empty() ? "all" : item.task_label];
        ++cat.denominator;
        if (yn_failed || mcq_failed) {
            ++report.either_fail;
            ++cat.either_fail;
        }
    }

    report.rate = static_cast<double>(report.either_fail) / report.denominator;
    return report;
}

}  // namespace framescope
