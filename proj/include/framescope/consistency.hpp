#pragma once

#include <map>
#include <string>
#include <vector>

#include "framescope/adapter.hpp"
#include "framescope/dataset.hpp"

namespace framescope {

struct MatchResult {
    bool matched = false;
    std::string rule = "none";  // which normalization fired
};

// String-matching grader. Pipeline: lowercase, strip punctuation and leading
// articles; yesno takes the first yes/no token; mcq extracts a leading option
// letter from "A", "A.", "(A)", "A)" and falls back to full option-text
// match; open is exact-after-normalization, then gold-substring containment.
MatchResult match_answer(const std::string& prediction, const std::string& gold, Framing framing);

// For open fallback matching of an mcq prediction against option text the
// caller passes the options; kept separate so match_answer stays a pure
// function of (prediction, gold, framing).
MatchResult match_mcq_with_options(const std::string& prediction, const std::string& gold_letter,
                                   const std::vector<std::string>& options);

// Argmax over options of length-normalized log-likelihood; ties resolve to
// the lowest index. Requires the score_option capability.
int rank_options(ModelAdapter& adapter, const QAItem& item);

enum class InconsistencyMode { generate, rank };

struct EvalRecord {
    std::string item_id;
    Framing framing = Framing::open;
    std::string prediction;
    std::string gold;
    bool matched = false;
    std::string match_rule;
};

struct CategoryCounts {
    int denominator = 0;
    int either_fail = 0;
};

struct InconsistencyReport {
    int denominator = 0;  // open-ended-correct survivors
    int yn_fail = 0;
    int mcq_fail = 0;
    int either_fail = 0;
    double rate = 0.0;
    std::map<std::string, CategoryCounts> per_category;
    std::vector<EvalRecord> records;
};

// Callback supplying the constrained counterparts of an open-correct item:
// typically the reframe pipeline, a pre-built triplet file, or a fixture.
using TripletSource = std::function<FramingTriplet(const QAItem& open_item)>;

// Three stages: answer open-ended and keep the correct ones; reframe the
// survivors (MCQ-origin items reuse their original options); re-query under
// both constrained framings. Rate = either_fail / denominator over stage-1
// survivors. Throws EmptyDenominatorError when nothing survives stage 1.
InconsistencyReport run_inconsistency(const std::vector<QAItem>& open_items,
                                      ModelAdapter& adapter, const TripletSource& triplets,
                                      InconsistencyMode mode, int max_new_tokens = 8);

}  // namespace framescope
