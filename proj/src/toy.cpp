#include "framescope/toy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "framescope/errors.hpp"
#include "framescope/metrics.hpp"

namespace framescope {

// -- synthetic stacks ----------------------------------------------------------

AttentionStack random_causal_stack(Rng& rng, int n, int layers) {
    AttentionStack stack;
    stack.causal_mask = plain_causal_mask(n);
    stack.layers.reserve(static_cast<size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            double sum = 0.0;
            for (int j = 0; j <= i; ++j) {
                w(i, j) = rng.uniform() + 0.01;
                sum += w(i, j);
            }
            for (int j = 0; j <= i; ++j) w(i, j) /= sum;
        }
        stack.layers.push_back(std::move(w));
    }
    return stack;
}

HeadAttentionStack random_head_stack(Rng& rng, int n, int layers, int heads) {
    HeadAttentionStack stack;
    stack.causal_mask = plain_causal_mask(n);
    stack.layers.resize(static_cast<size_t>(layers));
    for (auto& layer : stack.layers) {
        for (int h = 0; h < heads; ++h) {
            layer.push_back(random_causal_stack(rng, n, 1).layers[0]);
        }
    }
    return stack;
}

AttentionStack uniform_causal_stack(int n, int layers) {
    AttentionStack stack;
    stack.causal_mask = plain_causal_mask(n);
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) w(i, j) = 1.0 / (i + 1);
        }
        stack.layers.push_back(std::move(w));
    }
    return stack;
}

// -- planted fixture -------------------------------------------------------------

TokenLayout planted_layout(const PlantedConfig& config, bool with_output) {
    const int p = config.grid_rows * config.grid_cols;
    TokenLayout layout;
    layout.image_span = {0, p};
    layout.question_span = {p, p + config.n_question};
    layout.instruction_span = {p + config.n_question,
                               p + config.n_question + config.n_instruction};
    if (with_output) {
        const int start = layout.instruction_span.end;
        layout.output_span = {start, start + config.n_output};
    }
    layout.grid = {config.grid_rows, config.grid_cols};
    layout.image_width = config.image_px;
    layout.image_height = config.image_px;
    return layout;
}

HeadAttentionStack planted_stack(const PlantedConfig& config, const std::string& image_ref,
                                 Framing framing, bool with_output) {
    const TokenLayout layout = planted_layout(config, with_output);
    const int p = layout.image_span.size();
    const int n = with_output ? layout.output_span.end : layout.instruction_span.end;

    Rng rng(fnv1a(image_ref) ^ config.seed);
    HeadAttentionStack stack;
    stack.causal_mask = plain_causal_mask(n);
    stack.layers.resize(static_cast<size_t>(config.layers));

    for (auto& layer : stack.layers) {
        for (int h = 0; h < config.heads; ++h) {
            Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                if (i < p) {
                    double sum = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        w(i, j) = rng.uniform() + 0.05;
                        sum += w(i, j);
                    }
                    for (int j = 0; j <= i; ++j) w(i, j) /= sum;
                    continue;
                }
                // post-image row: fixed image mass split across image keys,
                // remainder across the visible non-image prefix
                const double s = config.base_image_mass * (0.8 + 0.4 * rng.uniform());
                double img_sum = 0.0;
                for (int j = 0; j < p; ++j) {
                    w(i, j) = rng.uniform() + 0.05;
                    img_sum += w(i, j);
                }
                for (int j = 0; j < p; ++j) w(i, j) *= s / img_sum;
                double rest_sum = 0.0;
                for (int j = p; j <= i; ++j) {
                    w(i, j) = rng.uniform() + 0.05;
                    rest_sum += w(i, j);
                }
                for (int j = p; j <= i; ++j) w(i, j) *= (1.0 - s) / rest_sum;
            }
            if (framing != Framing::open) {
                // plant the deficit: image mass down by constrained_scale,
                // complement renormalized, per post-image row
                const double gamma = config.constrained_scale;
                for (int i = p; i < n; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < p; ++j) s += w(i, j);
                    if (s <= 0.0 || s >= 1.0) continue;
                    const double rest_scale = (1.0 - gamma * s) / (1.0 - s);
                    for (int j = 0; j < p; ++j) w(i, j) *= gamma;
                    for (int j = p; j <= i; ++j) w(i, j) *= rest_scale;
                }
            }
            layer.push_back(std::move(w));
        }
    }
    return stack;
}

PlantedAdapter::PlantedAdapter(const PlantedConfig& config) : config_(config) {}

bool PlantedAdapter::supports(Capability c) const {
    switch (c) {
        case Capability::tokenize_with_layout:
        case Capability::forward_capture:
        case Capability::forward_hooked:
        case Capability::generate:
            return true;
        default:
            return false;
    }
}

TokenizedItem PlantedAdapter::tokenize_with_layout(const QAItem& item) {
    TokenizedItem tokens;
    tokens.layout = planted_layout(config_, false);
    tokens.ids.assign(static_cast<size_t>(tokens.layout.instruction_span.end), 0);
    tokens.image_ref = item.image_ref;
    tokens.framing = item.framing;
    return tokens;
}

CaptureResult PlantedAdapter::forward_capture(const TokenizedItem& item) {
    CaptureResult out;
    out.attention = planted_stack(config_, item.image_ref, item.framing, false);
    out.logits = Eigen::MatrixXd::Zero(out.attention.size(), 1);
    return out;
}

GenerateResult PlantedAdapter::run(const TokenizedItem& item, const RowTransform* hook,
                                   bool capture_attention) {
    HeadAttentionStack stack = planted_stack(config_, item.image_ref, item.framing, true);
    const TokenLayout layout = planted_layout(config_, true);

    if (hook) {
        for (auto& layer : stack.layers) {
            for (size_t h = 0; h < layer.size(); ++h) {
                Eigen::MatrixXd& w = layer[h];
                for (int i = layout.image_span.end; i < stack.size(); ++i) {
                    Eigen::RowVectorXd row = w.row(i);
                    (*hook)(row, i, static_cast<int>(&layer - stack.layers.data()),
                            static_cast<int>(h));
                    w.row(i) = row;
                }
            }
        }
    }

    const RolloutResult roll = rollout(reduce_heads(stack));
    const double ve = visual_energy(roll.final, layout);

    GenerateResult result;
    result.layout = layout;
    result.ids.assign(static_cast<size_t>(stack.size()), 0);
    // planted behavior: the answer survives iff enough visual mass reaches
    // the output rows
    if (ve >= config_.answer_ve_threshold) {
        result.text = item.framing == Framing::mcq ? "A" : "yes";
    } else {
        result.text = item.framing == Framing::mcq ? "B" : "no";
    }
    if (capture_attention) result.attention = std::move(stack);
    return result;
}

GenerateResult PlantedAdapter::generate(const TokenizedItem& item, int, bool capture_attention) {
    return run(item, nullptr, capture_attention);
}

GenerateResult PlantedAdapter::generate_hooked(const TokenizedItem& item, int,
                                               const RowTransform& hook,
                                               bool capture_attention) {
    return run(item, &hook, capture_attention);
}

std::vector<FramingTriplet> PlantedAdapter::make_triplets(int count, std::uint64_t seed) {
    std::vector<FramingTriplet> triplets;
    for (int i = 0; i < count; ++i) {
        FramingTriplet t;
        t.source_id = "planted-" + std::to_string(seed) + "-" + std::to_string(i);
        const std::string image = "img-" + std::to_string(seed) + "-" + std::to_string(i);

        t.open.id = t.source_id;
        t.open.image_ref = image;
        t.open.framing = Framing::open;
        t.open.question = "what is in the scene";
        t.open.answer = "yes";  // the planted adapter answers yes/no or A/B

        t.yesno = t.open;
        t.yesno.framing = Framing::yesno;
        t.yesno.question = "is the object present";
        t.yesno.answer = "yes";

        t.mcq = t.open;
        t.mcq.framing = Framing::mcq;
        t.mcq.question = "which object is present";
        t.mcq.options = {"object", "nothing", "noise", "blur"};
        t.mcq.answer = "object";
        t.provenance = "planted";
        triplets.push_back(std::move(t));
    }
    return triplets;
}

// -- toy VLM ------------------------------------------------------------------------

namespace {
constexpr int kImageToken = 0;
constexpr int kEosToken = 1;
constexpr int kFirstWordId = 2;
}  // namespace

ToyVlm::ToyVlm(const ToyVlmConfig& config) : config_(config) {
    Rng rng(config_.seed);
    const int d = config_.hidden;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(d));
    embedding_ = rng.gaussian_matrix(config_.vocab, d, w_scale);
    positional_ = rng.gaussian_matrix(config_.max_seq, d, 0.3 * w_scale);
    patch_proj_ = rng.gaussian_matrix(5, d, 1.0);
    g_final_ = Eigen::RowVectorXd::Ones(d);
    for (int l = 0; l < config_.layers; ++l) {
        LayerWeights lw;
        lw.wq = rng.gaussian_matrix(d, d, w_scale);
        lw.wk = rng.gaussian_matrix(d, d, w_scale);
        lw.wv = rng.gaussian_matrix(d, d, w_scale);
        lw.wo = rng.gaussian_matrix(d, d, w_scale);
        lw.g1 = Eigen::RowVectorXd::Ones(d);
        lw.g2 = Eigen::RowVectorXd::Ones(d);
        lw.w1 = rng.gaussian_matrix(d, 2 * d, w_scale);
        lw.w2 = rng.gaussian_matrix(2 * d, d, w_scale / std::sqrt(2.0));
        layers_.push_back(std::move(lw));
    }
}

int ToyVlm::word_id(const std::string& word) {
    const auto it = word_table_.find(word);
    if (it != word_table_.end()) return it->second;
    const int next = kFirstWordId + static_cast<int>(word_table_.size());
    if (next < config_.vocab) {
        word_table_[word] = next;
        return next;
    }
    // table full: stable hash fallback
    return kFirstWordId + static_cast<int>(fnv1a(word) %
                                           static_cast<std::uint64_t>(config_.vocab - kFirstWordId));
}

std::vector<int> ToyVlm::tokenize_text(const std::string& text) {
    std::vector<int> ids;
    std::istringstream stream(text);
    std::string word;
    while (stream >> word) {
        std::string clean;
        for (char c : word) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (!clean.empty()) ids.push_back(word_id(clean));
    }
    return ids;
}

std::string ToyVlm::detokenize(const std::vector<int>& ids) const {
    std::vector<std::string> by_id(static_cast<size_t>(config_.vocab));
    for (const auto& [word, id] : word_table_) by_id[static_cast<size_t>(id)] = word;
    std::string out;
    for (int id : ids) {
        if (id == kEosToken) break;
        const std::string& w =
            by_id[static_cast<size_t>(id)].empty() ? "tok" + std::to_string(id)
                                                   : by_id[static_cast<size_t>(id)];
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

TokenizedItem ToyVlm::tokenize_with_layout(const QAItem& item) {
    const int p = config_.grid_rows * config_.grid_cols;
    std::string question_text = item.question;
    if (item.framing == Framing::mcq) {
        const char letters[] = {'A', 'B', 'C', 'D'};
        for (size_t i = 0; i < item.options.size() && i < 4; ++i) {
            question_text += " (";
            question_text += letters[i];
            question_text += ") " + item.options[i];
        }
    }
    std::string instruction_text;
    switch (item.framing) {
        case Framing::open: instruction_text = "answer briefly"; break;
        case Framing::yesno: instruction_text = "answer yes or no"; break;
        case Framing::mcq: instruction_text = "answer with the option letter"; break;
    }

    const std::vector<int> q_ids = tokenize_text(question_text);
    const std::vector<int> i_ids = tokenize_text(instruction_text);

    TokenizedItem tokens;
    tokens.image_ref = item.image_ref;
    tokens.framing = item.framing;
    tokens.ids.assign(static_cast<size_t>(p), kImageToken);
    tokens.ids.insert(tokens.ids.end(), q_ids.begin(), q_ids.end());
    tokens.ids.insert(tokens.ids.end(), i_ids.begin(), i_ids.end());

    tokens.layout.image_span = {0, p};
    tokens.layout.question_span = {p, p + static_cast<int>(q_ids.size())};
    tokens.layout.instruction_span = {tokens.layout.question_span.end,
                                      tokens.layout.question_span.end +
                                          static_cast<int>(i_ids.size())};
    tokens.layout.grid = {config_.grid_rows, config_.grid_cols};
    tokens.layout.image_width = config_.image_px;
    tokens.layout.image_height = config_.image_px;

    if (static_cast<int>(tokens.ids.size()) > config_.max_seq) {
        throw Error("toy sequence exceeds max_seq");
    }
    return tokens;
}

Eigen::MatrixXd ToyVlm::patch_features(const std::string& image_ref) const {
    // synthetic 8x8 image: per-patch rgb from the image seed + grid position
    Rng rng(fnv1a(image_ref) ^ config_.seed);
    const int p = config_.grid_rows * config_.grid_cols;
    Eigen::MatrixXd feats(p, 5);
    for (int r = 0; r < config_.grid_rows; ++r) {
        for (int c = 0; c < config_.grid_cols; ++c) {
            const int i = r * config_.grid_cols + c;
            feats(i, 0) = rng.uniform();
            feats(i, 1) = rng.uniform();
            feats(i, 2) = rng.uniform();
            feats(i, 3) = static_cast<double>(c) / config_.grid_cols;
            feats(i, 4) = static_cast<double>(r) / config_.grid_rows;
        }
    }
    return feats;
}

Eigen::MatrixXd ToyVlm::embed_rows(const TokenizedItem& item,
                                   const std::vector<int>& extra) const {
    const int p = item.layout.image_span.size();
    const int n = static_cast<int>(item.ids.size() + extra.size());
    if (n > config_.max_seq) {
        throw Error("toy sequence exceeds max_seq");
    }
    Eigen::MatrixXd x(n, config_.hidden);
    const Eigen::MatrixXd image_rows = patch_features(item.image_ref) * patch_proj_;
    for (int i = 0; i < n; ++i) {
        const int id = i < static_cast<int>(item.ids.size())
                           ? item.ids[static_cast<size_t>(i)]
                           : extra[static_cast<size_t>(i) - item.ids.size()];
        if (i < p) {
            x.row(i) = image_rows.row(i);
        } else {
            x.row(i) = embedding_.row(id);
        }
        x.row(i) += positional_.row(i);
    }
    return x;
}

Eigen::MatrixXd ToyVlm::embed(const TokenizedItem& item) { return embed_rows(item, {}); }

Eigen::MatrixXd ToyVlm::visual_bias_matrix(Framing framing, int n, const Span& image) const {
    Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(n, n);
    double b = 0.0;
    if (framing == Framing::yesno) b = config_.visual_bias_yesno;
    if (framing == Framing::mcq) b = config_.visual_bias_mcq;
    if (b != 0.0) {
        for (int i = image.end; i < n; ++i) {
            for (int j = image.begin; j < image.end; ++j) bias(i, j) = b;
        }
    }
    return bias;
}

ToyVlm::PlainForward ToyVlm::forward_plain(const Eigen::MatrixXd& x0, Framing framing,
                                           const Span& image, const RowTransform* hook,
                                           bool capture) const {
    const int n = static_cast<int>(x0.rows());
    const int d = config_.hidden;
    const int dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const BoolMatrix mask = plain_causal_mask(n);
    const Eigen::MatrixXd bias = visual_bias_matrix(framing, n, image);

    auto rms = [d](const Eigen::MatrixXd& m, const Eigen::RowVectorXd& g) {
        Eigen::MatrixXd out(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double r = std::sqrt(m.row(i).squaredNorm() / d + 1e-6);
            out.row(i) = (m.row(i) / r).cwiseProduct(g);
        }
        return out;
    };

    PlainForward result;
    if (capture) {
        result.attention.causal_mask = mask;
        result.attention.layers.resize(static_cast<size_t>(config_.layers));
    }

    Eigen::MatrixXd x = x0;
    for (int l = 0; l < config_.layers; ++l) {
        const LayerWeights& lw = layers_[static_cast<size_t>(l)];
        const Eigen::MatrixXd xn = rms(x, lw.g1);
        const Eigen::MatrixXd q = xn * lw.wq;
        const Eigen::MatrixXd k = xn * lw.wk;
        const Eigen::MatrixXd v = xn * lw.wv;

        Eigen::MatrixXd ctx(n, d);
        for (int h = 0; h < config_.heads; ++h) {
            const auto qh = q.middleCols(h * dh, dh);
            const auto kh = k.middleCols(h * dh, dh);
            const auto vh = v.middleCols(h * dh, dh);
            Eigen::MatrixXd scores = scale * (qh * kh.transpose()) + bias;
            Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                double max_v = -std::numeric_limits<double>::infinity();
                for (int j = 0; j <= i; ++j) max_v = std::max(max_v, scores(i, j));
                double denom = 0.0;
                for (int j = 0; j <= i; ++j) {
                    attn(i, j) = std::exp(scores(i, j) - max_v);
                    denom += attn(i, j);
                }
                for (int j = 0; j <= i; ++j) attn(i, j) /= denom;
                if (hook && i >= image.end) {
                    Eigen::RowVectorXd row = attn.row(i);
                    (*hook)(row, i, l, h);
                    attn.row(i) = row;
                }
            }
            if (capture) {
                result.attention.layers[static_cast<size_t>(l)].push_back(attn);
            }
            ctx.middleCols(h * dh, dh) = attn * vh;
        }
        x += ctx * lw.wo;
        const Eigen::MatrixXd xn2 = rms(x, lw.g2);
        Eigen::MatrixXd h1 = xn2 * lw.w1;
        h1 = (h1.array() / (1.0 + (-h1.array()).exp())).matrix();  // silu
        x += h1 * lw.w2;
    }
    result.logits = rms(x, g_final_) * embedding_.transpose();
    return result;
}

CaptureResult ToyVlm::forward_capture(const TokenizedItem& item) {
    const PlainForward fwd = forward_plain(embed_rows(item, {}), item.framing,
                                           item.layout.image_span, nullptr, true);
    return {fwd.logits, fwd.attention};
}

GenerateResult ToyVlm::generate(const TokenizedItem& item, int max_new_tokens,
                                bool capture_attention) {
    return generate_hooked(item, max_new_tokens, nullptr, capture_attention);
}

GenerateResult ToyVlm::generate_hooked(const TokenizedItem& item, int max_new_tokens,
                                       const RowTransform& hook, bool capture_attention) {
    const RowTransform* hook_ptr = hook ? &hook : nullptr;
    std::vector<int> generated;
    for (int step = 0; step < max_new_tokens; ++step) {
        const Eigen::MatrixXd x0 = embed_rows(item, generated);
        const PlainForward fwd =
            forward_plain(x0, item.framing, item.layout.image_span, hook_ptr, false);
        int best = 0;
        fwd.logits.row(fwd.logits.rows() - 1).maxCoeff(&best);
        generated.push_back(best);
        if (best == kEosToken) break;
    }

    GenerateResult result;
    result.ids = item.ids;
    result.ids.insert(result.ids.end(), generated.begin(), generated.end());
    result.layout = item.layout;
    result.layout.output_span = {static_cast<int>(item.ids.size()),
                                 static_cast<int>(result.ids.size())};
    result.text = detokenize(generated);
    if (capture_attention) {
        const Eigen::MatrixXd x0 = embed_rows(item, generated);
        result.attention = forward_plain(x0, item.framing, item.layout.image_span, hook_ptr, true)
                               .attention;
    }
    return result;
}

double ToyVlm::score_option(const TokenizedItem& item, const std::string& option) {
    const std::vector<int> option_ids = tokenize_text(option);
    if (option_ids.empty()) {
        throw EmptyGoldError("option tokenizes to nothing");
    }
    const Eigen::MatrixXd x0 = embed_rows(item, option_ids);
    const PlainForward fwd =
        forward_plain(x0, item.framing, item.layout.image_span, nullptr, false);
    const int prompt_n = static_cast<int>(item.ids.size());
    double total = 0.0;
    for (size_t k = 0; k < option_ids.size(); ++k) {
        const int predictor = prompt_n + static_cast<int>(k) - 1;
        const auto row = fwd.logits.row(predictor);
        const double max_v = row.maxCoeff();
        const double lse = max_v + std::log((row.array() - max_v).exp().sum());
        total += row(option_ids[k]) - lse;
    }
    return total / static_cast<double>(option_ids.size());
}

Eigen::RowVectorXd ToyVlm::mean_input_embedding() const { return embedding_.colwise().mean(); }

void ToyVlm::prepare_dataset(const std::vector<TrainSample>& dataset) {
    // fill the word table in dataset order so ids do not depend on where a
    // training run starts or resumes
    for (const auto& sample : dataset) {
        for (const QAItem* item : {&sample.triplet.open, &sample.triplet.yesno,
                                   &sample.triplet.mcq}) {
            tokenize_with_layout(*item);
            tokenize_text(item->answer);
        }
    }
}

std::uint64_t ToyVlm::parameter_hash() const {
    auto hash_matrix = [](std::uint64_t h, const Eigen::MatrixXd& m) {
        return fnv1a_bytes(m.data(), sizeof(double) * static_cast<size_t>(m.size()), h);
    };
    std::uint64_t h = fnv1a("toy-vlm");
    h = hash_matrix(h, embedding_);
    h = hash_matrix(h, positional_);
    h = hash_matrix(h, patch_proj_);
    h = fnv1a_bytes(g_final_.data(), sizeof(double) * static_cast<size_t>(g_final_.size()), h);
    for (const auto& lw : layers_) {
        h = hash_matrix(h, lw.wq);
        h = hash_matrix(h, lw.wk);
        h = hash_matrix(h, lw.wv);
        h = hash_matrix(h, lw.wo);
        h = fnv1a_bytes(lw.g1.data(), sizeof(double) * static_cast<size_t>(lw.g1.size()), h);
        h = fnv1a_bytes(lw.g2.data(), sizeof(double) * static_cast<size_t>(lw.g2.size()), h);
        h = hash_matrix(h, lw.w1);
        h = hash_matrix(h, lw.w2);
    }
    return h;
}

DiffPass ToyVlm::forward_diff(autograd::Tape& tape, const QAItem& item, autograd::Var soft,
                              PositionPolicy policy) {
    using autograd::Var;

    TokenizedItem tokens = tokenize_with_layout(item);
    const std::vector<int> gold_ids = tokenize_text(item.answer);
    if (gold_ids.empty()) {
        throw EmptyGoldError("gold answer tokenizes to nothing for item '" + item.id + "'");
    }

    // Embedded rows without positions; soft block spliced in, then positions
    // added over the final index space.
    const Eigen::MatrixXd image_rows = patch_features(tokens.image_ref) * patch_proj_;
    const int prompt_n = static_cast<int>(tokens.ids.size());
    const int gold_n = static_cast<int>(gold_ids.size());
    const int p = tokens.layout.image_span.size();

    Eigen::MatrixXd base(prompt_n + gold_n, config_.hidden);
    for (int i = 0; i < prompt_n + gold_n; ++i) {
        if (i < p) {
            base.row(i) = image_rows.row(i);
        } else {
            const int id = i < prompt_n ? tokens.ids[static_cast<size_t>(i)]
                                        : gold_ids[static_cast<size_t>(i - prompt_n)];
            base.row(i) = embedding_.row(id);
        }
    }

    TokenLayout layout = tokens.layout;
    layout.output_span = {prompt_n, prompt_n + gold_n};

    Var x0 = nullptr;
    int insert_at = 0;
    if (soft != nullptr) {
        insert_at = soft_insertion_point(layout, policy);
        const int k = static_cast<int>(soft->value.rows());
        layout = layout.shifted_for_insertion(insert_at, k);
        layout.soft_span = {insert_at, insert_at + k};
        Var pre = tape.constant(base.topRows(insert_at));
        Var post = tape.constant(base.bottomRows(base.rows() - insert_at));
        x0 = tape.concat_rows({pre, soft, post});
    } else {
        x0 = tape.constant(base);
    }
    const int n = static_cast<int>(x0->value.rows());
    if (n > config_.max_seq) {
        throw Error("toy sequence exceeds max_seq");
    }
    x0 = tape.add_const(x0, positional_.topRows(n));

    const BoolMatrix mask = plain_causal_mask(n);
    const Eigen::MatrixXd bias = visual_bias_matrix(item.framing, n, layout.image_span);
    const int d = config_.hidden;
    const int dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Var> mean_attention;
    Var x = x0;
    for (int l = 0; l < config_.layers; ++l) {
        const LayerWeights& lw = layers_[static_cast<size_t>(l)];
        Var xn = tape.rowwise_mul_const(tape.rms_norm(x), lw.g1);
        Var q = tape.matmul(xn, tape.constant(lw.wq));
        Var k = tape.matmul(xn, tape.constant(lw.wk));
        Var v = tape.matmul(xn, tape.constant(lw.wv));

        std::vector<Var> head_ctx;
        Var attn_sum = nullptr;
        for (int h = 0; h < config_.heads; ++h) {
            Var qh = tape.slice_cols(q, h * dh, dh);
            Var kh = tape.slice_cols(k, h * dh, dh);
            Var vh = tape.slice_cols(v, h * dh, dh);
            Var scores = tape.add_const(tape.scale(tape.matmul_nt(qh, kh), scale), bias);
            Var attn = tape.softmax_rows_masked(scores, mask);
            attn_sum = attn_sum ? tape.add(attn_sum, attn) : attn;
            head_ctx.push_back(tape.matmul(attn, vh));
        }
        mean_attention.push_back(tape.scale(attn_sum, 1.0 / config_.heads));

        // stitch head outputs back into hidden dim: ctx columns are ordered
        // by head, identical to the plain path
        Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(n, d);
        Var ctx = tape.constant(zero);
        for (int h = 0; h < config_.heads; ++h) {
            Eigen::MatrixXd expand = Eigen::MatrixXd::Zero(dh, d);
            expand.middleCols(h * dh, dh).setIdentity();
            ctx = tape.add(ctx, tape.matmul(head_ctx[static_cast<size_t>(h)],
                                            tape.constant(expand)));
        }
        x = tape.add(x, tape.matmul(ctx, tape.constant(lw.wo)));
        Var xn2 = tape.rowwise_mul_const(tape.rms_norm(x), lw.g2);
        Var h1 = tape.silu(tape.matmul(xn2, tape.constant(lw.w1)));
        x = tape.add(x, tape.matmul(h1, tape.constant(lw.w2)));
    }
    Var logits = tape.matmul_nt(tape.rowwise_mul_const(tape.rms_norm(x), g_final_),
                                tape.constant(embedding_));

    // CE: predictor row for gold position t is t - 1
    std::vector<int> rows(static_cast<size_t>(gold_n));
    std::vector<int> targets(static_cast<size_t>(gold_n));
    for (int t = 0; t < gold_n; ++t) {
        rows[static_cast<size_t>(t)] = layout.output_span.begin + t - 1;
        targets[static_cast<size_t>(t)] = gold_ids[static_cast<size_t>(t)];
    }
    Var ce = tape.cross_entropy(logits, rows, targets);

    // rollout inside the graph, same math as the analysis path
    const ReceptiveField rf = ReceptiveField::from_mask(mask);
    Eigen::MatrixXd half_identity = 0.5 * Eigen::MatrixXd::Identity(n, n);
    Var r = tape.constant(Eigen::MatrixXd::Identity(n, n));
    for (Var w : mean_attention) {
        Var a = tape.add_const(tape.scale(w, 0.5), half_identity);
        Var b = tape.row_normalize(tape.col_scale(a, rf.sizes));
        r = tape.matmul(b, r);
    }
    Var out_rows = tape.mean_rows(r, layout.output_span.begin, layout.output_span.size());
    Var raw_dist = tape.slice_cols(out_rows, layout.image_span.begin, layout.image_span.size());
    Var ve = tape.sum(raw_dist);
    Var dist = tape.divide_by_scalar(raw_dist, ve);

    DiffPass pass;
    pass.ce = ce;
    pass.visual_energy = ve;
    pass.visual_dist = dist;
    pass.layout = layout;
    return pass;
}

PassSummary ToyVlm::forward_teacher_forced(const QAItem& item) {
    autograd::Tape tape;
    const DiffPass pass = forward_diff(tape, item, nullptr, PositionPolicy::infix);
    return pass.summary();
}

double ToyVlm::gold_confidence(const QAItem& item) {
    TokenizedItem tokens = tokenize_with_layout(item);
    const std::vector<int> gold_ids = tokenize_text(item.answer);
    if (gold_ids.empty()) {
        throw EmptyGoldError("gold answer tokenizes to nothing for item '" + item.id + "'");
    }
    const Eigen::MatrixXd x0 = embed_rows(tokens, gold_ids);
    const PlainForward fwd =
        forward_plain(x0, item.framing, tokens.layout.image_span, nullptr, false);
    const int prompt_n = static_cast<int>(tokens.ids.size());
    double total = 0.0;
    for (size_t k = 0; k < gold_ids.size(); ++k) {
        const auto row = fwd.logits.row(prompt_n + static_cast<int>(k) - 1);
        const double max_v = row.maxCoeff();
        Eigen::RowVectorXd probs = (row.array() - max_v).exp();
        probs /= probs.sum();
        total += probs(gold_ids[k]);
    }
    return total / static_cast<double>(gold_ids.size());
}

}  // namespace framescope
