#include "framescope/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "framescope/errors.hpp"
#include "framescope/rng.hpp"

namespace framescope {

using autograd::Tape;
using autograd::Var;
using nlohmann::json;

std::string to_string(PositionPolicy p) {
    switch (p) {
        case PositionPolicy::prefix: return "prefix";
        case PositionPolicy::infix: return "infix";
        case PositionPolicy::postfix: return "postfix";
    }
    return "infix";
}

PositionPolicy position_policy_from_string(const std::string& s) {
    if (s == "prefix") return PositionPolicy::prefix;
    if (s == "infix") return PositionPolicy::infix;
    if (s == "postfix") return PositionPolicy::postfix;
    throw ConfigError("unknown position policy '" + s + "'");
}

std::string to_string(WeightingMode w) {
    return w == WeightingMode::confidence ? "confidence" : "equal";
}

WeightingMode weighting_from_string(const std::string& s) {
    if (s == "confidence") return WeightingMode::confidence;
    if (s == "equal") return WeightingMode::equal;
    throw ConfigError("unknown weighting mode '" + s + "'");
}

SoftPromptSet SoftPromptSet::init(int k, int dim, PositionPolicy position,
                                  const Eigen::RowVectorXd& mean_embedding, std::uint64_t seed,
                                  bool shared) {
    if (k < 0 || dim <= 0) {
        throw ConfigError("soft prompt set needs k >= 0 and dim > 0");
    }
    SoftPromptSet set;
    set.k = k;
    set.dim = dim;
    set.position = position;
    set.shared = shared;
    Rng rng(seed);
    auto draw = [&]() {
        Eigen::MatrixXd m(k, dim);
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < dim; ++j) m(i, j) = mean_embedding(j) + 0.02 * rng.gaussian();
        }
        return m;
    };
    set.yesno = draw();
    set.mcq = shared ? set.yesno : draw();
    return set;
}

const Eigen::MatrixXd& SoftPromptSet::for_framing(Framing f) const {
    if (f == Framing::yesno) return yesno;
    if (f == Framing::mcq) return shared ? yesno : mcq;
    throw FramingError("soft prompts exist only for constrained framings");
}

Eigen::MatrixXd& SoftPromptSet::for_framing(Framing f) {
    if (f == Framing::yesno) return yesno;
    if (f == Framing::mcq) return shared ? yesno : mcq;
    throw FramingError("soft prompts exist only for constrained framings");
}

void TrainConfig::validate() const {
    if (lr_peak <= 0 || warmup_frac <= 0 || warmup_frac >= 1 || grad_accum < 1 || epochs < 1 ||
        sample_count < 1 || k < 0 || kl_eps <= 0 || lambda_attn < 0 || ce_weight < 0 ||
        holdout_frac < 0 || holdout_frac >= 1 || eval_every < 1 || early_stop_patience < 1) {
        throw ConfigError("invalid training configuration");
    }
}

std::uint64_t TrainConfig::hash() const {
    std::ostringstream s;
    s << lr_peak << '|' << warmup_frac << '|' << beta1 << '|' << beta2 << '|' << adam_eps << '|'
      << weight_decay << '|' << batch << '|' << grad_accum << '|' << epochs << '|' << sample_count
      << '|' << lambda_attn << '|' << ce_weight << '|' << k << '|' << to_string(position) << '|'
      << share_prompts << '|' << max_image_side << '|' << to_string(weighting) << '|' << kl_eps
      << '|' << seed << '|' << holdout_frac << '|' << eval_every << '|' << early_stop_patience;
    return fnv1a(s.str());
}

int soft_insertion_point(const TokenLayout& layout, PositionPolicy policy) {
    switch (policy) {
        case PositionPolicy::prefix: return layout.image_span.end;
        case PositionPolicy::infix: return layout.question_span.end;
        case PositionPolicy::postfix: return layout.instruction_span.end;
    }
    return layout.question_span.end;
}

SoftInsertion insert_soft_tokens(const Eigen::MatrixXd& sequence, const TokenLayout& layout,
                                 const SoftPromptSet& prompts, Framing framing) {
    if (framing == Framing::open) {
        throw FramingError("open-ended inputs take no soft tokens");
    }
    const Eigen::MatrixXd& block = prompts.for_framing(framing);
    if (block.cols() != sequence.cols()) {
        throw AlignmentShapeError("soft vectors have dim " + std::to_string(block.cols()) +
                                  ", sequence has " + std::to_string(sequence.cols()));
    }
    SoftInsertion out;
    out.insert_at = soft_insertion_point(layout, prompts.position);
    const int k = static_cast<int>(block.rows());
    out.sequence.resize(sequence.rows() + k, sequence.cols());
    out.sequence.topRows(out.insert_at) = sequence.topRows(out.insert_at);
    out.sequence.middleRows(out.insert_at, k) = block;
    out.sequence.bottomRows(sequence.rows() - out.insert_at) =
        sequence.bottomRows(sequence.rows() - out.insert_at);
    out.layout = layout.shifted_for_insertion(out.insert_at, k);
    out.layout.soft_span = {out.insert_at, out.insert_at + k};
    return out;
}

// -- alignment loss -------------------------------------------------------------

PassSummary DiffPass::summary() const {
    PassSummary s;
    s.ce = ce->scalar();
    s.visual_energy = visual_energy->scalar();
    s.visual_dist = visual_dist->value.row(0).transpose();
    s.layout = layout;
    return s;
}

namespace {

// Smooth-and-renormalize so Gibbs' inequality holds exactly for the pair.
Eigen::VectorXd smooth_dist(const Eigen::VectorXd& p, double eps) {
    const double denom = 1.0 + eps * static_cast<double>(p.size());
    return (p.array() + eps) / denom;
}

}  // namespace

double alignment_loss(const PassSummary& open_pass, const PassSummary& cons_pass, double kl_eps) {
    if (open_pass.visual_dist.size() != cons_pass.visual_dist.size()) {
        throw AlignmentShapeError("passes disagree on image token count: " +
                                  std::to_string(open_pass.visual_dist.size()) + " vs " +
                                  std::to_string(cons_pass.visual_dist.size()));
    }
    const double dve = open_pass.visual_energy - cons_pass.visual_energy;
    const Eigen::VectorXd p = smooth_dist(open_pass.visual_dist, kl_eps);
    const Eigen::VectorXd q = smooth_dist(cons_pass.visual_dist, kl_eps);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
    return dve * dve + kl;
}

Var alignment_loss(Tape& tape, const PassSummary& open_pass, const DiffPass& cons_pass,
                   double kl_eps) {
    if (open_pass.visual_dist.size() != cons_pass.visual_dist->value.cols()) {
        throw AlignmentShapeError("passes disagree on image token count: " +
                                  std::to_string(open_pass.visual_dist.size()) + " vs " +
                                  std::to_string(cons_pass.visual_dist->value.cols()));
    }
    const int p_len = static_cast<int>(open_pass.visual_dist.size());
    const double denom = 1.0 + kl_eps * p_len;

    // (VE_open - VE_cons)^2, open side constant
    Var dve = tape.add_scalar(tape.scale(cons_pass.visual_energy, -1.0),
                              open_pass.visual_energy);
    Var l2 = tape.square(dve);

    // KL(P_open || P_cons) = sum p log p - sum p log q, first term constant
    const Eigen::VectorXd p = smooth_dist(open_pass.visual_dist, kl_eps);
    double p_logp = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) p_logp += p(i) * std::log(p(i));

    Var q = tape.scale(tape.add_scalar(cons_pass.visual_dist, kl_eps), 1.0 / denom);
    Var cross = tape.sum(tape.mul_const(tape.log(q), p.transpose()));
    Var kl = tape.add_scalar(tape.scale(cross, -1.0), p_logp);
    return tape.add(l2, kl);
}

double confidence_weight(TrainableVlm& model, const QAItem& open_item) {
    return model.gold_confidence(open_item);
}

// -- train step -------------------------------------------------------------------

StepLosses train_step(TrainableVlm& model, const TrainSample& sample,
                      const SoftPromptSet& prompts, const TrainConfig& config,
                      Eigen::MatrixXd& grad_yn, Eigen::MatrixXd& grad_mcq) {
    sample.triplet.validate();

    StepLosses losses;
    losses.weight = sample.weight;

    // open pass: no soft tokens, gradient-detached target
    const PassSummary open_pass = model.forward_teacher_forced(sample.triplet.open);
    losses.ce_open = open_pass.ce;

    Tape tape;
    Var soft_yn = prompts.k > 0 ? tape.parameter(prompts.for_framing(Framing::yesno)) : nullptr;
    Var soft_mcq = prompts.k > 0
                       ? (prompts.shared ? soft_yn : tape.parameter(prompts.for_framing(Framing::mcq)))
                       : nullptr;

    const DiffPass yn_pass = model.forward_diff(tape, sample.triplet.yesno, soft_yn,
                                                prompts.position);
    const DiffPass mcq_pass = model.forward_diff(tape, sample.triplet.mcq, soft_mcq,
                                                 prompts.position);

    Var align_yn = alignment_loss(tape, open_pass, yn_pass, config.kl_eps);
    Var align_mcq = alignment_loss(tape, open_pass, mcq_pass, config.kl_eps);
    losses.ce_yn = yn_pass.ce->scalar();
    losses.ce_mcq = mcq_pass.ce->scalar();
    losses.align_yn = align_yn->scalar();
    losses.align_mcq = align_mcq->scalar();

    Var ce_sum = tape.add(yn_pass.ce, mcq_pass.ce);
    Var align_sum = tape.add(align_yn, align_mcq);
    Var total = tape.add(tape.scale(ce_sum, config.ce_weight),
                         tape.scale(align_sum, config.lambda_attn * sample.weight));
    losses.total = config.ce_weight * (losses.ce_open + losses.ce_yn + losses.ce_mcq) +
                   config.lambda_attn * sample.weight * (losses.align_yn + losses.align_mcq);

    if (!std::isfinite(losses.total)) {
        losses.skipped = true;
        return losses;
    }

    tape.backward(total);
    if (soft_yn) grad_yn += soft_yn->grad;
    if (soft_mcq && !prompts.shared) grad_mcq += soft_mcq->grad;
    return losses;
}

double lr_at(int step, int total_steps, const TrainConfig& config) {
    if (step < 0 || total_steps < 1 || step > total_steps) {
        throw ScheduleError("step " + std::to_string(step) + " outside schedule of " +
                            std::to_string(total_steps));
    }
    const int warmup = static_cast<int>(std::ceil(config.warmup_frac * total_steps));
    if (step < warmup) {
        return config.lr_peak * static_cast<double>(step) / warmup;
    }
    if (total_steps == warmup) return config.lr_peak;
    const double t = static_cast<double>(step - warmup) / (total_steps - warmup);
    return config.lr_peak * 0.5 * (1.0 + std::cos(M_PI * t));
}

// -- checkpoints -------------------------------------------------------------------

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.size();
    const auto cols = rows ? j.at(0).size() : 0;
    Eigen::MatrixXd m(rows, cols);
    for (size_t i = 0; i < rows; ++i) {
        for (size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j.at(i).at(c);
        }
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json j = {
        {"format_version", ckpt.format_version},
        {"config_hash", ckpt.config_hash},
        {"micro_step", ckpt.micro_step},
        {"update", ckpt.update},
        {"best_holdout", ckpt.best_holdout},
        {"evals_since_best", ckpt.evals_since_best},
        {"evals_done", ckpt.evals_done},
        {"prompts",
         {{"k", ckpt.prompts.k},
          {"dim", ckpt.prompts.dim},
          {"position", to_string(ckpt.prompts.position)},
          {"shared", ckpt.prompts.shared},
          {"yesno", matrix_to_json(ckpt.prompts.yesno)},
          {"mcq", matrix_to_json(ckpt.prompts.mcq)}}},
        {"adam",
         {{"t", ckpt.adam.t},
          {"m_yn", matrix_to_json(ckpt.adam.m_yn)},
          {"v_yn", matrix_to_json(ckpt.adam.v_yn)},
          {"m_mcq", matrix_to_json(ckpt.adam.m_mcq)},
          {"v_mcq", matrix_to_json(ckpt.adam.v_mcq)}}},
    };
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read checkpoint " + path.string());
    }
    json j;
    in >> j;
    Checkpoint ckpt;
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != 1) {
        throw Error("unsupported checkpoint format version");
    }
    ckpt.config_hash = j.at("config_hash").get<std::uint64_t>();
    ckpt.micro_step = j.at("micro_step").get<int>();
    ckpt.update = j.at("update").get<int>();
    ckpt.best_holdout = j.at("best_holdout").get<double>();
    ckpt.evals_since_best = j.at("evals_since_best").get<int>();
    ckpt.evals_done = j.at("evals_done").get<int>();
    const json& p = j.at("prompts");
    ckpt.prompts.k = p.at("k").get<int>();
    ckpt.prompts.dim = p.at("dim").get<int>();
    ckpt.prompts.position = position_policy_from_string(p.at("position").get<std::string>());
    ckpt.prompts.shared = p.at("shared").get<bool>();
    ckpt.prompts.yesno = matrix_from_json(p.at("yesno"));
    ckpt.prompts.mcq = matrix_from_json(p.at("mcq"));
    const json& a = j.at("adam");
    ckpt.adam.t = a.at("t").get<int>();
    ckpt.adam.m_yn = matrix_from_json(a.at("m_yn"));
    ckpt.adam.v_yn = matrix_from_json(a.at("v_yn"));
    ckpt.adam.m_mcq = matrix_from_json(a.at("m_mcq"));
    ckpt.adam.v_mcq = matrix_from_json(a.at("v_mcq"));
    return ckpt;
}

// -- training loop -------------------------------------------------------------------

namespace {

void adamw_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Eigen::MatrixXd& m,
                  Eigen::MatrixXd& v, int t, double lr, const TrainConfig& config) {
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const Eigen::ArrayXXd m_hat = m.array() / bc1;
    const Eigen::ArrayXXd v_hat = v.array() / bc2;
    param.array() -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) +
                           config.weight_decay * param.array());
}

double holdout_alignment(TrainableVlm& model, const std::vector<TrainSample>& holdout,
                         const SoftPromptSet& prompts, const TrainConfig& config) {
    if (holdout.empty()) return 0.0;
    double total = 0.0;
    for (const auto& sample : holdout) {
        const PassSummary open_pass = model.forward_teacher_forced(sample.triplet.open);
        Tape tape;  // evaluation only: prompts enter as constants
        Var soft_yn =
            prompts.k > 0 ? tape.constant(prompts.for_framing(Framing::yesno)) : nullptr;
        Var soft_mcq =
            prompts.k > 0 ? tape.constant(prompts.for_framing(Framing::mcq)) : nullptr;
        const DiffPass yn = model.forward_diff(tape, sample.triplet.yesno, soft_yn,
                                               prompts.position);
        const DiffPass mcq = model.forward_diff(tape, sample.triplet.mcq, soft_mcq,
                                                prompts.position);
        total += alignment_loss(open_pass, yn.summary(), config.kl_eps) +
                 alignment_loss(open_pass, mcq.summary(), config.kl_eps);
    }
    return total / static_cast<double>(holdout.size());
}

}  // namespace

TrainResult train(TrainableVlm& model, const std::vector<TrainSample>& dataset,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
    config.validate();
    if (dataset.empty()) {
        throw EmptyDatasetError("training dataset is empty");
    }
    std::filesystem::create_directories(out_dir);
    model.prepare_dataset(dataset);

    // deterministic split + order, reproducible across resume
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(config.seed);
    shuffle_rng.shuffle(order);

    const int holdout_n = static_cast<int>(std::floor(config.holdout_frac * order.size()));
    std::vector<TrainSample> holdout;
    for (int i = 0; i < holdout_n; ++i) holdout.push_back(dataset[order[static_cast<size_t>(i)]]);
    std::vector<size_t> train_order(order.begin() + holdout_n, order.end());
    if (train_order.empty()) {
        throw EmptyDatasetError("no training samples left after holdout split");
    }
    if (static_cast<int>(train_order.size()) > config.sample_count) {
        train_order.resize(static_cast<size_t>(config.sample_count));
    }

    const int micro_total = static_cast<int>(train_order.size()) * config.epochs;
    const int total_updates =
        (micro_total + config.grad_accum - 1) / config.grad_accum;

    TrainResult result;
    SoftPromptSet prompts = SoftPromptSet::init(config.k, model.hidden_dim(), config.position,
                                                model.mean_input_embedding(), config.seed + 1,
                                                config.share_prompts);
    AdamState adam;
    adam.m_yn = Eigen::MatrixXd::Zero(config.k, model.hidden_dim());
    adam.v_yn = adam.m_yn;
    adam.m_mcq = adam.m_yn;
    adam.v_mcq = adam.m_yn;

    int start_micro = 0;
    double best_holdout = std::numeric_limits<double>::infinity();
    int evals_since_best = 0;
    int evals_done = 0;

    if (resume_from) {
        const Checkpoint ckpt = load_checkpoint(*resume_from);
        if (ckpt.config_hash != config.hash()) {
            throw ConfigError("checkpoint was written under a different configuration");
        }
        prompts = ckpt.prompts;
        adam = ckpt.adam;
        start_micro = ckpt.micro_step;
        result.updates = ckpt.update;
        best_holdout = ckpt.best_holdout == 0.0 && ckpt.evals_done == 0
                           ? std::numeric_limits<double>::infinity()
                           : ckpt.best_holdout;
        evals_since_best = ckpt.evals_since_best;
        evals_done = ckpt.evals_done;
    }

    Eigen::MatrixXd grad_yn = Eigen::MatrixXd::Zero(config.k, model.hidden_dim());
    Eigen::MatrixXd grad_mcq = grad_yn;
    int accumulated = 0;

    auto write_checkpoint = [&](int micro_step, bool keep_history) {
        Checkpoint ckpt;
        ckpt.config_hash = config.hash();
        ckpt.micro_step = micro_step;
        ckpt.update = result.updates;
        ckpt.prompts = prompts;
        ckpt.adam = adam;
        ckpt.best_holdout = std::isinf(best_holdout) ? 0.0 : best_holdout;
        ckpt.evals_since_best = evals_since_best;
        ckpt.evals_done = evals_done;
        save_checkpoint(out_dir / "checkpoint.json", ckpt);
        if (keep_history) {
            save_checkpoint(out_dir / ("checkpoint-" + std::to_string(result.updates) + ".json"),
                            ckpt);
        }
    };

    bool stopped = false;
    for (int micro = start_micro; micro < micro_total && !stopped; ++micro) {
        TrainSample sample =
            dataset[train_order[static_cast<size_t>(micro) % train_order.size()]];
        sample.weight = config.weighting == WeightingMode::confidence
                            ? confidence_weight(model, sample.triplet.open)
                            : 1.0;

        StepLosses losses;
        try {
            losses = train_step(model, sample, prompts, config, grad_yn, grad_mcq);
        } catch (const DegenerateRowError&) {
            losses.skipped = true;
        }
        if (losses.skipped) {
            ++result.skipped;
            if (result.skipped >
                std::max(1.0, config.max_skip_frac * static_cast<double>(micro_total))) {
                throw NumericalError("more than " + std::to_string(config.max_skip_frac * 100) +
                                     "% of steps skipped");
            }
        } else {
            ++accumulated;
        }
        ++result.micro_steps;

        const bool boundary = accumulated == config.grad_accum || micro + 1 == micro_total;
        double lr = 0.0;
        if (boundary && accumulated > 0) {
            lr = lr_at(std::min(result.updates + 1, total_updates), total_updates, config);
            const double inv = 1.0 / static_cast<double>(accumulated);
            grad_yn *= inv;
            grad_mcq *= inv;
            ++adam.t;
            adamw_update(prompts.yesno, grad_yn, adam.m_yn, adam.v_yn, adam.t, lr, config);
            if (!prompts.shared) {
                adamw_update(prompts.mcq, grad_mcq, adam.m_mcq, adam.v_mcq, adam.t, lr, config);
            }
            grad_yn.setZero();
            grad_mcq.setZero();
            accumulated = 0;
            ++result.updates;

            if (result.updates % config.eval_every == 0 && !holdout.empty()) {
                const double h = holdout_alignment(model, holdout, prompts, config);
                result.evals.push_back({result.updates, h});
                ++evals_done;
                if (h < best_holdout * (1.0 - 1e-4)) {
                    best_holdout = h;
                    evals_since_best = 0;
                } else {
                    ++evals_since_best;
                    if (evals_since_best >= config.early_stop_patience) {
                        stopped = true;
                        result.early_stopped = true;
                    }
                }
                write_checkpoint(micro + 1, true);
            }
        }
        result.log.push_back({micro, result.updates, lr, losses});
    }

    write_checkpoint(result.micro_steps + start_micro, false);
    result.prompts = prompts;
    return result;
}

}  // namespace framescope
