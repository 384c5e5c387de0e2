#include "framescope/autograd.hpp"

#include <cmath>

#include "framescope/errors.hpp"

namespace framescope::autograd {

Var Tape::fresh(Eigen::MatrixXd value, bool needs_grad) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->grad = Eigen::MatrixXd::Zero(node->value.rows(), node->value.cols());
    node->needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
}

Var Tape::constant(Eigen::MatrixXd v) { return fresh(std::move(v), false); }

Var Tape::parameter(Eigen::MatrixXd v) { return fresh(std::move(v), true); }

Var Tape::add(Var a, Var b) {
    Var out = fresh(a->value + b->value, a->needs_grad || b->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, b](Node& o) {
            if (a->needs_grad) a->grad += o.grad;
            if (b->needs_grad) b->grad += o.grad;
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    Var out = fresh(a->value - b->value, a->needs_grad || b->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, b](Node& o) {
            if (a->needs_grad) a->grad += o.grad;
            if (b->needs_grad) b->grad -= o.grad;
        };
    }
    return out;
}

Var Tape::mul(Var a, Var b) {
    Var out = fresh(a->value.cwiseProduct(b->value), a->needs_grad || b->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, b](Node& o) {
            if (a->needs_grad) a->grad += o.grad.cwiseProduct(b->value);
            if (b->needs_grad) b->grad += o.grad.cwiseProduct(a->value);
        };
    }
    return out;
}

Var Tape::scale(Var a, double c) {
    Var out = fresh(c * a->value, a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, c](Node& o) { a->grad += c * o.grad; };
    }
    return out;
}

Var Tape::add_const(Var a, const Eigen::MatrixXd& c) {
    Var out = fresh(a->value + c, a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a](Node& o) { a->grad += o.grad; };
    }
    return out;
}

Var Tape::add_scalar(Var a, double c) {
    Var out = fresh(a->value.array() + c, a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a](Node& o) { a->grad += o.grad; };
    }
    return out;
}

Var Tape::mul_const(Var a, const Eigen::MatrixXd& c) {
    Var out = fresh(a->value.cwiseProduct(c), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, c](Node& o) { a->grad += o.grad.cwiseProduct(c); };
    }
    return out;
}

Var Tape::rowwise_mul_const(Var a, const Eigen::RowVectorXd& g) {
    Eigen::MatrixXd v = a->value;
    v.array().rowwise() *= g.array();
    Var out = fresh(std::move(v), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, g](Node& o) {
            Eigen::MatrixXd t = o.grad;
            t.array().rowwise() *= g.array();
            a->grad += t;
        };
    }
    return out;
}

Var Tape::matmul(Var a, Var b) {
    Var out = fresh(a->value * b->value, a->needs_grad || b->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, b](Node& o) {
            if (a->needs_grad) a->grad.noalias() += o.grad * b->value.transpose();
            if (b->needs_grad) b->grad.noalias() += a->value.transpose() * o.grad;
        };
    }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    Var out = fresh(a->value * b->value.transpose(), a->needs_grad || b->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, b](Node& o) {
            if (a->needs_grad) a->grad.noalias() += o.grad * b->value;
            if (b->needs_grad) b->grad.noalias() += o.grad.transpose() * a->value;
        };
    }
    return out;
}

Var Tape::slice_rows(Var a, int begin, int count) {
    Var out = fresh(a->value.middleRows(begin, count), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, begin, count](Node& o) {
            a->grad.middleRows(begin, count) += o.grad;
        };
    }
    return out;
}

Var Tape::slice_cols(Var a, int begin, int count) {
    Var out = fresh(a->value.middleCols(begin, count), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, begin, count](Node& o) {
            a->grad.middleCols(begin, count) += o.grad;
        };
    }
    return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0]->value.cols();
    bool needs = false;
    for (Var p : parts) {
        if (p->value.cols() != cols) throw Error("concat_rows: column mismatch");
        rows += p->value.rows();
        needs = needs || p->needs_grad;
    }
    Eigen::MatrixXd v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        v.middleRows(at, p->value.rows()) = p->value;
        at += p->value.rows();
    }
    Var out = fresh(std::move(v), needs);
    if (out->needs_grad) {
        std::vector<Var> ps = parts;
        out->backward = [ps](Node& o) {
            Eigen::Index pos = 0;
            for (Var p : ps) {
                if (p->needs_grad) {
                    p->grad += o.grad.middleRows(pos, p->value.rows());
                }
                pos += p->value.rows();
            }
        };
    }
    return out;
}

Var Tape::mean_rows(Var a, int begin, int count) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(a->value.cols());
    for (int i = 0; i < count; ++i) mean += a->value.row(begin + i);
    mean /= static_cast<double>(count);
    Var out = fresh(mean, a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, begin, count](Node& o) {
            const double inv = 1.0 / static_cast<double>(count);
            for (int i = 0; i < count; ++i) a->grad.row(begin + i) += inv * o.grad.row(0);
        };
    }
    return out;
}

Var Tape::sum(Var a) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = a->value.sum();
    Var out = fresh(std::move(v), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a](Node& o) { a->grad.array() += o.grad(0, 0); };
    }
    return out;
}

Var Tape::square(Var a) {
    Var out = fresh(a->value.array().square(), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a](Node& o) {
            a->grad += 2.0 * o.grad.cwiseProduct(a->value);
        };
    }
    return out;
}

Var Tape::log(Var a) {
    Var out = fresh(a->value.array().log(), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a](Node& o) { a->grad += o.grad.cwiseQuotient(a->value); };
    }
    return out;
}

Var Tape::silu(Var a) {
    const Eigen::ArrayXXd x = a->value.array();
    const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x).exp());
    Var out = fresh((x * sig).matrix(), a->needs_grad);
    if (out->needs_grad) {
        Eigen::MatrixXd dsilu = (sig * (1.0 + x * (1.0 - sig))).matrix();
        out->backward = [a, dsilu](Node& o) { a->grad += o.grad.cwiseProduct(dsilu); };
    }
    return out;
}

Var Tape::divide_by_scalar(Var a, Var s) {
    const double denom = s->scalar();
    Var out = fresh(a->value / denom, a->needs_grad || s->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, s, denom](Node& o) {
            if (a->needs_grad) a->grad += o.grad / denom;
            if (s->needs_grad) {
                s->grad(0, 0) -= o.grad.cwiseProduct(a->value).sum() / (denom * denom);
            }
        };
    }
    return out;
}

Var Tape::rms_norm(Var a, double eps) {
    const Eigen::Index cols = a->value.cols();
    Eigen::VectorXd inv_rms(a->value.rows());
    for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
        inv_rms(i) = 1.0 / std::sqrt(a->value.row(i).squaredNorm() / cols + eps);
    }
    Eigen::MatrixXd v = inv_rms.asDiagonal() * a->value;
    Var out = fresh(std::move(v), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, inv_rms, cols](Node& o) {
            for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
                const double r = inv_rms(i);
                const double dot = o.grad.row(i).dot(a->value.row(i));
                a->grad.row(i) +=
                    r * o.grad.row(i) -
                    (r * r * r * dot / static_cast<double>(cols)) * a->value.row(i);
            }
        };
    }
    return out;
}

Var Tape::softmax_rows_masked(Var scores, const BoolMatrix& mask) {
    const Eigen::Index n = scores->value.rows();
    const Eigen::Index m = scores->value.cols();
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        double max_v = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < m; ++j) {
            if (mask(i, j)) max_v = std::max(max_v, scores->value(i, j));
        }
        double denom = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (mask(i, j)) {
                probs(i, j) = std::exp(scores->value(i, j) - max_v);
                denom += probs(i, j);
            }
        }
        probs.row(i) /= denom;
    }
    Var out = fresh(std::move(probs), scores->needs_grad);
    if (out->needs_grad) {
        out->backward = [scores, &out_value = out->value](Node& o) {
            for (Eigen::Index i = 0; i < o.grad.rows(); ++i) {
                const double dot = o.grad.row(i).dot(out_value.row(i));
                scores->grad.row(i) +=
                    out_value.row(i).cwiseProduct((o.grad.row(i).array() - dot).matrix());
            }
        };
    }
    return out;
}

Var Tape::row_normalize(Var a) {
    Eigen::VectorXd sums = a->value.rowwise().sum();
    for (Eigen::Index i = 0; i < sums.size(); ++i) {
        if (sums(i) < 1e-12) {
            throw DegenerateRowError("row_normalize: row " + std::to_string(i) + " sums to ~0",
                                     -1, static_cast<int>(i));
        }
    }
    Eigen::MatrixXd v = sums.cwiseInverse().asDiagonal() * a->value;
    Var out = fresh(std::move(v), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, sums, &out_value = out->value](Node& o) {
            for (Eigen::Index i = 0; i < o.grad.rows(); ++i) {
                const double dot = o.grad.row(i).dot(out_value.row(i));
                a->grad.row(i) += (o.grad.row(i).array() - dot).matrix() / sums(i);
            }
        };
    }
    return out;
}

Var Tape::col_scale(Var a, const Eigen::VectorXd& s) {
    Var out = fresh(a->value * s.asDiagonal(), a->needs_grad);
    if (out->needs_grad) {
        out->backward = [a, s](Node& o) { a->grad += o.grad * s.asDiagonal(); };
    }
    return out;
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& rows,
                        const std::vector<int>& targets) {
    if (rows.size() != targets.size() || rows.empty()) {
        throw Error("cross_entropy: rows/targets mismatch or empty");
    }
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;
    for (size_t k = 0; k < rows.size(); ++k) {
        const auto row = logits->value.row(rows[k]);
        const double max_v = row.maxCoeff();
        const double lse = max_v + std::log((row.array() - max_v).exp().sum());
        loss += lse - row(targets[k]);
    }
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = loss * inv_n;
    Var out = fresh(std::move(v), logits->needs_grad);
    if (out->needs_grad) {
        std::vector<int> rs = rows, ts = targets;
        out->backward = [logits, rs, ts, inv_n](Node& o) {
            const double g = o.grad(0, 0) * inv_n;
            for (size_t k = 0; k < rs.size(); ++k) {
                const auto row = logits->value.row(rs[k]);
                const double max_v = row.maxCoeff();
                Eigen::RowVectorXd p = (row.array() - max_v).exp();
                p /= p.sum();
                logits->grad.row(rs[k]) += g * p;
                logits->grad(rs[k], ts[k]) -= g;
            }
        };
    }
    return out;
}

void Tape::backward(Var loss) {
    if (loss->value.size() != 1) {
        throw Error("backward: loss must be scalar");
    }
    if (!loss->needs_grad) {
        return;  // nothing on the tape depends on a parameter
    }
    loss->grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.needs_grad && node.backward) node.backward(node);
    }
}

}  // namespace framescope::autograd
