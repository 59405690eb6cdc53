#include "pvp/losses.hpp"

#include <algorithm>
#include <cmath>

#include "pvp/error.hpp"

namespace pvp {
namespace {

double value_of(const ad::Var& v) { return v.value().item(); }

// Row-wise log-sum-exp of z, stable for large logits.
double log_sum_exp(std::span<const double> z) {
    const double hi = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - hi);
    return hi + std::log(s);
}

void check_square_pair(const Tensor& s) {
    if (s.rank() != 2 || s.rows() != s.cols() || s.rows() == 0) {
        throw ShapeError("contrastive similarity must be N×N, got " + shape_string(s.shape()));
    }
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

LabelSets LabelSets::from_positive(std::vector<std::size_t> positive, std::size_t n) {
    if (positive.empty()) throw ContractError("label set needs at least one positive class");
    std::sort(positive.begin(), positive.end());
    positive.erase(std::unique(positive.begin(), positive.end()), positive.end());
    if (positive.back() >= n) throw ContractError("positive class index out of range");
    LabelSets out;
    out.positive = std::move(positive);
    for (std::size_t j = 0; j < n; ++j) {
        if (!std::binary_search(out.positive.begin(), out.positive.end(), j)) out.negative.push_back(j);
    }
    return out;
}

std::vector<LabelSets> LabelSets::identity(std::size_t n) {
    std::vector<LabelSets> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(from_positive({i}, n));
    return out;
}

void check_labels(std::span<const LabelSets> labels, std::size_t n) {
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const auto& l = labels[k];
        if (l.positive.empty() || l.negative.empty()) {
            throw ContractError("row " + std::to_string(k) + " has an empty c+ or c−");
        }
        std::vector<int> seen(n, 0);
        for (auto i : l.positive) {
            if (i >= n) throw ContractError("row " + std::to_string(k) + " has a class index out of range");
            ++seen[i];
        }
        for (auto j : l.negative) {
            if (j >= n) throw ContractError("row " + std::to_string(k) + " has a class index out of range");
            ++seen[j];
        }
        if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
            throw ContractError("row " + std::to_string(k) + ": c+ and c− must partition the classes");
        }
    }
}

std::string_view variant_name(LossVariant v) { return v == LossVariant::ranking ? "RL" : "CE"; }

LossVariant parse_variant(std::string_view name) {
    if (name == "RL" || name == "rl") return LossVariant::ranking;
    if (name == "CE" || name == "ce") return LossVariant::cross_entropy;
    throw ParameterError("loss variant must be RL or CE, got '" + std::string(name) + "'");
}

void LossConfig::validate() const {
    if (!(margin > 0.0)) throw ParameterError("margin must be positive");
    if (!(tau > 0.0)) throw ParameterError("temperature τ must be positive");
    if (!(tau_ce > 0.0)) throw ParameterError("temperature τ_ce must be positive");
    if (!(gamma >= 0.0 && eta >= 0.0 && nu >= 0.0)) throw ParameterError("loss weights γ, η, ν must be non-negative");
}

ad::Var ranking_loss(const ad::Var& s, std::span<const LabelSets> labels, double margin) {
    const Tensor& sv = s.value();
    if (sv.rank() != 2 || sv.rows() != labels.size()) {
        throw ShapeError("similarity " + shape_string(sv.shape()) + " does not match " + std::to_string(labels.size()) +
                         " label rows");
    }
    check_labels(labels, sv.cols());
    const double inv_b = 1.0 / static_cast<double>(sv.rows());
    Tensor dl(sv.shape());
    double total = 0.0;
    for (std::size_t k = 0; k < sv.rows(); ++k) {
        double row = 0.0;
        for (auto i : labels[k].positive) {
            for (auto j : labels[k].negative) {
                const double h = margin - sv.at(k, i) + sv.at(k, j);
                if (h > 0.0) {
                    row += h;
                    dl.at(k, i) -= inv_b;
                    dl.at(k, j) += inv_b;
                }
            }
        }
        total += row;
    }
    return s.tape().record(Tensor::scalar(total * inv_b), {s}, [s, dl](ad::Tape& t, const Tensor& up) {
        auto& g = t.grad_buffer(s);
        const double u = up.item();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += u * dl[i];
    });
}

double ranking_loss(const Tensor& s, std::span<const LabelSets> labels, double margin) {
    ad::Tape tape;
    return value_of(ranking_loss(tape.constant(s), labels, margin));
}

ad::Var contrastive_from_similarity(const ad::Var& s, double tau) {
    if (!(tau > 0.0)) throw ParameterError("temperature τ must be positive");
    const Tensor& sv = s.value();
    check_square_pair(sv);
    const std::size_t n = sv.rows();
    Tensor z(sv.shape());
    for (std::size_t i = 0; i < sv.size(); ++i) z[i] = sv[i] / tau;

    // p_row = softmax over each row (v2t), p_col = softmax over each column (t2v).
    Tensor p_row(z.shape()), p_col(z.shape());
    double row_ce = 0.0, col_ce = 0.0;
    std::vector<double> buf(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) buf[j] = z.at(i, j);
        const double lse = log_sum_exp(buf);
        row_ce += lse - z.at(i, i);
        for (std::size_t j = 0; j < n; ++j) p_row.at(i, j) = std::exp(z.at(i, j) - lse);
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) buf[i] = z.at(i, j);
        const double lse = log_sum_exp(buf);
        col_ce += lse - z.at(j, j);
        for (std::size_t i = 0; i < n; ++i) p_col.at(i, j) = std::exp(z.at(i, j) - lse);
    }
    const double nn = static_cast<double>(n);
    const double loss = 0.5 * (row_ce / nn + col_ce / nn);

    Tensor dl(sv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double eye = i == j ? 1.0 : 0.0;
            dl.at(i, j) = 0.5 * ((p_row.at(i, j) - eye) + (p_col.at(i, j) - eye)) / (nn * tau);
        }
    }
    return s.tape().record(Tensor::scalar(loss), {s}, [s, dl](ad::Tape& t, const Tensor& up) {
        auto& g = t.grad_buffer(s);
        const double u = up.item();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += u * dl[i];
    });
}

ad::Var contrastive_vtc(const ad::Var& u, const ad::Var& e, double tau) {
    if (u.value().rank() != 2 || e.value().rank() != 2 || u.value().rows() != e.value().rows()) {
        throw ShapeError("contrastive loss needs U and E with the same row count, got " + shape_string(u.shape()) +
                         " and " + shape_string(e.shape()));
    }
    return contrastive_from_similarity(ad::matmul_nt(u, e), tau);
}

double contrastive_vtc(const Tensor& u, const Tensor& e, double tau) {
    ad::Tape tape;
    return value_of(contrastive_vtc(tape.constant(u), tape.constant(e), tau));
}

ad::Var visual_text_ranking(const ad::Var& g, const ad::Var& target, std::span<const LabelSets> labels, double margin) {
    return ranking_loss(ad::matmul_nt(g, target), labels, margin);
}

double visual_text_ranking(const Tensor& g, const Tensor& target, std::span<const LabelSets> labels, double margin) {
    ad::Tape tape;
    return value_of(visual_text_ranking(tape.constant(g), tape.constant(target), labels, margin));
}

ad::Var ce_variant(const ad::Var& s, std::span<const LabelSets> labels, double tau_ce) {
    if (!(tau_ce > 0.0)) throw ParameterError("temperature τ_ce must be positive");
    const Tensor& sv = s.value();
    if (sv.rank() != 2 || sv.rows() != labels.size()) {
        throw ShapeError("similarity " + shape_string(sv.shape()) + " does not match " + std::to_string(labels.size()) +
                         " label rows");
    }
    check_labels(labels, sv.cols());
    const double count = static_cast<double>(sv.size());
    Tensor dl(sv.shape());
    double total = 0.0;
    for (std::size_t k = 0; k < sv.rows(); ++k) {
        std::vector<double> y(sv.cols(), 0.0);
        for (auto i : labels[k].positive) y[i] = 1.0;
        for (std::size_t j = 0; j < sv.cols(); ++j) {
            const double z = sv.at(k, j) / tau_ce;
            total += softplus(z) - y[j] * z;
            dl.at(k, j) = (sigmoid(z) - y[j]) / (count * tau_ce);
        }
    }
    return s.tape().record(Tensor::scalar(total / count), {s}, [s, dl](ad::Tape& t, const Tensor& up) {
        auto& g = t.grad_buffer(s);
        const double u = up.item();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += u * dl[i];
    });
}

double ce_variant(const Tensor& s, std::span<const LabelSets> labels, double tau_ce) {
    ad::Tape tape;
    return value_of(ce_variant(tape.constant(s), labels, tau_ce));
}

LossReport total_loss(double l_vtc, double l_visual, double l_text, const LossConfig& config) {
    if (!(config.gamma >= 0.0 && config.eta >= 0.0 && config.nu >= 0.0)) {
        throw ParameterError("loss weights γ, η, ν must be non-negative");
    }
    if (!std::isfinite(l_vtc) || !std::isfinite(l_visual) || !std::isfinite(l_text)) {
        throw ContractError("loss parts must be finite");
    }
    return {l_vtc, l_visual, l_text, config.gamma * l_vtc + config.eta * l_visual + config.nu * l_text};
}

Objective stage2_objective(const ad::Var& u, const ad::Var& e, const ad::Var& g, std::span<const LabelSets> labels,
                           const LossConfig& config) {
    config.validate();
    const auto n = u.value().rows();
    const ad::Var sim = ad::matmul_nt(u, e);
    if (sim.value().rows() != n || sim.value().cols() != n || e.value().rows() != n) {
        throw ContractError("stage-2 similarity U·Eᵀ must be N×N with N = " + std::to_string(n) + ", got " +
                            shape_string(sim.shape()));
    }
    const ad::Var vtc = config.vtc == LossVariant::cross_entropy
                            ? contrastive_from_similarity(sim, config.tau)
                            : ranking_loss(sim, LabelSets::identity(n), config.margin);
    auto pair_term = [&](const ad::Var& target, LossVariant v) {
        return v == LossVariant::ranking ? visual_text_ranking(g, target, labels, config.margin)
                                         : ce_variant(ad::matmul_nt(g, target), labels, config.tau_ce);
    };
    const ad::Var visual = pair_term(u, config.visual);
    const ad::Var text = pair_term(e, config.text);
    const auto report = total_loss(value_of(vtc), value_of(visual), value_of(text), config);
    const std::vector<ad::Var> terms{vtc, visual, text};
    const std::vector<double> weights{config.gamma, config.eta, config.nu};
    return {ad::linear_combination(terms, weights), report};
}

}  // namespace pvp
