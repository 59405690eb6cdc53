#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "pvp/autodiff.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

/// Positive classes c+ of one text and the complement c−.
struct LabelSets {
    std::vector<std::size_t> positive;
    std::vector<std::size_t> negative;

    /// c− = every class in [0, n) not in c+. ContractError on an empty or out-of-range c+.
    static LabelSets from_positive(std::vector<std::size_t> positive, std::size_t n);
    /// One row per class i with c+ = {i}; used by the ranking form of the contrastive term.
    static std::vector<LabelSets> identity(std::size_t n);
};

/// ContractError unless every row partitions [0, n) into non-empty c+ and c−.
void check_labels(std::span<const LabelSets> labels, std::size_t n);

enum class LossVariant { ranking, cross_entropy };

std::string_view variant_name(LossVariant v);
LossVariant parse_variant(std::string_view name);

struct LossConfig {
    double margin = 1.0;
    double tau = 0.02;
    double gamma = 1.0;  ///< weight of L_vtc
    double eta = 1.0;    ///< weight of L_visual
    double nu = 1.0;     ///< weight of L_text
    LossVariant vtc = LossVariant::cross_entropy;
    LossVariant visual = LossVariant::ranking;
    LossVariant text = LossVariant::ranking;
    double tau_ce = 1.0;

    /// ParameterError unless m > 0, τ > 0, τ_ce > 0 and all weights ≥ 0.
    void validate() const;
};

struct LossReport {
    double l_vtc = 0.0;
    double l_visual = 0.0;
    double l_text = 0.0;
    double total = 0.0;
};

/// (1/B)·Σ_k Σ_{i∈c+} Σ_{j∈c−} max(0, m − s_ki + s_kj). Subgradient 0 at the hinge.
ad::Var ranking_loss(const ad::Var& s, std::span<const LabelSets> labels, double margin);
double ranking_loss(const Tensor& s, std::span<const LabelSets> labels, double margin);

/// ½·(row CE + column CE) of softmax(U·Eᵀ/τ) against the identity pairing.
/// ShapeError unless U and E have the same number of rows.
ad::Var contrastive_vtc(const ad::Var& u, const ad::Var& e, double tau);
double contrastive_vtc(const Tensor& u, const Tensor& e, double tau);
/// Same loss from a precomputed square similarity matrix.
ad::Var contrastive_from_similarity(const ad::Var& s, double tau);

/// ranking_loss on S = G·targetᵀ: L_visual for target = U, L_text for target = E.
ad::Var visual_text_ranking(const ad::Var& g, const ad::Var& target, std::span<const LabelSets> labels, double margin);
double visual_text_ranking(const Tensor& g, const Tensor& target, std::span<const LabelSets> labels, double margin);

/// Mean binary cross-entropy of sigmoid(S/τ_ce) against the multi-hot rows.
ad::Var ce_variant(const ad::Var& s, std::span<const LabelSets> labels, double tau_ce = 1.0);
double ce_variant(const Tensor& s, std::span<const LabelSets> labels, double tau_ce = 1.0);

/// γ·l_vtc + η·l_visual + ν·l_text. ParameterError on negative weights, ContractError on non-finite parts.
LossReport total_loss(double l_vtc, double l_visual, double l_text, const LossConfig& config);

struct Objective {
    ad::Var total;
    LossReport report;
};

/// Stage-2 objective on adapted embeddings U (N×D), E (N×D) and global texts G (B×D).
/// ContractError unless U·Eᵀ is N×N.
Objective stage2_objective(const ad::Var& u, const ad::Var& e, const ad::Var& g, std::span<const LabelSets> labels,
                           const LossConfig& config);

}  // namespace pvp
