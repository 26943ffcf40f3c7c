#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ultr/click_models.hpp"
#include "ultr/dataset.hpp"
#include "ultr/rng.hpp"

// Loss/estimator algebra: per-document Delta, naive/IPW/imputed/DR/EIB
// objectives with gradients w.r.t. document scores, closed-form bias and
// variance evaluators, and the dual-learning propensity backend.

namespace ultr {

struct PropensityEstimate {
    std::vector<double> p;  // per-rank P(e=1), each in (0, 1]
    std::string source;     // oracle | learned | uniform
};

// Elementwise max(p, floor).
PropensityEstimate clip_propensity(PropensityEstimate est, double floor);

// Delta_d = -log softmax(s)_d, log-sum-exp stabilized.
std::vector<double> delta_from_scores(const std::vector<double>& scores);

// Loss value plus gradient w.r.t. the scores that produced Delta.
struct EstimatorReport {
    double loss = 0;
    std::vector<double> dscores;
};

// sum_d w_d * Delta_d and its score gradient.
EstimatorReport weighted_delta_loss(const std::vector<double>& scores,
                                    const std::vector<double>& weights);

// Per-document weight vectors defining each objective as
// sum_d w_d * Delta_d; shared by the loss evaluators below and the trainer.
std::vector<double> naive_weights(const std::vector<uint8_t>& clicks);
std::vector<double> ipw_weights(const std::vector<uint8_t>& clicks,
                                const std::vector<double>& propensity_by_rank);

// sum over clicked documents of Delta_d.
EstimatorReport naive_loss(const std::vector<double>& scores,
                           const std::vector<uint8_t>& clicks);

// sum over clicked documents of Delta_d / p_rank(d); propensities indexed by
// position within the displayed list. Errors on propensity <= 0.
EstimatorReport ipw_loss(const std::vector<double>& scores,
                         const std::vector<uint8_t>& clicks,
                         const std::vector<double>& propensity_by_rank);

// naive_loss over imputed clicks.
EstimatorReport imputed_loss(const std::vector<double>& scores,
                             const std::vector<uint8_t>& pseudo_clicks);

// Sampled ranked lists over one query's documents. Entry perms[i][pos] is the
// document slot shown at pos; the observed list is the identity permutation
// at obs_index and must appear exactly once.
struct ListSample {
    std::vector<std::vector<int>> perms;
    int obs_index = 0;
};

// (1/S) sum_pi [ l_IMP(pi) + o_pi (l_IPW(pi_o) - l^_IPW(pi_o)) ] where
// l^_IPW is the propensity-weighted imputed loss on the observed list.
EstimatorReport dr_loss(const std::vector<double>& scores,
                        const std::vector<uint8_t>& clicks_obs,
                        const ListSample& lists,
                        const std::vector<std::vector<uint8_t>>& pseudo_clicks,
                        const std::vector<double>& propensity_by_rank);

// (1/S) sum_pi l_naive(pi): actual clicks on the observed list, pseudo
// clicks elsewhere.
EstimatorReport eib_loss(const std::vector<double>& scores,
                         const std::vector<uint8_t>& clicks_obs,
                         const ListSample& lists,
                         const std::vector<std::vector<uint8_t>>& pseudo_clicks);

std::vector<double> dr_weights(const std::vector<uint8_t>& clicks_obs,
                               const ListSample& lists,
                               const std::vector<std::vector<uint8_t>>& pseudo_clicks,
                               const std::vector<double>& propensity_by_rank);
std::vector<double> eib_weights(const std::vector<uint8_t>& clicks_obs,
                                const ListSample& lists,
                                const std::vector<std::vector<uint8_t>>& pseudo_clicks);

// Per-document quantities for one list under the verification protocol: the
// clicks vector holds the binary relevance indicator (the click a document
// would receive when examined), imputed holds the pseudo click, and delta the
// fixed per-document loss value.
struct DeviationInputs {
    std::vector<double> true_exam;  // P(e=1)
    std::vector<double> est_exam;   // estimated P(e=1)
    std::vector<uint8_t> clicks;
    std::vector<uint8_t> imputed;
    std::vector<double> delta;
};

// | sum_{d: c=1} (P - P_hat) / P_hat * Delta_d |
double ipw_bias(const DeviationInputs& in);
// sum_{d: c=1} P (1 - P) / P_hat^2 * Delta_d^2
double ipw_variance(const DeviationInputs& in);
// per-document deviations: delta_d = c_d Delta_d - chat_d Delta_d,
// rho_d = (P - P_hat) / P_hat
double dr_bias(const std::vector<DeviationInputs>& lists);
// (1/|Pi|^2) sum_pi sum_d P (1 - P) / P_hat^2 * delta_d^2
double dr_variance(const std::vector<DeviationInputs>& lists);

// Dual-learning propensity estimation: jointly trains a rank-indexed
// propensity model and a linear relevance model with symmetric
// inverse-weighted listwise losses. Returns per-rank propensities with
// rank 1 normalized to exactly 1.
struct DlaConfig {
    int steps = 1500;
    int batch = 64;
    double lr = 0.1;
    double weight_clip = 10.0;  // cap on inverse weights
    double floor = 0.01;        // final propensity floor
};

PropensityEstimate estimate_propensity_dla(const Dataset& d,
                                           const std::vector<ClickSession>& log,
                                           const DlaConfig& cfg, uint64_t seed);

// Oracle propensities for a click model: exact per-rank examination
// marginals averaged over the logged rankings.
PropensityEstimate oracle_propensity(const Dataset& d,
                                     const std::vector<RankedList>& rankings,
                                     const ClickModelConfig& cfg, int top_n);

}  // namespace ultr
