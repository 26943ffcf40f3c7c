#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ultr/click_models.hpp"
#include "ultr/dataset.hpp"
#include "ultr/estimators.hpp"
#include "ultr/ranker.hpp"
#include "ultr/simulator.hpp"

// Algorithm phase 2: train the ranker under a chosen objective with offline
// result randomization, pseudo clicks re-sampled fresh every step, and click
// sessions generated on the fly from a fixed logging policy.

namespace ultr {

enum class Objective { naive, ipw, eib, dr, oracle };

Objective objective_from_string(const std::string& s);
std::string to_string(Objective o);

struct TrainConfig {
    Objective objective = Objective::dr;
    int batch = 64;
    int steps = 2000;
    double lr = 0.05;
    int pseudo_samples = 8;  // k unobserved lists per query
    double l2 = 0.0;         // ranker-side L2 coefficient
    std::vector<int> hidden = {64, 32};
    double dropout = 0.1;
    int top_n = 10;
    uint64_t seed = 1;
    int eval_every = 200;
    int threads = 0;  // imputation parallelism; gradient order stays serial
    // diagnostic switch: forces all pseudo clicks to zero (used to check the
    // dr == ipw degenerate identity at k = 0)
    bool force_zero_imputation = false;
};

// Fixed-log replay: sessions grouped per training query, visited round-robin
// per step instead of regenerating from the click model (real-log mode).
struct SessionLog {
    std::vector<std::vector<std::vector<uint8_t>>> clicks_by_query;

    static SessionLog group(const std::vector<ClickSession>& log,
                            const std::vector<RankedList>& logged);
};

struct TrainTraceRow {
    int step = 0;
    double loss = 0;
    double valid_ndcg10 = 0;
};

struct TrainResult {
    Ranker<float> ranker;
    std::vector<TrainTraceRow> trace;
};

// k distinct uniform-random permutations of the observed list, none equal to
// it; when fewer than k distinct permutations exist, all of them.
std::vector<RankedList> sample_unobserved_lists(const RankedList& observed, int k,
                                                Rng& rng);

// Requirements: simulator for eib/dr, propensities for ipw/dr. Sessions are
// regenerated per step from the click model over the logged rankings, unless
// fixed_log is given, in which case its sessions are replayed.
TrainResult train_ranker(const Dataset& train, const Dataset& valid,
                         const std::vector<RankedList>& logged,
                         const ClickModelConfig& click_cfg,
                         const Simulator<float>* simulator,
                         const PropensityEstimate* propensities,
                         const TrainConfig& cfg,
                         const SessionLog* fixed_log = nullptr);

enum class Variant { multr, rand_multr, eib_multr };

Variant variant_from_string(const std::string& s);

// multr: dr objective with the trained simulator; rand-multr: dr with a
// freshly initialized simulator (training phase skipped); eib-multr: eib
// objective with the trained simulator.
TrainResult run_variant(Variant v, const Dataset& train, const Dataset& valid,
                        const std::vector<RankedList>& logged,
                        const ClickModelConfig& click_cfg,
                        const Simulator<float>* trained_simulator,
                        const PropensityEstimate* propensities, TrainConfig cfg);

std::vector<RankedList> rank_dataset(const Ranker<float>& r, const Dataset& d,
                                     int top_n);

}  // namespace ultr
