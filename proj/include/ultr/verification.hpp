#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ultr/click_models.hpp"
#include "ultr/estimators.hpp"
#include "ultr/rng.hpp"

// Brute-force oracle harness for the bias/variance theorems. Observation
// protocol (the theorem-checking semantics, fixed here because the paper
// leaves the observation distribution open): the displayed list(s) are
// deterministic; each displayed document is examined independently with its
// true probability P(e=1); a document clicks iff examined and relevant; the
// DR correction term is gated per document by that examination. Under this
// protocol the four closed-form expressions are exact, so enumeration must
// match them to float precision.

namespace ultr {

// Exhaustive outcome support for one displayed list: (bitmap, probability).
struct OutcomeDistribution {
    std::vector<std::pair<std::vector<uint8_t>, double>> outcomes;

    double total_probability() const;
};

// Click-bitmap support of a click model over one list. Cascade has N + 1
// outcomes (one click at each rank, or none); the position-based model has
// 2^N. N <= 6 guard; larger lists need Monte Carlo mode.
OutcomeDistribution enumerate_outcomes(const std::vector<double>& rel_probs,
                                       const ClickModelConfig& cfg);

// All 2^n patterns of independent Bernoulli bits (n <= 16 guard). Used for
// examination patterns in theorem checks.
OutcomeDistribution enumerate_bernoulli(const std::vector<double>& probs);

using OutcomeFn = std::function<double(const std::vector<uint8_t>&)>;

double exact_expectation(const OutcomeDistribution& dist, const OutcomeFn& fn);
double exact_variance(const OutcomeDistribution& dist, const OutcomeFn& fn);

struct TheoremInstance {
    // lists[0] is the observed list for Theorems 1-2; all lists enter the DR
    // estimator for Theorems 3-4.
    std::vector<DeviationInputs> lists;
};

struct TheoremCheck {
    int theorem = 0;
    double analytic = 0;
    double oracle = 0;
    double abs_error = 0;
    double tolerance = 0;
    bool pass = false;
};

// Compares the analytic formula against outcome enumeration for theorem
// id in 1..4. Exact-mode tolerance defaults to 1e-10.
TheoremCheck check_theorem(int theorem_id, const TheoremInstance& instance,
                           double tolerance = 1e-10);

// Monte Carlo variant for lists too long to enumerate; tolerance is
// 3 standard errors of the sampled statistic.
TheoremCheck check_theorem_monte_carlo(int theorem_id,
                                       const TheoremInstance& instance,
                                       int n_samples, uint64_t seed);

// Session mode: Delta values come from a caller-supplied function over a
// sealed ClickSession (e.g. a frozen ranker). Reading the examination trace
// inside delta_fn is a protocol violation and raises std::logic_error.
using DeltaFn = std::function<std::vector<double>(const ClickSession&)>;
TheoremCheck check_theorem_sessions(int theorem_id, const RankedList& displayed,
                                    const std::vector<double>& true_exam,
                                    const std::vector<double>& est_exam,
                                    const std::vector<uint8_t>& relevance,
                                    const DeltaFn& delta_fn,
                                    double tolerance = 1e-10);

struct InstanceOptions {
    int max_docs = 4;
    int max_lists = 3;
    bool force_rho_zero = false;    // estimated propensities = true
    bool force_delta_zero = false;  // imputed clicks = relevance clicks
    bool variance_condition = false;  // per-document (c d - chat d)^2 <= (c d)^2
    bool shared_delta = false;        // same Delta/propensities on every list
};

TheoremInstance random_instance(Rng& rng, const InstanceOptions& opts);

// CSV rows "theorem,instance,analytic,oracle,abs_error,pass" for a batch of
// randomized instances of all four theorems, parallel across instances.
struct TheoremSuiteResult {
    std::vector<TheoremCheck> checks;
    bool all_pass = true;
};

TheoremSuiteResult run_theorem_suite(int instances_per_theorem, uint64_t seed,
                                     double tolerance, int threads);

}  // namespace ultr
