#include "ultr/verification.hpp"

#include <cmath>
#include <stdexcept>

#include "ultr/parallel.hpp"

namespace ultr {

double OutcomeDistribution::total_probability() const {
    double s = 0;
    for (const auto& [bits, p] : outcomes) s += p;
    return s;
}

OutcomeDistribution enumerate_outcomes(const std::vector<double>& rel_probs,
                                       const ClickModelConfig& cfg) {
    const size_t n = rel_probs.size();
    if (n > 6)
        throw std::invalid_argument(
            "enumerate_outcomes supports N <= 6; use Monte Carlo mode instead");
    OutcomeDistribution dist;
    if (cfg.kind == ClickModelKind::cascade) {
        // one click at rank i (examined ranks 1..i, clicked at i), or none
        double reach = 1.0;
        for (size_t i = 0; i < n; ++i) {
            std::vector<uint8_t> bits(n, 0);
            bits[i] = 1;
            dist.outcomes.emplace_back(std::move(bits), reach * rel_probs[i]);
            reach *= 1.0 - rel_probs[i];
        }
        dist.outcomes.emplace_back(std::vector<uint8_t>(n, 0), reach);
    } else {
        if (cfg.exam_probs.size() < n)
            throw std::invalid_argument("position-based enumeration needs exam_probs");
        std::vector<double> click_p(n);
        for (size_t i = 0; i < n; ++i) click_p[i] = cfg.exam_probs[i] * rel_probs[i];
        return enumerate_bernoulli(click_p);
    }
    return dist;
}

OutcomeDistribution enumerate_bernoulli(const std::vector<double>& probs) {
    const size_t n = probs.size();
    if (n > 16)
        throw std::invalid_argument("enumerate_bernoulli supports up to 16 bits");
    OutcomeDistribution dist;
    const size_t count = size_t{1} << n;
    dist.outcomes.reserve(count);
    for (size_t mask = 0; mask < count; ++mask) {
        std::vector<uint8_t> bits(n);
        double p = 1.0;
        for (size_t i = 0; i < n; ++i) {
            bits[i] = (mask >> i) & 1;
            p *= bits[i] ? probs[i] : 1.0 - probs[i];
        }
        dist.outcomes.emplace_back(std::move(bits), p);
    }
    return dist;
}

double exact_expectation(const OutcomeDistribution& dist, const OutcomeFn& fn) {
    double e = 0;
    for (const auto& [bits, p] : dist.outcomes) e += p * fn(bits);
    return e;
}

double exact_variance(const OutcomeDistribution& dist, const OutcomeFn& fn) {
    double e = 0, e2 = 0;
    for (const auto& [bits, p] : dist.outcomes) {
        const double v = fn(bits);
        e += p * v;
        e2 += p * v * v;
    }
    return e2 - e * e;
}

namespace {

// Realized IPW loss for one examination pattern over the observed list.
double realized_ipw(const DeviationInputs& in, const std::vector<uint8_t>& exam) {
    double loss = 0;
    for (size_t i = 0; i < in.delta.size(); ++i)
        if (exam[i] && in.clicks[i]) loss += in.delta[i] / in.est_exam[i];
    return loss;
}

// Realized DR loss under the per-document observation protocol: the bits
// vector concatenates one examination bit per (list, document).
double realized_dr(const std::vector<DeviationInputs>& lists,
                   const std::vector<uint8_t>& bits) {
    double total = 0;
    size_t off = 0;
    for (const auto& in : lists) {
        for (size_t i = 0; i < in.delta.size(); ++i) {
            if (in.imputed[i]) total += in.delta[i];
            if (bits[off + i]) {
                const double dev = (in.clicks[i] ? in.delta[i] : 0.0) -
                                   (in.imputed[i] ? in.delta[i] : 0.0);
                total += dev / in.est_exam[i];
            }
        }
        off += in.delta.size();
    }
    return total / static_cast<double>(lists.size());
}

double ideal_loss(const DeviationInputs& in) {
    double loss = 0;
    for (size_t i = 0; i < in.delta.size(); ++i)
        if (in.clicks[i]) loss += in.delta[i];
    return loss;
}

double ideal_loss_randomized(const std::vector<DeviationInputs>& lists) {
    double loss = 0;
    for (const auto& in : lists) loss += ideal_loss(in);
    return loss / static_cast<double>(lists.size());
}

std::vector<double> joint_exam_probs(const std::vector<DeviationInputs>& lists) {
    std::vector<double> probs;
    for (const auto& in : lists)
        probs.insert(probs.end(), in.true_exam.begin(), in.true_exam.end());
    return probs;
}

TheoremCheck finish(int id, double analytic, double oracle, double tol) {
    TheoremCheck c;
    c.theorem = id;
    c.analytic = analytic;
    c.oracle = oracle;
    c.abs_error = std::abs(analytic - oracle);
    c.tolerance = tol;
    c.pass = c.abs_error <= tol;
    return c;
}

}  // namespace

TheoremCheck check_theorem(int theorem_id, const TheoremInstance& instance,
                           double tolerance) {
    if (instance.lists.empty())
        throw std::invalid_argument("check_theorem: instance has no lists");
    const auto& obs = instance.lists.front();

    switch (theorem_id) {
        case 1: {
            const auto dist = enumerate_bernoulli(obs.true_exam);
            const double e = exact_expectation(
                dist, [&](const std::vector<uint8_t>& bits) { return realized_ipw(obs, bits); });
            return finish(1, ipw_bias(obs), std::abs(e - ideal_loss(obs)), tolerance);
        }
        case 2: {
            const auto dist = enumerate_bernoulli(obs.true_exam);
            const double v = exact_variance(
                dist, [&](const std::vector<uint8_t>& bits) { return realized_ipw(obs, bits); });
            return finish(2, ipw_variance(obs), v, tolerance);
        }
        case 3: {
            const auto dist = enumerate_bernoulli(joint_exam_probs(instance.lists));
            const double e = exact_expectation(dist, [&](const std::vector<uint8_t>& bits) {
                return realized_dr(instance.lists, bits);
            });
            return finish(3, dr_bias(instance.lists),
                          std::abs(e - ideal_loss_randomized(instance.lists)), tolerance);
        }
        case 4: {
            const auto dist = enumerate_bernoulli(joint_exam_probs(instance.lists));
            const double v = exact_variance(dist, [&](const std::vector<uint8_t>& bits) {
                return realized_dr(instance.lists, bits);
            });
            return finish(4, dr_variance(instance.lists), v, tolerance);
        }
        default:
            throw std::invalid_argument("theorem id must be 1..4");
    }
}

TheoremCheck check_theorem_monte_carlo(int theorem_id,
                                       const TheoremInstance& instance,
                                       int n_samples, uint64_t seed) {
    if (n_samples < 100)
        throw std::invalid_argument("Monte Carlo mode needs >= 100 samples");
    const auto probs = theorem_id <= 2 ? instance.lists.front().true_exam
                                       : joint_exam_probs(instance.lists);
    Rng rng = Rng::stream(seed, hash64("theorem_mc"), theorem_id);
    std::vector<uint8_t> bits(probs.size());
    double sum = 0, sum2 = 0;
    for (int s = 0; s < n_samples; ++s) {
        for (size_t i = 0; i < probs.size(); ++i)
            bits[i] = rng.bernoulli(probs[i]) ? 1 : 0;
        const double v = theorem_id <= 2 ? realized_ipw(instance.lists.front(), bits)
                                         : realized_dr(instance.lists, bits);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n_samples;
    const double var = sum2 / n_samples - mean * mean;
    const double se_mean = std::sqrt(std::max(0.0, var) / n_samples);

    double analytic = 0, oracle = 0, tol = 0;
    switch (theorem_id) {
        case 1:
            analytic = ipw_bias(instance.lists.front());
            oracle = std::abs(mean - ideal_loss(instance.lists.front()));
            tol = 3 * se_mean;
            break;
        case 2:
            analytic = ipw_variance(instance.lists.front());
            oracle = var * n_samples / (n_samples - 1.0);
            // crude but serviceable spread for a sampled variance
            tol = 3 * std::sqrt(2.0 / (n_samples - 1.0)) * std::max(var, 1e-12);
            break;
        case 3:
            analytic = dr_bias(instance.lists);
            oracle = std::abs(mean - ideal_loss_randomized(instance.lists));
            tol = 3 * se_mean;
            break;
        case 4:
            analytic = dr_variance(instance.lists);
            oracle = var * n_samples / (n_samples - 1.0);
            tol = 3 * std::sqrt(2.0 / (n_samples - 1.0)) * std::max(var, 1e-12);
            break;
        default:
            throw std::invalid_argument("theorem id must be 1..4");
    }
    return finish(theorem_id, analytic, oracle, std::max(tol, 1e-9));
}

TheoremCheck check_theorem_sessions(int theorem_id, const RankedList& displayed,
                                    const std::vector<double>& true_exam,
                                    const std::vector<double>& est_exam,
                                    const std::vector<uint8_t>& relevance,
                                    const DeltaFn& delta_fn, double tolerance) {
    if (theorem_id != 1 && theorem_id != 2)
        throw std::invalid_argument("session mode covers Theorems 1-2");
    // Build a sealed probe session; a delta_fn that touches the examination
    // trace violates the observation protocol and throws.
    ClickSession probe;
    probe.query_id = displayed.query_id;
    probe.displayed = displayed;
    probe.clicks.assign(displayed.size(), 0);
    probe.seal();
    DeviationInputs in;
    in.true_exam = true_exam;
    in.est_exam = est_exam;
    in.clicks = relevance;
    in.imputed.assign(relevance.size(), 0);
    in.delta = delta_fn(probe);
    if (in.delta.size() != displayed.size())
        throw std::invalid_argument("delta_fn must return one value per position");
    TheoremInstance inst;
    inst.lists.push_back(std::move(in));
    return check_theorem(theorem_id, inst, tolerance);
}

TheoremInstance random_instance(Rng& rng, const InstanceOptions& opts) {
    TheoremInstance inst;
    const int n_docs = 1 + static_cast<int>(rng.uniform_int(opts.max_docs));
    const int n_lists = 1 + static_cast<int>(rng.uniform_int(opts.max_lists));

    // Relevance, Delta and propensities are document properties in the
    // condition-constrained modes, so they are shared across lists there.
    const bool shared = opts.shared_delta || opts.variance_condition;
    std::vector<double> shared_delta(n_docs), shared_p(n_docs), shared_ph(n_docs);
    std::vector<uint8_t> shared_clicks(n_docs);
    for (int i = 0; i < n_docs; ++i) {
        shared_delta[i] = rng.uniform(0.1, 2.0);
        shared_p[i] = rng.uniform(0.05, 0.95);
        shared_ph[i] = opts.force_rho_zero ? shared_p[i] : rng.uniform(0.05, 0.95);
        shared_clicks[i] = rng.bernoulli(0.5) ? 1 : 0;
    }

    for (int li = 0; li < n_lists; ++li) {
        DeviationInputs in;
        in.delta.resize(n_docs);
        in.true_exam.resize(n_docs);
        in.est_exam.resize(n_docs);
        in.clicks.resize(n_docs);
        in.imputed.resize(n_docs);
        for (int i = 0; i < n_docs; ++i) {
            if (shared) {
                in.delta[i] = shared_delta[i];
                in.true_exam[i] = shared_p[i];
                in.est_exam[i] = shared_ph[i];
                in.clicks[i] = shared_clicks[i];
            } else {
                in.delta[i] = rng.uniform(0.1, 2.0);
                in.true_exam[i] = rng.uniform(0.05, 0.95);
                in.est_exam[i] =
                    opts.force_rho_zero ? in.true_exam[i] : rng.uniform(0.05, 0.95);
                in.clicks[i] = rng.bernoulli(0.5) ? 1 : 0;
            }
            if (opts.force_delta_zero) {
                in.imputed[i] = in.clicks[i];
            } else if (opts.variance_condition) {
                // per-document condition (c Delta - chat Delta)^2 <= (c Delta)^2
                // holds exactly when no irrelevant document gets a pseudo click
                in.imputed[i] = in.clicks[i] && rng.bernoulli(0.5) ? 1 : 0;
            } else {
                in.imputed[i] = rng.bernoulli(0.5) ? 1 : 0;
            }
        }
        inst.lists.push_back(std::move(in));
    }
    return inst;
}

TheoremSuiteResult run_theorem_suite(int instances_per_theorem, uint64_t seed,
                                     double tolerance, int threads) {
    TheoremSuiteResult res;
    res.checks.resize(static_cast<size_t>(instances_per_theorem) * 4);
    parallel_for(static_cast<size_t>(instances_per_theorem), threads, [&](size_t i) {
        Rng rng = Rng::stream(seed, hash64("theorem_suite"), i);
        InstanceOptions opts;
        const TheoremInstance inst = random_instance(rng, opts);
        for (int th = 1; th <= 4; ++th)
            res.checks[i * 4 + (th - 1)] = check_theorem(th, inst, tolerance);
    });
    for (const auto& c : res.checks) res.all_pass = res.all_pass && c.pass;
    return res;
}

}  // namespace ultr
