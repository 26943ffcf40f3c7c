#include "ultr/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "ultr/parallel.hpp"
#include "ultr/rng.hpp"

namespace ultr {

double dcg_at_k(const std::vector<int>& grades, int k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    double dcg = 0;
    const int n = std::min<int>(k, static_cast<int>(grades.size()));
    for (int i = 0; i < n; ++i)
        dcg += (std::exp2(grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return dcg;
}

double ndcg_at_k(const std::vector<int>& grades, const std::vector<int>& ideal,
                 int k) {
    const double idcg = dcg_at_k(ideal, k);
    if (idcg <= 0) return 0.0;  // all-zero-grade query
    return dcg_at_k(grades, k) / idcg;
}

double err_at_k(const std::vector<int>& grades, int y_max, int k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (y_max < 1) throw std::invalid_argument("y_max must be >= 1");
    const double denom = std::exp2(y_max);
    double err = 0;
    double not_satisfied = 1.0;
    const int n = std::min<int>(k, static_cast<int>(grades.size()));
    for (int r = 0; r < n; ++r) {
        const double R = (std::exp2(grades[r]) - 1.0) / denom;
        err += not_satisfied * R / static_cast<double>(r + 1);
        not_satisfied *= 1.0 - R;
    }
    return err;
}

MetricReport evaluate_rankings(const Dataset& d,
                               const std::vector<RankedList>& rankings,
                               const std::vector<int>& ks, int threads) {
    if (rankings.size() != d.queries.size())
        throw std::invalid_argument("one ranking per query required");
    MetricReport rep;
    rep.ks = ks;
    const size_t nq = d.queries.size();
    rep.query_ids.resize(nq);
    rep.ndcg.assign(nq, std::vector<double>(ks.size(), 0.0));
    rep.err.assign(nq, std::vector<double>(ks.size(), 0.0));

    parallel_for(nq, threads, [&](size_t qi) {
        const Query& q = d.queries[qi];
        rep.query_ids[qi] = q.query_id;
        std::unordered_map<std::string, int> grade_of;
        std::vector<int> ideal;
        for (const auto& doc : q.candidates) {
            grade_of.emplace(doc.doc_id, doc.grade);
            ideal.push_back(doc.grade);
        }
        std::sort(ideal.begin(), ideal.end(), std::greater<int>());
        std::vector<int> ranked;
        ranked.reserve(rankings[qi].size());
        for (const auto& id : rankings[qi].doc_ids) {
            const auto it = grade_of.find(id);
            if (it == grade_of.end())
                throw std::runtime_error("ranking references unknown doc " + id);
            ranked.push_back(it->second);
        }
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            rep.ndcg[qi][ki] = ndcg_at_k(ranked, ideal, ks[ki]);
            rep.err[qi][ki] = err_at_k(ranked, d.y_max, ks[ki]);
        }
    });

    rep.mean_ndcg.assign(ks.size(), 0.0);
    rep.mean_err.assign(ks.size(), 0.0);
    if (nq > 0) {
        for (size_t qi = 0; qi < nq; ++qi)
            for (size_t ki = 0; ki < ks.size(); ++ki) {
                rep.mean_ndcg[ki] += rep.ndcg[qi][ki];
                rep.mean_err[ki] += rep.err[qi][ki];
            }
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            rep.mean_ndcg[ki] /= static_cast<double>(nq);
            rep.mean_err[ki] /= static_cast<double>(nq);
        }
    }
    return rep;
}

double fisher_randomization_test(const std::vector<double>& a,
                                 const std::vector<double>& b, int iterations,
                                 uint64_t seed) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("fisher test: paired inputs of equal length >= 1");
    if (iterations < 1000)
        throw std::invalid_argument("fisher test: iterations must be >= 1000");

    std::vector<double> diff(a.size());
    double observed = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff[i] = a[i] - b[i];
        observed += diff[i];
    }
    observed = std::abs(observed / static_cast<double>(a.size()));

    Rng rng = Rng::stream(seed, hash64("fisher"));
    long long at_least = 0;
    for (int it = 0; it < iterations; ++it) {
        double s = 0;
        for (double di : diff) s += (rng.next_u64() & 1) ? di : -di;
        if (std::abs(s / static_cast<double>(a.size())) >= observed - 1e-15)
            ++at_least;
    }
    return static_cast<double>(at_least + 1) / static_cast<double>(iterations + 1);
}

}  // namespace ultr
