#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ultr/dataset.hpp"

namespace ultr {

// DCG@k with gain (2^y - 1) and discount log2(rank + 1).
double dcg_at_k(const std::vector<int>& grades_in_rank_order, int k);

// nDCG@k: DCG normalized by the DCG of grade-descending ordering; queries
// whose grades are all zero score 0.
double ndcg_at_k(const std::vector<int>& grades_in_rank_order,
                 const std::vector<int>& ideal_grades, int k);

// ERR@k with satisfaction probability R = (2^y - 1) / 2^y_max.
double err_at_k(const std::vector<int>& grades_in_rank_order, int y_max, int k);

struct MetricReport {
    std::vector<int> ks;                         // e.g. {1, 3, 5, 10}
    std::vector<std::string> query_ids;
    std::vector<std::vector<double>> ndcg;       // [query][k index]
    std::vector<std::vector<double>> err;        // [query][k index]
    std::vector<double> mean_ndcg, mean_err;     // [k index]
};

// Metrics for one ranking per query; ranking order defines the grade
// sequence, ideal is grade-descending within the query. Parallel across
// queries; threads == 1 is the serial reference. Queries whose grades are
// all zero score 0 by convention, or drop out entirely when
// exclude_all_zero is set.
MetricReport evaluate_rankings(const Dataset& d,
                               const std::vector<RankedList>& rankings,
                               const std::vector<int>& ks, int threads,
                               bool exclude_all_zero = false);

// Two-sided Fisher randomization (sign-flip) test over paired per-query
// differences. Returns the p-value; deterministic given the seed.
double fisher_randomization_test(const std::vector<double>& per_query_a,
                                 const std::vector<double>& per_query_b,
                                 int iterations, uint64_t seed);

}  // namespace ultr
