#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "ultr/rng.hpp"

namespace ultr {

struct Document {
    std::string doc_id;
    std::vector<double> features;  // dense, dataset-wide dimension D
    int grade = 0;                 // relevance label y in [0, y_max]
};

struct Query {
    std::string query_id;
    std::vector<Document> candidates;
};

struct Dataset {
    std::vector<Query> queries;
    int feature_dim = 0;
    int y_max = 4;
    std::string split_tag;  // train / valid / test / ""

    size_t num_documents() const;
    void validate() const;  // throws on invariant violations
};

// One displayed ranking: a permutation of (a prefix of) a query's candidates.
struct RankedList {
    std::string query_id;
    std::vector<std::string> doc_ids;  // length N <= 10

    size_t size() const { return doc_ids.size(); }
};

// Parses the SVMlight/LETOR text format:
//   <grade> qid:<id> <fid>:<val> ... [# comment]
// Feature ids are 1-based; absent ids fill with 0.0; feature_dim is the
// maximum feature id seen. Documents are grouped by qid in input order.
// Malformed lines and grades outside [0, y_max] raise std::runtime_error
// with the 1-based line number.
Dataset parse_letor(std::istream& in, int y_max = 4);
Dataset parse_letor_file(const std::string& path, int y_max = 4);

// Writes the same line-oriented format; parse_letor(serialize(d)) == d.
void serialize_letor(const Dataset& d, std::ostream& out);
void serialize_letor_file(const Dataset& d, const std::string& path);

bool dataset_equal(const Dataset& a, const Dataset& b);

// Synthetic dataset: features ~ N(0, 1), grade = equal-mass quantile bucket
// of a noisy linear score, so relevance is learnable from features.
// Pure function of its arguments; byte-identical for equal seeds.
Dataset generate_synthetic(int n_queries, int docs_per_query, int feature_dim,
                           int y_max, uint64_t seed);

struct SplitResult {
    Dataset train, valid, test;
};

// Query-level disjoint split; fractions must sum to 1 within 1e-9.
SplitResult split(const Dataset& d, double train_frac, double valid_frac,
                  double test_frac, uint64_t seed);

// Split manifest: one "qid<TAB>split" line per query.
void write_split_manifest(const SplitResult& s, std::ostream& out);

// Weak logging policy: linear scorer trained with pairwise hinge loss on a
// label_fraction subsample of queries. Produces the observed rankings.
struct LinearRanker {
    std::vector<double> weights;

    double score(const Document& doc) const;
    // Scores candidates and returns the top-N list; ties broken by doc_id
    // ascending.
    RankedList rank(const Query& q, int top_n) const;
};

LinearRanker train_initial_ranker(const Dataset& d, double label_fraction,
                                  uint64_t seed);

// Observed ranking per query from a scorer, top_n capped at 10.
std::vector<RankedList> logged_rankings(const Dataset& d, const LinearRanker& r,
                                        int top_n);

// Fast lookup from (query_id, doc_id) to the document.
class FeatureIndex {
  public:
    explicit FeatureIndex(const Dataset& d);
    const Document& doc(const std::string& query_id, const std::string& doc_id) const;
    const Query& query(const std::string& query_id) const;

  private:
    std::unordered_map<std::string, const Query*> queries_;
    std::unordered_map<std::string, const Document*> docs_;  // "qid\tdocid"
};

}  // namespace ultr
