#include "ultr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ultr {

size_t Dataset::num_documents() const {
    size_t n = 0;
    for (const auto& q : queries) n += q.candidates.size();
    return n;
}

void Dataset::validate() const {
    for (const auto& q : queries) {
        if (q.candidates.empty())
            throw std::runtime_error("query " + q.query_id + " has no candidates");
        std::vector<std::string> ids;
        for (const auto& d : q.candidates) {
            if (static_cast<int>(d.features.size()) != feature_dim)
                throw std::runtime_error("feature dim mismatch in query " + q.query_id);
            if (d.grade < 0 || d.grade > y_max)
                throw std::runtime_error("grade out of range in query " + q.query_id);
            ids.push_back(d.doc_id);
        }
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            throw std::runtime_error("duplicate doc_id in query " + q.query_id);
    }
}

Dataset parse_letor(std::istream& in, int y_max) {
    Dataset ds;
    ds.y_max = y_max;
    std::unordered_map<std::string, size_t> qindex;
    std::string line;
    size_t lineno = 0;
    int max_fid = 0;
    // features collected sparsely first; densified once the dimension is known
    std::vector<std::vector<std::pair<int, double>>> sparse;
    std::vector<std::pair<size_t, size_t>> doc_slot;  // (query idx, candidate idx)

    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        std::string body = hash == std::string::npos ? line : line.substr(0, hash);
        std::istringstream ls(body);
        std::string tok;
        if (!(ls >> tok)) continue;  // blank or comment-only line

        const auto fail = [&](const std::string& what) {
            throw std::runtime_error("parse error at line " + std::to_string(lineno) +
                                     ": " + what);
        };

        int grade = 0;
        try {
            size_t pos = 0;
            grade = std::stoi(tok, &pos);
            if (pos != tok.size()) fail("bad grade '" + tok + "'");
        } catch (const std::logic_error&) {
            fail("bad grade '" + tok + "'");
        }
        if (grade < 0 || grade > y_max)
            throw std::runtime_error("validation error at line " + std::to_string(lineno) +
                                     ": grade " + std::to_string(grade) +
                                     " outside [0, " + std::to_string(y_max) + "]");

        if (!(ls >> tok) || tok.rfind("qid:", 0) != 0 || tok.size() == 4)
            fail("expected qid:<id>");
        const std::string qid = tok.substr(4);

        std::vector<std::pair<int, double>> feats;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
                fail("bad feature token '" + tok + "'");
            int fid = 0;
            double val = 0;
            try {
                size_t p1 = 0, p2 = 0;
                fid = std::stoi(tok.substr(0, colon), &p1);
                val = std::stod(tok.substr(colon + 1), &p2);
                if (p1 != colon || p2 != tok.size() - colon - 1)
                    fail("bad feature token '" + tok + "'");
            } catch (const std::logic_error&) {
                fail("bad feature token '" + tok + "'");
            }
            if (fid <= 0) fail("feature ids must be positive");
            max_fid = std::max(max_fid, fid);
            feats.emplace_back(fid, val);
        }

        auto it = qindex.find(qid);
        if (it == qindex.end()) {
            it = qindex.emplace(qid, ds.queries.size()).first;
            ds.queries.push_back(Query{qid, {}});
        }
        Query& q = ds.queries[it->second];
        Document doc;
        doc.doc_id = qid + "_d" + std::to_string(q.candidates.size());
        doc.grade = grade;
        q.candidates.push_back(std::move(doc));
        sparse.push_back(std::move(feats));
        doc_slot.emplace_back(it->second, q.candidates.size() - 1);
    }

    ds.feature_dim = max_fid;
    for (size_t i = 0; i < sparse.size(); ++i) {
        auto& doc = ds.queries[doc_slot[i].first].candidates[doc_slot[i].second];
        doc.features.assign(max_fid, 0.0);
        for (const auto& [fid, val] : sparse[i]) doc.features[fid - 1] = val;
    }
    return ds;
}

Dataset parse_letor_file(const std::string& path, int y_max) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    return parse_letor(in, y_max);
}

void serialize_letor(const Dataset& d, std::ostream& out) {
    char buf[64];
    for (const auto& q : d.queries) {
        for (const auto& doc : q.candidates) {
            out << doc.grade << " qid:" << q.query_id;
            for (size_t f = 0; f < doc.features.size(); ++f) {
                if (doc.features[f] == 0.0) continue;
                std::snprintf(buf, sizeof buf, "%.17g", doc.features[f]);
                out << ' ' << (f + 1) << ':' << buf;
            }
            out << '\n';
        }
    }
}

void serialize_letor_file(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    serialize_letor(d, out);
}

bool dataset_equal(const Dataset& a, const Dataset& b) {
    if (a.queries.size() != b.queries.size() || a.y_max != b.y_max) return false;
    for (size_t i = 0; i < a.queries.size(); ++i) {
        const auto& qa = a.queries[i];
        const auto& qb = b.queries[i];
        if (qa.query_id != qb.query_id || qa.candidates.size() != qb.candidates.size())
            return false;
        for (size_t j = 0; j < qa.candidates.size(); ++j) {
            const auto& da = qa.candidates[j];
            const auto& db = qb.candidates[j];
            if (da.grade != db.grade) return false;
            // feature dims may differ when trailing features are all zero
            const size_t n = std::max(da.features.size(), db.features.size());
            for (size_t f = 0; f < n; ++f) {
                const double va = f < da.features.size() ? da.features[f] : 0.0;
                const double vb = f < db.features.size() ? db.features[f] : 0.0;
                if (va != vb) return false;
            }
        }
    }
    return true;
}

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

Dataset generate_synthetic(int n_queries, int docs_per_query, int feature_dim,
                           int y_max, uint64_t seed) {
    if (n_queries < 1 || docs_per_query < 1 || feature_dim < 1 || y_max < 1)
        throw std::invalid_argument("generate_synthetic: all counts must be >= 1");

    Dataset ds;
    ds.feature_dim = feature_dim;
    ds.y_max = y_max;

    // Fixed hidden direction; grade = quantile bucket of w.x plus noise.
    Rng wrng = Rng::stream(seed, hash64("weights"));
    std::vector<double> w(feature_dim);
    double norm = 0;
    for (auto& wi : w) {
        wi = wrng.normal();
        norm += wi * wi;
    }
    norm = std::sqrt(norm);
    for (auto& wi : w) wi /= norm;

    const double noise_sd = 1.0;
    const double total_sd = std::sqrt(1.0 + noise_sd * noise_sd);

    ds.queries.resize(n_queries);
    for (int qi = 0; qi < n_queries; ++qi) {
        Query& q = ds.queries[qi];
        q.query_id = "q" + std::to_string(qi + 1);
        q.candidates.resize(docs_per_query);
        for (int di = 0; di < docs_per_query; ++di) {
            Rng rng = Rng::stream(seed, static_cast<uint64_t>(qi) + 1,
                                  static_cast<uint64_t>(di) + 1);
            Document& doc = q.candidates[di];
            doc.doc_id = q.query_id + "_d" + std::to_string(di);
            doc.features.resize(feature_dim);
            double score = 0;
            for (int f = 0; f < feature_dim; ++f) {
                doc.features[f] = rng.normal();
                score += w[f] * doc.features[f];
            }
            score = (score + noise_sd * rng.normal()) / total_sd;
            const int bucket =
                static_cast<int>(std_normal_cdf(score) * (y_max + 1));
            doc.grade = std::min(y_max, std::max(0, bucket));
        }
    }
    return ds;
}

SplitResult split(const Dataset& d, double train_frac, double valid_frac,
                  double test_frac, uint64_t seed) {
    if (train_frac < 0 || valid_frac < 0 || test_frac < 0 ||
        std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must be >= 0 and sum to 1");

    const size_t n = d.queries.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::stream(seed, hash64("split"));
    rng.shuffle(order);

    const double fracs[3] = {train_frac, valid_frac, test_frac};
    size_t counts[3];
    double rema[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = fracs[i] * static_cast<double>(n);
        counts[i] = static_cast<size_t>(std::floor(exact + 1e-12));
        rema[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rema[i] > rema[best]) best = i;
        ++counts[best];
        rema[best] = -1;
        ++assigned;
    }

    SplitResult out;
    Dataset* parts[3] = {&out.train, &out.valid, &out.test};
    const char* tags[3] = {"train", "valid", "test"};
    size_t cursor = 0;
    for (int i = 0; i < 3; ++i) {
        Dataset& part = *parts[i];
        part.feature_dim = d.feature_dim;
        part.y_max = d.y_max;
        part.split_tag = tags[i];
        std::vector<size_t> taken(order.begin() + cursor,
                                  order.begin() + cursor + counts[i]);
        std::sort(taken.begin(), taken.end());  // keep original dataset order
        for (size_t idx : taken) part.queries.push_back(d.queries[idx]);
        cursor += counts[i];
    }
    return out;
}

void write_split_manifest(const SplitResult& s, std::ostream& out) {
    for (const Dataset* part : {&s.train, &s.valid, &s.test})
        for (const auto& q : part->queries)
            out << q.query_id << '\t' << part->split_tag << '\n';
}

double LinearRanker::score(const Document& doc) const {
    double s = 0;
    const size_t n = std::min(weights.size(), doc.features.size());
    for (size_t i = 0; i < n; ++i) s += weights[i] * doc.features[i];
    return s;
}

RankedList LinearRanker::rank(const Query& q, int top_n) const {
    std::vector<size_t> order(q.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> scores(q.candidates.size());
    for (size_t i = 0; i < q.candidates.size(); ++i) scores[i] = score(q.candidates[i]);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return q.candidates[a].doc_id < q.candidates[b].doc_id;
    });
    RankedList rl;
    rl.query_id = q.query_id;
    const size_t n = std::min<size_t>(top_n, order.size());
    for (size_t i = 0; i < n; ++i) rl.doc_ids.push_back(q.candidates[order[i]].doc_id);
    return rl;
}

LinearRanker train_initial_ranker(const Dataset& d, double label_fraction,
                                  uint64_t seed) {
    if (label_fraction <= 0 || label_fraction > 1)
        throw std::invalid_argument("label_fraction must be in (0, 1]");

    std::vector<size_t> order(d.queries.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::stream(seed, hash64("initial_ranker"));
    rng.shuffle(order);
    const size_t n_take = static_cast<size_t>(
        std::ceil(label_fraction * static_cast<double>(d.queries.size())));
    if (n_take == 0)
        throw std::runtime_error(
            "label fraction selects zero queries; increase label_fraction");
    order.resize(n_take);

    // Pairwise hinge on graded pairs, AdaGrad updates.
    LinearRanker model;
    model.weights.assign(d.feature_dim, 0.0);
    std::vector<double> accum(d.feature_dim, 0.0);
    const double lr = 0.5;
    const double eps = 1e-10;
    const int epochs = 30;

    std::vector<std::pair<const Document*, const Document*>> pairs;
    for (size_t qi : order) {
        const Query& q = d.queries[qi];
        for (size_t i = 0; i < q.candidates.size(); ++i)
            for (size_t j = 0; j < q.candidates.size(); ++j)
                if (q.candidates[i].grade > q.candidates[j].grade)
                    pairs.emplace_back(&q.candidates[i], &q.candidates[j]);
    }

    std::vector<double> grad(d.feature_dim);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(pairs);
        for (const auto& [hi, lo] : pairs) {
            const double margin = model.score(*hi) - model.score(*lo);
            if (margin >= 1.0) continue;
            for (int f = 0; f < d.feature_dim; ++f)
                grad[f] = lo->features[f] - hi->features[f];
            for (int f = 0; f < d.feature_dim; ++f) {
                accum[f] += grad[f] * grad[f];
                model.weights[f] -= lr * grad[f] / std::sqrt(accum[f] + eps);
            }
        }
    }
    return model;
}

std::vector<RankedList> logged_rankings(const Dataset& d, const LinearRanker& r,
                                        int top_n) {
    std::vector<RankedList> out(d.queries.size());
    for (size_t i = 0; i < d.queries.size(); ++i) out[i] = r.rank(d.queries[i], top_n);
    return out;
}

FeatureIndex::FeatureIndex(const Dataset& d) {
    for (const auto& q : d.queries) {
        queries_.emplace(q.query_id, &q);
        for (const auto& doc : q.candidates)
            docs_.emplace(q.query_id + "\t" + doc.doc_id, &doc);
    }
}

const Document& FeatureIndex::doc(const std::string& query_id,
                                  const std::string& doc_id) const {
    const auto it = docs_.find(query_id + "\t" + doc_id);
    if (it == docs_.end())
        throw std::runtime_error("unknown document " + doc_id + " in query " + query_id);
    return *it->second;
}

const Query& FeatureIndex::query(const std::string& query_id) const {
    const auto it = queries_.find(query_id);
    if (it == queries_.end()) throw std::runtime_error("unknown query " + query_id);
    return *it->second;
}

}  // namespace ultr
