#include "ultr/click_models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ultr/parallel.hpp"

namespace ultr {

const std::vector<uint8_t>& ClickSession::examinations() const {
    if (!oracle_enabled_ || exam_.size() != clicks.size())
        throw std::logic_error(
            "examination trace is oracle-only and not available on this session");
    return exam_;
}

void ClickSession::set_examinations(std::vector<uint8_t> exam) {
    exam_ = std::move(exam);
    oracle_enabled_ = true;
}

void ClickSession::seal() {
    exam_.clear();
    oracle_enabled_ = false;
}

double relevance_probability(int y, int y_max, double epsilon) {
    if (y_max < 1) throw std::invalid_argument("y_max must be >= 1");
    if (y < 0 || y > y_max) throw std::invalid_argument("grade y out of [0, y_max]");
    if (epsilon < 0 || epsilon >= 1) throw std::invalid_argument("epsilon must be in [0, 1)");
    const double num = std::exp2(y) - 1.0;
    const double den = std::exp2(y_max) - 1.0;
    return epsilon + (1.0 - epsilon) * num / den;
}

double position_based_examination(int rank, double eta) {
    if (rank < 1) throw std::invalid_argument("rank must be >= 1");
    if (eta < 0) throw std::invalid_argument("eta must be >= 0");
    return std::pow(1.0 / static_cast<double>(rank), eta);
}

ClickSession cascade_simulate(const RankedList& displayed,
                              const std::vector<double>& rel_probs, Rng& rng) {
    const size_t n = displayed.size();
    if (rel_probs.size() != n)
        throw std::invalid_argument("rel_probs length must match displayed list");
    ClickSession s;
    s.query_id = displayed.query_id;
    s.displayed = displayed;
    s.clicks.assign(n, 0);
    std::vector<uint8_t> exam(n, 0);
    uint8_t examined = 1;
    for (size_t i = 0; i < n; ++i) {
        exam[i] = examined;
        if (!examined) continue;
        if (rng.bernoulli(rel_probs[i])) {
            s.clicks[i] = 1;
            examined = 0;  // stop after the first click
        }
    }
    s.set_examinations(std::move(exam));
    return s;
}

ClickSession position_based_simulate(const RankedList& displayed,
                                     const std::vector<double>& rel_probs,
                                     const std::vector<double>& exam_probs,
                                     Rng& rng) {
    const size_t n = displayed.size();
    if (rel_probs.size() != n || exam_probs.size() < n)
        throw std::invalid_argument("probability vectors must cover the displayed list");
    ClickSession s;
    s.query_id = displayed.query_id;
    s.displayed = displayed;
    s.clicks.assign(n, 0);
    std::vector<uint8_t> exam(n, 0);
    for (size_t i = 0; i < n; ++i) {
        exam[i] = rng.bernoulli(exam_probs[i]) ? 1 : 0;
        if (exam[i] && rng.bernoulli(rel_probs[i])) s.clicks[i] = 1;
    }
    s.set_examinations(std::move(exam));
    return s;
}

CascadeMarginals cascade_marginals(const std::vector<double>& rel_probs) {
    CascadeMarginals m;
    m.exam_probs.resize(rel_probs.size());
    m.click_probs.resize(rel_probs.size());
    double reach = 1.0;  // P(e_i = 1) = prod_{j<i} (1 - rel_j)
    for (size_t i = 0; i < rel_probs.size(); ++i) {
        if (rel_probs[i] < 0 || rel_probs[i] > 1)
            throw std::invalid_argument("rel_probs must lie in [0, 1]");
        m.exam_probs[i] = reach;
        m.click_probs[i] = reach * rel_probs[i];
        reach *= 1.0 - rel_probs[i];
    }
    return m;
}

std::vector<double> list_relevance_probs(const Query& q, const RankedList& list,
                                         int y_max, double epsilon) {
    std::vector<double> probs;
    probs.reserve(list.size());
    for (const auto& id : list.doc_ids) {
        const Document* found = nullptr;
        for (const auto& d : q.candidates)
            if (d.doc_id == id) {
                found = &d;
                break;
            }
        if (!found) throw std::runtime_error("doc " + id + " not in query " + q.query_id);
        probs.push_back(relevance_probability(found->grade, y_max, epsilon));
    }
    return probs;
}

std::vector<ClickSession> simulate_sessions(const Dataset& d,
                                            const std::vector<RankedList>& rankings,
                                            const ClickModelConfig& cfg,
                                            int sessions_per_query, uint64_t seed,
                                            int threads) {
    if (rankings.size() != d.queries.size())
        throw std::invalid_argument("one ranking per query required");
    const size_t total = rankings.size() * static_cast<size_t>(sessions_per_query);
    std::vector<ClickSession> out(total);

    parallel_for(rankings.size(), threads, [&](size_t qi) {
        const Query& q = d.queries[qi];
        const RankedList& list = rankings[qi];
        const auto rel = list_relevance_probs(q, list, cfg.y_max, cfg.epsilon);
        const uint64_t qhash = hash64(q.query_id);
        for (int si = 0; si < sessions_per_query; ++si) {
            Rng rng = Rng::stream(seed, qhash, static_cast<uint64_t>(si));
            ClickSession s = cfg.kind == ClickModelKind::cascade
                                 ? cascade_simulate(list, rel, rng)
                                 : position_based_simulate(list, rel, cfg.exam_probs, rng);
            out[qi * sessions_per_query + si] = std::move(s);
        }
    });
    return out;
}

namespace {

void write_session_line(const ClickSession& s, const std::vector<uint8_t>& bits,
                        bool pseudo, std::ostream& out) {
    out << s.query_id << '\t';
    for (size_t i = 0; i < s.displayed.doc_ids.size(); ++i) {
        if (i) out << ',';
        out << s.displayed.doc_ids[i];
    }
    out << '\t';
    for (uint8_t b : bits) out << (b ? '1' : '0');
    if (pseudo) out << "\tpseudo=1";
    out << '\n';
}

}  // namespace

void write_click_log(const std::vector<ClickSession>& sessions, std::ostream& out) {
    for (const auto& s : sessions) write_session_line(s, s.clicks, s.pseudo, out);
}

void write_click_log_file(const std::vector<ClickSession>& sessions,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write click log: " + path);
    write_click_log(sessions, out);
}

std::vector<ClickSession> read_click_log(std::istream& in) {
    std::vector<ClickSession> sessions;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string qid, ids, bits, extra;
        if (!std::getline(ls, qid, '\t') || !std::getline(ls, ids, '\t') ||
            !std::getline(ls, bits, '\t'))
            throw std::runtime_error("bad click-log line " + std::to_string(lineno));
        ClickSession s;
        s.query_id = qid;
        s.displayed.query_id = qid;
        std::istringstream is(ids);
        std::string id;
        while (std::getline(is, id, ',')) s.displayed.doc_ids.push_back(id);
        for (char c : bits) {
            if (c != '0' && c != '1')
                throw std::runtime_error("bad click bitmap at line " + std::to_string(lineno));
            s.clicks.push_back(c == '1');
        }
        if (s.clicks.size() != s.displayed.doc_ids.size())
            throw std::runtime_error("bitmap length mismatch at line " + std::to_string(lineno));
        if (std::getline(ls, extra, '\t') && extra == "pseudo=1") s.pseudo = true;
        sessions.push_back(std::move(s));
    }
    return sessions;
}

std::vector<ClickSession> read_click_log_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open click log: " + path);
    return read_click_log(in);
}

void write_examination_log(const std::vector<ClickSession>& sessions,
                           std::ostream& out) {
    for (const auto& s : sessions) write_session_line(s, s.examinations(), false, out);
}

}  // namespace ultr
