#include "ultr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "ultr/eval_metrics.hpp"
#include "ultr/parallel.hpp"

namespace ultr {

Objective objective_from_string(const std::string& s) {
    if (s == "naive") return Objective::naive;
    if (s == "ipw") return Objective::ipw;
    if (s == "eib") return Objective::eib;
    if (s == "dr") return Objective::dr;
    if (s == "oracle") return Objective::oracle;
    throw std::invalid_argument("unknown objective: " + s);
}

std::string to_string(Objective o) {
    switch (o) {
        case Objective::naive: return "naive";
        case Objective::ipw: return "ipw";
        case Objective::eib: return "eib";
        case Objective::dr: return "dr";
        case Objective::oracle: return "oracle";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "multr") return Variant::multr;
    if (s == "rand-multr") return Variant::rand_multr;
    if (s == "eib-multr") return Variant::eib_multr;
    throw std::invalid_argument("unknown variant: " + s);
}

namespace {

uint64_t factorial_capped(int n, uint64_t cap) {
    uint64_t f = 1;
    for (int i = 2; i <= n; ++i) {
        f *= static_cast<uint64_t>(i);
        if (f >= cap) return cap;
    }
    return f;
}

// k distinct non-identity permutations of 0..n-1, or all of them when fewer
// exist.
std::vector<std::vector<int>> sample_perm_indices(int n, int k, Rng& rng) {
    std::vector<std::vector<int>> out;
    if (k <= 0 || n <= 1) return out;
    const uint64_t total = factorial_capped(n, 1u << 20);
    if (total - 1 <= static_cast<uint64_t>(k)) {
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<int> identity = perm;
        do {
            if (perm != identity) out.push_back(perm);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return out;
    }
    std::set<std::vector<int>> seen;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    const std::vector<int> identity = perm;
    while (static_cast<int>(out.size()) < k) {
        rng.shuffle(perm);
        if (perm == identity || seen.count(perm)) continue;
        seen.insert(perm);
        out.push_back(perm);
    }
    return out;
}

}  // namespace

std::vector<RankedList> sample_unobserved_lists(const RankedList& observed, int k,
                                                Rng& rng) {
    if (k < 0) throw std::invalid_argument("k must be >= 0");
    const int n = static_cast<int>(observed.size());
    std::vector<RankedList> lists;
    for (const auto& perm : sample_perm_indices(n, k, rng)) {
        RankedList rl;
        rl.query_id = observed.query_id;
        rl.doc_ids.resize(n);
        for (int pos = 0; pos < n; ++pos) rl.doc_ids[pos] = observed.doc_ids[perm[pos]];
        lists.push_back(std::move(rl));
    }
    return lists;
}

std::vector<RankedList> rank_dataset(const Ranker<float>& r, const Dataset& d,
                                     int top_n) {
    std::vector<RankedList> out(d.queries.size());
    for (size_t i = 0; i < d.queries.size(); ++i) out[i] = r.rank(d.queries[i], top_n);
    return out;
}

SessionLog SessionLog::group(const std::vector<ClickSession>& log,
                             const std::vector<RankedList>& logged) {
    SessionLog grouped;
    grouped.clicks_by_query.resize(logged.size());
    std::unordered_map<std::string, size_t> index;
    for (size_t qi = 0; qi < logged.size(); ++qi) index[logged[qi].query_id] = qi;
    for (const auto& s : log) {
        const auto it = index.find(s.query_id);
        if (it == index.end())
            throw std::invalid_argument("session for unknown query " + s.query_id);
        if (s.displayed.doc_ids != logged[it->second].doc_ids)
            throw std::invalid_argument(
                "session ranking differs from the logged ranking for query " +
                s.query_id);
        grouped.clicks_by_query[it->second].push_back(s.clicks);
    }
    for (size_t qi = 0; qi < logged.size(); ++qi)
        if (grouped.clicks_by_query[qi].empty())
            throw std::invalid_argument("no sessions logged for query " +
                                        logged[qi].query_id);
    return grouped;
}

namespace {

struct QueryContext {
    const Query* query = nullptr;
    std::vector<const Document*> docs;  // observed top-N order
    std::vector<double> rel_probs;      // click model relevance probabilities
    // oracle objective: full candidate set with graded gains, since the
    // annotations are not limited to displayed documents
    std::vector<const Document*> all_docs;
    std::vector<double> gains;
};

double valid_ndcg10(const Ranker<float>& ranker, const Dataset& valid, int top_n,
                    int threads) {
    if (valid.queries.empty()) return 0.0;
    const auto rankings = rank_dataset(ranker, valid, top_n);
    const auto rep = evaluate_rankings(valid, rankings, {10}, threads);
    return rep.mean_ndcg[0];
}

}  // namespace

TrainResult train_ranker(const Dataset& train, const Dataset& valid,
                         const std::vector<RankedList>& logged,
                         const ClickModelConfig& click_cfg,
                         const Simulator<float>* simulator,
                         const PropensityEstimate* propensities,
                         const TrainConfig& cfg, const SessionLog* fixed_log) {
    const bool needs_sim = cfg.objective == Objective::eib || cfg.objective == Objective::dr;
    const bool needs_prop = cfg.objective == Objective::ipw || cfg.objective == Objective::dr;
    if (needs_sim && !simulator && !cfg.force_zero_imputation)
        throw std::invalid_argument("objective " + to_string(cfg.objective) +
                                    " requires a trained simulator");
    if (needs_prop && !propensities)
        throw std::invalid_argument("objective " + to_string(cfg.objective) +
                                    " requires propensity estimates");
    if (logged.size() != train.queries.size())
        throw std::invalid_argument("one logged ranking per training query required");
    if (train.queries.empty()) throw std::invalid_argument("empty training set");
    if (fixed_log && fixed_log->clicks_by_query.size() != logged.size())
        throw std::invalid_argument("fixed log does not cover the training queries");

    std::vector<QueryContext> ctx(train.queries.size());
    for (size_t qi = 0; qi < train.queries.size(); ++qi) {
        QueryContext& c = ctx[qi];
        c.query = &train.queries[qi];
        for (const auto& id : logged[qi].doc_ids) {
            const Document* found = nullptr;
            for (const auto& d : c.query->candidates)
                if (d.doc_id == id) {
                    found = &d;
                    break;
                }
            if (!found)
                throw std::invalid_argument("logged ranking references unknown doc " + id);
            c.docs.push_back(found);
        }
        c.rel_probs =
            list_relevance_probs(*c.query, logged[qi], click_cfg.y_max, click_cfg.epsilon);
        const double denom = std::exp2(train.y_max) - 1.0;
        for (const auto& doc : c.query->candidates) {
            c.all_docs.push_back(&doc);
            c.gains.push_back((std::exp2(doc.grade) - 1.0) / denom);
        }
    }

    std::vector<double> prop(cfg.top_n, 1.0);
    if (needs_prop) {
        for (int r = 0; r < cfg.top_n; ++r)
            prop[r] = r < static_cast<int>(propensities->p.size())
                          ? std::max(propensities->p[r], 1e-12)
                          : propensities->p.empty() ? 1.0 : propensities->p.back();
    }

    Ranker<float> ranker = Ranker<float>::create(
        train.feature_dim, cfg.hidden, cfg.dropout, cfg.seed);

    // per-thread free-running decoders for imputation
    const int pool_size =
        std::max({1, hardware_threads(), cfg.threads});
    std::vector<SimulatorForward<float>> sim_pool;
    if (needs_sim && simulator)
        for (int t = 0; t < pool_size; ++t) sim_pool.emplace_back(*simulator);

    nn::Gradients<float> grads(ranker.params);
    TrainResult result{std::move(ranker), {}};

    const size_t nq = train.queries.size();
    std::vector<size_t> all_indices(nq);
    std::iota(all_indices.begin(), all_indices.end(), 0);
    const int batch = std::min<int>(cfg.batch, static_cast<int>(nq));

    struct ListWork {
        std::vector<int> perm;            // slot shown at each position
        std::vector<uint8_t> pseudo;      // sampled pseudo clicks per position
    };
    std::vector<std::vector<ListWork>> lists(batch);
    std::vector<std::vector<uint8_t>> session_clicks(batch);

    for (int step = 0; step < cfg.steps; ++step) {
        // batch of distinct queries
        Rng batch_rng = Rng::stream(cfg.seed, hash64("batch"), step);
        std::vector<size_t> batch_ids = all_indices;
        for (int b = 0; b < batch; ++b) {
            const size_t j =
                b + static_cast<size_t>(batch_rng.uniform_int(batch_ids.size() - b));
            std::swap(batch_ids[b], batch_ids[j]);
        }
        batch_ids.resize(batch);

        // sessions for this step: fresh draws from the click model, or a
        // round-robin replay of the fixed log. Examination traces are sealed
        // away either way; only the click vector is kept.
        if (cfg.objective != Objective::oracle) {
            for (int b = 0; b < batch; ++b) {
                const auto& c = ctx[batch_ids[b]];
                if (fixed_log) {
                    const auto& per_query =
                        fixed_log->clicks_by_query[batch_ids[b]];
                    session_clicks[b] = per_query[step % per_query.size()];
                    continue;
                }
                Rng srng = Rng::stream(cfg.seed, hash64("session"), step,
                                       static_cast<uint64_t>(batch_ids[b]));
                RankedList rl;  // ids irrelevant here; clicks align to c.docs
                rl.query_id = c.query->query_id;
                rl.doc_ids.resize(c.docs.size());
                ClickSession s =
                    click_cfg.kind == ClickModelKind::cascade
                        ? cascade_simulate(rl, c.rel_probs, srng)
                        : position_based_simulate(rl, c.rel_probs, click_cfg.exam_probs,
                                                  srng);
                s.seal();
                session_clicks[b] = std::move(s.clicks);
            }
        }

        // result randomization plus fresh imputation for dr/eib
        const bool wants_lists =
            cfg.objective == Objective::eib || cfg.objective == Objective::dr;
        if (wants_lists) {
            for (int b = 0; b < batch; ++b) {
                const auto& c = ctx[batch_ids[b]];
                const int n = static_cast<int>(c.docs.size());
                Rng prng = Rng::stream(cfg.seed, hash64("perm"), step,
                                       static_cast<uint64_t>(batch_ids[b]));
                auto perms = sample_perm_indices(n, cfg.pseudo_samples, prng);
                auto& lw = lists[b];
                lw.assign(perms.size() + 1, ListWork{});
                lw[0].perm.resize(n);
                std::iota(lw[0].perm.begin(), lw[0].perm.end(), 0);  // observed
                for (size_t li = 0; li < perms.size(); ++li)
                    lw[li + 1].perm = std::move(perms[li]);
            }
            parallel_for(static_cast<size_t>(batch), cfg.threads, [&](size_t b) {
                const auto& c = ctx[batch_ids[b]];
                const int n = static_cast<int>(c.docs.size());
                std::vector<const Document*> perm_docs(n);
                std::vector<double> probs;
                for (size_t li = 0; li < lists[b].size(); ++li) {
                    auto& lw = lists[b][li];
                    if (cfg.force_zero_imputation || !simulator) {
                        lw.pseudo.assign(n, 0);
                        continue;
                    }
                    for (int pos = 0; pos < n; ++pos) perm_docs[pos] = c.docs[lw.perm[pos]];
                    Rng irng = Rng::stream(cfg.seed, hash64("impute"),
                                           (static_cast<uint64_t>(step) << 20) |
                                               (b << 8) | li,
                                           static_cast<uint64_t>(batch_ids[b]));
                    sim_pool[omp_get_thread_num()].decode(perm_docs, probs, lw.pseudo,
                                                          &irng);
                }
            });
        }

        // serial gradient accumulation in batch order
        grads.zero();
        double step_loss = 0;
        for (int b = 0; b < batch; ++b) {
            const auto& c = ctx[batch_ids[b]];
            const bool full_list = cfg.objective == Objective::oracle;
            const auto& docs = full_list ? c.all_docs : c.docs;
            const size_t n = docs.size();
            std::vector<double> weights;
            switch (cfg.objective) {
                case Objective::oracle:
                    weights = c.gains;
                    break;
                case Objective::naive:
                    weights = naive_weights(session_clicks[b]);
                    break;
                case Objective::ipw:
                    weights = ipw_weights(session_clicks[b], prop);
                    break;
                case Objective::eib:
                case Objective::dr: {
                    ListSample sample;
                    sample.obs_index = 0;
                    std::vector<std::vector<uint8_t>> pseudo;
                    for (const auto& lw : lists[b]) {
                        sample.perms.push_back(lw.perm);
                        pseudo.push_back(lw.pseudo);
                    }
                    weights = cfg.objective == Objective::dr
                                  ? dr_weights(session_clicks[b], sample, pseudo, prop)
                                  : eib_weights(session_clicks[b], sample, pseudo);
                    break;
                }
            }
            if (weights.size() != n)
                throw std::logic_error("weight vector misaligned with list");

            Rng drop_rng = Rng::stream(cfg.seed, hash64("dropout"), step,
                                       static_cast<uint64_t>(batch_ids[b]));
            nn::Tape<float> tp;
            auto scores =
                result.ranker.scores_node(tp, grads, docs, drop_rng, true);
            auto loss = tp.weighted_softmax_ce(scores, weights);
            step_loss += static_cast<double>(tp.scalar(loss));
            tp.backward(loss);
        }

        const float inv_b = 1.0f / static_cast<float>(batch);
        for (auto& g : grads.g)
            for (auto& x : g) x *= inv_b;
        if (cfg.l2 > 0) {
            const float two_l2 = static_cast<float>(2.0 * cfg.l2);
            for (size_t ti = 0; ti < result.ranker.params.tensors.size(); ++ti)
                for (size_t i = 0; i < grads.g[ti].size(); ++i)
                    grads.g[ti][i] += two_l2 * result.ranker.params.tensors[ti].v[i];
        }
        nn::adagrad_step(result.ranker.params, grads, static_cast<float>(cfg.lr));

        if ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) ||
            step + 1 == cfg.steps) {
            TrainTraceRow row;
            row.step = step + 1;
            row.loss = step_loss / batch;
            row.valid_ndcg10 =
                valid_ndcg10(result.ranker, valid, cfg.top_n, cfg.threads);
            result.trace.push_back(row);
        }
    }
    return result;
}

TrainResult run_variant(Variant v, const Dataset& train, const Dataset& valid,
                        const std::vector<RankedList>& logged,
                        const ClickModelConfig& click_cfg,
                        const Simulator<float>* trained_simulator,
                        const PropensityEstimate* propensities, TrainConfig cfg) {
    switch (v) {
        case Variant::multr:
            cfg.objective = Objective::dr;
            return train_ranker(train, valid, logged, click_cfg, trained_simulator,
                                propensities, cfg);
        case Variant::eib_multr:
            cfg.objective = Objective::eib;
            return train_ranker(train, valid, logged, click_cfg, trained_simulator,
                                propensities, cfg);
        case Variant::rand_multr: {
            cfg.objective = Objective::dr;
            const int hidden = trained_simulator ? trained_simulator->hidden : 64;
            Simulator<float> random_sim = Simulator<float>::create(
                train.feature_dim, hidden, cfg.seed ^ 0x5eedf00dULL);
            return train_ranker(train, valid, logged, click_cfg, &random_sim,
                                propensities, cfg);
        }
    }
    throw std::logic_error("unreachable variant");
}

}  // namespace ultr
