#include "ultr/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ultr/neural.hpp"

namespace ultr {

PropensityEstimate clip_propensity(PropensityEstimate est, double floor) {
    if (floor <= 0 || floor > 1)
        throw std::invalid_argument("propensity floor must be in (0, 1]");
    for (auto& v : est.p) v = std::max(v, floor);
    return est;
}

std::vector<double> delta_from_scores(const std::vector<double>& scores) {
    if (scores.empty()) return {};
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double z = 0;
    for (double s : scores) z += std::exp(s - m);
    const double lse = m + std::log(z);
    std::vector<double> delta(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) delta[i] = lse - scores[i];
    return delta;
}

EstimatorReport weighted_delta_loss(const std::vector<double>& scores,
                                    const std::vector<double>& weights) {
    if (scores.size() != weights.size())
        throw std::invalid_argument("weighted_delta_loss: length mismatch");
    EstimatorReport rep;
    rep.dscores.assign(scores.size(), 0.0);
    if (scores.empty()) return rep;

    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double z = 0;
    for (double s : scores) z += std::exp(s - m);
    const double lse = m + std::log(z);

    double wsum = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        rep.loss += weights[i] * (lse - scores[i]);
        wsum += weights[i];
    }
    for (size_t i = 0; i < scores.size(); ++i) {
        const double soft = std::exp(scores[i] - lse);
        rep.dscores[i] = wsum * soft - weights[i];
    }
    return rep;
}

namespace {

void check_aligned(size_t a, size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

std::vector<double> naive_weights(const std::vector<uint8_t>& clicks) {
    std::vector<double> w(clicks.size());
    for (size_t i = 0; i < clicks.size(); ++i) w[i] = clicks[i] ? 1.0 : 0.0;
    return w;
}

std::vector<double> ipw_weights(const std::vector<uint8_t>& clicks,
                                const std::vector<double>& propensity_by_rank) {
    if (propensity_by_rank.size() < clicks.size())
        throw std::invalid_argument("ipw: propensities must cover every rank");
    std::vector<double> w(clicks.size(), 0.0);
    for (size_t i = 0; i < clicks.size(); ++i) {
        if (!clicks[i]) continue;
        if (propensity_by_rank[i] <= 0)
            throw std::invalid_argument("ipw: propensity must be > 0");
        w[i] = 1.0 / propensity_by_rank[i];
    }
    return w;
}

EstimatorReport naive_loss(const std::vector<double>& scores,
                           const std::vector<uint8_t>& clicks) {
    check_aligned(scores.size(), clicks.size(), "naive_loss");
    return weighted_delta_loss(scores, naive_weights(clicks));
}

EstimatorReport ipw_loss(const std::vector<double>& scores,
                         const std::vector<uint8_t>& clicks,
                         const std::vector<double>& propensity_by_rank) {
    check_aligned(scores.size(), clicks.size(), "ipw_loss");
    return weighted_delta_loss(scores, ipw_weights(clicks, propensity_by_rank));
}

EstimatorReport imputed_loss(const std::vector<double>& scores,
                             const std::vector<uint8_t>& pseudo_clicks) {
    check_aligned(scores.size(), pseudo_clicks.size(), "imputed_loss");
    return weighted_delta_loss(scores, naive_weights(pseudo_clicks));
}

namespace {

void check_list_sample(size_t n, const ListSample& lists,
                       const std::vector<std::vector<uint8_t>>& pseudo_clicks) {
    if (lists.perms.empty())
        throw std::invalid_argument("list sample must contain the observed list");
    if (lists.obs_index < 0 ||
        lists.obs_index >= static_cast<int>(lists.perms.size()))
        throw std::invalid_argument("observed list missing from sample");
    check_aligned(lists.perms.size(), pseudo_clicks.size(), "pseudo sessions");
    for (size_t li = 0; li < lists.perms.size(); ++li) {
        check_aligned(lists.perms[li].size(), n, "list permutation");
        check_aligned(pseudo_clicks[li].size(), n, "pseudo clicks");
    }
    const auto& obs = lists.perms[lists.obs_index];
    for (size_t pos = 0; pos < n; ++pos)
        if (obs[pos] != static_cast<int>(pos))
            throw std::invalid_argument(
                "observed list must be the identity permutation in the sample");
}

}  // namespace

std::vector<double> dr_weights(const std::vector<uint8_t>& clicks_obs,
                               const ListSample& lists,
                               const std::vector<std::vector<uint8_t>>& pseudo_clicks,
                               const std::vector<double>& propensity_by_rank) {
    const size_t n = clicks_obs.size();
    check_list_sample(n, lists, pseudo_clicks);
    if (propensity_by_rank.size() < n)
        throw std::invalid_argument("dr: propensities must cover every rank");

    const double inv_s = 1.0 / static_cast<double>(lists.perms.size());
    std::vector<double> w(n, 0.0);
    // imputed part on every sampled list
    for (size_t li = 0; li < lists.perms.size(); ++li)
        for (size_t pos = 0; pos < n; ++pos)
            if (pseudo_clicks[li][pos]) w[lists.perms[li][pos]] += inv_s;
    // correction on the observed list only
    const auto& pseudo_obs = pseudo_clicks[lists.obs_index];
    for (size_t pos = 0; pos < n; ++pos) {
        if (propensity_by_rank[pos] <= 0)
            throw std::invalid_argument("dr: propensity must be > 0");
        const double diff = (clicks_obs[pos] ? 1.0 : 0.0) - (pseudo_obs[pos] ? 1.0 : 0.0);
        w[pos] += inv_s * diff / propensity_by_rank[pos];
    }
    return w;
}

std::vector<double> eib_weights(const std::vector<uint8_t>& clicks_obs,
                                const ListSample& lists,
                                const std::vector<std::vector<uint8_t>>& pseudo_clicks) {
    const size_t n = clicks_obs.size();
    check_list_sample(n, lists, pseudo_clicks);

    const double inv_s = 1.0 / static_cast<double>(lists.perms.size());
    std::vector<double> w(n, 0.0);
    for (size_t li = 0; li < lists.perms.size(); ++li) {
        const bool is_obs = static_cast<int>(li) == lists.obs_index;
        for (size_t pos = 0; pos < n; ++pos) {
            const uint8_t c = is_obs ? clicks_obs[pos] : pseudo_clicks[li][pos];
            if (c) w[lists.perms[li][pos]] += inv_s;
        }
    }
    return w;
}

EstimatorReport dr_loss(const std::vector<double>& scores,
                        const std::vector<uint8_t>& clicks_obs,
                        const ListSample& lists,
                        const std::vector<std::vector<uint8_t>>& pseudo_clicks,
                        const std::vector<double>& propensity_by_rank) {
    check_aligned(scores.size(), clicks_obs.size(), "dr_loss clicks");
    return weighted_delta_loss(
        scores, dr_weights(clicks_obs, lists, pseudo_clicks, propensity_by_rank));
}

EstimatorReport eib_loss(const std::vector<double>& scores,
                         const std::vector<uint8_t>& clicks_obs,
                         const ListSample& lists,
                         const std::vector<std::vector<uint8_t>>& pseudo_clicks) {
    check_aligned(scores.size(), clicks_obs.size(), "eib_loss clicks");
    return weighted_delta_loss(scores,
                               eib_weights(clicks_obs, lists, pseudo_clicks));
}

namespace {

void check_deviation(const DeviationInputs& in) {
    const size_t n = in.delta.size();
    if (in.true_exam.size() != n || in.est_exam.size() != n ||
        in.clicks.size() != n || in.imputed.size() != n)
        throw std::invalid_argument("DeviationInputs: length mismatch");
    for (size_t i = 0; i < n; ++i) {
        if (in.true_exam[i] <= 0 || in.true_exam[i] > 1 || in.est_exam[i] <= 0 ||
            in.est_exam[i] > 1)
            throw std::invalid_argument("DeviationInputs: probabilities must be in (0,1]");
    }
}

}  // namespace

double ipw_bias(const DeviationInputs& in) {
    check_deviation(in);
    double s = 0;
    for (size_t i = 0; i < in.delta.size(); ++i)
        if (in.clicks[i])
            s += (in.true_exam[i] - in.est_exam[i]) / in.est_exam[i] * in.delta[i];
    return std::abs(s);
}

double ipw_variance(const DeviationInputs& in) {
    check_deviation(in);
    double s = 0;
    for (size_t i = 0; i < in.delta.size(); ++i)
        if (in.clicks[i])
            s += in.true_exam[i] * (1.0 - in.true_exam[i]) /
                 (in.est_exam[i] * in.est_exam[i]) * in.delta[i] * in.delta[i];
    return s;
}

double dr_bias(const std::vector<DeviationInputs>& lists) {
    if (lists.empty()) throw std::invalid_argument("dr_bias: no lists");
    double s = 0;
    for (const auto& in : lists) {
        check_deviation(in);
        for (size_t i = 0; i < in.delta.size(); ++i) {
            const double dev = (in.clicks[i] ? in.delta[i] : 0.0) -
                               (in.imputed[i] ? in.delta[i] : 0.0);
            const double rho = (in.true_exam[i] - in.est_exam[i]) / in.est_exam[i];
            s += rho * dev;
        }
    }
    return std::abs(s / static_cast<double>(lists.size()));
}

double dr_variance(const std::vector<DeviationInputs>& lists) {
    if (lists.empty()) throw std::invalid_argument("dr_variance: no lists");
    double s = 0;
    for (const auto& in : lists) {
        check_deviation(in);
        for (size_t i = 0; i < in.delta.size(); ++i) {
            const double dev = (in.clicks[i] ? in.delta[i] : 0.0) -
                               (in.imputed[i] ? in.delta[i] : 0.0);
            s += in.true_exam[i] * (1.0 - in.true_exam[i]) /
                 (in.est_exam[i] * in.est_exam[i]) * dev * dev;
        }
    }
    const double L = static_cast<double>(lists.size());
    return s / (L * L);
}

namespace {

std::vector<double> softmax_values(const std::vector<double>& x) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double z = 0;
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    return out;
}

}  // namespace

PropensityEstimate estimate_propensity_dla(const Dataset& d,
                                           const std::vector<ClickSession>& log,
                                           const DlaConfig& cfg, uint64_t seed) {
    if (log.empty()) throw std::runtime_error("estimate_propensity_dla: empty log");
    size_t max_n = 0, total_clicks = 0;
    for (const auto& s : log) {
        max_n = std::max(max_n, s.clicks.size());
        for (uint8_t c : s.clicks) total_clicks += c;
    }
    if (max_n > 10)
        throw std::runtime_error("estimate_propensity_dla: lists longer than 10");
    if (total_clicks == 0)
        throw std::runtime_error(
            "estimate_propensity_dla: degenerate log with no clicks");

    FeatureIndex feats(d);
    std::vector<std::vector<const Document*>> docs(log.size());
    for (size_t i = 0; i < log.size(); ++i)
        for (const auto& id : log[i].displayed.doc_ids)
            docs[i].push_back(&feats.doc(log[i].query_id, id));

    const int n_ranks = static_cast<int>(max_n);
    const int dim = d.feature_dim;
    nn::ParameterSet<double> params;
    params.add("prop.t", {n_ranks});
    params.add("rel.w", {dim});
    nn::Gradients<double> grads(params);

    Rng rng = Rng::stream(seed, hash64("dla"));
    std::vector<double> xmat;
    for (int step = 0; step < cfg.steps; ++step) {
        grads.zero();
        for (int b = 0; b < cfg.batch; ++b) {
            const size_t si = static_cast<size_t>(rng.uniform_int(log.size()));
            const auto& session = log[si];
            const int n = static_cast<int>(session.clicks.size());
            bool any = false;
            for (uint8_t c : session.clicks) any |= c != 0;
            if (!any) continue;

            nn::Tape<double> tp;
            xmat.assign(static_cast<size_t>(n) * dim, 0.0);
            for (int i = 0; i < n; ++i)
                for (int f = 0; f < dim; ++f)
                    xmat[static_cast<size_t>(i) * dim + f] = docs[si][i]->features[f];
            auto X = tp.input(xmat.data(), n * dim);
            auto w = tp.param(params, grads, "rel.w");
            auto scores = tp.matvec(X, w, n, dim);
            auto t_all = tp.param(params, grads, "prop.t");
            auto t_n = n == n_ranks ? t_all : tp.slice(t_all, 0, n);

            // detached inverse weights from the current dual model
            std::vector<double> svals(tp.val(scores).begin(), tp.val(scores).end());
            const auto rel_sm = softmax_values(svals);
            std::vector<double> tvals(tp.val(t_n).begin(), tp.val(t_n).end());
            const auto prop_sm = softmax_values(tvals);

            std::vector<double> w_rank(n, 0.0), w_prop(n, 0.0);
            for (int i = 0; i < n; ++i) {
                if (!session.clicks[i]) continue;
                w_rank[i] = std::min(cfg.weight_clip, prop_sm[0] / prop_sm[i]);
                w_prop[i] = std::min(cfg.weight_clip, rel_sm[0] / rel_sm[i]);
            }
            auto loss = tp.add(tp.weighted_softmax_ce(scores, w_rank),
                               tp.weighted_softmax_ce(t_n, w_prop));
            tp.backward(loss);
        }
        const double inv_b = 1.0 / cfg.batch;
        for (auto& g : grads.g)
            for (auto& x : g) x *= inv_b;
        nn::adagrad_step(params, grads, cfg.lr);
    }

    const auto prop_sm = softmax_values(params.at("prop.t").v);
    PropensityEstimate est;
    est.source = "learned";
    est.p.resize(n_ranks);
    for (int r = 0; r < n_ranks; ++r)
        est.p[r] = std::min(1.0, std::max(cfg.floor, prop_sm[r] / prop_sm[0]));
    est.p[0] = 1.0;  // rank-1 normalization is exact
    return est;
}

PropensityEstimate oracle_propensity(const Dataset& d,
                                     const std::vector<RankedList>& rankings,
                                     const ClickModelConfig& cfg, int top_n) {
    PropensityEstimate est;
    est.source = "oracle";
    est.p.assign(top_n, 0.0);
    std::vector<double> count(top_n, 0.0);
    for (size_t qi = 0; qi < d.queries.size(); ++qi) {
        const auto rel =
            list_relevance_probs(d.queries[qi], rankings[qi], cfg.y_max, cfg.epsilon);
        std::vector<double> exam;
        if (cfg.kind == ClickModelKind::cascade) {
            exam = cascade_marginals(rel).exam_probs;
        } else {
            exam.assign(cfg.exam_probs.begin(),
                        cfg.exam_probs.begin() + std::min(cfg.exam_probs.size(),
                                                          rel.size()));
        }
        for (size_t r = 0; r < exam.size() && r < static_cast<size_t>(top_n); ++r) {
            est.p[r] += exam[r];
            count[r] += 1;
        }
    }
    for (int r = 0; r < top_n; ++r)
        est.p[r] = count[r] > 0 ? est.p[r] / count[r] : 1.0;
    return est;
}

}  // namespace ultr
