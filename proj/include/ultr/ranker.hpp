#pragma once

#include <string>
#include <vector>

#include "ultr/dataset.hpp"
#include "ultr/neural.hpp"

namespace ultr {

// Scoring MLP: hidden layers with ELU and dropout, linear scalar output.
template <class T>
struct Ranker {
    int feat_dim = 0;
    std::vector<int> hidden;
    double dropout = 0.1;
    nn::ParameterSet<T> params;

    static Ranker create(int feat_dim, std::vector<int> hidden, double dropout,
                         uint64_t seed) {
        Ranker r;
        r.feat_dim = feat_dim;
        r.hidden = std::move(hidden);
        r.dropout = dropout;
        Rng rng = Rng::stream(seed, hash64("ranker_init"));
        int in = feat_dim;
        for (size_t l = 0; l < r.hidden.size(); ++l) {
            r.params.add_uniform("mlp.W" + std::to_string(l), {r.hidden[l], in}, rng);
            r.params.add("mlp.b" + std::to_string(l), {r.hidden[l]});
            in = r.hidden[l];
        }
        r.params.add_uniform("mlp.Wout", {1, in}, rng);
        r.params.add("mlp.bout", {1});
        return r;
    }

    // Evaluation-mode score (no dropout), fast path.
    double score(const Document& doc) const {
        if (static_cast<int>(doc.features.size()) != feat_dim)
            throw std::invalid_argument("ranker: feature dim mismatch");
        std::vector<T> cur(feat_dim), next;
        for (int f = 0; f < feat_dim; ++f) cur[f] = static_cast<T>(doc.features[f]);
        int in = feat_dim;
        for (size_t l = 0; l < hidden.size(); ++l) {
            const auto& W = params.at("mlp.W" + std::to_string(l));
            const auto& b = params.at("mlp.b" + std::to_string(l));
            next.assign(hidden[l], T(0));
            nn::matvec(W.v.data(), cur.data(), next.data(), hidden[l], in);
            for (int j = 0; j < hidden[l]; ++j) {
                next[j] += b.v[j];
                next[j] = next[j] > T(0) ? next[j] : std::exp(next[j]) - T(1);
            }
            cur.swap(next);
            in = hidden[l];
        }
        const auto& W = params.at("mlp.Wout");
        return static_cast<double>(nn::dot(W.v.data(), cur.data(), in)) +
               static_cast<double>(params.at("mlp.bout").v[0]);
    }

    std::vector<double> scores(const std::vector<const Document*>& docs) const {
        std::vector<double> out(docs.size());
        for (size_t i = 0; i < docs.size(); ++i) out[i] = score(*docs[i]);
        return out;
    }

    // Tape path: stacked score node for a list of documents. Dropout masks
    // come from rng when train is set.
    typename nn::Tape<T>::Idx scores_node(nn::Tape<T>& tp, nn::Gradients<T>& grads,
                                          const std::vector<const Document*>& docs,
                                          Rng& rng, bool train) {
        std::vector<typename nn::Tape<T>::Idx> outs(docs.size());
        std::vector<T> buf(feat_dim);
        for (size_t i = 0; i < docs.size(); ++i) {
            if (static_cast<int>(docs[i]->features.size()) != feat_dim)
                throw std::invalid_argument("ranker: feature dim mismatch");
            for (int f = 0; f < feat_dim; ++f)
                buf[f] = static_cast<T>(docs[i]->features[f]);
            auto x = tp.input(buf.data(), feat_dim);
            int in = feat_dim;
            for (size_t l = 0; l < hidden.size(); ++l) {
                auto W = tp.param(params, grads, "mlp.W" + std::to_string(l));
                auto b = tp.param(params, grads, "mlp.b" + std::to_string(l));
                x = tp.elu(nn::dense(tp, W, x, b, hidden[l], in));
                if (dropout > 0) x = tp.dropout(x, dropout, rng, train);
                in = hidden[l];
            }
            auto W = tp.param(params, grads, "mlp.Wout");
            auto b = tp.param(params, grads, "mlp.bout");
            outs[i] = nn::dense(tp, W, x, b, 1, in);
        }
        return tp.stack(outs);
    }

    // Ranks a query's candidates by evaluation-mode score, ties by doc_id.
    RankedList rank(const Query& q, int top_n) const {
        std::vector<size_t> order(q.candidates.size());
        std::vector<double> s(q.candidates.size());
        for (size_t i = 0; i < q.candidates.size(); ++i) {
            order[i] = i;
            s[i] = score(q.candidates[i]);
        }
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (s[a] != s[b]) return s[a] > s[b];
            return q.candidates[a].doc_id < q.candidates[b].doc_id;
        });
        RankedList rl;
        rl.query_id = q.query_id;
        const size_t n = std::min<size_t>(top_n, order.size());
        for (size_t i = 0; i < n; ++i)
            rl.doc_ids.push_back(q.candidates[order[i]].doc_id);
        return rl;
    }

    void save(const std::string& path) const {
        std::map<std::string, long long> meta;
        meta["feat_dim"] = feat_dim;
        meta["n_hidden"] = static_cast<long long>(hidden.size());
        for (size_t l = 0; l < hidden.size(); ++l)
            meta["h" + std::to_string(l)] = hidden[l];
        meta["dropout_e6"] = static_cast<long long>(dropout * 1e6);
        nn::save_checkpoint(params, meta, path);
    }

    static Ranker load(const std::string& path) {
        auto ck = nn::load_checkpoint<T>(path);
        Ranker r;
        r.feat_dim = static_cast<int>(ck.meta_at("feat_dim"));
        const int nh = static_cast<int>(ck.meta_at("n_hidden"));
        for (int l = 0; l < nh; ++l)
            r.hidden.push_back(static_cast<int>(ck.meta_at("h" + std::to_string(l))));
        r.dropout = static_cast<double>(ck.meta_at("dropout_e6")) * 1e-6;
        r.params = std::move(ck.params);
        return r;
    }
};

}  // namespace ultr
