#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ultr/click_models.hpp"
#include "ultr/dataset.hpp"
#include "ultr/neural.hpp"
#include "ultr/rng.hpp"

// Context-aware user simulator: a bi-directional recurrent encoder over the
// displayed list produces a local context vector; an action-conditioned
// recurrent decoder emits one click probability per position, feeding the
// previous action (click / skip / unknown at step 1) forward.

namespace ultr {

// Action embedding rows.
inline constexpr int kActionUnknown = 0;
inline constexpr int kActionClick = 1;
inline constexpr int kActionSkip = 2;

struct PseudoSession {
    RankedList list;
    std::vector<double> probs;    // p_t per position
    std::vector<uint8_t> clicks;  // sampled (or thresholded) pseudo clicks
};

template <class T>
struct Simulator {
    int feat_dim = 0;
    int hidden = 0;
    double clamp = 1e-6;
    nn::ParameterSet<T> params;

    static Simulator create(int feat_dim, int hidden, uint64_t seed,
                            double clamp = 1e-6) {
        Simulator m;
        m.feat_dim = feat_dim;
        m.hidden = hidden;
        m.clamp = clamp;
        Rng rng = Rng::stream(seed, hash64("simulator_init"));
        auto& p = m.params;
        const int h = hidden;
        p.add_uniform("enc_fwd.W", {4 * h, feat_dim}, rng);
        p.add_uniform("enc_fwd.U", {4 * h, h}, rng);
        p.add("enc_fwd.b", {4 * h});
        p.add_uniform("enc_bwd.W", {4 * h, feat_dim}, rng);
        p.add_uniform("enc_bwd.U", {4 * h, h}, rng);
        p.add("enc_bwd.b", {4 * h});
        p.add_uniform("enc_proj.W", {h, 2 * h}, rng);
        p.add_uniform("dec.W1", {h, h}, rng);
        p.add("dec.b1", {h});
        p.add_uniform("dec.W2", {h, feat_dim}, rng);
        p.add("dec.b2", {h});
        p.add_uniform("dec.W3", {h, h}, rng);
        p.add("dec.b3", {h});
        p.add_uniform("dec.A", {3, h}, rng);
        p.add_uniform("dec.lstm.Wpi", {4 * h, h}, rng);
        p.add_uniform("dec.lstm.Wx", {4 * h, h}, rng);
        p.add_uniform("dec.lstm.Wa", {4 * h, h}, rng);
        p.add_uniform("dec.lstm.U", {4 * h, h}, rng);
        p.add("dec.lstm.b", {4 * h});
        p.add_uniform("dec.W4", {1, h}, rng);
        p.add("dec.b4", {1});
        return m;
    }

    void save(const std::string& path) const {
        nn::save_checkpoint(params,
                            {{"feat_dim", feat_dim},
                             {"hidden", hidden},
                             {"clamp_e9", static_cast<long long>(clamp * 1e9)}},
                            path);
    }

    static Simulator load(const std::string& path) {
        auto ck = nn::load_checkpoint<T>(path);
        Simulator m;
        m.feat_dim = static_cast<int>(ck.meta_at("feat_dim"));
        m.hidden = static_cast<int>(ck.meta_at("hidden"));
        m.clamp = static_cast<double>(ck.meta_at("clamp_e9")) * 1e-9;
        m.params = std::move(ck.params);
        return m;
    }
};

// ------------------------------------------------------------- tape path

// Builds the teacher-forced BCE loss for one logged session. Returns the
// scalar loss node (L2 handled by the caller).
template <class T>
typename nn::Tape<T>::Idx simulator_session_loss(
    nn::Tape<T>& tp, Simulator<T>& model, nn::Gradients<T>& grads,
    const std::vector<const Document*>& docs, const std::vector<uint8_t>& clicks,
    std::vector<double>* probs_out = nullptr) {
    const int n = static_cast<int>(docs.size());
    if (n < 1 || static_cast<int>(clicks.size()) != n)
        throw std::invalid_argument("simulator: session shape mismatch");
    const int h = model.hidden;
    const int d = model.feat_dim;
    auto& P = model.params;

    auto pm = [&](const char* name) { return tp.param(P, grads, name); };

    std::vector<typename nn::Tape<T>::Idx> xs(n);
    std::vector<T> buf(d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(docs[i]->features.size()) != d)
            throw std::invalid_argument("simulator: feature dim mismatch");
        for (int f = 0; f < d; ++f) buf[f] = static_cast<T>(docs[i]->features[f]);
        xs[i] = tp.input(buf.data(), d);
    }

    auto enc = nn::bilstm_encode(tp, xs, pm("enc_fwd.W"), pm("enc_fwd.U"),
                                 pm("enc_fwd.b"), pm("enc_bwd.W"), pm("enc_bwd.U"),
                                 pm("enc_bwd.b"), d, h);
    auto h_pi = tp.matvec(pm("enc_proj.W"), enc.back(), h, 2 * h);
    auto z_pi = tp.add(tp.matvec(pm("dec.W1"), h_pi, h, h), pm("dec.b1"));
    auto pre_pi = tp.matvec(pm("dec.lstm.Wpi"), z_pi, 4 * h, h);

    auto dec_h = tp.constant_zeros(h);
    auto dec_c = tp.constant_zeros(h);
    typename nn::Tape<T>::Idx loss = -1;
    int action = kActionUnknown;
    for (int t = 0; t < n; ++t) {
        auto z_x = tp.add(tp.matvec(pm("dec.W2"), xs[t], h, d), pm("dec.b2"));
        auto emb = tp.row(pm("dec.A"), action, 3, h);
        auto z_a = tp.add(tp.matvec(pm("dec.W3"), emb, h, h), pm("dec.b3"));
        auto pre = tp.add(tp.add(pre_pi, tp.matvec(pm("dec.lstm.Wx"), z_x, 4 * h, h)),
                          tp.add(tp.matvec(pm("dec.lstm.Wa"), z_a, 4 * h, h),
                                 pm("dec.lstm.b")));
        std::tie(dec_h, dec_c) =
            nn::lstm_cell_pre(tp, pre, dec_h, dec_c, pm("dec.lstm.U"), h);
        auto logit = tp.add(tp.matvec(pm("dec.W4"), dec_h, 1, h), pm("dec.b4"));
        if (probs_out) {
            const double p = nn::sigmoid_scalar(static_cast<double>(tp.scalar(logit)));
            probs_out->push_back(
                std::min(1.0 - model.clamp, std::max(model.clamp, p)));
        }
        auto term = tp.bce_logit(logit, clicks[t], model.clamp);
        loss = t == 0 ? term : tp.add(loss, term);
        action = clicks[t] ? kActionClick : kActionSkip;  // teacher forcing
    }
    return loss;
}

// ------------------------------------------------------ forward-only path

// Preallocated free-running decoder over a frozen model. One instance per
// thread; decode() is read-only on the model.
template <class T>
class SimulatorForward {
  public:
    explicit SimulatorForward(const Simulator<T>& m) : m_(&m) {
        const int h = m.hidden;
        enc_fwd_.bind(m.params.at("enc_fwd.W"), m.params.at("enc_fwd.U"),
                      m.params.at("enc_fwd.b"));
        enc_bwd_.bind(m.params.at("enc_bwd.W"), m.params.at("enc_bwd.U"),
                      m.params.at("enc_bwd.b"));
        dec_.bind(m.params.at("dec.lstm.Wx"), m.params.at("dec.lstm.U"),
                  m.params.at("dec.lstm.b"));
        h_.resize(h);
        c_.resize(h);
        hN_.resize(2 * h);
        h_pi_.resize(h);
        z_.resize(h);
        pre_pi_.resize(4 * h);
        pre_x_.resize(4 * h);
        feats_.resize(m.feat_dim);
        // action contribution Wa (W3 A[a] + b3) is constant given the model
        const auto& W3 = m.params.at("dec.W3");
        const auto& b3 = m.params.at("dec.b3");
        const auto& A = m.params.at("dec.A");
        const auto& Wa = m.params.at("dec.lstm.Wa");
        for (int a = 0; a < 3; ++a) {
            std::vector<T> za(h);
            nn::matvec(W3.v.data(), A.v.data() + static_cast<size_t>(a) * h, za.data(),
                       h, h);
            for (int j = 0; j < h; ++j) za[j] += b3.v[j];
            pre_a_[a].assign(4 * h, T(0));
            nn::matvec(Wa.v.data(), za.data(), pre_a_[a].data(), 4 * h, h);
        }
    }

    // Local context h_pi for a list (exposed for tests and calibration).
    std::vector<T> encode_context(const std::vector<const Document*>& docs) {
        run_encoder(docs);
        return h_pi_;
    }

    // Free-running decode. rng == nullptr means greedy thresholding at 0.5.
    void decode(const std::vector<const Document*>& docs, std::vector<double>& probs,
                std::vector<uint8_t>& clicks, Rng* rng) {
        const int n = static_cast<int>(docs.size());
        const int h = m_->hidden;
        run_encoder(docs);

        // decoder init
        std::fill(h_.begin(), h_.end(), T(0));
        std::fill(c_.begin(), c_.end(), T(0));
        nn::matvec(m_->params.at("dec.W1").v.data(), h_pi_.data(), z_.data(), h, h);
        const auto& b1 = m_->params.at("dec.b1");
        for (int j = 0; j < h; ++j) z_[j] += b1.v[j];
        nn::matvec(m_->params.at("dec.lstm.Wpi").v.data(), z_.data(), pre_pi_.data(),
                   4 * h, h);

        probs.resize(n);
        clicks.resize(n);
        const auto& W2 = m_->params.at("dec.W2");
        const auto& b2 = m_->params.at("dec.b2");
        const auto& Wx = m_->params.at("dec.lstm.Wx");
        const auto& W4 = m_->params.at("dec.W4");
        const double b4 = static_cast<double>(m_->params.at("dec.b4").v[0]);
        int action = kActionUnknown;
        for (int t = 0; t < n; ++t) {
            load_features(docs[t]);
            nn::matvec(W2.v.data(), feats_.data(), z_.data(), h, m_->feat_dim);
            for (int j = 0; j < h; ++j) z_[j] += b2.v[j];
            nn::matvec(Wx.v.data(), z_.data(), pre_x_.data(), 4 * h, h);
            for (int j = 0; j < 4 * h; ++j)
                dec_.gates[j] = pre_pi_[j] + pre_x_[j] + pre_a_[action][j];
            dec_.apply(h_.data(), c_.data());
            const double p = nn::sigmoid_scalar(
                static_cast<double>(nn::dot(W4.v.data(), h_.data(), h)) + b4);
            probs[t] = std::min(1.0 - m_->clamp, std::max(m_->clamp, p));
            clicks[t] = rng ? (rng->bernoulli(probs[t]) ? 1 : 0) : (probs[t] >= 0.5);
            action = clicks[t] ? kActionClick : kActionSkip;
        }
    }

  private:
    void load_features(const Document* doc) {
        if (static_cast<int>(doc->features.size()) != m_->feat_dim)
            throw std::invalid_argument("simulator: feature dim mismatch");
        for (int f = 0; f < m_->feat_dim; ++f)
            feats_[f] = static_cast<T>(doc->features[f]);
    }

    void run_encoder(const std::vector<const Document*>& docs) {
        const int n = static_cast<int>(docs.size());
        if (n < 1) throw std::invalid_argument("simulator: empty list");
        const int h = m_->hidden;
        // forward direction: keep only the final state
        std::fill(h_.begin(), h_.end(), T(0));
        std::fill(c_.begin(), c_.end(), T(0));
        for (int i = 0; i < n; ++i) {
            load_features(docs[i]);
            enc_fwd_.step(feats_.data(), h_.data(), c_.data());
        }
        std::copy(h_.begin(), h_.end(), hN_.begin());
        // backward direction: the state at position N has seen x_N only
        std::fill(h_.begin(), h_.end(), T(0));
        std::fill(c_.begin(), c_.end(), T(0));
        load_features(docs[n - 1]);
        enc_bwd_.step(feats_.data(), h_.data(), c_.data());
        std::copy(h_.begin(), h_.end(), hN_.begin() + h);
        nn::matvec(m_->params.at("enc_proj.W").v.data(), hN_.data(), h_pi_.data(), h,
                   2 * h);
    }

    const Simulator<T>* m_;
    nn::LstmFwd<T> enc_fwd_, enc_bwd_, dec_;
    std::vector<T> h_, c_, hN_, h_pi_, z_, pre_pi_, pre_x_, feats_;
    std::vector<T> pre_a_[3];
};

// --------------------------------------------------------------- training

struct SimTrainConfig {
    int hidden = 64;
    int steps = 2000;
    int batch = 64;
    double lr = 0.05;
    double l2 = 1e-5;
    double clamp = 1e-6;
    uint64_t seed = 1;
};

// sum_t [-c_t log p_t - (1 - c_t) log(1 - p_t)] + lambda * ||phi||^2,
// probabilities clamped before the logs.
template <class T>
double simulator_loss(const std::vector<double>& probs,
                      const std::vector<uint8_t>& clicks, double lambda,
                      const nn::ParameterSet<T>& params, double clamp = 1e-6) {
    if (probs.size() != clicks.size())
        throw std::invalid_argument("simulator_loss: length mismatch");
    if (lambda < 0) throw std::invalid_argument("simulator_loss: lambda >= 0");
    double loss = 0;
    for (size_t t = 0; t < probs.size(); ++t) {
        const double p = std::min(1.0 - clamp, std::max(clamp, probs[t]));
        loss += clicks[t] ? -std::log(p) : -std::log(1.0 - p);
    }
    return loss + lambda * params.squared_norm();
}

// Mini-batch AdaGrad with teacher forcing; deterministic given the seed.
template <class T>
Simulator<T> train_simulator(const std::vector<ClickSession>& log,
                             const FeatureIndex& feats, int feat_dim,
                             const SimTrainConfig& cfg,
                             std::vector<std::pair<int, double>>* loss_trace = nullptr) {
    if (log.empty()) throw std::runtime_error("train_simulator: empty click log");
    Simulator<T> model = Simulator<T>::create(feat_dim, cfg.hidden, cfg.seed, cfg.clamp);

    std::vector<std::vector<const Document*>> docs(log.size());
    for (size_t i = 0; i < log.size(); ++i) {
        docs[i].reserve(log[i].displayed.size());
        for (const auto& id : log[i].displayed.doc_ids)
            docs[i].push_back(&feats.doc(log[i].query_id, id));
    }

    nn::Gradients<T> grads(model.params);
    Rng batch_rng = Rng::stream(cfg.seed, hash64("sim_batches"));
    for (int step = 0; step < cfg.steps; ++step) {
        grads.zero();
        double loss = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const size_t si = static_cast<size_t>(batch_rng.uniform_int(log.size()));
            nn::Tape<T> tp;
            auto out = simulator_session_loss(tp, model, grads, docs[si],
                                              log[si].clicks);
            loss += static_cast<double>(tp.scalar(out));
            tp.backward(out);
        }
        const T inv_b = static_cast<T>(1.0 / cfg.batch);
        for (auto& g : grads.g)
            for (auto& x : g) x *= inv_b;
        if (cfg.l2 > 0) {
            const T two_l2 = static_cast<T>(2.0 * cfg.l2);
            for (size_t ti = 0; ti < model.params.tensors.size(); ++ti)
                for (size_t i = 0; i < grads.g[ti].size(); ++i)
                    grads.g[ti][i] += two_l2 * model.params.tensors[ti].v[i];
        }
        nn::adagrad_step(model.params, grads, static_cast<T>(cfg.lr));
        if (loss_trace)
            loss_trace->emplace_back(step, loss / cfg.batch +
                                               cfg.l2 * model.params.squared_norm());
    }
    return model;
}

// ------------------------------------------------------------- imputation

// n_samples independent free-running sessions; deterministic given rng state.
template <class T>
std::vector<PseudoSession> impute(const Simulator<T>& model,
                                  const std::vector<const Document*>& docs,
                                  const RankedList& list, int n_samples, Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("impute: n_samples >= 1");
    SimulatorForward<T> fwd(model);
    std::vector<PseudoSession> out(n_samples);
    for (auto& ps : out) {
        ps.list = list;
        fwd.decode(docs, ps.probs, ps.clicks, &rng);
    }
    return out;
}

}  // namespace ultr
