#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ultr/simulator.hpp"

using namespace ultr;

namespace {

struct Fixture {
    Dataset data;
    FeatureIndex* feats = nullptr;
    std::vector<RankedList> lists;
    std::vector<std::vector<const Document*>> docs;

    Fixture(int n_queries, int docs_per_query, int feat_dim, uint64_t seed) {
        data = generate_synthetic(n_queries, docs_per_query, feat_dim, 4, seed);
        feats = new FeatureIndex(data);
        for (const auto& q : data.queries) {
            RankedList rl;
            rl.query_id = q.query_id;
            std::vector<const Document*> ds;
            for (const auto& d : q.candidates) {
                rl.doc_ids.push_back(d.doc_id);
                ds.push_back(&d);
            }
            lists.push_back(std::move(rl));
            docs.push_back(std::move(ds));
        }
    }
    ~Fixture() { delete feats; }

    std::vector<ClickSession> sessions_with_clicks(
        const std::vector<uint8_t>& pattern, int per_query) const {
        std::vector<ClickSession> log;
        for (size_t qi = 0; qi < lists.size(); ++qi)
            for (int s = 0; s < per_query; ++s) {
                ClickSession cs;
                cs.query_id = lists[qi].query_id;
                cs.displayed = lists[qi];
                cs.clicks = pattern;
                log.push_back(std::move(cs));
            }
        return log;
    }
};

void zero_params(nn::ParameterSet<float>& p) {
    for (auto& t : p.tensors) std::fill(t.v.begin(), t.v.end(), 0.0f);
}

}  // namespace

TEST_CASE("all-zero parameters emit p_t = 0.5 at every step") {
    Fixture fx(2, 5, 3, 7);
    auto sim = Simulator<float>::create(3, 8, 1);
    zero_params(sim.params);
    SimulatorForward<float> fwd(sim);
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    fwd.decode(fx.docs[0], probs, clicks, nullptr);
    for (double p : probs) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a saturated positive bias forces an all-ones sampled bitmap") {
    Fixture fx(1, 6, 3, 8);
    auto sim = Simulator<float>::create(3, 8, 2);
    zero_params(sim.params);
    sim.params.at("dec.b4").v[0] = 50.0f;
    Rng rng(3);
    const auto sessions = impute(sim, fx.docs[0], fx.lists[0], 4, rng);
    REQUIRE(sessions.size() == 4);
    for (const auto& ps : sessions) {
        for (uint8_t c : ps.clicks) CHECK(c == 1);
        for (double p : ps.probs) CHECK(p == doctest::Approx(1.0 - sim.clamp));
    }
}

TEST_CASE("emitted probabilities stay inside the clamp interval") {
    Fixture fx(3, 5, 4, 9);
    auto sim = Simulator<float>::create(4, 8, 5);
    sim.params.at("dec.b4").v[0] = -80.0f;  // saturate the head low
    SimulatorForward<float> fwd(sim);
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    for (const auto& docs : fx.docs) {
        fwd.decode(docs, probs, clicks, nullptr);
        for (double p : probs) {
            CHECK(p >= sim.clamp);
            CHECK(p <= 1.0 - sim.clamp);
        }
    }
}

TEST_CASE("sampled click frequency converges to the emitted probability") {
    Fixture fx(1, 4, 3, 10);
    auto sim = Simulator<float>::create(3, 8, 11);
    SimulatorForward<float> fwd(sim);

    // free-running sampling is path dependent; measure the first position,
    // whose probability does not depend on earlier actions
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    fwd.decode(fx.docs[0], probs, clicks, nullptr);
    const double p1 = probs[0];

    const int draws = 100000;
    double hits = 0;
    Rng rng(12);
    for (int i = 0; i < draws; ++i) {
        fwd.decode(fx.docs[0], probs, clicks, &rng);
        hits += clicks[0];
    }
    CHECK(std::abs(hits / draws - p1) < 0.005);
}

TEST_CASE("context vector depends on document order") {
    Fixture fx(1, 5, 4, 13);
    auto sim = Simulator<float>::create(4, 8, 17);
    SimulatorForward<float> fwd(sim);
    auto reversed = fx.docs[0];
    std::reverse(reversed.begin(), reversed.end());
    const auto a = fwd.encode_context(fx.docs[0]);
    const auto b = fwd.encode_context(reversed);
    double diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
    CHECK(diff > 1e-4);
}

TEST_CASE("single-document context depends only on that document") {
    Fixture fx(2, 1, 4, 14);
    auto sim = Simulator<float>::create(4, 8, 19);
    SimulatorForward<float> fwd(sim);
    const auto a = fwd.encode_context(fx.docs[0]);
    const auto again = fwd.encode_context(fx.docs[0]);
    CHECK(a == again);
    const auto other = fwd.encode_context(fx.docs[1]);
    double diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - other[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("simulator_loss closed forms") {
    nn::ParameterSet<float> empty;
    SUBCASE("perfect predictions with lambda 0 cost nothing") {
        const double loss =
            simulator_loss(std::vector<double>{1.0, 0.0, 1.0},
                           std::vector<uint8_t>{1, 0, 1}, 0.0, empty);
        CHECK(loss == doctest::Approx(0.0).epsilon(1e-5));
    }
    SUBCASE("uniform 0.5 over 10 positions costs 10 ln 2") {
        const double loss = simulator_loss(std::vector<double>(10, 0.5),
                                           std::vector<uint8_t>(10, 0), 0.0, empty);
        CHECK(loss == doctest::Approx(10 * std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("zero BCE leaves only the L2 term") {
        nn::ParameterSet<float> p;
        p.add("w", {2});
        p.at("w").v = {3.0f, 4.0f};
        const double loss = simulator_loss(std::vector<double>{1.0},
                                           std::vector<uint8_t>{1}, 0.5, p);
        CHECK(loss == doctest::Approx(0.5 * 25.0).epsilon(1e-5));
    }
}

TEST_CASE("tape session loss agrees with the standalone loss on emitted probs") {
    Fixture fx(1, 4, 3, 23);
    auto sim = Simulator<double>::create(3, 6, 29);
    const std::vector<uint8_t> clicks = {0, 1, 0, 0};
    nn::Gradients<double> grads(sim.params);
    nn::Tape<double> tp;
    std::vector<double> probs;
    auto loss =
        simulator_session_loss(tp, sim, grads, fx.docs[0], clicks, &probs);
    const double direct = simulator_loss(probs, clicks, 0.0, sim.params, sim.clamp);
    CHECK(tp.scalar(loss) == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("full simulator loss on a 3-doc list passes finite differences") {
    Fixture fx(1, 3, 4, 31);
    auto sim = Simulator<double>::create(4, 5, 37);
    const std::vector<uint8_t> clicks = {1, 0, 1};
    nn::Gradients<double> grads(sim.params);
    {
        nn::Tape<double> tp;
        auto loss = simulator_session_loss(tp, sim, grads, fx.docs[0], clicks);
        tp.backward(loss);
    }
    auto forward = [&]() {
        nn::Gradients<double> sink(sim.params);
        nn::Tape<double> tp;
        return tp.scalar(simulator_session_loss(tp, sim, sink, fx.docs[0], clicks));
    };
    const auto rep = nn::grad_check(sim.params, forward, grads);
    INFO("max rel err ", rep.max_rel_error);
    CHECK(rep.pass);
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("teacher-forced probabilities match free-running decode on the same path") {
    // when the logged clicks equal the greedy decisions, both modes consume
    // identical action sequences and share every parameter
    Fixture fx(1, 5, 3, 41);
    auto sim = Simulator<float>::create(3, 8, 43);
    SimulatorForward<float> fwd(sim);
    std::vector<double> greedy_probs;
    std::vector<uint8_t> greedy_clicks;
    fwd.decode(fx.docs[0], greedy_probs, greedy_clicks, nullptr);

    auto simd = Simulator<double>::create(3, 8, 43);
    for (size_t ti = 0; ti < sim.params.tensors.size(); ++ti)
        for (size_t i = 0; i < sim.params.tensors[ti].v.size(); ++i)
            simd.params.tensors[ti].v[i] =
                static_cast<double>(sim.params.tensors[ti].v[i]);
    nn::Gradients<double> grads(simd.params);
    nn::Tape<double> tp;
    std::vector<double> forced_probs;
    simulator_session_loss(tp, simd, grads, fx.docs[0], greedy_clicks, &forced_probs);
    for (size_t t = 0; t < greedy_probs.size(); ++t)
        CHECK(forced_probs[t] == doctest::Approx(greedy_probs[t]).epsilon(1e-5));
}

TEST_CASE("training on always-click-first logs drives p_1 up") {
    Fixture fx(12, 4, 4, 47);
    const auto log = fx.sessions_with_clicks({1, 0, 0, 0}, 8);
    SimTrainConfig cfg;
    cfg.hidden = 8;
    cfg.steps = 300;
    cfg.batch = 16;
    cfg.lr = 0.1;
    cfg.l2 = 0;
    cfg.seed = 3;
    const auto sim = train_simulator<float>(log, *fx.feats, 4, cfg);

    Fixture held(5, 4, 4, 48);  // fresh lists from the same distribution
    SimulatorForward<float> fwd(sim);
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    for (const auto& docs : held.docs) {
        fwd.decode(docs, probs, clicks, nullptr);
        CHECK(probs[0] > 0.9);
    }
}

TEST_CASE("training on clickless logs drives every probability down") {
    Fixture fx(12, 4, 4, 53);
    const auto log = fx.sessions_with_clicks({0, 0, 0, 0}, 8);
    SimTrainConfig cfg;
    cfg.hidden = 8;
    cfg.steps = 300;
    cfg.batch = 16;
    cfg.lr = 0.1;
    cfg.l2 = 0;
    cfg.seed = 3;
    const auto sim = train_simulator<float>(log, *fx.feats, 4, cfg);

    Fixture held(5, 4, 4, 54);
    SimulatorForward<float> fwd(sim);
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    for (const auto& docs : held.docs) {
        fwd.decode(docs, probs, clicks, nullptr);
        for (double p : probs) CHECK(p < 0.1);
    }
}

TEST_CASE("simulator training is deterministic given the seed") {
    Fixture fx(8, 4, 3, 59);
    const auto log = fx.sessions_with_clicks({0, 1, 0, 0}, 4);
    SimTrainConfig cfg;
    cfg.hidden = 6;
    cfg.steps = 40;
    cfg.batch = 8;
    cfg.seed = 11;
    std::vector<std::pair<int, double>> ta, tb;
    const auto a = train_simulator<float>(log, *fx.feats, 3, cfg, &ta);
    const auto b = train_simulator<float>(log, *fx.feats, 3, cfg, &tb);
    CHECK(ta.back().second == tb.back().second);
    for (size_t ti = 0; ti < a.params.tensors.size(); ++ti)
        CHECK(a.params.tensors[ti].v == b.params.tensors[ti].v);
}

TEST_CASE("training rejects an empty log") {
    Fixture fx(2, 3, 3, 61);
    SimTrainConfig cfg;
    CHECK_THROWS_AS(
        train_simulator<float>({}, *fx.feats, 3, cfg), std::runtime_error);
}

TEST_CASE("simulator loss falls to under 10% of its start on a small batch") {
    // one session per distinct list, so the batch is memorizable
    Fixture fx(32, 5, 4, 67);
    std::vector<ClickSession> log;
    Rng rng(5);
    for (size_t qi = 0; qi < fx.lists.size(); ++qi) {
        ClickSession cs;
        cs.query_id = fx.lists[qi].query_id;
        cs.displayed = fx.lists[qi];
        for (int t = 0; t < 5; ++t) cs.clicks.push_back(rng.bernoulli(0.4));
        log.push_back(std::move(cs));
    }
    SimTrainConfig cfg;
    cfg.hidden = 32;
    cfg.steps = 2000;
    cfg.batch = 32;
    cfg.lr = 0.1;
    cfg.l2 = 0;
    cfg.seed = 21;
    std::vector<std::pair<int, double>> trace;
    train_simulator<float>(log, *fx.feats, 4, cfg, &trace);
    REQUIRE(!trace.empty());
    const double initial = trace.front().second;
    const double final_loss = trace.back().second;
    INFO("initial ", initial, " final ", final_loss);
    CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("impute is deterministic given (seed, list) and honors n_samples") {
    Fixture fx(1, 5, 3, 71);
    auto sim = Simulator<float>::create(3, 8, 73);
    Rng ra = Rng::stream(5, 1);
    Rng rb = Rng::stream(5, 1);
    const auto sa = impute(sim, fx.docs[0], fx.lists[0], 3, ra);
    const auto sb = impute(sim, fx.docs[0], fx.lists[0], 3, rb);
    REQUIRE(sa.size() == 3);
    for (size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].clicks == sb[i].clicks);
        CHECK(sa[i].probs == sb[i].probs);
    }
    Rng rc(9);
    CHECK(impute(sim, fx.docs[0], fx.lists[0], 1, rc).size() == 1);
    CHECK_THROWS_AS(impute(sim, fx.docs[0], fx.lists[0], 0, rc),
                    std::invalid_argument);
}

TEST_CASE("pseudo-click rate across samples matches the first-position probability") {
    Fixture fx(1, 4, 3, 77);
    auto sim = Simulator<float>::create(3, 8, 79);
    SimulatorForward<float> fwd(sim);
    std::vector<double> probs;
    std::vector<uint8_t> clicks;
    fwd.decode(fx.docs[0], probs, clicks, nullptr);
    Rng rng(83);
    const auto samples = impute(sim, fx.docs[0], fx.lists[0], 20000, rng);
    double rate = 0;
    for (const auto& ps : samples) rate += ps.clicks[0];
    rate /= static_cast<double>(samples.size());
    CHECK(std::abs(rate - probs[0]) < 0.01);
}

TEST_CASE("simulator checkpoints reload to identical behavior") {
    Fixture fx(1, 4, 3, 79);
    auto sim = Simulator<float>::create(3, 8, 83);
    const std::string path =
        std::filesystem::temp_directory_path() / "ultr_sim_ckpt_test";
    sim.save(path);
    const auto back = Simulator<float>::load(path);
    CHECK(back.hidden == sim.hidden);
    CHECK(back.feat_dim == sim.feat_dim);
    SimulatorForward<float> fa(sim), fb(back);
    std::vector<double> pa, pb;
    std::vector<uint8_t> ca, cb;
    fa.decode(fx.docs[0], pa, ca, nullptr);
    fb.decode(fx.docs[0], pb, cb, nullptr);
    CHECK(pa == pb);
    CHECK(ca == cb);
    std::filesystem::remove(path);
}
