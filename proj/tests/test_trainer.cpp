#include <doctest.h>

#include <algorithm>
#include <set>

#include "ultr/trainer.hpp"

using namespace ultr;

namespace {

struct TrainFixture {
    Dataset train, valid;
    std::vector<RankedList> logged;
    ClickModelConfig click;

    explicit TrainFixture(int nq = 40, int nd = 5, int dim = 6, uint64_t seed = 3) {
        const Dataset full = generate_synthetic(nq, nd, dim, 4, seed);
        SplitResult s = split(full, 0.8, 0.2, 0.0, seed);
        train = std::move(s.train);
        valid = std::move(s.valid);
        const LinearRanker logger = train_initial_ranker(train, 0.2, seed);
        logged = logged_rankings(train, logger, nd);
    }

    TrainConfig small_config(Objective obj) const {
        TrainConfig cfg;
        cfg.objective = obj;
        cfg.batch = 8;
        cfg.steps = 30;
        cfg.lr = 0.05;
        cfg.pseudo_samples = 2;
        cfg.hidden = {8};
        cfg.dropout = 0.1;
        cfg.top_n = 5;
        cfg.seed = 17;
        cfg.eval_every = 10;
        return cfg;
    }
};

}  // namespace

TEST_CASE("sample_unobserved_lists basics") {
    RankedList obs;
    obs.query_id = "q";
    obs.doc_ids = {"a", "b", "c"};
    Rng rng(5);

    SUBCASE("k = 0 yields nothing") {
        CHECK(sample_unobserved_lists(obs, 0, rng).empty());
    }
    SUBCASE("asking for more than 3! - 1 permutations returns exactly all of them") {
        const auto lists = sample_unobserved_lists(obs, 10, rng);
        CHECK(lists.size() == 5);
        std::set<std::vector<std::string>> seen;
        for (const auto& rl : lists) {
            CHECK(rl.doc_ids != obs.doc_ids);
            CHECK(seen.insert(rl.doc_ids).second);
            auto sorted = rl.doc_ids;
            std::sort(sorted.begin(), sorted.end());
            CHECK(sorted == obs.doc_ids);  // a permutation of the same documents
        }
    }
    SUBCASE("samples are distinct and never the observed list") {
        RankedList wide;
        wide.query_id = "q";
        for (int i = 0; i < 8; ++i) wide.doc_ids.push_back("d" + std::to_string(i));
        for (int trial = 0; trial < 20; ++trial) {
            const auto lists = sample_unobserved_lists(wide, 6, rng);
            CHECK(lists.size() == 6);
            std::set<std::vector<std::string>> seen;
            for (const auto& rl : lists) {
                CHECK(rl.doc_ids != wide.doc_ids);
                CHECK(seen.insert(rl.doc_ids).second);
            }
        }
    }
    SUBCASE("single-document lists have no unobserved permutations") {
        RankedList one;
        one.query_id = "q";
        one.doc_ids = {"a"};
        CHECK(sample_unobserved_lists(one, 4, rng).empty());
    }
}

TEST_CASE("training is deterministic given identical seeds") {
    TrainFixture fx;
    const auto cfg = fx.small_config(Objective::naive);
    const auto a = train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                nullptr, cfg);
    const auto b = train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                nullptr, cfg);
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss == b.trace[i].loss);
        CHECK(a.trace[i].valid_ndcg10 == b.trace[i].valid_ndcg10);
    }
    for (size_t ti = 0; ti < a.ranker.params.tensors.size(); ++ti)
        CHECK(a.ranker.params.tensors[ti].v == b.ranker.params.tensors[ti].v);
}

TEST_CASE("missing dependencies are configuration errors") {
    TrainFixture fx;
    PropensityEstimate prop;
    prop.p = {1.0, 0.8, 0.6, 0.4, 0.2};
    CHECK_THROWS_AS(train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                 &prop, fx.small_config(Objective::dr)),
                    std::invalid_argument);
    CHECK_THROWS_AS(train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                 nullptr, fx.small_config(Objective::ipw)),
                    std::invalid_argument);
}

TEST_CASE("dr with k = 0 and zero imputation matches ipw step for step") {
    TrainFixture fx;
    PropensityEstimate prop;
    prop.p = {1.0, 0.8, 0.6, 0.4, 0.2};

    auto dr_cfg = fx.small_config(Objective::dr);
    dr_cfg.pseudo_samples = 0;
    dr_cfg.force_zero_imputation = true;
    const auto dr = train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                 &prop, dr_cfg);

    const auto ipw_cfg = fx.small_config(Objective::ipw);
    const auto ipw = train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                  &prop, ipw_cfg);

    REQUIRE(dr.trace.size() == ipw.trace.size());
    for (size_t i = 0; i < dr.trace.size(); ++i)
        CHECK(dr.trace[i].loss == doctest::Approx(ipw.trace[i].loss).epsilon(1e-9));
}

TEST_CASE("loss stays finite for every objective") {
    TrainFixture fx;
    PropensityEstimate prop;
    prop.p = {1.0, 0.5, 0.25, 0.125, 0.0625};
    auto sim = Simulator<float>::create(fx.train.feature_dim, 8, 23);

    for (const Objective obj : {Objective::naive, Objective::ipw, Objective::eib,
                                Objective::dr, Objective::oracle}) {
        const auto cfg = fx.small_config(obj);
        const auto res =
            train_ranker(fx.train, fx.valid, fx.logged, fx.click, &sim, &prop, cfg);
        for (const auto& row : res.trace) {
            INFO("objective ", to_string(obj), " step ", row.step);
            CHECK(std::isfinite(row.loss));
            CHECK(std::isfinite(row.valid_ndcg10));
        }
    }
}

TEST_CASE("imputation parallelism does not change the training trajectory") {
    TrainFixture fx;
    PropensityEstimate prop;
    prop.p = {1.0, 0.8, 0.6, 0.4, 0.2};
    auto sim = Simulator<float>::create(fx.train.feature_dim, 8, 29);

    auto cfg = fx.small_config(Objective::dr);
    cfg.threads = 1;
    const auto serial =
        train_ranker(fx.train, fx.valid, fx.logged, fx.click, &sim, &prop, cfg);
    cfg.threads = 4;
    const auto parallel =
        train_ranker(fx.train, fx.valid, fx.logged, fx.click, &sim, &prop, cfg);
    REQUIRE(serial.trace.size() == parallel.trace.size());
    for (size_t i = 0; i < serial.trace.size(); ++i)
        CHECK(serial.trace[i].loss == parallel.trace[i].loss);
}

TEST_CASE("variants dispatch onto the right objectives") {
    TrainFixture fx;
    PropensityEstimate prop;
    prop.p = {1.0, 0.8, 0.6, 0.4, 0.2};
    auto sim = Simulator<float>::create(fx.train.feature_dim, 8, 31);
    const auto cfg = fx.small_config(Objective::dr);

    // rand-multr never touches the trained simulator
    const auto rand_res = run_variant(Variant::rand_multr, fx.train, fx.valid,
                                      fx.logged, fx.click, nullptr, &prop, cfg);
    CHECK(std::isfinite(rand_res.trace.back().loss));

    const auto eib_res = run_variant(Variant::eib_multr, fx.train, fx.valid,
                                     fx.logged, fx.click, &sim, &prop, cfg);
    CHECK(std::isfinite(eib_res.trace.back().loss));

    const auto multr_res = run_variant(Variant::multr, fx.train, fx.valid, fx.logged,
                                       fx.click, &sim, &prop, cfg);
    CHECK(std::isfinite(multr_res.trace.back().loss));

    CHECK(variant_from_string("multr") == Variant::multr);
    CHECK(variant_from_string("rand-multr") == Variant::rand_multr);
    CHECK(variant_from_string("eib-multr") == Variant::eib_multr);
    CHECK_THROWS_AS(variant_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("oracle training improves ranking quality on easy data") {
    TrainFixture fx(60, 6, 6, 41);
    auto cfg = fx.small_config(Objective::oracle);
    cfg.steps = 300;
    cfg.batch = 16;
    cfg.eval_every = 300;
    const auto res = train_ranker(fx.train, fx.valid, fx.logged, fx.click, nullptr,
                                  nullptr, cfg);

    // untrained baseline
    auto untrained_cfg = cfg;
    untrained_cfg.steps = 1;
    untrained_cfg.lr = 1e-9;
    const auto untrained = train_ranker(fx.train, fx.valid, fx.logged, fx.click,
                                        nullptr, nullptr, untrained_cfg);
    CHECK(res.trace.back().valid_ndcg10 > untrained.trace.back().valid_ndcg10);
    CHECK(res.trace.back().valid_ndcg10 > 0.6);
}
