#include <doctest.h>

#include <set>
#include <sstream>

#include "ultr/dataset.hpp"

using namespace ultr;

TEST_CASE("parse_letor reads grades, qids and dense features") {
    std::istringstream in("2 qid:1 1:0.5 3:1.0\n");
    const Dataset ds = parse_letor(in);
    REQUIRE(ds.queries.size() == 1);
    REQUIRE(ds.queries[0].candidates.size() == 1);
    const auto& doc = ds.queries[0].candidates[0];
    CHECK(doc.grade == 2);
    CHECK(ds.feature_dim == 3);
    REQUIRE(doc.features.size() == 3);
    CHECK(doc.features[0] == 0.5);
    CHECK(doc.features[1] == 0.0);  // absent ids fill with zero
    CHECK(doc.features[2] == 1.0);
}

TEST_CASE("parse_letor on empty input yields an empty dataset") {
    std::istringstream in("");
    const Dataset ds = parse_letor(in);
    CHECK(ds.queries.empty());
    CHECK(ds.num_documents() == 0);
}

TEST_CASE("parse_letor groups lines sharing a qid") {
    std::istringstream in(
        "0 qid:7 1:1.0\n"
        "1 qid:9 1:2.0\n"
        "3 qid:7 2:0.25 # trailing comment\n");
    const Dataset ds = parse_letor(in);
    REQUIRE(ds.queries.size() == 2);
    CHECK(ds.queries[0].query_id == "7");
    CHECK(ds.queries[0].candidates.size() == 2);
    CHECK(ds.queries[1].candidates.size() == 1);
    ds.validate();
}

TEST_CASE("parse_letor reports malformed lines with their number") {
    std::istringstream in("0 qid:1 1:1.0\nnot a line\n");
    CHECK_THROWS_WITH_AS(parse_letor(in), doctest::Contains("line 2"),
                         std::runtime_error);

    std::istringstream bad_grade("9 qid:1 1:1.0\n");
    CHECK_THROWS_WITH_AS(parse_letor(bad_grade), doctest::Contains("validation"),
                         std::runtime_error);

    std::istringstream bad_feat("1 qid:1 0:1.0\n");
    CHECK_THROWS_AS(parse_letor(bad_feat), std::runtime_error);
}

TEST_CASE("letor round trip reparses to an equal dataset") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const Dataset ds = generate_synthetic(
            1 + static_cast<int>(rng.uniform_int(8)),
            1 + static_cast<int>(rng.uniform_int(6)),
            1 + static_cast<int>(rng.uniform_int(5)), 4, rng.next_u64());
        std::ostringstream out;
        serialize_letor(ds, out);
        std::istringstream in(out.str());
        const Dataset back = parse_letor(in, ds.y_max);
        CHECK(dataset_equal(ds, back));
    }
}

TEST_CASE("generate_synthetic is a pure function of its arguments") {
    const Dataset a = generate_synthetic(5, 4, 3, 4, 123);
    const Dataset b = generate_synthetic(5, 4, 3, 4, 123);
    std::ostringstream sa, sb;
    serialize_letor(a, sa);
    serialize_letor(b, sb);
    CHECK(sa.str() == sb.str());

    const Dataset c = generate_synthetic(5, 4, 3, 4, 124);
    std::ostringstream sc;
    serialize_letor(c, sc);
    CHECK(sa.str() != sc.str());
}

TEST_CASE("generate_synthetic sizes and grade coverage") {
    const Dataset ds = generate_synthetic(500, 10, 8, 4, 9);
    CHECK(ds.queries.size() == 500);
    CHECK(ds.num_documents() == 5000);
    ds.validate();

    const Dataset big = generate_synthetic(1000, 10, 8, 4, 10);
    std::vector<int> hist(big.y_max + 1, 0);
    for (const auto& q : big.queries)
        for (const auto& d : q.candidates) ++hist[d.grade];
    for (int g = 0; g <= big.y_max; ++g) {
        INFO("grade ", g);
        CHECK(hist[g] > 0);
    }
}

TEST_CASE("split honors the 60/20/20 scheme on 10 queries") {
    const Dataset ds = generate_synthetic(10, 3, 4, 4, 5);
    const SplitResult s = split(ds, 0.6, 0.2, 0.2, 17);
    CHECK(s.train.queries.size() == 6);
    CHECK(s.valid.queries.size() == 2);
    CHECK(s.test.queries.size() == 2);
    CHECK(s.train.split_tag == "train");
}

TEST_CASE("split with all mass on train") {
    const Dataset ds = generate_synthetic(7, 3, 4, 4, 5);
    const SplitResult s = split(ds, 1.0, 0.0, 0.0, 17);
    CHECK(s.train.queries.size() == 7);
    CHECK(s.valid.queries.empty());
    CHECK(s.test.queries.empty());
}

TEST_CASE("split rejects bad fractions") {
    const Dataset ds = generate_synthetic(4, 2, 2, 4, 5);
    CHECK_THROWS_AS(split(ds, 0.5, 0.2, 0.2, 1), std::invalid_argument);
}

TEST_CASE("splits are query-disjoint and exhaustive") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int nq = 1 + static_cast<int>(rng.uniform_int(40));
        const Dataset ds = generate_synthetic(nq, 2, 3, 4, rng.next_u64());
        const SplitResult s = split(ds, 0.6, 0.2, 0.2, rng.next_u64());
        std::set<std::string> seen;
        size_t total = 0;
        for (const Dataset* part : {&s.train, &s.valid, &s.test}) {
            for (const auto& q : part->queries) {
                CHECK(seen.insert(q.query_id).second);  // disjoint
                ++total;
            }
        }
        CHECK(total == ds.queries.size());  // exhaustive
    }
}

TEST_CASE("initial ranker learns the sign of a single informative feature") {
    // grade follows feature 0
    Dataset ds;
    ds.feature_dim = 2;
    ds.y_max = 1;
    Rng rng(3);
    for (int qi = 0; qi < 20; ++qi) {
        Query q;
        q.query_id = "q" + std::to_string(qi);
        for (int di = 0; di < 6; ++di) {
            Document d;
            d.doc_id = q.query_id + "_d" + std::to_string(di);
            d.features = {rng.normal(), rng.normal()};
            d.grade = d.features[0] > 0 ? 1 : 0;
            q.candidates.push_back(std::move(d));
        }
        ds.queries.push_back(std::move(q));
    }
    const LinearRanker r = train_initial_ranker(ds, 1.0, 11);
    CHECK(r.weights[0] > 0);
    CHECK(std::abs(r.weights[0]) > std::abs(r.weights[1]));
}

TEST_CASE("initial ranker orders held-out docs by grade on separable data") {
    Dataset ds;
    ds.feature_dim = 3;
    ds.y_max = 4;
    Rng rng(13);
    for (int qi = 0; qi < 30; ++qi) {
        Query q;
        q.query_id = "q" + std::to_string(qi);
        for (int di = 0; di < 5; ++di) {
            Document d;
            d.doc_id = q.query_id + "_d" + std::to_string(di);
            const int grade = static_cast<int>(rng.uniform_int(5));
            d.features = {static_cast<double>(grade), rng.normal() * 0.01,
                          rng.normal() * 0.01};
            d.grade = grade;
            q.candidates.push_back(std::move(d));
        }
        ds.queries.push_back(std::move(q));
    }
    const LinearRanker r = train_initial_ranker(ds, 1.0, 5);
    // held-out lists with distinct grades: score order must match grade order
    for (int trial = 0; trial < 10; ++trial) {
        Query q;
        q.query_id = "h" + std::to_string(trial);
        std::vector<int> grades = {0, 1, 2, 3, 4};
        Rng trng(100 + trial);
        trng.shuffle(grades);
        for (int di = 0; di < 5; ++di) {
            Document d;
            d.doc_id = "h_d" + std::to_string(di);
            d.features = {static_cast<double>(grades[di]), trng.normal() * 0.01,
                          trng.normal() * 0.01};
            d.grade = grades[di];
            q.candidates.push_back(std::move(d));
        }
        const RankedList rl = r.rank(q, 5);
        for (size_t i = 0; i + 1 < rl.doc_ids.size(); ++i) {
            int gi = 0, gj = 0;
            for (const auto& d : q.candidates) {
                if (d.doc_id == rl.doc_ids[i]) gi = d.grade;
                if (d.doc_id == rl.doc_ids[i + 1]) gj = d.grade;
            }
            CHECK(gi >= gj);
        }
    }
}

TEST_CASE("initial ranker is deterministic given the seed") {
    const Dataset ds = generate_synthetic(40, 8, 6, 4, 21);
    const LinearRanker a = train_initial_ranker(ds, 0.5, 9);
    const LinearRanker b = train_initial_ranker(ds, 0.5, 9);
    CHECK(a.weights == b.weights);
}

TEST_CASE("initial ranker rejects bad label fractions") {
    const Dataset ds = generate_synthetic(5, 3, 2, 4, 1);
    CHECK_THROWS_AS(train_initial_ranker(ds, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_initial_ranker(ds, 1.5, 1), std::invalid_argument);
}

TEST_CASE("ranked lists break score ties by doc_id") {
    Query q;
    q.query_id = "q";
    for (int di = 0; di < 3; ++di) {
        Document d;
        d.doc_id = "d" + std::to_string(2 - di);
        d.features = {1.0};
        q.candidates.push_back(std::move(d));
    }
    LinearRanker r;
    r.weights = {0.0};  // every score ties at zero
    const RankedList rl = r.rank(q, 3);
    CHECK(rl.doc_ids == std::vector<std::string>{"d0", "d1", "d2"});
}

TEST_CASE("split manifest lists every query with its tag") {
    const Dataset ds = generate_synthetic(5, 2, 2, 4, 3);
    const SplitResult s = split(ds, 0.6, 0.2, 0.2, 3);
    std::ostringstream out;
    write_split_manifest(s, out);
    int lines = 0;
    std::istringstream in(out.str());
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 5);
    CHECK(out.str().find("\ttrain") != std::string::npos);
}
