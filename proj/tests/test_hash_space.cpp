#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <limits>

#include "hashlat/core/rng.hpp"
#include "hashlat/hash_space.hpp"
#include "oracles.hpp"

using namespace hashlat;

namespace {

HashCode random_code(Rng& rng, int64_t k) {
    std::vector<int8_t> bits(static_cast<size_t>(k));
    for (auto& b : bits) b = rng.uniform() < 0.5 ? int8_t{-1} : int8_t{1};
    return HashCode(std::move(bits));
}

MultiLabelVector labels(std::initializer_list<int> bits) {
    std::vector<uint8_t> v;
    for (int b : bits) v.push_back(static_cast<uint8_t>(b));
    return MultiLabelVector(std::move(v));
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("pairwise_similarity follows the shared-label rule") {
    CHECK(pairwise_similarity(labels({1, 0, 1}), labels({0, 0, 1})) == 1);
    CHECK(pairwise_similarity(labels({1, 0, 0}), labels({0, 1, 0})) == 0);
    CHECK(pairwise_similarity(labels({0, 1, 1}), labels({0, 1, 1})) == 1);
    CHECK_THROWS_AS(pairwise_similarity(labels({1, 0}), labels({1, 0, 0})), DimensionError);

    // symmetry + equality on random label pairs
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        MultiLabelVector a, b;
        for (int i = 0; i < 6; ++i) {
            a.bits.push_back(rng.uniform() < 0.4 ? 1 : 0);
            b.bits.push_back(rng.uniform() < 0.4 ? 1 : 0);
        }
        if (!a.any()) a.bits[0] = 1;
        if (!b.any()) b.bits[0] = 1;
        CHECK(pairwise_similarity(a, b) == pairwise_similarity(b, a));
        CHECK(pairwise_similarity(a, a) == 1);
    }
}

TEST_CASE("sign_binarize maps zero to +1 and rejects NaN") {
    HashCode c = sign_binarize(ContinuousCode({0.3, -2.0, 5.1}));
    CHECK(c.bits == std::vector<int8_t>{1, -1, 1});
    HashCode z = sign_binarize(ContinuousCode({0.0, 0.0}));
    CHECK(z.bits == std::vector<int8_t>{1, 1});
    HashCode neg = sign_binarize(ContinuousCode({-0.1, -7.0, -1e-12}));
    CHECK(neg.bits == std::vector<int8_t>{-1, -1, -1});
    CHECK_THROWS_AS(sign_binarize(ContinuousCode({std::numeric_limits<double>::quiet_NaN()})),
                    InvalidValueError);
}

TEST_CASE("hamming_distance identities") {
    Rng rng(17);
    HashCode a = random_code(rng, 16);
    CHECK(hamming_distance(a, a) == 0.0);
    HashCode neg = a;
    for (auto& b : neg.bits) b = static_cast<int8_t>(-b);
    CHECK(hamming_distance(a, neg) == 16.0);
    CHECK_THROWS_AS(hamming_distance(a, random_code(rng, 8)), DimensionError);

    // d_H == (k - a.b)/2 on 1e4 random pairs for each k
    for (int64_t k : {16, 32, 64}) {
        for (int trial = 0; trial < 10000; ++trial) {
            HashCode x = random_code(rng, k);
            HashCode y = random_code(rng, k);
            double dot = 0.0;
            for (int64_t i = 0; i < k; ++i) dot += static_cast<double>(x.bits[i]) * y.bits[i];
            double expected = (static_cast<double>(k) - dot) / 2.0;
            double got = hamming_distance(x, y);
            REQUIRE(got == expected);
            REQUIRE(got == oracle::hamming_per_bit(x, y));
            REQUIRE(got >= 0.0);
            REQUIRE(got <= static_cast<double>(k));
            REQUIRE(hamming_distance(y, x) == got);
        }
    }
}

TEST_CASE("hamming triangle inequality on sampled triples") {
    Rng rng(29);
    for (int trial = 0; trial < 2000; ++trial) {
        HashCode a = random_code(rng, 32), b = random_code(rng, 32), c = random_code(rng, 32);
        CHECK(hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c));
    }
}

TEST_CASE("retrieve_topk basics and determinism") {
    Rng rng(41);
    RetrievalIndex index(16, 3);
    HashCode only = random_code(rng, 16);
    index.add(7, only, labels({1, 0, 0}));

    SUBCASE("single entry") {
        auto ids = retrieve_topk(index, random_code(rng, 16), 1);
        CHECK(ids == std::vector<int64_t>{7});
    }
    SUBCASE("exact match ranks first") {
        for (int i = 0; i < 9; ++i) index.add(10 + i, random_code(rng, 16), labels({0, 1, 0}));
        auto ids = retrieve_topk(index, only, 5);
        CHECK(ids.front() == 7);
    }
    SUBCASE("empty index") {
        RetrievalIndex empty(16, 3);
        CHECK_THROWS_AS(retrieve_topk(empty, only, 1), EmptyIndexError);
    }
    SUBCASE("oracle equivalence with tie-break by id") {
        RetrievalIndex big(16, 3);
        std::vector<HashCode> codes;
        std::vector<int64_t> ids;
        // shuffled id insertion order so ties actually exercise the id sort
        std::vector<int64_t> id_pool;
        for (int64_t i = 0; i < 200; ++i) id_pool.push_back(i * 3 + 1);
        Rng srng(4242);
        srng.shuffle(id_pool);
        for (int64_t id : id_pool) {
            HashCode code = random_code(srng, 16);
            big.add(id, code, labels({1, 0, 0}));
            codes.push_back(code);
            ids.push_back(id);
        }
        for (int trial = 0; trial < 50; ++trial) {
            HashCode q = random_code(srng, 16);
            auto got = retrieve_topk(big, q, 20);
            auto expected = oracle::topk_exhaustive(codes, ids, q, 20);
            REQUIRE(got == expected);
        }
    }
}

TEST_CASE("t_map_at_k matches hand-built and exhaustive oracles") {
    SUBCASE("all relevant -> 1, none relevant -> 0") {
        Rng rng(55);
        RetrievalIndex index(16, 2);
        for (int i = 0; i < 6; ++i) index.add(i, random_code(rng, 16), labels({1, 0}));
        std::vector<std::pair<HashCode, MultiLabelVector>> q_all = {
            {random_code(rng, 16), labels({1, 0})}};
        CHECK(t_map_at_k(index, q_all, 5).t_map == doctest::Approx(1.0));
        std::vector<std::pair<HashCode, MultiLabelVector>> q_none = {
            {random_code(rng, 16), labels({0, 1})}};
        CHECK(t_map_at_k(index, q_none, 5).t_map == doctest::Approx(0.0));
    }

    SUBCASE("hand-built relevance pattern [1,0,1,0,0] -> 0.8333...") {
        // 6-item index engineered so ranks 1 and 3 are relevant at K=5.
        // Query all +1; distances controlled by flipped-bit counts.
        int64_t k = 16;
        auto make = [&](int flips) {
            std::vector<int8_t> bits(static_cast<size_t>(k), 1);
            for (int i = 0; i < flips; ++i) bits[static_cast<size_t>(i)] = -1;
            return HashCode(std::move(bits));
        };
        RetrievalIndex index(k, 2);
        index.add(0, make(0), labels({1, 0}));  // rank 1, relevant
        index.add(1, make(1), labels({0, 1}));  // rank 2
        index.add(2, make(2), labels({1, 0}));  // rank 3, relevant
        index.add(3, make(3), labels({0, 1}));  // rank 4
        index.add(4, make(4), labels({0, 1}));  // rank 5
        index.add(5, make(5), labels({1, 0}));  // rank 6, outside K
        std::vector<std::pair<HashCode, MultiLabelVector>> queries = {
            {make(0), labels({1, 0})}};
        double expected = oracle::average_precision_pattern({1, 0, 1, 0, 0});
        CHECK(expected == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
        TmapResult r = t_map_at_k(index, queries, 5);
        CHECK(r.t_map == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("exhaustive oracle on random indexes up to 100 entries") {
        Rng rng(77);
        for (int round = 0; round < 5; ++round) {
            int64_t n = 20 + round * 20;
            RetrievalIndex index(16, 4);
            std::vector<HashCode> codes;
            std::vector<int64_t> ids;
            std::vector<MultiLabelVector> labs;
            for (int64_t i = 0; i < n; ++i) {
                HashCode code = random_code(rng, 16);
                MultiLabelVector lab;
                for (int c = 0; c < 4; ++c) lab.bits.push_back(rng.uniform() < 0.3 ? 1 : 0);
                if (!lab.any()) lab.bits[static_cast<size_t>(rng.uniform_int(0, 3))] = 1;
                index.add(i, code, lab);
                codes.push_back(code);
                ids.push_back(i);
                labs.push_back(lab);
            }
            std::vector<std::pair<HashCode, MultiLabelVector>> queries;
            for (int q = 0; q < 8; ++q) {
                MultiLabelVector target;
                for (int c = 0; c < 4; ++c) target.bits.push_back(0);
                target.bits[static_cast<size_t>(rng.uniform_int(0, 3))] = 1;
                queries.emplace_back(random_code(rng, 16), target);
            }
            double expected = oracle::tmap_exhaustive(codes, ids, labs, queries, 10);
            TmapResult got = t_map_at_k(index, queries, 10);
            REQUIRE(std::abs(got.t_map - expected) < 1e-12);
        }
    }

    SUBCASE("error paths") {
        Rng rng(88);
        RetrievalIndex index(16, 2);
        index.add(0, random_code(rng, 16), labels({1, 0}));
        std::vector<std::pair<HashCode, MultiLabelVector>> queries = {
            {random_code(rng, 16), labels({1, 0})}};
        CHECK_THROWS_AS(t_map_at_k(index, queries, 0), InvalidArgumentError);
        CHECK_THROWS_AS(t_map_at_k(index, {}, 1), InvalidArgumentError);
    }
}

TEST_CASE("index persistence round-trips exactly") {
    Rng rng(101);
    RetrievalIndex index(16, 5);
    for (int64_t i = 0; i < 37; ++i) {
        MultiLabelVector lab;
        for (int c = 0; c < 5; ++c) lab.bits.push_back(rng.uniform() < 0.4 ? 1 : 0);
        if (!lab.any()) lab.bits[0] = 1;
        index.add(i * 7, random_code(rng, 16), lab);
    }
    std::string path = temp_path("hashlat_index_test.tsv");
    index.save(path);
    RetrievalIndex loaded = RetrievalIndex::load(path);
    REQUIRE(loaded.size() == index.size());
    REQUIRE(loaded.k() == index.k());
    REQUIRE(loaded.num_classes() == index.num_classes());
    for (int64_t i = 0; i < index.size(); ++i) {
        CHECK(loaded.id_at(i) == index.id_at(i));
        CHECK(loaded.labels_at(i) == index.labels_at(i));
        CHECK(loaded.code_at(i) == index.code_at(i));
    }
    // Byte-for-byte stability of a save/load/save cycle.
    std::string path2 = temp_path("hashlat_index_test2.tsv");
    loaded.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("metrics report JSON round-trips") {
    TmapResult r;
    r.t_map = 0.62345;
    r.K = 50;
    r.per_query_ap = {0.1, 0.9, 0.87012, 0.0};
    std::string json = metrics_report_json(r);
    TmapResult back = metrics_report_from_json(json);
    CHECK(back.t_map == r.t_map);
    CHECK(back.K == r.K);
    CHECK(back.per_query_ap == r.per_query_ap);
}

TEST_CASE("index rejects malformed additions") {
    RetrievalIndex index(16, 2);
    Rng rng(1);
    HashCode code = random_code(rng, 16);
    index.add(0, code, labels({1, 0}));
    CHECK_THROWS_AS(index.add(0, code, labels({1, 0})), InvalidValueError);   // dup id
    CHECK_THROWS_AS(index.add(1, random_code(rng, 8), labels({1, 0})), DimensionError);
    CHECK_THROWS_AS(index.add(2, code, labels({0, 0})), InvalidValueError);   // no labels
    CHECK_THROWS_AS(index.add(3, code, labels({1, 0, 1})), DimensionError);   // C mismatch
}
