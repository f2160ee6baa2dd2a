#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "licorice/concepts.hpp"

using namespace licorice;

namespace {

std::vector<LabeledExample> make_examples(int n, int obs_dim, Rng& rng, int label = -1) {
    std::vector<LabeledExample> out;
    for (int i = 0; i < n; ++i) {
        LabeledExample e;
        for (int d = 0; d < obs_dim; ++d) e.observation.push_back(static_cast<float>(uniform01(rng) * 2 - 1));
        const int y = label >= 0 ? label : (e.observation[0] > 0 ? 1 : 0);
        e.concepts = {static_cast<double>(y)};
        e.meta.iteration = 1;
        e.meta.source = "test";
        e.meta.timestamp_ms = i;
        out.push_back(std::move(e));
    }
    return out;
}

ConceptSchema binary_schema() { return ConceptSchema({ConceptSpec::categorical("c", 2, "c")}); }

double brute_variation_ratio(const std::vector<std::vector<int>>& votes) {
    const std::size_t n = votes.size(), vars = votes[0].size();
    double total = 0;
    for (std::size_t j = 0; j < vars; ++j) {
        std::map<int, int> counts;
        for (const auto& m : votes) ++counts[m[j]];
        int mode = 0;
        for (const auto& [k, c] : counts) mode = std::max(mode, c);
        total += 1.0 - static_cast<double>(mode) / static_cast<double>(n);
    }
    return total / static_cast<double>(vars);
}

}  // namespace

TEST_CASE("split of 20 examples is 16 / 4") {
    Rng rng(1);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(20, 3, rng), 0.2, rng);
    CHECK(d.train().size() == 16);
    CHECK(d.val().size() == 4);
}

TEST_CASE("a singleton batch goes to train; small batches keep both sides non-empty") {
    Rng rng(2);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(1, 3, rng), 0.2, rng);
    CHECK(d.train().size() == 1);
    CHECK(d.val().empty());
    LabelDataset e(binary_schema());
    e.split_and_add(make_examples(2, 3, rng), 0.2, rng);
    CHECK(e.train().size() == 1);
    CHECK(e.val().size() == 1);
}

TEST_CASE("the split is a function of the seed") {
    Rng data_rng(3);
    const auto ex = make_examples(30, 3, data_rng);
    auto split = [&](std::uint64_t seed) {
        Rng rng(seed);
        LabelDataset d(binary_schema());
        d.split_and_add(ex, 0.2, rng);
        std::vector<std::int64_t> ids;
        for (const auto& e : d.val()) ids.push_back(e.meta.timestamp_ms);
        return ids;
    };
    CHECK(split(7) == split(7));
    CHECK(split(7) != split(8));
}

TEST_CASE("merge appends per partition") {
    Rng rng(4);
    LabelDataset a(binary_schema()), b(binary_schema());
    a.split_and_add(make_examples(10, 3, rng), 0.2, rng);
    b.split_and_add(make_examples(20, 3, rng), 0.2, rng);
    a.merge(b);
    CHECK(a.train().size() == 8 + 16);
    CHECK(a.val().size() == 2 + 4);
}

TEST_CASE("label files round-trip") {
    Rng rng(5);
    LabelDataset a(binary_schema());
    a.split_and_add(make_examples(10, 3, rng), 0.2, rng);
    const auto path = (std::filesystem::temp_directory_path() / "licorice_labels_test.jsonl").string();
    a.save_jsonl(path);
    const LabelDataset b = LabelDataset::load_jsonl(path);
    std::remove(path.c_str());
    REQUIRE(b.train().size() == a.train().size());
    REQUIRE(b.val().size() == a.val().size());
    for (std::size_t i = 0; i < a.train().size(); ++i) {
        CHECK(b.train()[i].observation == a.train()[i].observation);
        CHECK(b.train()[i].concepts == a.train()[i].concepts);
        CHECK(b.train()[i].meta.source == a.train()[i].meta.source);
    }
}

TEST_CASE("variation ratio") {
    // one variable, votes A A A B C: modal count 3 of 5
    CHECK(variation_ratio({{0}, {0}, {0}, {1}, {2}}) == doctest::Approx(0.4));
    // a second, unanimous variable halves the mean
    CHECK(variation_ratio({{0, 1}, {0, 1}, {0, 1}, {1, 1}, {2, 1}}) == doctest::Approx(0.2));
    CHECK(variation_ratio({{3, 1}, {3, 1}, {3, 1}}) == 0.0);
}

TEST_CASE("variation ratio agrees with a brute-force count") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = uniform_int(rng, 2, 7), vars = uniform_int(rng, 1, 6);
        std::vector<std::vector<int>> votes(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(vars)));
        for (auto& m : votes)
            for (int& v : m) v = uniform_int(rng, 0, 3);
        CHECK(variation_ratio(votes) == doctest::Approx(brute_variation_ratio(votes)).epsilon(1e-12));
    }
}

TEST_CASE("prediction variance") {
    CHECK(prediction_variance({{0.0}, {1.0}}) == doctest::Approx(0.5));
    CHECK(prediction_variance({{2.0, 1.0}, {2.0, 3.0}, {2.0, 5.0}}) == doctest::Approx((0.0 + 4.0) / 2));
    CHECK_THROWS_AS(prediction_variance({{1.0}}), Error);
}

TEST_CASE("batch selection") {
    const std::vector<double> s{0.1, 0.9, 0.5};
    auto pick = select_batch(s, 2);
    std::sort(pick.begin(), pick.end());
    CHECK(pick == std::vector<std::size_t>{1, 2});

    const std::vector<double> ties{0.3, 0.3, 0.3};
    pick = select_batch(ties, 2);
    std::sort(pick.begin(), pick.end());
    CHECK(pick == std::vector<std::size_t>{0, 1});

    CHECK(select_batch(s, 10).size() == 3);
    CHECK(select_batch(s, 0).empty());
}

TEST_CASE("patience schedule runs from 10 to 20") {
    CHECK(patience_for_iteration(1, 2) == 10);
    CHECK(patience_for_iteration(2, 2) == 20);
    CHECK(patience_for_iteration(1, 4) == 10);
    CHECK(patience_for_iteration(2, 4) == 13);
    CHECK(patience_for_iteration(3, 4) == 17);
    CHECK(patience_for_iteration(4, 4) == 20);
    CHECK(patience_for_iteration(1, 1) == 10);
}

TEST_CASE("a constant concept is learned") {
    Rng rng(7);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(40, 4, rng, 1), 0.2, rng);
    ConceptNet<float> net(binary_schema(), 4, {16});
    EarlyStopConfig cfg;
    cfg.lr = 1e-2;
    cfg.max_epochs = 100;
    const auto res = train_concept_net(net, d, cfg, false, rng);
    CHECK(res.best_val_loss < 0.05);
    CHECK(concept_loss(net, d.train()) < 0.05);
}

TEST_CASE("training keeps the best-validation parameters") {
    Rng rng(8);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(60, 4, rng), 0.2, rng);
    ConceptNet<float> net(binary_schema(), 4, {16});
    EarlyStopConfig cfg;
    cfg.max_epochs = 40;
    cfg.patience = 5;
    cfg.lr = 1e-2;
    const auto res = train_concept_net(net, d, cfg, false, rng);
    REQUIRE(!res.val_losses.empty());
    const auto best = std::min_element(res.val_losses.begin(), res.val_losses.end());
    CHECK(res.best_epoch == best - res.val_losses.begin());
    CHECK(res.best_val_loss == doctest::Approx(*best));
    CHECK(concept_loss(net, d.val()) == doctest::Approx(*best).epsilon(1e-5));
    CHECK(res.epochs_run <= cfg.max_epochs);
    if (res.epochs_run < cfg.max_epochs) CHECK(res.epochs_run - res.best_epoch >= cfg.patience);
}

TEST_CASE("ensemble scores do not depend on member order") {
    Rng rng(9);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(30, 4, rng), 0.2, rng);
    ConceptEnsemble ens(binary_schema(), 4, {8}, 5);
    EarlyStopConfig cfg;
    cfg.max_epochs = 5;
    cfg.patience = 5;
    ens.train(d, cfg, 10);
    Matrix<float> pool(4, 50);
    for (Eigen::Index i = 0; i < pool.size(); ++i) pool.data()[i] = static_cast<float>(uniform01(rng) * 2 - 1);
    const auto before = ens.score(pool);
    const std::vector<std::size_t> order{3, 1, 4, 0, 2};
    ens.permute(order);
    CHECK(ens.score(pool) == before);
    for (double s : before) {
        CHECK(s >= 0);
        CHECK(s <= 0.4 + 1e-12);  // two classes, five voters: modal count >= 3
    }
}

TEST_CASE("ensemble members are trained independently") {
    Rng rng(11);
    LabelDataset d(binary_schema());
    d.split_and_add(make_examples(30, 4, rng), 0.2, rng);
    ConceptEnsemble ens(binary_schema(), 4, {8}, 3);
    EarlyStopConfig cfg;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    ens.train(d, cfg, 12);
    CHECK(nn::serialize_params(ens[0].params) != nn::serialize_params(ens[1].params));
}
