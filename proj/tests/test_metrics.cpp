#include <doctest.h>

#include <cmath>

#include "mmt/common.hpp"
#include "mmt/metrics.hpp"

using namespace mmt;

TEST_CASE("accuracy exact-match cases") {
    std::vector<int> a{1, 2, 3, 4}, b{1, 2, 3, 4}, c{0, 0, 0, 0};
    CHECK(accuracy(a, b) == 1.0);
    CHECK(accuracy(a, c) == 0.0);
    CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), config_error);
    CHECK_THROWS_AS(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), shape_error);
}

TEST_CASE("accuracy of random 6-class predictions approaches 1/6") {
    Rng rng(2024);
    std::vector<int> preds(10000), truths(10000);
    for (auto& p : preds) p = static_cast<int>(rng.next_index(6));
    for (auto& t : truths) t = static_cast<int>(rng.next_index(6));
    CHECK(std::abs(accuracy(preds, truths) - 1.0 / 6.0) < 0.02);
}

TEST_CASE("mae hand cases and loop oracle") {
    std::vector<double> x{1, 2, 3}, same{1, 2, 3};
    CHECK(mae(x, same) == 0.0);
    CHECK(mae(std::vector<double>{0, 0}, std::vector<double>{1, -1}) == 1.0);

    Rng rng(5);
    std::vector<double> a(97), b(97);
    for (auto& v : a) v = rng.next_uniform(-10, 10);
    for (auto& v : b) v = rng.next_uniform(-10, 10);
    double loop = 0;
    for (std::size_t i = 0; i < a.size(); ++i) loop += std::abs(a[i] - b[i]);
    loop /= static_cast<double>(a.size());
    CHECK(mae(a, b) == loop);  // same summation order, exact
}

TEST_CASE("ccc hand-evaluated fixed cases") {
    std::vector<double> x{1, 2, 3};
    CHECK(ccc(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    // constant shift: Pearson stays 1, CCC drops to 4/7
    std::vector<double> y{2, 3, 4};
    CHECK(ccc(x, y) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));

    // doubling: cov=4/3, vx=2/3, vy=8/3, shift^2=4 -> (8/3)/(22/3) = 4/11
    std::vector<double> x2{2, 4, 6};
    CHECK(ccc(x, x2) == doctest::Approx(4.0 / 11.0).epsilon(1e-12));

    // mirrored around the mean: perfect anti-concordance
    std::vector<double> mirrored{3, 2, 1};
    CHECK(ccc(x, mirrored) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("ccc rejects the undefined constant-vs-constant case, not NaN") {
    std::vector<double> c{2, 2, 2};
    CHECK_THROWS_AS(ccc(c, c), config_error);
    // one constant series with distinct means is defined and equals 0
    std::vector<double> x{1, 2, 3};
    CHECK(ccc(c, x) == doctest::Approx(0.0));
    // constant prediction at the mean: CCC 0, MAE = mean absolute deviation
    std::vector<double> at_mean{2, 2, 2};
    CHECK(ccc(at_mean, x) == doctest::Approx(0.0));
    CHECK(mae(at_mean, x) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ccc properties over random pairs") {
    Rng rng(31337);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 3 + rng.next_index(30);
        std::vector<double> x(n), y(n);
        for (auto& v : x) v = rng.next_uniform(-5, 5);
        for (auto& v : y) v = rng.next_uniform(-5, 5);

        const double cxy = ccc(x, y);
        CHECK(cxy >= -1.0);
        CHECK(cxy <= 1.0);
        CHECK(std::abs(cxy - ccc(y, x)) < 1e-12);          // symmetric
        CHECK(std::abs(cxy) <= std::abs(pearson(x, y)) + 1e-12);

        std::vector<double> x2(n);
        for (std::size_t i = 0; i < n; ++i) x2[i] = 2.0 * x[i];
        CHECK(ccc(x, x2) < 1.0);  // scale-sensitive, unlike Pearson
    }
}

TEST_CASE("metrics report serializes Table-style JSON") {
    MetricsReport r;
    r.task = "regress";
    r.sample_count = 10;
    r.targets.push_back({"arousal", 0.5, 0.6});
    r.targets.push_back({"valence", 0.4, 0.7});
    const auto json = r.to_json();
    CHECK(json.find("\"arousal\"") != std::string::npos);
    CHECK(json.find("\"ccc\": 0.6") != std::string::npos);
    CHECK(json.find("\"mae\": 0.4") != std::string::npos);

    MetricsReport c;
    c.task = "classify";
    c.accuracy = 0.75;
    c.sample_count = 4;
    CHECK(c.to_json().find("\"accuracy\": 0.75") != std::string::npos);
}
