#include <doctest.h>

#include <filesystem>
#include <random>

#include "rsic/ranking/ranking.hpp"
#include "support/reference_tables.hpp"

using namespace rsic;
using namespace rsic::ranking;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

// Same-cluster relation, independent of label numbering.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

// Brute force over all k^n labelings with every cluster used.
double brute_force_wcss(const Eigen::MatrixXd& x, std::size_t k) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= k;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> a(n);
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        std::vector<bool> used(k, false);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = c % k;
            used[a[i]] = true;
            c /= k;
        }
        if (std::find(used.begin(), used.end(), false) != used.end()) continue;
        // two-pass centroid form
        double w = 0;
        for (std::size_t cl = 0; cl < k; ++cl) {
            Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
            double cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (a[i] == cl) mean += x.row(static_cast<Eigen::Index>(i)), cnt += 1;
            mean /= cnt;
            for (std::size_t i = 0; i < n; ++i)
                if (a[i] == cl) w += (x.row(static_cast<Eigen::Index>(i)) - mean).squaredNorm();
        }
        best = std::min(best, w);
    }
    return best;
}

Eigen::MatrixXd random_points(std::mt19937_64& rng, std::size_t n, std::size_t d) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

EncoderScoreTable random_table(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    EncoderScoreTable t{"synthetic", generation::Strategy::greedy, {}};
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 7> v{};
        for (double& x : v) x = u(rng);
        v[6] *= 5;
        t.rows.emplace_back("enc" + std::to_string(i), metrics::MetricVector::from_values(v));
    }
    return t;
}

}  // namespace

TEST_CASE("normalize_scores divides CIDEr by five and sorts by name") {
    const auto tables = test::reference_tables();
    REQUIRE(tables.size() == 6);
    const auto ps = normalize_scores(tables[0].table);
    const auto it = std::find(ps.names.begin(), ps.names.end(), "ConvNext");
    REQUIRE(it != ps.names.end());
    const auto row = static_cast<Eigen::Index>(it - ps.names.begin());
    CHECK(ps.x(row, 6) == doctest::Approx(0.4989).epsilon(1e-12));
    CHECK(ps.x(row, 0) == 0.7997);
    CHECK(std::is_sorted(ps.names.begin(), ps.names.end()));

    EncoderScoreTable ones{"d", generation::Strategy::greedy, {}};
    for (const char* n : {"c", "a", "b"}) ones.rows.emplace_back(n, metrics::MetricVector::from_values({1, 1, 1, 1, 1, 1, 1}));
    const auto p1 = normalize_scores(ones);
    CHECK(p1.names == std::vector<std::string>{"a", "b", "c"});
    for (Eigen::Index c = 0; c < 6; ++c) CHECK(p1.x(0, c) == 1.0);
    CHECK(p1.x(0, 6) == doctest::Approx(0.2));

    ones.rows[1].second.meteor = 0;
    CHECK_THROWS_AS(normalize_scores(ones), std::invalid_argument);
    ones.rows.pop_back();
    CHECK_THROWS_AS(normalize_scores(ones), std::invalid_argument);
}

TEST_CASE("kmeans small examples") {
    const auto p = kmeans_partition(column({0, 0.5, 1.0}), 3);
    CHECK(p.wcss == 0);
    CHECK(same_partition(p.assign, {0, 1, 2}));

    // 2-partitions of {0, 0.1, 1.0}: {0}{0.1,1} = 0.405, {0,1}{0.1} = 0.5, {0,0.1}{1} = 0.005.
    const auto q = kmeans_partition(column({0, 0.1, 1.0}), 2);
    CHECK(same_partition(q.assign, {0, 0, 1}));
    CHECK(q.wcss == doctest::Approx(0.005));

    CHECK_THROWS_AS(kmeans_partition(column({0, 1}), 3), std::invalid_argument);
    CHECK(kmeans_partition(column({0.3, 0.3, 0.3, 0.3}), 2).wcss == 0);
}

TEST_CASE("exhaustive kmeans matches brute force on random sets") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 6);
        const std::size_t k = 2 + static_cast<std::size_t>(trial % 2);
        const auto x = random_points(rng, n, 1 + static_cast<std::size_t>(trial % 7));
        const auto p = kmeans_partition(x, k);
        CHECK(p.wcss == doctest::Approx(brute_force_wcss(x, k)).epsilon(1e-12));
        CHECK(p.wcss == doctest::Approx(wcss(x, p.assign, k)).epsilon(1e-12));
    }
}

TEST_CASE("exhaustive kmeans beats 10,000 random assignments on every reference table") {
    std::mt19937_64 rng(7);
    for (const auto& ref : test::reference_tables()) {
        const auto ps = normalize_scores(ref.table);
        const auto p = kmeans_partition(ps.x, 3);
        std::uniform_int_distribution<std::size_t> lab(0, 2);
        std::vector<std::size_t> a(ps.names.size());
        double best_random = std::numeric_limits<double>::infinity();
        for (int r = 0; r < 10000; ++r) {
            for (auto& x : a) x = lab(rng);
            best_random = std::min(best_random, wcss(ps.x, a, 3));
        }
        CHECK(p.wcss <= best_random);
    }
}

TEST_CASE("large inputs use seeded restarts deterministically") {
    std::mt19937_64 rng(3);
    const auto x = random_points(rng, 40, 7);
    const auto a = kmeans_partition(x, 3, 5);
    const auto b = kmeans_partition(x, 3, 5);
    CHECK(a.assign == b.assign);
    std::uniform_int_distribution<std::size_t> lab(0, 2);
    std::vector<std::size_t> r(40);
    for (int t = 0; t < 2000; ++t) {
        for (auto& v : r) v = lab(rng);
        CHECK(a.wcss <= wcss(x, r, 3));
    }
}

TEST_CASE("select_good_cluster") {
    Partition p;
    p.centroids = Eigen::MatrixXd(3, 7);
    p.centroids.row(0).setConstant(0.9);
    p.centroids.row(1).setConstant(0.1);
    p.centroids.row(2).setConstant(0.5);
    p.sizes = {1, 1, 1};
    CHECK(select_good_cluster(p) == 0);
    Partition scaled = p;
    scaled.centroids *= 3.7;
    CHECK(select_good_cluster(scaled) == 0);
    p.centroids.setConstant(0.4);
    p.sizes = {2, 5, 5};
    CHECK(select_good_cluster(p) == 1);
}

TEST_CASE("enforce_min_good pulls nearest encoders to the frozen centroid") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_points(rng, 12, 7);
        Partition p;
        p.assign.assign(12, 1);
        p.assign[3] = p.assign[8] = 0;
        p.centroids = Eigen::MatrixXd(2, 7);
        p.centroids.row(0) = (x.row(3) + x.row(8)) / 2;
        p.centroids.row(1).setZero();
        p.sizes = {2, 10};
        const auto g = enforce_min_good(x, p, 0);
        // Oracle: sort the others by distance to the original centroid.
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t i = 0; i < 12; ++i)
            if (i != 3 && i != 8) d.emplace_back((x.row(static_cast<Eigen::Index>(i)) - p.centroids.row(0)).norm(), i);
        std::sort(d.begin(), d.end());
        std::vector<std::size_t> expected = {3, 8, d[0].second, d[1].second};
        std::sort(expected.begin(), expected.end());
        CHECK(g.members == expected);
        REQUIRE(g.pulled.size() == 2);
        CHECK(g.pulled[0].first == d[0].second);
    }
    const auto x4 = random_points(rng, 5, 7);
    Partition q;
    q.assign = {0, 0, 0, 0, 1};
    q.centroids = Eigen::MatrixXd::Zero(2, 7);
    q.sizes = {4, 1};
    CHECK(enforce_min_good(x4, q, 0).pulled.empty());

    const auto x3 = random_points(rng, 3, 7);
    Partition r;
    r.assign = {0, 1, 2};
    r.centroids = x3;
    r.sizes = {1, 1, 1};
    CHECK(enforce_min_good(x3, r, 1).members.size() == 3);
}

TEST_CASE("split_medium_bad") {
    Eigen::MatrixXd rem(3, 7);
    rem.row(0).setConstant(0.8);
    rem.row(1).setConstant(0.79);
    rem.row(2).setConstant(0.2);
    const auto s = split_medium_bad(rem);
    CHECK(s.labels == std::vector<Label>{Label::medium, Label::medium, Label::bad});
    CHECK(s.gms[0] > s.gms[1]);

    CHECK(split_medium_bad(rem.topRows(1)).labels == std::vector<Label>{Label::medium});
    CHECK(split_medium_bad(Eigen::MatrixXd(0, 7)).labels.empty());

    Eigen::MatrixXd same(4, 7);
    same.setConstant(0.5);
    const auto t = split_medium_bad(same);
    CHECK(std::count(t.labels.begin(), t.labels.end(), Label::medium) == 2);
    CHECK(std::count(t.labels.begin(), t.labels.end(), Label::bad) == 2);
}

TEST_CASE("rank_encoders on the reference tables") {
    const auto tables = test::reference_tables();
    std::size_t agree = 0, total = 0;
    for (const auto& ref : tables) {
        const auto c = rank_encoders(ref.table);
        CAPTURE(ref.table.dataset);
        CAPTURE(generation::to_string(ref.table.search));
        CHECK(c.label_of("ConvNext") == Label::good);
        CHECK(c.label_of("ResNet") == Label::good);
        CHECK(c.label_of("AlexNet") != Label::good);
        CHECK(c.members(Label::good).size() >= 4);
        for (const auto& [name, l] : c.labels) {
            agree += ref.published.at(name) == l;
            ++total;
        }
    }
    MESSAGE("cluster column agreement " << agree << "/" << total);
    CHECK(total == 72);
}

TEST_CASE("identical rows degrade without crashing") {
    EncoderScoreTable t{"flat", generation::Strategy::beam, {}};
    for (int i = 0; i < 12; ++i) t.rows.emplace_back("e" + std::to_string(i), metrics::MetricVector::from_values({.5, .4, .3, .2, .3, .6, 1.5}));
    const auto c = rank_encoders(t);
    CHECK(c.members(Label::good).size() == 4);
    CHECK(c.members(Label::medium).size() + c.members(Label::bad).size() == 8);
}

TEST_CASE("rank_encoders properties on random tables") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 11);
        const auto t = random_table(rng, n);
        const auto c = rank_encoders(t);
        CHECK(c.labels.size() == n);
        CHECK(c.members(Label::good).size() >= std::min<std::size_t>(4, n));
        CHECK(c.members(Label::good).size() + c.members(Label::medium).size() + c.members(Label::bad).size() == n);
        CHECK(c.centroid_gms[c.good_cluster] == *std::max_element(c.centroid_gms.begin(), c.centroid_gms.end()));

        // Uniform scaling leaves every label alone.
        std::uniform_real_distribution<double> scale(0.2, 5.0);
        const double k = scale(rng);
        EncoderScoreTable s = t;
        for (auto& [name, m] : s.rows) {
            auto v = m.values();
            for (double& x : v) x *= k;
            m = metrics::MetricVector::from_values(v);
        }
        CHECK(rank_encoders(s).labels == c.labels);

        // Row order does not matter and reruns are identical.
        EncoderScoreTable r = t;
        std::reverse(r.rows.begin(), r.rows.end());
        CHECK(rank_encoders(r) == c);
        CHECK(rank_encoders(t) == c);
    }
}

TEST_CASE("scores CSV round trip and JSON output") {
    const auto ref = test::reference_tables()[3];
    const auto path = std::filesystem::temp_directory_path() / "rsic_scores.csv";
    write_scores_csv(path, ref.table);
    const auto back = read_scores_csv(path, ref.table.dataset, ref.table.search);
    CHECK(back.rows == ref.table.rows);
    const auto c = rank_encoders(back);
    const auto j = to_json(c, back);
    CHECK(j["labels"]["ConvNext"] == "Good");
    CHECK(j["search"] == "beam");
    CHECK(j["diagnostics"]["centroids"].size() == 3);
    CHECK(to_json(rank_encoders(back), back).dump() == j.dump());

    std::ofstream bad(path);
    bad << "encoder,bleu1\nx,0.1\n";
    bad.close();
    CHECK_THROWS(read_scores_csv(path));

    // Long format: one table is picked out by dataset and search.
    const std::string all = std::string(RSIC_TEST_DATA) + "/reference_scores.csv";
    for (const auto& r : test::reference_tables()) {
        const auto t = read_scores_csv(all, r.table.dataset, r.table.search);
        CHECK(t.rows == r.table.rows);
    }
    CHECK_THROWS(read_scores_csv(all));
}
