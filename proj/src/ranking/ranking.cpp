#include "rsic/ranking/ranking.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "rsic/errors.hpp"
#include "rsic/util/csv.hpp"

namespace rsic::ranking {

std::string to_string(Label l) {
    switch (l) {
        case Label::good:
            return "Good";
        case Label::medium:
            return "Medium";
        default:
            return "Bad";
    }
}

Label parse_label(const std::string& text) {
    std::string t;
    for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (t == "good") return Label::good;
    if (t == "medium") return Label::medium;
    if (t == "bad") return Label::bad;
    throw std::invalid_argument("unknown cluster label \"" + text + "\"");
}

void EncoderScoreTable::validate() const {
    if (rows.size() < 3) throw std::invalid_argument("score table needs at least 3 encoders, got " + std::to_string(rows.size()));
    std::set<std::string> names;
    for (const auto& [name, m] : rows) {
        if (!names.insert(name).second) throw std::invalid_argument("duplicate encoder \"" + name + "\"");
        const auto v = m.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i]) || v[i] <= 0) {
                throw std::invalid_argument("encoder \"" + name + "\" has non-positive or non-finite " +
                                            metrics::MetricVector::names()[i] + " (" + std::to_string(v[i]) + ")");
            }
        }
    }
}

PointSet normalize_scores(const EncoderScoreTable& t) {
    t.validate();
    std::vector<std::size_t> order(t.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t.rows[a].first < t.rows[b].first; });
    PointSet ps;
    ps.x.resize(static_cast<Eigen::Index>(order.size()), 7);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const auto& [name, m] = t.rows[order[r]];
        ps.names.push_back(name);
        const auto v = m.values();
        for (std::size_t c = 0; c < 7; ++c) ps.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
        ps.x(static_cast<Eigen::Index>(r), 6) /= kCiderScale;
    }
    return ps;
}

double wcss(const Eigen::MatrixXd& points, const std::vector<std::size_t>& assign, std::size_t k) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<double> counts(k, 0);
    for (std::size_t i = 0; i < assign.size(); ++i) {
        sums.row(static_cast<Eigen::Index>(assign[i])) += points.row(static_cast<Eigen::Index>(i));
        counts[assign[i]] += 1;
    }
    double total = 0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(assign[i]);
        total += (points.row(static_cast<Eigen::Index>(i)) - sums.row(c) / counts[assign[i]]).squaredNorm();
    }
    return total;
}

namespace {

double tie_tol(double best) { return 1e-12 * std::max(1.0, std::abs(best)); }

std::size_t balance(const std::vector<std::size_t>& assign, std::size_t k) {
    std::vector<std::size_t> c(k, 0);
    for (std::size_t a : assign) ++c[a];
    std::size_t b = 0;
    for (std::size_t x : c) b += x * x;
    return b;
}

Partition finish(const Eigen::MatrixXd& x, std::vector<std::size_t> assign, std::size_t k) {
    Partition p;
    p.sizes.assign(k, 0);
    p.centroids = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
    for (std::size_t i = 0; i < assign.size(); ++i) {
        p.centroids.row(static_cast<Eigen::Index>(assign[i])) += x.row(static_cast<Eigen::Index>(i));
        ++p.sizes[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) p.centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(p.sizes[c]);
    p.wcss = wcss(x, assign, k);
    p.assign = std::move(assign);
    return p;
}

std::vector<std::size_t> lloyd(const Eigen::MatrixXd& x, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    Eigen::MatrixXd cent(static_cast<Eigen::Index>(k), x.cols());
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    cent.row(0) = x.row(static_cast<Eigen::Index>(pick(rng)));
    std::vector<double> d2(n);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < c; ++j)
                best = std::min(best, (x.row(static_cast<Eigen::Index>(i)) - cent.row(static_cast<Eigen::Index>(j))).squaredNorm());
            d2[i] = best;
            total += best;
        }
        std::size_t chosen = pick(rng);
        if (total > 0) {
            std::discrete_distribution<std::size_t> dd(d2.begin(), d2.end());
            chosen = dd(rng);
        }
        cent.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(chosen));
    }
    std::vector<std::size_t> assign(n, k);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = (x.row(static_cast<Eigen::Index>(i)) - cent.row(static_cast<Eigen::Index>(c))).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            changed |= assign[i] != best;
            assign[i] = best;
        }
        // Refill empty clusters with the point farthest from its centroid.
        for (std::size_t c = 0; c < k; ++c) {
            if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
            std::size_t far = 0;
            double fd = -1;
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t a : assign) ++counts[a];
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] < 2) continue;
                const double d = (x.row(static_cast<Eigen::Index>(i)) - cent.row(static_cast<Eigen::Index>(assign[i]))).squaredNorm();
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            assign[far] = c;
            changed = true;
        }
        cent.setZero();
        std::vector<double> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            cent.row(static_cast<Eigen::Index>(assign[i])) += x.row(static_cast<Eigen::Index>(i));
            counts[assign[i]] += 1;
        }
        for (std::size_t c = 0; c < k; ++c) cent.row(static_cast<Eigen::Index>(c)) /= counts[c];
        if (!changed) break;
    }
    return assign;
}

std::vector<std::size_t> kmeans_pp(const Eigen::MatrixXd& x, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> best;
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t best_bal = 0;
    for (int r = 0; r < kRestarts; ++r) {
        auto a = lloyd(x, k, rng);
        const double c = wcss(x, a, k);
        const std::size_t b = balance(a, k);
        if (best.empty() || c < best_cost - tie_tol(best_cost) || (c <= best_cost + tie_tol(best_cost) && b < best_bal)) {
            best = std::move(a);
            best_cost = c;
            best_bal = b;
        }
    }
    return best;
}

// Depth-first over canonical labelings (cluster ids opened in order), pruning
// on the running within-cluster sum of squares, which never decreases.
class Exhaustive {
  public:
    Exhaustive(const Eigen::MatrixXd& x, std::size_t k, double bound)
        : x_(x), k_(k), n_(static_cast<std::size_t>(x.rows())), bound_(bound), assign_(n_), mean_(k, Eigen::VectorXd::Zero(x.cols())),
          count_(k, 0), cost_(k, 0) {}

    std::vector<std::size_t> run() {
        dfs(0, 0, 0.0);
        return best_;
    }

  private:
    void dfs(std::size_t i, std::size_t used, double cost) {
        if (have_ ? cost > best_cost_ + tie_tol(best_cost_) : cost > bound_) return;
        if (i == n_) {
            const std::size_t b = balance(assign_, k_);
            if (!have_ || cost < best_cost_ - tie_tol(best_cost_) || b < best_bal_) {
                have_ = true;
                best_ = assign_;
                best_cost_ = cost;
                best_bal_ = b;
            }
            return;
        }
        const std::size_t empties = k_ - used;
        const std::size_t first = n_ - i == empties ? used : 0;
        const std::size_t last = std::min(used, k_ - 1);
        const Eigen::VectorXd p = x_.row(static_cast<Eigen::Index>(i)).transpose();
        for (std::size_t c = first; c <= last; ++c) {
            const Eigen::VectorXd old_mean = mean_[c];
            const double old_cost = cost_[c];
            const double m = static_cast<double>(count_[c]);
            const Eigen::VectorXd delta = p - mean_[c];
            const double add = m / (m + 1) * delta.squaredNorm();
            mean_[c] += delta / (m + 1);
            cost_[c] += add;
            ++count_[c];
            assign_[i] = c;
            dfs(i + 1, c == used ? used + 1 : used, cost + add);
            --count_[c];
            cost_[c] = old_cost;
            mean_[c] = old_mean;
        }
    }

    const Eigen::MatrixXd& x_;
    std::size_t k_, n_;
    double bound_;
    std::vector<std::size_t> assign_, best_;
    std::vector<Eigen::VectorXd> mean_;
    std::vector<std::size_t> count_;
    std::vector<double> cost_;
    bool have_ = false;
    double best_cost_ = 0;
    std::size_t best_bal_ = 0;
};

}  // namespace

Partition kmeans_partition(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed) {
    const std::size_t n = static_cast<std::size_t>(points.rows());
    if (k == 0 || k > n) throw std::invalid_argument("k-means needs 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    if (!points.allFinite()) throw std::invalid_argument("k-means points must be finite");
    auto heuristic = kmeans_pp(points, k, seed);
    if (n > kExhaustiveLimit) return finish(points, std::move(heuristic), k);
    const double bound = wcss(points, heuristic, k);
    return finish(points, Exhaustive(points, k, bound + tie_tol(bound) + 1e-300).run(), k);
}

double geometric_mean(const Eigen::VectorXd& v) {
    double s = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0)) throw std::invalid_argument("geometric mean needs positive components");
        s += std::log(v[i]);
    }
    return std::exp(s / static_cast<double>(v.size()));
}

namespace {

// Highest geometric mean; near-ties go to the larger cluster, then the lower index.
std::size_t best_cluster(const Eigen::MatrixXd& centroids, const std::vector<std::size_t>& sizes) {
    std::size_t best = 0;
    double bg = geometric_mean(centroids.row(0).transpose());
    for (std::size_t c = 1; c < sizes.size(); ++c) {
        const double g = geometric_mean(centroids.row(static_cast<Eigen::Index>(c)).transpose());
        const double tol = 1e-12 * std::max(std::abs(g), std::abs(bg));
        if (g > bg + tol || (std::abs(g - bg) <= tol && sizes[c] > sizes[best])) {
            best = c;
            bg = g;
        }
    }
    return best;
}

}  // namespace

std::size_t select_good_cluster(const Partition& p) { return best_cluster(p.centroids, p.sizes); }

GoodSet enforce_min_good(const Eigen::MatrixXd& points, const Partition& p, std::size_t good_idx) {
    const std::size_t n = static_cast<std::size_t>(points.rows());
    GoodSet g;
    std::vector<bool> in(n, false);
    for (std::size_t i = 0; i < n; ++i) in[i] = p.assign[i] == good_idx;
    if (n < kMinGood) {
        spdlog::warn("only {} encoders; all of them are labeled Good", n);
        in.assign(n, true);
    }
    const Eigen::RowVectorXd centroid = p.centroids.row(static_cast<Eigen::Index>(good_idx));
    auto count = [&] { return static_cast<std::size_t>(std::count(in.begin(), in.end(), true)); };
    while (count() < std::min(kMinGood, n)) {
        std::size_t pick = n;
        double pd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (in[i]) continue;
            const double d = (points.row(static_cast<Eigen::Index>(i)) - centroid).norm();
            if (d < pd) {
                pd = d;
                pick = i;
            }
        }
        in[pick] = true;
        g.pulled.emplace_back(pick, pd);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (in[i]) g.members.push_back(i);
    return g;
}

MediumBad split_medium_bad(const Eigen::MatrixXd& remaining) {
    MediumBad out;
    const std::size_t n = static_cast<std::size_t>(remaining.rows());
    if (n == 0) return out;
    if (n == 1) {
        out.labels = {Label::medium};
        out.centroids = remaining;
        out.gms = {geometric_mean(remaining.row(0).transpose())};
        return out;
    }
    const Partition p = kmeans_partition(remaining, 2);
    const std::size_t medium = best_cluster(p.centroids, p.sizes);
    for (std::size_t a : p.assign) out.labels.push_back(a == medium ? Label::medium : Label::bad);
    out.centroids.resize(2, remaining.cols());
    out.centroids.row(0) = p.centroids.row(static_cast<Eigen::Index>(medium));
    out.centroids.row(1) = p.centroids.row(static_cast<Eigen::Index>(1 - medium));
    out.gms = {geometric_mean(out.centroids.row(0).transpose()), geometric_mean(out.centroids.row(1).transpose())};
    return out;
}

Label ClusterLabeling::label_of(const std::string& encoder) const {
    for (const auto& [name, l] : labels)
        if (name == encoder) return l;
    throw std::out_of_range("no encoder named \"" + encoder + "\"");
}

std::vector<std::string> ClusterLabeling::members(Label l) const {
    std::vector<std::string> out;
    for (const auto& [name, x] : labels)
        if (x == l) out.push_back(name);
    return out;
}

ClusterLabeling rank_encoders(const EncoderScoreTable& t) {
    const PointSet ps = normalize_scores(t);
    const std::size_t n = ps.names.size();
    const Partition p = kmeans_partition(ps.x, 3);
    const std::size_t good = select_good_cluster(p);
    const GoodSet gs = enforce_min_good(ps.x, p, good);

    ClusterLabeling out;
    out.centroids = p.centroids;
    out.sizes = p.sizes;
    out.wcss = p.wcss;
    out.good_cluster = good;
    for (std::size_t c = 0; c < 3; ++c) out.centroid_gms.push_back(geometric_mean(p.centroids.row(static_cast<Eigen::Index>(c)).transpose()));
    out.good_gm = out.centroid_gms[good];
    for (std::size_t i = 0; i < n; ++i)
        out.good_distances.emplace_back(ps.names[i], (ps.x.row(static_cast<Eigen::Index>(i)) - p.centroids.row(static_cast<Eigen::Index>(good))).norm());
    for (const auto& [i, d] : gs.pulled) out.pulled.emplace_back(ps.names[i], d);

    std::vector<Label> labels(n, Label::bad);
    std::vector<std::size_t> rest;
    std::vector<bool> is_good(n, false);
    for (std::size_t i : gs.members) is_good[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (is_good[i])
            labels[i] = Label::good;
        else
            rest.push_back(i);
    }
    Eigen::MatrixXd rem(static_cast<Eigen::Index>(rest.size()), ps.x.cols());
    for (std::size_t r = 0; r < rest.size(); ++r) rem.row(static_cast<Eigen::Index>(r)) = ps.x.row(static_cast<Eigen::Index>(rest[r]));
    const MediumBad mb = split_medium_bad(rem);
    for (std::size_t r = 0; r < rest.size(); ++r) labels[rest[r]] = mb.labels[r];
    out.remainder_centroids = mb.centroids;
    out.remainder_gms = mb.gms;
    for (std::size_t i = 0; i < n; ++i) out.labels.emplace_back(ps.names[i], labels[i]);
    return out;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

nlohmann::json to_json(const ClusterLabeling& c, const EncoderScoreTable& t) {
    nlohmann::json j;
    j["dataset"] = t.dataset;
    j["search"] = generation::to_string(t.search);
    j["labels"] = nlohmann::json::object();
    for (const auto& [name, l] : c.labels) j["labels"][name] = to_string(l);
    for (Label l : {Label::good, Label::medium, Label::bad}) j["clusters"][to_string(l)] = c.members(l);
    auto& d = j["diagnostics"];
    d["cider_scale"] = kCiderScale;
    d["wcss"] = c.wcss;
    d["centroids"] = matrix_json(c.centroids);
    d["centroid_sizes"] = c.sizes;
    d["centroid_geometric_means"] = c.centroid_gms;
    d["good_cluster"] = c.good_cluster;
    d["good_geometric_mean"] = c.good_gm;
    for (const auto& [name, dist] : c.good_distances) d["distance_to_good_centroid"][name] = dist;
    d["pulled_into_good"] = nlohmann::json::array();
    for (const auto& [name, dist] : c.pulled) d["pulled_into_good"].push_back({{"encoder", name}, {"distance", dist}});
    d["remainder_centroids"] = matrix_json(c.remainder_centroids);
    d["remainder_geometric_means"] = c.remainder_gms;
    return j;
}

EncoderScoreTable read_scores_csv(const std::filesystem::path& path, std::string dataset, generation::Strategy search) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
    const auto header = util::split_csv_line(line);
    auto column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::runtime_error(path.string() + ": missing column \"" + name + "\"");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t enc = column("encoder");
    // Long-format files (one row per dataset x search) are filtered down to one table.
    auto optional_column = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto dataset_col = optional_column("dataset");
    const auto search_col = optional_column("search");
    std::array<std::size_t, 7> cols{};
    for (std::size_t i = 0; i < 7; ++i) cols[i] = column(metrics::MetricVector::names()[i]);

    EncoderScoreTable t{dataset, search, {}};
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = util::split_csv_line(line);
        if (f.size() != header.size()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                                     " fields, got " + std::to_string(f.size()));
        }
        if (search_col && generation::parse_strategy(f[*search_col]) != search) continue;
        if (dataset_col) {
            if (t.dataset.empty()) t.dataset = f[*dataset_col];
            if (f[*dataset_col] != t.dataset) {
                if (dataset.empty()) throw std::runtime_error(path.string() + " holds several datasets; name one");
                continue;
            }
        }
        std::array<double, 7> v{};
        for (std::size_t i = 0; i < 7; ++i) {
            try {
                std::size_t used = 0;
                v[i] = std::stod(f[cols[i]], &used);
                if (used != f[cols[i]].size()) throw std::invalid_argument("trailing text");
            } catch (const std::exception&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number \"" + f[cols[i]] + "\"");
            }
        }
        t.rows.emplace_back(f[enc], metrics::MetricVector::from_values(v));
    }
    return t;
}

void write_scores_csv(const std::filesystem::path& path, const EncoderScoreTable& t) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "encoder";
    for (const char* n : metrics::MetricVector::names()) out << ',' << n;
    out << '\n';
    for (const auto& [name, m] : t.rows) {
        out << util::csv_field(name);
        for (double v : m.values()) out << ',' << util::exact_double(v);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace rsic::ranking
