#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsic/generation/generation.hpp"
#include "rsic/metrics/metrics.hpp"

namespace rsic::ranking {

enum class Label { good, medium, bad };
std::string to_string(Label l);
Label parse_label(const std::string& text);

struct EncoderScoreTable {
    std::string dataset;
    generation::Strategy search = generation::Strategy::greedy;
    std::vector<std::pair<std::string, metrics::MetricVector>> rows;

    void validate() const;  // >= 3 rows, unique names, finite positive values
};

// One row per encoder, sorted by name; CIDEr divided by five.
struct PointSet {
    std::vector<std::string> names;
    Eigen::MatrixXd x;  // (n, 7)
};
constexpr double kCiderScale = 5.0;
PointSet normalize_scores(const EncoderScoreTable& t);

struct Partition {
    std::vector<std::size_t> assign;
    Eigen::MatrixXd centroids;  // (k, d)
    std::vector<std::size_t> sizes;
    double wcss = 0;
};
constexpr std::size_t kExhaustiveLimit = 15;
constexpr int kRestarts = 100;
// Every cluster non-empty. n <= 15: global optimum, ties going to the most
// balanced sizes and then the first labeling in enumeration order.
Partition kmeans_partition(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed = 0);
double wcss(const Eigen::MatrixXd& points, const std::vector<std::size_t>& assign, std::size_t k);

double geometric_mean(const Eigen::VectorXd& v);
std::size_t select_good_cluster(const Partition& p);

struct GoodSet {
    std::vector<std::size_t> members;  // ascending point index
    std::vector<std::pair<std::size_t, double>> pulled;  // point, distance to the frozen centroid
};
constexpr std::size_t kMinGood = 4;
GoodSet enforce_min_good(const Eigen::MatrixXd& points, const Partition& p, std::size_t good_idx);

struct MediumBad {
    std::vector<Label> labels;  // parallel to the input rows
    Eigen::MatrixXd centroids;  // rows: medium, bad (empty if not clustered)
    std::vector<double> gms;
};
MediumBad split_medium_bad(const Eigen::MatrixXd& remaining);

struct ClusterLabeling {
    std::vector<std::pair<std::string, Label>> labels;  // sorted by name
    Eigen::MatrixXd centroids;                          // first pass, (3, 7)
    double good_gm = 0;

    // diagnostics
    std::vector<std::size_t> sizes;
    std::vector<double> centroid_gms;
    std::size_t good_cluster = 0;
    double wcss = 0;
    std::vector<std::pair<std::string, double>> good_distances;  // to the first-pass Good centroid
    std::vector<std::pair<std::string, double>> pulled;
    Eigen::MatrixXd remainder_centroids;
    std::vector<double> remainder_gms;

    Label label_of(const std::string& encoder) const;
    std::vector<std::string> members(Label l) const;
    friend bool operator==(const ClusterLabeling&, const ClusterLabeling&) = default;
};
ClusterLabeling rank_encoders(const EncoderScoreTable& t);

nlohmann::json to_json(const ClusterLabeling& c, const EncoderScoreTable& t);

// CSV with header containing encoder and the seven metric names. Optional dataset and
// search columns select one table out of a long-format file; other columns are ignored.
EncoderScoreTable read_scores_csv(const std::filesystem::path& path, std::string dataset = "",
                                  generation::Strategy search = generation::Strategy::greedy);
void write_scores_csv(const std::filesystem::path& path, const EncoderScoreTable& t);

}  // namespace rsic::ranking
