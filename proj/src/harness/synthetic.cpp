#include "rsic/harness/synthetic.hpp"

#include <array>
#include <fstream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace rsic::harness {

namespace {

struct Colour {
    const char* name;
    cv::Scalar bgr;
};
constexpr std::array<const char*, 4> kShapes = {"square", "circle", "triangle", "bar"};
const std::array<Colour, 5> kColours = {{{"red", {40, 40, 220}},
                                          {"green", {40, 200, 40}},
                                          {"blue", {220, 60, 30}},
                                          {"yellow", {30, 220, 230}},
                                          {"white", {245, 245, 245}}}};

cv::Mat draw(std::size_t shape, const Colour& colour, bool dark, std::size_t size, std::mt19937_64& rng) {
    const int s = static_cast<int>(size);
    cv::Mat img(s, s, CV_8UC3, dark ? cv::Scalar(50, 60, 60) : cv::Scalar(150, 190, 200));
    std::normal_distribution<double> jitter(0, 1.5);
    const cv::Point c(s / 2 + static_cast<int>(jitter(rng)), s / 2 + static_cast<int>(jitter(rng)));
    const int r = s / 4;
    switch (shape) {
        case 0:
            cv::rectangle(img, {c.x - r, c.y - r}, {c.x + r, c.y + r}, colour.bgr, cv::FILLED);
            break;
        case 1:
            cv::circle(img, c, r, colour.bgr, cv::FILLED);
            break;
        case 2: {
            const std::vector<cv::Point> tri = {{c.x, c.y - r}, {c.x - r, c.y + r}, {c.x + r, c.y + r}};
            cv::fillConvexPoly(img, tri, colour.bgr);
            break;
        }
        default:
            cv::rectangle(img, {2, c.y - r / 3}, {s - 3, c.y + r / 3}, colour.bgr, cv::FILLED);
            break;
    }
    cv::Mat noise(img.size(), CV_8UC3);
    cv::randn(noise, cv::Scalar::all(0), cv::Scalar::all(6));
    cv::Mat out;
    cv::add(img, noise, out);
    return out;
}

}  // namespace

void make_synthetic_dataset(const std::filesystem::path& root, const SyntheticOptions& opts) {
    std::filesystem::create_directories(root / "imgs");
    std::mt19937_64 rng(opts.seed);
    cv::setRNGSeed(static_cast<int>(opts.seed));
    nlohmann::json images = nlohmann::json::array();
    const std::size_t combos = kShapes.size() * kColours.size();
    auto emit = [&](std::size_t index, std::size_t offset, const char* split) {
        // Train walks every colour/shape pair once; val and test revisit pairs with fresh noise.
        const std::size_t combo = (index + offset) % combos;
        const std::size_t shape = combo % kShapes.size();
        const Colour& colour = kColours[combo / kShapes.size()];
        const bool dark = (combo / 2) % 2 == 0;
        const std::string file = std::string(kShapes[shape]) + "_" + split + std::to_string(index) + ".png";
        cv::imwrite((root / "imgs" / file).string(), draw(shape, colour, dark, opts.size, rng));
        const std::string caption = std::string("there is a ") + colour.name + " " + kShapes[shape] + " on " +
                                    (dark ? "dark" : "bright") + " ground";
        images.push_back({{"filename", file}, {"split", split}, {"sentences", {{{"raw", caption}}}}});
    };
    for (std::size_t i = 0; i < opts.train; ++i) emit(i, 0, "train");
    for (std::size_t i = 0; i < opts.val; ++i) emit(i, 3, "val");
    for (std::size_t i = 0; i < opts.test; ++i) emit(i, 7, "test");
    std::ofstream out(root / "dataset.json");
    out << nlohmann::json{{"images", images}}.dump(1) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (root / "dataset.json").string());
}

}  // namespace rsic::harness
