#include "rsic/corpus/images.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rsic/corpus/dataset.hpp"

namespace rsic::corpus {

nn::Tensor load_images(std::span<const std::filesystem::path> paths, std::size_t size) {
    nn::Tensor out({paths.size(), size, size, 3});
    const std::size_t per_image = size * size * 3;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        cv::Mat bgr = cv::imread(paths[i].string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw DatasetError("cannot decode image " + paths[i].string());
        cv::Mat resized, rgb;
        const int s = static_cast<int>(size);
        cv::resize(bgr, resized, cv::Size(s, s), 0, 0, cv::INTER_AREA);
        cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
        double* dst = out.data() + i * per_image;
        for (int y = 0; y < s; ++y) {
            const auto* row = rgb.ptr<cv::Vec3b>(y);
            for (int x = 0; x < s; ++x)
                for (int c = 0; c < 3; ++c) *dst++ = row[x][c] / 255.0;
        }
    }
    return out;
}

void save_image(const std::filesystem::path& path, const nn::Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw nn::ShapeError("save_image expects (H, W, 3)");
    const int h = static_cast<int>(rgb.dim(0)), w = static_cast<int>(rgb.dim(1));
    cv::Mat bgr(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c];
                row[x][2 - c] = cv::saturate_cast<uchar>(v * 255.0 + 0.5);
            }
    }
    if (!cv::imwrite(path.string(), bgr)) throw DatasetError("cannot write image " + path.string());
}

}  // namespace rsic::corpus
