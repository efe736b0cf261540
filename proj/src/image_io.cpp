#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mito/image.hpp"

// File decode/encode only. All geometry (resize, crops) stays in image.cpp
// with the project's own sampling conventions; cv::resize is never used.

namespace mito {

Image load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) {
        throw std::runtime_error("load_image: cannot read " + path);
    }
    Image img(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
        const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            std::uint8_t* d = img.px(x, y);
            d[0] = row[x][2];  // BGR -> RGB
            d[1] = row[x][1];
            d[2] = row[x][0];
        }
    }
    return img;
}

void save_image(const Image& img, const std::string& path) {
    if (img.empty()) {
        throw std::invalid_argument("save_image: empty image");
    }
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* s = img.px(x, y);
            row[x][0] = s[2];
            row[x][1] = s[1];
            row[x][2] = s[0];
        }
    }
    if (!cv::imwrite(path, m)) {
        throw std::runtime_error("save_image: cannot write " + path);
    }
}

}  // namespace mito
