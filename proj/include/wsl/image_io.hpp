#pragma once

// PNG codec (OpenCV) and image stores keyed by manifest record path.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "data.hpp"
#include "types.hpp"

namespace wsl {

inline Image read_png(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw Error("cannot read image " + path.string());
    Image img(bgr.cols, bgr.rows, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* src = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            std::uint8_t* dst = img.at(x, y);
            dst[0] = src[x][2];
            dst[1] = src[x][1];
            dst[2] = src[x][0];
        }
    }
    return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3 && img.channels != 1) throw ShapeError("write_png expects 1 or 3 channels");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* src = img.at(x, y);
            if (img.channels == 3) {
                row[3 * x + 0] = src[2];
                row[3 * x + 1] = src[1];
                row[3 * x + 2] = src[0];
            } else {
                row[x] = src[0];
            }
        }
    }
    if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 6}))
        throw Error("cannot write image " + path.string());
}

// Supplies network-ready tensors for manifest records.
class ImageStore {
public:
    virtual ~ImageStore() = default;
    virtual const Grid<float>& tensor(const ImageRecord& r) = 0;
};

// Decodes PNGs on first use and caches the tensors.
class FileImageStore : public ImageStore {
public:
    const Grid<float>& tensor(const ImageRecord& r) override {
        auto it = cache_.find(r.path);
        if (it != cache_.end()) return it->second;
        Image img;
        try {
            img = read_png(r.path);
        } catch (const Error&) {
            throw Error("unloadable image for record '" + r.id + "' (" + r.path + ")");
        }
        if (img.width != r.width || img.height != r.height)
            throw ManifestError("record '" + r.id + "': image size differs from manifest");
        return cache_.emplace(r.path, to_tensor<float>(img)).first->second;
    }

private:
    std::map<std::string, Grid<float>> cache_;
};

// In-memory images keyed by record path; used for freshly generated data.
class MemoryImageStore : public ImageStore {
public:
    void add(const std::string& path, const Image& img) { tensors_[path] = to_tensor<float>(img); }

    const Grid<float>& tensor(const ImageRecord& r) override {
        auto it = tensors_.find(r.path);
        if (it == tensors_.end()) throw Error("unloadable image for record '" + r.id + "'");
        return it->second;
    }

private:
    std::map<std::string, Grid<float>> tensors_;
};

}  // namespace wsl
