#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wsl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent dataset manifests.
class ManifestError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values (rates, fractions, learning rates, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
public:
    using Error::Error;
};

// 64-byte aligned storage. Vectorized GEMM kernels choose their summation
// order from pointer alignment; a fixed alignment keeps results independent
// of where the heap places a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Pixel-space box, top-left anchored, half-open on the right/bottom edges.
struct BoundingBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    long long area() const { return static_cast<long long>(w) * h; }
    int right() const { return x + w; }
    int bottom() const { return y + h; }
    bool valid() const { return w >= 1 && h >= 1; }
    bool inside(int width, int height) const {
        return valid() && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
    }
    bool contains(const BoundingBox& o) const {
        return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
    }

    bool operator==(const BoundingBox&) const = default;
};

// Dense rows x cols x channels array, channels fastest.
template <class T>
struct Grid {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    AlignedVector<T> values;

    Grid() = default;
    Grid(int r, int c, int ch, T fill = T{})
        : rows(r), cols(c), channels(ch),
          values(static_cast<std::size_t>(r) * c * ch, fill) {}

    // Reshapes and fills, reusing the existing allocation when it is large enough.
    void reset(int r, int c, int ch, T fill = T{}) {
        rows = r, cols = c, channels = ch;
        values.assign(static_cast<std::size_t>(r) * c * ch, fill);
    }

    std::size_t index(int r, int c, int ch = 0) const {
        return (static_cast<std::size_t>(r) * cols + c) * channels + ch;
    }
    T& operator()(int r, int c, int ch = 0) { return values[index(r, c, ch)]; }
    const T& operator()(int r, int c, int ch = 0) const { return values[index(r, c, ch)]; }
    T* cell(int r, int c) { return values.data() + index(r, c); }
    const T* cell(int r, int c) const { return values.data() + index(r, c); }

    bool same_shape(const Grid& o) const {
        return rows == o.rows && cols == o.cols && channels == o.channels;
    }

    template <class U>
    Grid<U> cast() const {
        Grid<U> out(rows, cols, channels);
        std::transform(values.begin(), values.end(), out.values.begin(),
                       [](T v) { return static_cast<U>(v); });
        return out;
    }
};

// 8-bit interleaved RGB (or gray) raster.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int ch = 3, std::uint8_t fill = 0)
        : width(w), height(h), channels(ch),
          pixels(static_cast<std::size_t>(w) * h * ch, fill) {}

    std::uint8_t* at(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }

    bool operator==(const Image&) const = default;
};

// Per-class localization map with values in [0, 1].
struct Heatmap {
    int height = 0;
    int width = 0;
    int class_index = 0;
    std::string image_id;
    std::vector<double> values;

    double& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Network input convention: RGB scaled to [-0.5, 0.5].
template <class T = float>
Grid<T> to_tensor(const Image& img) {
    Grid<T> g(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        g.values[i] = static_cast<T>(img.pixels[i]) / T(255) - T(0.5);
    return g;
}

// FNV-1a, used for config hashes and parameter digests.
class Fnv1a {
public:
    Fnv1a& update(const void* data, std::size_t n) {
        auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }
    template <class T, class A>
    Fnv1a& update_values(const std::vector<T, A>& v) {
        return update(v.data(), v.size() * sizeof(T));
    }
    std::uint64_t value() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Fans a single master seed out into independent named streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
    std::uint64_t tag = Fnv1a{}.update(stream).value();
    return splitmix64(splitmix64(master ^ tag) + index);
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
    return s;
}

}  // namespace wsl
