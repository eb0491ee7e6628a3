#include "stmae/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace stmae {

Grid resize_bilinear(const Grid& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ConfigError("resize_bilinear: non-positive target size");
    if (out_h == src.h && out_w == src.w) return src;

    Grid dst(out_h, out_w, src.c);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < src.c; ++ch) {
                const double top = src.at(y0, x0, ch) * (1.0 - wx) + src.at(y0, x1, ch) * wx;
                const double bot = src.at(y1, x0, ch) * (1.0 - wx) + src.at(y1, x1, ch) * wx;
                dst.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

Grid concat_channels(const std::vector<Grid>& levels) {
    if (levels.empty()) throw InvalidInput("concat_channels: empty level list");
    const int h = levels.front().h, w = levels.front().w;
    int c_total = 0;
    for (const Grid& g : levels) {
        if (g.h != h || g.w != w) throw InvalidInput("concat_channels: spatial dims disagree");
        c_total += g.c;
    }
    Grid out(h, w, c_total);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int off = 0;
            for (const Grid& g : levels) {
                for (int ch = 0; ch < g.c; ++ch) out.at(y, x, off + ch) = g.at(y, x, ch);
                off += g.c;
            }
        }
    return out;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {
// Reflect index with edge duplication: -1 -> 0, n -> n-1.
inline int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}
}  // namespace

Grid gaussian_blur(const Grid& src, double sigma, int radius) {
    const std::vector<double> k = gaussian_kernel(sigma, radius);
    Grid tmp(src.h, src.w, src.c);
    // horizontal pass
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int ch = 0; ch < src.c; ++ch) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[t + radius] * src.at(y, reflect(x + t, src.w), ch);
                tmp.at(y, x, ch) = acc;
            }
    // vertical pass
    Grid dst(src.h, src.w, src.c);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int ch = 0; ch < src.c; ++ch) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[t + radius] * tmp.at(reflect(y + t, src.h), x, ch);
                dst.at(y, x, ch) = acc;
            }
    return dst;
}

}  // namespace stmae
