#include "stmae/residuals.hpp"

#include <cmath>

#include "stmae/fptd.hpp"

namespace stmae {

namespace {
void check_shapes(const Grid& carf, const Grid& pfdf) {
    if (!carf.same_shape(pfdf)) throw InvalidInput("residuals: CARF/PFDF shape mismatch");
}
}  // namespace

double intensity_loss(const Grid& carf, const Grid& pfdf, int patch_size) {
    check_shapes(carf, pfdf);
    const Mat u = partition_patches(carf, patch_size).patches;
    const Mat v = partition_patches(pfdf, patch_size).patches;
    return (u - v).squaredNorm();
}

double orientation_loss(const Grid& carf, const Grid& pfdf, int patch_size) {
    check_shapes(carf, pfdf);
    const Mat u = partition_patches(carf, patch_size).patches;
    const Mat v = partition_patches(pfdf, patch_size).patches;
    double sum = 0.0;
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        const double den = std::max(u.row(r).norm() * v.row(r).norm(), kCosineEps);
        sum += 1.0 - u.row(r).dot(v.row(r)) / den;
    }
    return sum;
}

LossReport total_loss(const Grid& carf, const Grid& pfdf, int patch_size, double lambda,
                      LossModality modality) {
    if (lambda < 0.0) throw ConfigError("loss lambda must be nonnegative");
    LossReport r;
    r.lambda = lambda;
    r.l_int = intensity_loss(carf, pfdf, patch_size);
    r.l_ori = orientation_loss(carf, pfdf, patch_size);
    switch (modality) {
        case LossModality::intensity: r.total = r.l_int; break;
        case LossModality::orientation: r.total = r.l_ori; break;
        case LossModality::both: r.total = r.l_int + lambda * r.l_ori; break;
    }
    return r;
}

std::pair<LossReport, Grid> total_loss_grad(const Grid& carf, const Grid& pfdf, int patch_size,
                                            double lambda, LossModality modality) {
    if (lambda < 0.0) throw ConfigError("loss lambda must be nonnegative");
    check_shapes(carf, pfdf);
    const PatchGrid pu = partition_patches(carf, patch_size);
    const PatchGrid pv = partition_patches(pfdf, patch_size);
    const Mat& u = pu.patches;
    const Mat& v = pv.patches;

    LossReport rep;
    rep.lambda = lambda;
    Mat grad = Mat::Zero(u.rows(), u.cols());
    const bool want_int = modality != LossModality::orientation;
    const bool want_ori = modality != LossModality::intensity;
    const double ori_w = (modality == LossModality::both) ? lambda : 1.0;

    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        const auto ur = u.row(r);
        const auto vr = v.row(r);
        const double nu = ur.norm(), nv = vr.norm();
        const double dot = ur.dot(vr);
        const double den = std::max(nu * nv, kCosineEps);
        rep.l_int += (ur - vr).squaredNorm();
        rep.l_ori += 1.0 - dot / den;
        if (want_int) grad.row(r) += 2.0 * (ur - vr);
        if (want_ori) {
            if (nu * nv > kCosineEps) {
                grad.row(r) += ori_w * (dot / (nu * nu * den) * ur.array() - vr.array() / den).matrix();
            } else {
                grad.row(r) += ori_w * (-vr / kCosineEps);
            }
        }
    }
    switch (modality) {
        case LossModality::intensity: rep.total = rep.l_int; break;
        case LossModality::orientation: rep.total = rep.l_ori; break;
        case LossModality::both: rep.total = rep.l_int + lambda * rep.l_ori; break;
    }
    return {rep, fold_patches(grad, patch_size, carf.c, carf.h, carf.w)};
}

std::pair<Grid, Grid> residual_maps(const Grid& carf, const Grid& pfdf) {
    check_shapes(carf, pfdf);
    Grid a_int(carf.h, carf.w, 1), a_ori(carf.h, carf.w, 1);
    for (int y = 0; y < carf.h; ++y)
        for (int x = 0; x < carf.w; ++x) {
            double sq = 0.0, dot = 0.0, nu = 0.0, nv = 0.0;
            for (int ch = 0; ch < carf.c; ++ch) {
                const double a = carf.at(y, x, ch), b = pfdf.at(y, x, ch);
                sq += (a - b) * (a - b);
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            a_int.at(y, x, 0) = sq;
            const double den = std::max(std::sqrt(nu) * std::sqrt(nv), kCosineEps);
            a_ori.at(y, x, 0) = 1.0 - dot / den;
        }
    return {a_int, a_ori};
}

Grid fuse_maps(const Grid& a_int, const Grid& a_ori) {
    if (!a_int.same_shape(a_ori)) throw InvalidInput("fuse_maps: shape mismatch");
    Grid out = a_int;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= a_ori.data[i];
    return out;
}

AnomalyMap postprocess(const Grid& fused, const Grid& a_int, const Grid& a_ori,
                       int image_h, int image_w, double sigma) {
    AnomalyMap out;
    out.a_int = a_int;
    out.a_ori = a_ori;
    const Grid up = resize_bilinear(fused, image_h, image_w);
    const int radius = static_cast<int>(std::lround(4.0 * sigma));
    out.map = gaussian_blur(up, sigma, radius);
    out.image_score = image_score(out.map);
    return out;
}

double image_score(const Grid& map) {
    if (map.data.empty()) throw InvalidInput("image_score: empty map");
    double mean = 0.0;
    for (double v : map.data) mean += v;
    mean /= static_cast<double>(map.data.size());
    double var = 0.0;
    for (double v : map.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(map.data.size());
    return std::sqrt(var);
}

}  // namespace stmae
