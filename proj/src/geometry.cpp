#include "kanfuse/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace kf {

double wrap_angle(double a) {
    const double two_pi = 6.283185307179586476925286766559;
    a = std::fmod(a, two_pi);
    if (a <= -3.14159265358979323846) a += two_pi;
    if (a > 3.14159265358979323846) a -= two_pi;
    return a;
}

std::array<std::array<double, 2>, 4> bev_corners(const Box3D& b) {
    double c = std::cos(b.yaw), s = std::sin(b.yaw);
    double hl = b.l * 0.5, hw = b.w * 0.5;
    // local corners CCW: (+l,+w), (-l,+w), (-l,-w), (+l,-w)
    std::array<std::array<double, 2>, 4> out;
    const double lx[4] = {hl, -hl, -hl, hl};
    const double ly[4] = {hw, hw, -hw, -hw};
    for (int i = 0; i < 4; ++i) {
        out[static_cast<size_t>(i)][0] = b.x + c * lx[i] - s * ly[i];
        out[static_cast<size_t>(i)][1] = b.y + s * lx[i] + c * ly[i];
    }
    return out;
}

namespace {

double polygon_area(const std::vector<std::array<double, 2>>& p) {
    double a = 0;
    size_t n = p.size();
    for (size_t i = 0; i < n; ++i) {
        size_t j = (i + 1) % n;
        a += p[i][0] * p[j][1] - p[j][0] * p[i][1];
    }
    return 0.5 * std::abs(a);
}

// Sutherland-Hodgman: clip subject polygon against the half-plane left of
// edge (a -> b)
std::vector<std::array<double, 2>> clip_edge(const std::vector<std::array<double, 2>>& poly,
                                             const std::array<double, 2>& a,
                                             const std::array<double, 2>& b) {
    std::vector<std::array<double, 2>> out;
    size_t n = poly.size();
    auto side = [&](const std::array<double, 2>& p) {
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    };
    for (size_t i = 0; i < n; ++i) {
        const auto& cur = poly[i];
        const auto& prev = poly[(i + n - 1) % n];
        double sc = side(cur), sp = side(prev);
        bool in_cur = sc >= 0, in_prev = sp >= 0;
        if (in_cur != in_prev) {
            double t = sp / (sp - sc);
            out.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
        }
        if (in_cur) out.push_back(cur);
    }
    return out;
}

} // namespace

double bev_iou(const Box3D& a, const Box3D& b) {
    if (a.w <= 0 || a.l <= 0 || b.w <= 0 || b.l <= 0)
        throw ValueError("bev_iou: degenerate zero-area box");
    auto ca = bev_corners(a);
    auto cb = bev_corners(b);
    std::vector<std::array<double, 2>> poly(ca.begin(), ca.end());
    for (int i = 0; i < 4 && !poly.empty(); ++i)
        poly = clip_edge(poly, cb[static_cast<size_t>(i)], cb[static_cast<size_t>((i + 1) % 4)]);
    double inter = poly.size() >= 3 ? polygon_area(poly) : 0.0;
    double area_a = a.w * a.l, area_b = b.w * b.l;
    double uni = area_a + area_b - inter;
    if (uni <= 0) return 0.0;
    double iou = inter / uni;
    return std::min(1.0, std::max(0.0, iou));
}

std::vector<int> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh) {
    std::vector<int> order(boxes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return boxes[static_cast<size_t>(a)].score > boxes[static_cast<size_t>(b)].score;
    });
    std::vector<int> kept;
    std::vector<char> removed(boxes.size(), 0);
    for (int i : order) {
        if (removed[static_cast<size_t>(i)]) continue;
        kept.push_back(i);
        for (int j : order) {
            if (j == i || removed[static_cast<size_t>(j)]) continue;
            if (bev_iou(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(j)]) > iou_thresh)
                removed[static_cast<size_t>(j)] = 1;
        }
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

bool point_in_box(const Box3D& b, double px, double py, double pz) {
    if (pz < b.z - b.h * 0.5 || pz > b.z + b.h * 0.5) return false;
    double c = std::cos(b.yaw), s = std::sin(b.yaw);
    double dx = px - b.x, dy = py - b.y;
    double lx = c * dx + s * dy;
    double ly = -s * dx + c * dy;
    return std::abs(lx) <= b.l * 0.5 && std::abs(ly) <= b.w * 0.5;
}

bool ray_box_intersect(const Box3D& b, const std::array<double, 3>& origin,
                       const std::array<double, 3>& dir, double& t_hit) {
    double c = std::cos(b.yaw), s = std::sin(b.yaw);
    // into box frame
    double ox = origin[0] - b.x, oy = origin[1] - b.y, oz = origin[2] - b.z;
    double lox = c * ox + s * oy, loy = -s * ox + c * oy;
    double ldx = c * dir[0] + s * dir[1], ldy = -s * dir[0] + c * dir[1];
    double half[3] = {b.l * 0.5, b.w * 0.5, b.h * 0.5};
    double o[3] = {lox, loy, oz};
    double d[3] = {ldx, ldy, dir[2]};
    double tmin = 0.0, tmax = 1e30;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-12) {
            if (o[i] < -half[i] || o[i] > half[i]) return false;
            continue;
        }
        double t1 = (-half[i] - o[i]) / d[i];
        double t2 = (half[i] - o[i]) / d[i];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return false;
    }
    if (tmin <= 0.0) return false; // origin inside or box behind
    t_hit = tmin;
    return true;
}

} // namespace kf
