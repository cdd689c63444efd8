#pragma once

#include <array>
#include <vector>

#include "kanfuse/common.hpp"

namespace kf {

// Oriented 3D box. l extends along the heading (x at yaw 0), w across it,
// yaw rotates counter-clockwise in the BEV plane and lives in (-pi, pi].
struct Box3D {
    double x = 0, y = 0, z = 0;
    double w = 1, l = 1, h = 1;
    double yaw = 0;
    int cls = 0;
    double score = 0;
};

// BEV footprint corners, counter-clockwise
std::array<std::array<double, 2>, 4> bev_corners(const Box3D& b);

// intersection-over-union of the rotated BEV rectangles (convex clipping)
double bev_iou(const Box3D& a, const Box3D& b);

// greedy NMS descending by score; returns kept indices in input order
std::vector<int> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh);

bool point_in_box(const Box3D& b, double px, double py, double pz);

// slab test in the box frame; t is the entry distance along the ray
bool ray_box_intersect(const Box3D& b, const std::array<double, 3>& origin,
                       const std::array<double, 3>& dir, double& t_hit);

double wrap_angle(double a); // into (-pi, pi]

} // namespace kf
