#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace typlab {

using Vec3f = std::array<float, 3>;

/// A set of 3D points tagged with the name of the coordinate frame they are
/// expressed in. Coordinates are float32 end to end so that dataset files
/// round-trip bit-exactly.
struct PointCloud {
    std::string frame;
    std::vector<Vec3f> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

inline bool finite(const Vec3f& p) {
    return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

}  // namespace typlab
