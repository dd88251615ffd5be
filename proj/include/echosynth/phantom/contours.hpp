#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echosynth/volume.hpp"

// Per-slice closed polylines for the labeled structures. Contours rasterize
// through a closed Catmull-Rom spline and an even-odd scanline fill, and can
// be recovered from a label volume by tracing the cracks between voxels.

namespace echosynth::phantom {

struct Contour {
    int slice = 0;
    std::uint8_t class_id = kLV;
    std::vector<std::array<float, 2>> points;  // voxel coordinates, first point not repeated
};

using ContourSet = std::vector<Contour>;

namespace detail {

// Directions around a voxel corner: +x, +y, -x, -y.
inline constexpr int kDx[4] = {1, 0, -1, 0};
inline constexpr int kDy[4] = {0, 1, 0, -1};

// Traces every closed boundary loop of a binary slice mask. Loop vertices are
// voxel corner coordinates; the inside of the mask stays on the left of the
// walking direction, and collinear corners are dropped.
inline std::vector<std::vector<std::array<float, 2>>> trace_boundary_loops(const std::vector<std::uint8_t>& mask,
                                                                           int w, int h) {
    auto inside = [&](int x, int y) {
        return x >= 0 && x < w && y >= 0 && y < h && mask[static_cast<std::size_t>(y) * w + x] != 0;
    };
    // edge_flags[corner] holds a bit per outgoing direction
    const int cw = w + 1, ch = h + 1;
    std::vector<std::uint8_t> edges(static_cast<std::size_t>(cw) * ch, 0);
    auto corner = [&](int x, int y) { return static_cast<std::size_t>(y) * cw + x; };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!inside(x, y)) continue;
            if (!inside(x, y - 1)) edges[corner(x, y)] |= 1u << 0;          // bottom, +x
            if (!inside(x + 1, y)) edges[corner(x + 1, y)] |= 1u << 1;      // right, +y
            if (!inside(x, y + 1)) edges[corner(x + 1, y + 1)] |= 1u << 2;  // top, -x
            if (!inside(x - 1, y)) edges[corner(x, y + 1)] |= 1u << 3;      // left, -y
        }
    }

    std::vector<std::vector<std::array<float, 2>>> loops;
    for (int sy = 0; sy < ch; ++sy) {
        for (int sx = 0; sx < cw; ++sx) {
            for (int sdir = 0; sdir < 4; ++sdir) {
                if (!(edges[corner(sx, sy)] & (1u << sdir))) continue;
                std::vector<std::array<int, 2>> raw;
                int x = sx, y = sy, dir = sdir;
                for (;;) {
                    raw.push_back({x, y});
                    edges[corner(x, y)] &= ~(1u << dir);
                    x += kDx[dir];
                    y += kDy[dir];
                    // Prefer the left turn so touching-diagonal regions split
                    // into separate simple loops. The consumed starting edge
                    // still competes, closing the walk when it would win.
                    const int candidates[3] = {(dir + 1) % 4, dir, (dir + 3) % 4};
                    int next = -1;
                    for (int c : candidates) {
                        const bool is_start = (x == sx && y == sy && c == sdir);
                        if (is_start) break;
                        if (edges[corner(x, y)] & (1u << c)) {
                            next = c;
                            break;
                        }
                    }
                    if (next < 0) break;
                    dir = next;
                }

                std::vector<std::array<float, 2>> loop;
                const std::size_t n = raw.size();
                for (std::size_t i = 0; i < n; ++i) {
                    const auto& prev = raw[(i + n - 1) % n];
                    const auto& cur = raw[i];
                    const auto& next = raw[(i + 1) % n];
                    const bool collinear = (cur[0] - prev[0] == next[0] - cur[0]) &&
                                           (cur[1] - prev[1] == next[1] - cur[1]);
                    if (!collinear) loop.push_back({float(cur[0]), float(cur[1])});
                }
                if (loop.size() >= 3) loops.push_back(std::move(loop));
            }
        }
    }
    return loops;
}

inline std::array<float, 2> catmull_rom(const std::array<float, 2>& p0, const std::array<float, 2>& p1,
                                        const std::array<float, 2>& p2, const std::array<float, 2>& p3, float t) {
    const float t2 = t * t, t3 = t2 * t;
    std::array<float, 2> q;
    for (int k = 0; k < 2; ++k) {
        q[k] = 0.5f * (2.0f * p1[k] + (-p0[k] + p2[k]) * t + (2.0f * p0[k] - 5.0f * p1[k] + 4.0f * p2[k] - p3[k]) * t2 +
                       (-p0[k] + 3.0f * p1[k] - 3.0f * p2[k] + p3[k]) * t3);
    }
    return q;
}

inline std::vector<std::array<float, 2>> resample_closed(const std::vector<std::array<float, 2>>& pts, int samples) {
    const int n = static_cast<int>(pts.size());
    std::vector<std::array<float, 2>> out(static_cast<std::size_t>(samples));
    for (int j = 0; j < samples; ++j) {
        const double u = double(j) * n / samples;
        const int seg = static_cast<int>(u) % n;
        const float t = static_cast<float>(u - std::floor(u));
        out[static_cast<std::size_t>(j)] =
            catmull_rom(pts[(seg + n - 1) % n], pts[seg], pts[(seg + 1) % n], pts[(seg + 2) % n], t);
    }
    return out;
}

inline bool segments_intersect(const std::array<float, 2>& a, const std::array<float, 2>& b,
                               const std::array<float, 2>& c, const std::array<float, 2>& d) {
    auto orient = [](const std::array<float, 2>& p, const std::array<float, 2>& q, const std::array<float, 2>& r) {
        const double v = (double(q[0]) - p[0]) * (double(r[1]) - p[1]) - (double(q[1]) - p[1]) * (double(r[0]) - p[0]);
        return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
    };
    const int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
    return o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

inline bool polygon_self_intersects(const std::vector<std::array<float, 2>>& poly) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;  // adjacent around the wrap
            if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return true;
        }
    }
    return false;
}

// Flips the parity of every voxel whose center lies inside the polygon.
inline void scanline_fill_xor(const std::vector<std::array<float, 2>>& poly, std::vector<std::uint8_t>& mask, int w,
                              int h) {
    const std::size_t n = poly.size();
    std::vector<double> xs;
    for (int row = 0; row < h; ++row) {
        const double yc = row + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = poly[i];
            const auto& q = poly[(i + 1) % n];
            const bool crosses = (p[1] <= yc && q[1] > yc) || (q[1] <= yc && p[1] > yc);
            if (!crosses) continue;
            xs.push_back(p[0] + (yc - p[1]) * (double(q[0]) - p[0]) / (double(q[1]) - p[1]));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int first = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int last = std::min(w - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
            for (int i = first; i <= last; ++i) mask[static_cast<std::size_t>(row) * w + i] ^= 1u;
        }
    }
}

}  // namespace detail

// Recovers the boundary loops of every labeled structure on every slice.
inline ContourSet extract_contours(const LabelVolume& labels) {
    ContourSet contours;
    const int w = labels.dims[0], h = labels.dims[1];
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h);
    for (int z = 0; z < labels.dims[2]; ++z) {
        for (std::uint8_t cls : {kLV, kLA, kMYO}) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    mask[static_cast<std::size_t>(y) * w + x] = labels.at(x, y, z) == cls ? 1 : 0;
                }
            }
            for (auto& loop : detail::trace_boundary_loops(mask, w, h)) {
                Contour c;
                c.slice = z;
                c.class_id = cls;
                c.points = std::move(loop);
                contours.push_back(std::move(c));
            }
        }
    }
    return contours;
}

inline LabelVolume contours_to_label_volume(const ContourSet& contours, const Dims3& dims, const Spacing3& spacing,
                                            int samples_per_contour) {
    const int w = dims[0], h = dims[1];
    for (const Contour& c : contours) {
        if (c.class_id < kLV || c.class_id > kMYO) {
            throw std::invalid_argument("contour on slice " + std::to_string(c.slice) +
                                        " carries non-structure class id " + std::to_string(int(c.class_id)));
        }
        if (c.points.size() < 3) {
            throw std::invalid_argument("contour on slice " + std::to_string(c.slice) + " has " +
                                        std::to_string(c.points.size()) + " points; at least 3 required");
        }
        if (samples_per_contour < static_cast<int>(c.points.size())) {
            throw std::invalid_argument("samples_per_contour " + std::to_string(samples_per_contour) +
                                        " is below the contour point count " + std::to_string(c.points.size()));
        }
        if (c.slice < 0 || c.slice >= dims[2]) {
            throw std::invalid_argument("contour slice " + std::to_string(c.slice) + " outside 0.." +
                                        std::to_string(dims[2] - 1));
        }
    }

    // one even-odd parity mask per foreground class per slice
    std::vector<std::vector<std::uint8_t>> class_masks(3);
    LabelVolume labels(dims, spacing);

    for (int z = 0; z < dims[2]; ++z) {
        bool any = false;
        for (auto& m : class_masks) m.assign(static_cast<std::size_t>(w) * h, 0);
        for (const Contour& c : contours) {
            if (c.slice != z) continue;
            auto poly = detail::resample_closed(c.points, samples_per_contour);
            if (detail::polygon_self_intersects(poly)) {
                std::cerr << "warning: contour (slice " << c.slice << ", class " << class_name(c.class_id)
                          << ") self-intersects after resampling; filling even-odd anyway\n";
            }
            detail::scanline_fill_xor(poly, class_masks[c.class_id - 1], w, h);
            any = true;
        }
        if (!any) continue;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                std::uint8_t id = kBackground;
                if (class_masks[kLV - 1][i]) {
                    id = kLV;
                } else if (class_masks[kLA - 1][i]) {
                    id = kLA;
                } else if (class_masks[kMYO - 1][i]) {
                    id = kMYO;
                }
                labels.at(x, y, z) = id;
            }
        }
    }
    return labels;
}

inline nlohmann::json contours_to_json(const ContourSet& contours) {
    nlohmann::json doc;
    doc["schema_version"] = 1;
    doc["contours"] = nlohmann::json::array();
    for (const Contour& c : contours) {
        nlohmann::json jc;
        jc["slice"] = c.slice;
        jc["class"] = int(c.class_id);
        jc["points"] = nlohmann::json::array();
        for (const auto& p : c.points) jc["points"].push_back({p[0], p[1]});
        doc["contours"].push_back(std::move(jc));
    }
    return doc;
}

inline ContourSet contours_from_json(const nlohmann::json& doc) {
    ContourSet contours;
    for (const auto& jc : doc.at("contours")) {
        Contour c;
        c.slice = jc.at("slice").get<int>();
        const int cls = jc.at("class").get<int>();
        if (cls < 0 || cls >= kNumClasses) {
            throw std::invalid_argument("contour document holds class id " + std::to_string(cls));
        }
        c.class_id = static_cast<std::uint8_t>(cls);
        for (const auto& jp : jc.at("points")) {
            c.points.push_back({jp.at(0).get<float>(), jp.at(1).get<float>()});
        }
        contours.push_back(std::move(c));
    }
    return contours;
}

inline void save_contours(const ContourSet& contours, const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << contours_to_json(contours).dump(2) << "\n";
}

inline ContourSet load_contours(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for reading");
    nlohmann::json doc;
    f >> doc;
    return contours_from_json(doc);
}

}  // namespace echosynth::phantom
