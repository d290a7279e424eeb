#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/eem.hpp"
#include "segxal/types.hpp"

namespace segxal {

/// A vertex in continuous pixel coordinates: pixel (r, c) covers [r, r+1) x [c, c+1).
struct Vertex {
    double row = 0.0;
    double col = 0.0;
    bool operator==(const Vertex&) const = default;
};

struct PolygonEdit {
    int class_id = 0;
    std::vector<Vertex> vertices;
    bool operator==(const PolygonEdit&) const = default;
};

struct BrushEdit {
    int class_id = 0;
    std::vector<Run> runs;
    bool operator==(const BrushEdit&) const = default;
};

using LabelEdit = std::variant<PolygonEdit, BrushEdit>;

/// Even-odd point-in-polygon test (crossing number along +col).
bool point_in_polygon(const std::vector<Vertex>& poly, double row, double col);

/// Pixels whose centre lies inside the polygon under the even-odd rule, row-major 0/1.
std::vector<std::uint8_t> rasterize_polygon(const std::vector<Vertex>& poly, int height, int width);

/// Empty iff the polygon has >= 3 finite vertices inside [0,h] x [0,w], no repeated
/// consecutive vertex, and no two edges touch except adjacent ones at their shared vertex.
std::string polygon_problem(const std::vector<Vertex>& poly, int height, int width);

/// Parses {"edits": [{"class_id": k, "polygon": [[row, col], ...]} | {"class_id": k, "brush": [[row, col, len], ...]}]}.
/// Throws invalid_geometry on malformed or out-of-range input.
std::vector<LabelEdit> parse_edits(const nlohmann::json& body, int height, int width, int num_classes);
nlohmann::json edits_to_json(const std::vector<LabelEdit>& edits);

/// Applies the edits in order on top of `initial`.
LabelMask apply_edits(const LabelMask& initial, const std::vector<LabelEdit>& edits);

/// FNV-1a over the label bytes, as 16 hex digits.
std::string mask_checksum(const LabelMask& mask);

}  // namespace segxal
