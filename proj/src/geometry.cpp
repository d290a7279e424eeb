#include "segxal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace segxal {

bool point_in_polygon(const std::vector<Vertex>& poly, double row, double col) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vertex& a = poly[i];
        const Vertex& b = poly[j];
        if ((a.row > row) != (b.row > row)) {
            const double x = (b.col - a.col) * (row - a.row) / (b.row - a.row) + a.col;
            if (col < x) inside = !inside;
        }
    }
    return inside;
}

std::vector<std::uint8_t> rasterize_polygon(const std::vector<Vertex>& poly, int height, int width) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width, 0);
    const std::size_t n = poly.size();
    if (n < 3) return out;
    std::vector<double> xs;
    for (int r = 0; r < height; ++r) {
        const double y = r + 0.5;
        xs.clear();
        // Same crossing expression as point_in_polygon so both agree bit for bit.
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Vertex& a = poly[i];
            const Vertex& b = poly[j];
            if ((a.row > y) != (b.row > y)) xs.push_back((b.col - a.col) * (y - a.row) / (b.row - a.row) + a.col);
        }
        if (xs.empty()) continue;
        std::sort(xs.begin(), xs.end());
        // A centre x is inside iff an odd number of crossings lie strictly to its right.
        std::size_t k = 0;
        for (int c = 0; c < width; ++c) {
            const double x = c + 0.5;
            while (k < xs.size() && xs[k] <= x) ++k;
            if ((xs.size() - k) % 2 == 1) out[static_cast<std::size_t>(r) * width + c] = 1;
        }
    }
    return out;
}

namespace {

double cross(const Vertex& o, const Vertex& a, const Vertex& b) {
    return (a.row - o.row) * (b.col - o.col) - (a.col - o.col) * (b.row - o.row);
}

bool on_segment(const Vertex& p, const Vertex& a, const Vertex& b) {
    return std::min(a.row, b.row) <= p.row && p.row <= std::max(a.row, b.row) && std::min(a.col, b.col) <= p.col &&
           p.col <= std::max(a.col, b.col);
}

int sign(double v) { return (v > 0) - (v < 0); }

bool segments_touch(const Vertex& p1, const Vertex& p2, const Vertex& q1, const Vertex& q2) {
    const int d1 = sign(cross(q1, q2, p1)), d2 = sign(cross(q1, q2, p2));
    const int d3 = sign(cross(p1, p2, q1)), d4 = sign(cross(p1, p2, q2));
    if (d1 * d2 < 0 && d3 * d4 < 0) return true;
    if (d1 == 0 && on_segment(p1, q1, q2)) return true;
    if (d2 == 0 && on_segment(p2, q1, q2)) return true;
    if (d3 == 0 && on_segment(q1, p1, p2)) return true;
    if (d4 == 0 && on_segment(q2, p1, p2)) return true;
    return false;
}

std::string fmt_vertex(const Vertex& v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%g, %g)", v.row, v.col);
    return buf;
}

}  // namespace

std::string polygon_problem(const std::vector<Vertex>& poly, int height, int width) {
    const std::size_t n = poly.size();
    if (n < 3) return "polygon needs at least 3 vertices";
    for (std::size_t i = 0; i < n; ++i) {
        const Vertex& v = poly[i];
        if (!std::isfinite(v.row) || !std::isfinite(v.col)) return "vertex " + std::to_string(i) + " is not finite";
        if (v.row < 0 || v.row > height || v.col < 0 || v.col > width)
            return "vertex " + std::to_string(i) + " " + fmt_vertex(v) + " is out of bounds";
        if (v == poly[(i + 1) % n]) return "vertex " + std::to_string(i) + " repeats";
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Vertex& a1 = poly[i];
        const Vertex& a2 = poly[(i + 1) % n];
        for (std::size_t j = i + 1; j < n; ++j) {
            const Vertex& b1 = poly[j];
            const Vertex& b2 = poly[(j + 1) % n];
            const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if (adjacent) {
                // Neighbouring edges share one vertex; they may only overlap if they fold back on themselves.
                const Vertex& shared = j == i + 1 ? a2 : a1;
                const Vertex& p = j == i + 1 ? a1 : a2;
                const Vertex& q = j == i + 1 ? b2 : b1;
                if (sign(cross(shared, p, q)) == 0 &&
                    ((p.row - shared.row) * (q.row - shared.row) + (p.col - shared.col) * (q.col - shared.col)) > 0)
                    return "edges " + std::to_string(i) + " and " + std::to_string(j) + " overlap";
                continue;
            }
            if (segments_touch(a1, a2, b1, b2))
                return "edges " + std::to_string(i) + " and " + std::to_string(j) + " intersect";
        }
    }
    return {};
}

std::vector<LabelEdit> parse_edits(const nlohmann::json& body, int height, int width, int num_classes) {
    auto fail = [](const std::string& what) { throw Error(Errc::invalid_geometry, what); };
    if (!body.is_object() || !body.contains("edits") || !body["edits"].is_array()) fail("body needs an 'edits' array");
    std::vector<LabelEdit> out;
    std::size_t idx = 0;
    for (const auto& e : body["edits"]) {
        const std::string where = "edit " + std::to_string(idx++) + ": ";
        if (!e.is_object() || !e.contains("class_id") || !e["class_id"].is_number_integer()) fail(where + "missing class_id");
        const int cls = e["class_id"].get<int>();
        if ((cls < 0 || cls >= num_classes) && cls != kIgnoreLabel) fail(where + "class_id out of range");
        const bool poly = e.contains("polygon"), brush = e.contains("brush");
        if (poly == brush) fail(where + "needs exactly one of polygon or brush");
        if (poly) {
            PolygonEdit p;
            p.class_id = cls;
            if (!e["polygon"].is_array()) fail(where + "polygon must be an array");
            for (const auto& v : e["polygon"]) {
                if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                    fail(where + "vertices must be [row, col] pairs");
                p.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
            }
            if (auto why = polygon_problem(p.vertices, height, width); !why.empty()) fail(where + why);
            out.emplace_back(std::move(p));
        } else {
            BrushEdit b;
            b.class_id = cls;
            if (!e["brush"].is_array()) fail(where + "brush must be an array");
            for (const auto& r : e["brush"]) {
                if (!r.is_array() || r.size() != 3 || !r[0].is_number_integer() || !r[1].is_number_integer() ||
                    !r[2].is_number_integer())
                    fail(where + "brush runs must be [row, col, length] integers");
                const Run run{r[0].get<int>(), r[1].get<int>(), r[2].get<int>()};
                if (run.row < 0 || run.row >= height || run.col < 0 || run.length < 1 || run.col + run.length > width)
                    fail(where + "brush run out of bounds");
                b.runs.push_back(run);
            }
            out.emplace_back(std::move(b));
        }
    }
    return out;
}

nlohmann::json edits_to_json(const std::vector<LabelEdit>& edits) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : edits) {
        if (const auto* p = std::get_if<PolygonEdit>(&e)) {
            nlohmann::json vs = nlohmann::json::array();
            for (const auto& v : p->vertices) vs.push_back({v.row, v.col});
            arr.push_back({{"class_id", p->class_id}, {"polygon", vs}});
        } else {
            const auto& b = std::get<BrushEdit>(e);
            nlohmann::json rs = nlohmann::json::array();
            for (const auto& r : b.runs) rs.push_back({r.row, r.col, r.length});
            arr.push_back({{"class_id", b.class_id}, {"brush", rs}});
        }
    }
    return {{"edits", arr}};
}

LabelMask apply_edits(const LabelMask& initial, const std::vector<LabelEdit>& edits) {
    LabelMask out = initial;
    const int h = out.height, w = out.width;
    for (const auto& e : edits) {
        if (const auto* p = std::get_if<PolygonEdit>(&e)) {
            if (auto why = polygon_problem(p->vertices, h, w); !why.empty()) throw Error(Errc::invalid_geometry, why);
            const auto mask = rasterize_polygon(p->vertices, h, w);
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) out.labels[i] = static_cast<std::uint8_t>(p->class_id);
        } else {
            const auto& b = std::get<BrushEdit>(e);
            const auto mask = rle_decode(b.runs, h, w);
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) out.labels[i] = static_cast<std::uint8_t>(b.class_id);
        }
    }
    return out;
}

std::string mask_checksum(const LabelMask& mask) {
    std::uint64_t hsh = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : mask.labels) {
        hsh ^= b;
        hsh *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hsh));
    return buf;
}

}  // namespace segxal
