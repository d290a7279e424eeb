#include "segxal/eem.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "segxal/png_io.hpp"
#include "segxal/serialize.hpp"

namespace segxal {

namespace fs = std::filesystem;

EEMask fuse(const HeatMap& prox, const HeatMap& ent, double alpha, double beta) {
    if (prox.height != ent.height || prox.width != ent.width)
        throw Error(Errc::shape_mismatch, "fuse: heatmaps differ in shape");
    require(alpha >= 0 && beta >= 0 && alpha + beta > 0, Errc::precondition, "fuse: need alpha, beta >= 0 and alpha + beta > 0");
    EEMask out;
    out.alpha = alpha;
    out.beta = beta;
    out.prox_source = std::string(to_string(prox.kind));
    out.ent_source = std::string(to_string(ent.kind));
    out.map = HeatMap(HeatKind::eem, prox.height, prox.width);
    for (std::size_t i = 0; i < out.map.size(); ++i)
        out.map.values[i] = std::clamp(alpha * prox.values[i] + beta * ent.values[i], 0.0, 1.0);
    return out;
}

std::size_t CandidatePrompt::area() const {
    std::size_t n = 0;
    for (const auto& r : region) n += static_cast<std::size_t>(r.length);
    return n;
}

bool CandidatePrompt::contains(int row, int col) const {
    for (const auto& r : region)
        if (r.row == row && col >= r.col && col < r.col + r.length) return true;
    return false;
}

double nonzero_percentile(const std::vector<double>& values, double p) {
    std::vector<double> nz;
    for (double v : values)
        if (v > 0.0) nz.push_back(v);
    if (nz.empty()) return 0.0;
    std::sort(nz.begin(), nz.end());
    const auto n = static_cast<double>(nz.size());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, nz.size());
    return nz[rank - 1];
}

std::vector<Run> rle_encode(const std::vector<std::uint8_t>& mask, int height, int width) {
    std::vector<Run> runs;
    for (int r = 0; r < height; ++r) {
        int c = 0;
        while (c < width) {
            if (!mask[static_cast<std::size_t>(r) * width + c]) {
                ++c;
                continue;
            }
            const int start = c;
            while (c < width && mask[static_cast<std::size_t>(r) * width + c]) ++c;
            runs.push_back({r, start, c - start});
        }
    }
    return runs;
}

std::vector<std::uint8_t> rle_decode(const std::vector<Run>& runs, int height, int width) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
    for (const auto& run : runs) {
        if (run.row < 0 || run.row >= height || run.col < 0 || run.length < 0 || run.col + run.length > width)
            throw Error(Errc::invalid_geometry, "run outside the image");
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(run.row) * width + run.col, run.length, 1);
    }
    return mask;
}

std::vector<CandidatePrompt> extract_candidates(const EEMask& eem, const std::string& sample_id,
                                                const CandidateOptions& opt) {
    require(opt.percentile > 0 && opt.percentile < 100, Errc::precondition, "percentile must lie in (0,100)");
    const HeatMap& m = eem.map;
    const int h = m.height, w = m.width;
    const double cut = nonzero_percentile(m.values, opt.percentile);
    if (cut <= 0.0) return {};

    std::vector<int> comp(m.size(), -1);
    struct Comp {
        std::vector<int> pixels;
        double sum = 0.0;
        double excess = 0.0;  // sum of (v - cut); keeps the mean >= cut under rounding
    };
    std::vector<Comp> comps;
    std::vector<int> stack;
    for (std::size_t seed = 0; seed < m.size(); ++seed) {
        if (comp[seed] >= 0 || m.values[seed] < cut) continue;
        const int id = static_cast<int>(comps.size());
        comps.emplace_back();
        Comp& cc = comps.back();
        comp[seed] = id;
        stack.assign(1, static_cast<int>(seed));
        while (!stack.empty()) {
            const int px = stack.back();
            stack.pop_back();
            cc.pixels.push_back(px);
            cc.sum += m.values[px];
            cc.excess += m.values[px] - cut;
            const int r = px / w, c = px % w;
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
                const int q = n[0] * w + n[1];
                if (comp[q] >= 0 || m.values[q] < cut) continue;
                comp[q] = id;
                stack.push_back(q);
            }
        }
    }

    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(comps.size()); ++i)
        if (static_cast<int>(comps[i].pixels.size()) >= opt.min_region_px) order.push_back(i);
    auto mean = [&](int i) { return cut + comps[i].excess / static_cast<double>(comps[i].pixels.size()); };
    // Components are discovered in row-major order of their first pixel, so the index breaks ties.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (mean(a) != mean(b)) return mean(a) > mean(b);
        return comps[a].pixels.size() > comps[b].pixels.size();
    });
    if (static_cast<int>(order.size()) > opt.max_regions) order.resize(static_cast<std::size_t>(std::max(0, opt.max_regions)));

    std::vector<CandidatePrompt> out;
    for (int id : order) {
        const Comp& cc = comps[id];
        std::vector<std::uint8_t> bin(m.size(), 0);
        double wr = 0.0, wc = 0.0;
        for (int px : cc.pixels) {
            bin[px] = 1;
            wr += m.values[px] * (px / w);
            wc += m.values[px] * (px % w);
        }
        wr /= cc.sum;
        wc /= cc.sum;
        CandidatePrompt p;
        p.sample_id = sample_id;
        p.region = rle_encode(bin, h, w);
        p.score = mean(id);
        p.rank = static_cast<int>(out.size()) + 1;
        double best = std::numeric_limits<double>::infinity();
        int best_px = std::numeric_limits<int>::max();
        for (int px : cc.pixels) {
            const double dr = px / w - wr, dc = px % w - wc;
            const double d = dr * dr + dc * dc;
            if (d < best || (d == best && px < best_px)) {
                best = d;
                best_px = px;
            }
        }
        p.anchor_row = best_px / w;
        p.anchor_col = best_px % w;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::uint8_t> prompt_rank_mask(const std::vector<CandidatePrompt>& prompts, int height, int width) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
    for (const auto& p : prompts) {
        const auto bin = rle_decode(p.region, height, width);
        for (std::size_t i = 0; i < bin.size(); ++i)
            if (bin[i]) mask[i] = static_cast<std::uint8_t>(std::clamp(p.rank, 1, 255));
    }
    return mask;
}

nlohmann::json to_json(const CandidatePrompt& p) {
    nlohmann::json rle = nlohmann::json::array();
    for (const auto& r : p.region) rle.push_back({r.row, r.col, r.length});
    return {{"sample_id", p.sample_id}, {"rank", p.rank},          {"score", p.score},
            {"anchor", {p.anchor_row, p.anchor_col}}, {"rle", rle}};
}

CandidatePrompt prompt_from_json(const nlohmann::json& j) {
    CandidatePrompt p;
    p.sample_id = j.value("sample_id", "");
    p.rank = j.at("rank").get<int>();
    p.score = j.at("score").get<double>();
    p.anchor_row = j.at("anchor").at(0).get<int>();
    p.anchor_col = j.at("anchor").at(1).get<int>();
    for (const auto& r : j.at("rle")) p.region.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
    return p;
}

nlohmann::json eem_sidecar(const EEMask& eem, const CandidateOptions& opt, const std::vector<CandidatePrompt>& prompts) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& p : prompts) {
        auto j = to_json(p);
        j.erase("sample_id");
        regions.push_back(std::move(j));
    }
    return {{"schema", kSchemaVersion},
            {"alpha", eem.alpha},
            {"beta", eem.beta},
            {"percentile", opt.percentile},
            {"max_regions", opt.max_regions},
            {"min_region_px", opt.min_region_px},
            {"height", eem.map.height},
            {"width", eem.map.width},
            {"regions", regions}};
}

void export_eem(const std::string& dir, const std::string& sample_id, const EEMask& eem,
                const CandidateOptions& opt, const std::vector<CandidatePrompt>& prompts) {
    fs::create_directories(dir);
    save_heatmap_png((fs::path(dir) / (sample_id + ".eem.png")).string(), eem.map);
    auto side = eem_sidecar(eem, opt, prompts);
    side["sample_id"] = sample_id;
    const std::string text = side.dump(2) + "\n";
    write_file_atomic((fs::path(dir) / (sample_id + ".eem.json")).string(), text);
}

}  // namespace segxal
