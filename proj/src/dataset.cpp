#include "segxal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "segxal/png_io.hpp"
#include "segxal/rng.hpp"
#include "segxal/serialize.hpp"

namespace segxal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Color = std::array<double, 3>;

Color object_color(int cls) {
    static const Color table[] = {{0.78, 0.18, 0.16}, {0.85, 0.70, 0.15}, {0.55, 0.25, 0.65}};
    const int k = cls - 2;
    if (k >= 0 && k < 3) return table[k];
    // Remaining classes walk the hue circle.
    const double h = std::fmod(0.13 * k, 1.0) * 6.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    Color c{};
    switch (static_cast<int>(h)) {
        case 0: c = {1, x, 0}; break;
        case 1: c = {x, 1, 0}; break;
        case 2: c = {0, 1, x}; break;
        case 3: c = {0, x, 1}; break;
        case 4: c = {x, 0, 1}; break;
        default: c = {1, 0, x}; break;
    }
    for (double& v : c) v = 0.15 + 0.7 * v;
    return c;
}

struct Geometry {
    int height = 0, width = 0, horizon = 0;
    double road_center = 0.0;

    double nearness(int row) const {
        if (row < horizon) return 0.0;
        return static_cast<double>(row - horizon + 1) / static_cast<double>(height - horizon);
    }
    double road_half_width(int row) const {
        const double t = static_cast<double>(row - horizon) / std::max(1, height - 1 - horizon);
        return width * (0.06 + 0.50 * t);
    }
};

}  // namespace

SyntheticScene generate_scene(const SceneSpec& spec) {
    const int H = spec.height;
    const int W = spec.width;
    if (H < kMinImageSide || W < kMinImageSide)
        throw Error(Errc::spec_too_small, "scene must be at least 16x16");
    if (spec.num_classes < 2) throw Error(Errc::spec_too_small, "scene needs at least sky and road classes");
    const bool has_objects = spec.num_objects > 0 || !spec.objects.empty();
    if (spec.num_objects < 0) throw Error(Errc::precondition, "num_objects must be >= 0");
    if (has_objects && spec.num_classes < 3)
        throw Error(Errc::spec_too_small, "objects need a class id >= 2");

    Rng rng(spec.seed);
    Geometry g;
    g.height = H;
    g.width = W;
    g.horizon = static_cast<int>(std::lround(H * rng.uniform(0.35, 0.45)));
    g.road_center = W * rng.uniform(0.4, 0.6);
    if (H - g.horizon < 6) throw Error(Errc::spec_too_small, "no room below the horizon");

    SyntheticScene scene;
    scene.horizon_row = g.horizon;
    Sample& s = scene.sample;
    const std::string id = spec.id.empty() ? "syn-" + std::to_string(spec.seed) : spec.id;
    s.image = Image(id, H, W, ImageSource::synthetic);
    s.gt = LabelMask(H, W, spec.num_classes, 0);
    s.depth = DepthMap(H, W, DepthSource::synthetic);
    s.pool_tag = PoolTag::unlabeled;

    Image& img = s.image;
    LabelMask& gt = *s.gt;
    DepthMap& depth = *s.depth;
    const Color haze{0.80, 0.82, 0.85};
    const Color verge{0.30, 0.48, 0.24};
    const Color road{0.40, 0.40, 0.42};

    auto paint = [&](int r, int c, const Color& col, double nearness) {
        const double fog = 0.35 * (1.0 - nearness);
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = (1.0 - fog) * col[ch] + fog * haze[ch];
    };

    for (int r = 0; r < H; ++r) {
        const double near = g.nearness(r);
        for (int c = 0; c < W; ++c) {
            depth.at(r, c) = near;
            if (r < g.horizon) {
                const double t = static_cast<double>(r) / g.horizon;
                paint(r, c, {0.50 + 0.25 * t, 0.65 + 0.20 * t, 0.90 + 0.05 * t}, 1.0);
                gt.at(r, c) = 0;
            } else if (std::abs(c + 0.5 - g.road_center) <= g.road_half_width(r)) {
                Color col = road;
                const bool lane = std::abs(c + 0.5 - g.road_center) < std::max(0.6, 0.015 * W * near) &&
                                  ((r - g.horizon) / std::max(2, (H - g.horizon) / 6)) % 2 == 0;
                if (lane) col = {0.85, 0.85, 0.85};
                paint(r, c, col, near);
                gt.at(r, c) = 1;
            } else {
                paint(r, c, verge, near);
                gt.at(r, c) = 0;
            }
        }
    }

    std::vector<ObjectSpec> objs = spec.objects;
    if (objs.empty()) {
        for (int i = 0; i < spec.num_objects; ++i) {
            ObjectSpec o;
            o.cls = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes - 2)));
            o.bottom_row = rng.range(g.horizon + 3, H - 1);
            const double hw = g.road_half_width(o.bottom_row);
            o.center_col = static_cast<int>(std::lround(g.road_center + rng.uniform(-0.8, 0.8) * hw));
            objs.push_back(o);
        }
    }
    std::vector<ObjectPlacement> placed;
    for (const ObjectSpec& o : objs) {
        if (o.cls < 2 || o.cls >= spec.num_classes) throw Error(Errc::precondition, "object class out of range");
        if (o.bottom_row < g.horizon || o.bottom_row >= H)
            throw Error(Errc::spec_too_small, "object bottom row must lie on the ground plane");
        const double near = g.nearness(o.bottom_row);
        int h = o.height > 0 ? o.height : std::max(3, static_cast<int>(std::lround(H * (0.08 + 0.30 * near))));
        int w = o.width > 0 ? o.width : std::max(3, static_cast<int>(std::lround(h * 1.4)));
        ObjectPlacement p;
        p.cls = o.cls;
        p.bottom = o.bottom_row;
        p.top = std::max(0, o.bottom_row - h + 1);
        p.left = std::max(0, o.center_col - w / 2);
        p.right = std::min(W - 1, o.center_col - w / 2 + w - 1);
        if (p.right < p.left || p.bottom - p.top < 1)
            throw Error(Errc::spec_too_small, "object does not fit in the frame");
        p.nearness = near;
        placed.push_back(p);
    }
    std::stable_sort(placed.begin(), placed.end(),
                     [](const ObjectPlacement& a, const ObjectPlacement& b) { return a.bottom < b.bottom; });

    std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);
    for (std::size_t k = 0; k < placed.size(); ++k) {
        const ObjectPlacement& p = placed[k];
        Color base = object_color(p.cls);
        for (double& v : base) v = std::clamp(v + rng.uniform(-0.06, 0.06), 0.0, 1.0);
        const int oh = p.bottom - p.top + 1;
        const int ow = p.right - p.left + 1;
        for (int r = p.top; r <= p.bottom; ++r) {
            for (int c = p.left; c <= p.right; ++c) {
                Color col = base;
                const int dr = r - p.top;
                const int dc = c - p.left;
                if (dr < oh * 3 / 10 && dc > ow / 8 && dc < ow - 1 - ow / 8) {
                    for (double& v : col) v *= 0.55;  // window band
                } else if (dr >= oh - std::max(1, oh / 7) && (dc < ow / 4 || dc >= ow - ow / 4)) {
                    col = {0.08, 0.08, 0.08};  // wheels
                }
                paint(r, c, col, p.nearness);
                gt.at(r, c) = static_cast<std::uint8_t>(p.cls);
                depth.at(r, c) = p.nearness;
                owner[static_cast<std::size_t>(r) * W + c] = static_cast<int>(k);
            }
        }
    }
    for (int o : owner)
        if (o >= 0) ++placed[o].visible_pixels;
    scene.objects = std::move(placed);

    for (double& v : img.pixels) v = std::clamp(v + spec.noise * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    return scene;
}

SceneSpec dataset_scene_spec(const SyntheticDatasetSpec& spec, int index) {
    SceneSpec s;
    s.width = spec.width;
    s.height = spec.height;
    s.num_classes = spec.num_classes;
    s.seed = Rng::derive(spec.seed, 0x5ce9e, static_cast<std::uint64_t>(index)).next();
    Rng pick = Rng::derive(spec.seed, 0x0b1ec7, static_cast<std::uint64_t>(index));
    s.num_objects = spec.num_classes > 2 && spec.max_objects > 0 ? pick.range(1, spec.max_objects) : 0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05d", spec.id_prefix.c_str(), index);
    s.id = buf;
    return s;
}

std::vector<SyntheticScene> generate_dataset(const SyntheticDatasetSpec& spec) {
    std::vector<SyntheticScene> out;
    out.reserve(spec.count);
    for (int i = 0; i < spec.count; ++i) out.push_back(generate_scene(dataset_scene_spec(spec, i)));
    return out;
}

void export_synthetic(const std::string& dir, const SyntheticDatasetSpec& spec,
                      const std::vector<SyntheticScene>& scenes) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::io, "cannot create " + dir + ": " + ec.message());
    json ids = json::array();
    json specs = json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const Sample& s = scenes[i].sample;
        save_image_png(dir + "/image/" + s.id() + ".png", s.image);
        save_label_png(dir + "/label/" + s.id() + ".png", *s.gt);
        save_depth_png(dir + "/depth/" + s.id() + ".depth.png", *s.depth);
        ids.push_back(s.id());
        const SceneSpec ss = dataset_scene_spec(spec, static_cast<int>(i));
        specs.push_back({{"id", ss.id}, {"width", ss.width}, {"height", ss.height}, {"num_classes", ss.num_classes},
                         {"num_objects", ss.num_objects}, {"seed", ss.seed}, {"noise", ss.noise}});
    }
    json manifest{{"schema", kSchemaVersion},
                  {"generator", {{"count", spec.count}, {"width", spec.width}, {"height", spec.height},
                                 {"num_classes", spec.num_classes}, {"max_objects", spec.max_objects},
                                 {"seed", spec.seed}, {"id_prefix", spec.id_prefix}}},
                  {"ids", ids},
                  {"scenes", specs}};
    write_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::vector<Sample> load_synthetic_dir(const std::string& dir) {
    const json manifest = json::parse(read_file(dir + "/manifest.json"));
    if (manifest.value("schema", std::string{}) != kSchemaVersion)
        throw Error(Errc::schema_mismatch, dir + "/manifest.json");
    const int C = manifest.at("generator").at("num_classes").get<int>();
    std::vector<Sample> out;
    for (const auto& idj : manifest.at("ids")) {
        const std::string id = idj.get<std::string>();
        Sample s;
        s.image = load_image_png(dir + "/image/" + id + ".png", id, ImageSource::synthetic);
        const std::string label = dir + "/label/" + id + ".png";
        if (fs::exists(label)) s.gt = load_label_png(label, C);
        const std::string depth = dir + "/depth/" + id + ".depth.png";
        if (fs::exists(depth)) s.depth = load_depth_png(depth, DepthSource::synthetic);
        out.push_back(std::move(s));
    }
    return out;
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(Errc::precondition, "unknown split '" + s + "'");
}

const std::array<std::uint8_t, 256>& cityscapes_label_to_train() {
    static const std::array<std::uint8_t, 256> table = [] {
        std::array<std::uint8_t, 256> t{};
        t.fill(kIgnoreLabel);
        const std::pair<int, int> pairs[] = {{7, 0},   {8, 1},   {11, 2},  {12, 3},  {13, 4},  {17, 5},  {19, 6},
                                             {20, 7},  {21, 8},  {22, 9},  {23, 10}, {24, 11}, {25, 12}, {26, 13},
                                             {27, 14}, {28, 15}, {31, 16}, {32, 17}, {33, 18}};
        for (auto [raw, train] : pairs) t[raw] = static_cast<std::uint8_t>(train);
        return t;
    }();
    return table;
}

Image resize_bilinear(const Image& img, int height, int width) {
    if (img.height == height && img.width == width) return img;
    Image out(img.id, height, width, img.source);
    const double sy = static_cast<double>(img.height) / height;
    const double sx = static_cast<double>(img.width) / width;
    for (int r = 0; r < height; ++r) {
        const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < width; ++c) {
            const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch);
                const double bot = (1 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch);
                out.at(r, c, ch) = (1 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

LabelMask resize_nearest(const LabelMask& mask, int height, int width) {
    if (mask.height == height && mask.width == width) return mask;
    LabelMask out(height, width, mask.num_classes);
    for (int r = 0; r < height; ++r) {
        const int sr = std::min(mask.height - 1, static_cast<int>((r + 0.5) * mask.height / height));
        for (int c = 0; c < width; ++c) {
            const int sc = std::min(mask.width - 1, static_cast<int>((c + 0.5) * mask.width / width));
            out.at(r, c) = mask.at(sr, sc);
        }
    }
    return out;
}

std::vector<Sample> load_cityscapes_dir(const std::string& root, Split split, const CityscapesOptions& opt) {
    const char* split_name = split == Split::train ? "train" : split == Split::val ? "val" : "test";
    const fs::path img_root = fs::path(root) / "leftImg8bit" / split_name;
    const fs::path lbl_root = fs::path(root) / "gtFine" / split_name;
    std::vector<Sample> out;
    if (!fs::exists(img_root)) return out;

    std::vector<fs::path> images;
    for (const auto& entry : fs::recursive_directory_iterator(img_root)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > 16 && name.ends_with("_leftImg8bit.png"))
            images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());

    const auto& remap = cityscapes_label_to_train();
    for (const fs::path& p : images) {
        const std::string name = p.filename().string();
        const std::string stem = name.substr(0, name.size() - std::string("_leftImg8bit.png").size());
        const fs::path city = p.parent_path().filename();
        const fs::path label = lbl_root / city / (stem + "_gtFine_labelIds.png");
        Sample s;
        s.image = resize_bilinear(load_image_png(p.string(), stem, ImageSource::cityscapes), opt.height, opt.width);
        if (fs::exists(label)) {
            LabelMask raw = load_label_png(label.string(), 19);
            for (auto& v : raw.labels) v = remap[v];
            s.gt = resize_nearest(raw, opt.height, opt.width);
        } else if (split != Split::test) {
            throw Error(Errc::missing_pair, "no label file for " + p.string());
        }
        out.push_back(std::move(s));
    }
    return out;
}

SamplePool initial_split(const std::vector<std::string>& ids, const ALConfig& config, std::uint64_t seed) {
    require(ids.size() >= 10, Errc::precondition, "initial_split needs at least 10 samples");
    std::vector<std::string> order(ids.begin(), ids.end());
    std::sort(order.begin(), order.end());
    Rng rng = Rng::derive(seed, 0x5917);
    rng.shuffle(order);
    const auto n_labeled = static_cast<std::size_t>(std::lround(config.initial_label_fraction * order.size()));
    SamplePool pool;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_labeled ? pool.labeled : pool.unlabeled).insert(order[i]);
    return pool;
}

}  // namespace segxal
