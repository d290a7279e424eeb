#include "segxal/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>

#include <png.h>

namespace segxal {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::string& path, const std::string& what) {
    throw Error(Errc::io, "png " + path + ": " + what);
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

PngImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) png_fail(path, "cannot open");
    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw CorruptInputError(0, "not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) png_fail(path, "png_create_read_struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        png_fail(path, "png_create_info_struct");
    }
    PngImage out;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptInputError(static_cast<std::size_t>(std::ftell(fp.get())), "libpng decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_swap(png);  // little-endian host order for direct uint16 reads
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    depth = png_get_bit_depth(png, info);
    out.bit_depth = depth;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw.resize(rowbytes * out.height);
    rows.resize(out.height);
    for (int r = 0; r < out.height; ++r) rows[r] = raw.data() + r * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
    out.samples.resize(n);
    if (depth == 16) {
        for (std::size_t i = 0; i < n; ++i)
            out.samples[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = raw[i];
    }
    return out;
}

void write_png(const std::string& path, int height, int width, int channels, int bit_depth,
               std::span<const std::uint16_t> samples) {
    if (samples.size() != static_cast<std::size_t>(height) * width * channels)
        throw Error(Errc::shape_mismatch, "png sample buffer does not match " + path);
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) {
        std::error_code ec;
        fs::create_directories(fs::path(path).parent_path(), ec);
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) png_fail(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) png_fail(path, "png_create_write_struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        png_fail(path, "png_create_info_struct");
    }
    std::vector<std::uint8_t> raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        png_fail(path, "libpng encode error");
    }
    png_init_io(png, fp.get());
    int color = PNG_COLOR_TYPE_GRAY;
    if (channels == 3) color = PNG_COLOR_TYPE_RGB;
    else if (channels == 4) color = PNG_COLOR_TYPE_RGBA;
    else if (channels == 2) color = PNG_COLOR_TYPE_GRAY_ALPHA;
    png_set_IHDR(png, info, width, height, bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);

    const std::size_t bps = bit_depth == 16 ? 2 : 1;
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bps;
    raw.resize(rowbytes * height);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bit_depth == 16) {
            raw[2 * i] = static_cast<std::uint8_t>(samples[i] >> 8);  // PNG is big-endian
            raw[2 * i + 1] = static_cast<std::uint8_t>(samples[i] & 0xff);
        } else {
            raw[i] = static_cast<std::uint8_t>(samples[i]);
        }
    }
    rows.resize(height);
    for (int r = 0; r < height; ++r) rows[r] = raw.data() + r * rowbytes;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_label_png(const std::string& path, const LabelMask& mask) {
    std::vector<std::uint16_t> s(mask.labels.begin(), mask.labels.end());
    write_png(path, mask.height, mask.width, 1, 8, s);
}

LabelMask load_label_png(const std::string& path, int num_classes) {
    PngImage png = read_png(path);
    if (png.bit_depth != 8) throw CorruptInputError(0, "label PNG must be 8-bit: " + path);
    LabelMask mask(png.height, png.width, num_classes);
    for (std::size_t i = 0; i < mask.labels.size(); ++i)
        mask.labels[i] = static_cast<std::uint8_t>(png.samples[i * png.channels]);
    return mask;
}

void save_depth_png(const std::string& path, const DepthMap& depth) {
    std::vector<std::uint16_t> s(depth.nearness.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = static_cast<std::uint16_t>(std::lround(std::clamp(depth.nearness[i], 0.0, 1.0) * 65535.0));
    write_png(path, depth.height, depth.width, 1, 16, s);
}

DepthMap load_depth_png(const std::string& path, DepthSource provider) {
    PngImage png = read_png(path);
    DepthMap d(png.height, png.width, provider);
    const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < d.nearness.size(); ++i)
        d.nearness[i] = static_cast<double>(png.samples[i * png.channels]) / scale;
    return d;
}

void save_image_png(const std::string& path, const Image& image) {
    std::vector<std::uint16_t> s(image.pixels.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = to_u8(image.pixels[i]);
    write_png(path, image.height, image.width, 3, 8, s);
}

Image load_image_png(const std::string& path, std::string id, ImageSource source) {
    PngImage png = read_png(path);
    Image img(std::move(id), png.height, png.width, source);
    const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
    const std::size_t n = static_cast<std::size_t>(png.height) * png.width;
    for (std::size_t px = 0; px < n; ++px) {
        for (int ch = 0; ch < 3; ++ch) {
            const int src = png.channels >= 3 ? ch : 0;
            img.pixels[px * 3 + ch] = png.samples[px * png.channels + src] / scale;
        }
    }
    return img;
}

void save_heatmap_png(const std::string& path, const HeatMap& map) {
    std::vector<std::uint16_t> s(map.values.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = to_u8(map.values[i]);
    write_png(path, map.height, map.width, 1, 8, s);
}

const std::array<Rgb, 5>& heat_colormap_anchors() {
    static const std::array<Rgb, 5> anchors{{
        Rgb{0, 0, 128},    // 0: dark blue
        Rgb{0, 128, 255},  // 64: azure
        Rgb{0, 255, 128},  // 128: spring green
        Rgb{255, 200, 0},  // 192: amber
        Rgb{200, 0, 0},    // 255: dark red
    }};
    return anchors;
}

const std::array<Rgb, 256>& heat_colormap() {
    static const std::array<Rgb, 256> lut = [] {
        std::array<Rgb, 256> t{};
        const auto& a = heat_colormap_anchors();
        const int pos[5] = {0, 64, 128, 192, 255};
        for (int i = 0; i < 256; ++i) {
            int seg = 0;
            while (seg < 3 && i > pos[seg + 1]) ++seg;
            const int span = pos[seg + 1] - pos[seg];
            const int off = i - pos[seg];
            for (int ch = 0; ch < 3; ++ch) {
                const int lo = a[seg][ch];
                const int hi = a[seg + 1][ch];
                // Rounded integer interpolation, identical on every platform.
                t[i][ch] = static_cast<std::uint8_t>((lo * (span - off) + hi * off + span / 2) / span);
            }
        }
        return t;
    }();
    return lut;
}

Rgb class_color(std::uint8_t label) {
    static const std::array<Rgb, 19> palette{{
        {70, 130, 180}, {128, 64, 128}, {0, 0, 142},    {220, 20, 60},  {250, 170, 30},
        {220, 220, 0},  {107, 142, 35}, {152, 251, 152}, {70, 70, 70},  {102, 102, 156},
        {190, 153, 153}, {153, 153, 153}, {244, 35, 232}, {255, 0, 0},  {0, 0, 70},
        {0, 60, 100},   {0, 80, 100},   {0, 0, 230},     {119, 11, 32},
    }};
    if (label == kIgnoreLabel) return {0, 0, 0};
    return palette[label % palette.size()];
}

std::vector<std::uint8_t> heat_overlay_rgb(const Image& image, const HeatMap& map, double alpha) {
    if (image.height != map.height || image.width != map.width)
        throw Error(Errc::shape_mismatch, "overlay: image and heatmap differ in shape");
    const auto& lut = heat_colormap();
    std::vector<std::uint8_t> out(image.pixels.size());
    for (std::size_t px = 0; px < map.values.size(); ++px) {
        const Rgb& c = lut[to_u8(map.values[px])];
        for (int ch = 0; ch < 3; ++ch) {
            const double base = std::clamp(image.pixels[px * 3 + ch], 0.0, 1.0) * 255.0;
            out[px * 3 + ch] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * base + alpha * c[ch]));
        }
    }
    return out;
}

std::vector<std::uint8_t> label_rgb(const LabelMask& mask) {
    std::vector<std::uint8_t> out(mask.labels.size() * 3);
    for (std::size_t px = 0; px < mask.labels.size(); ++px) {
        const Rgb c = class_color(mask.labels[px]);
        for (int ch = 0; ch < 3; ++ch) out[px * 3 + ch] = c[ch];
    }
    return out;
}

}  // namespace segxal
