#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segxal/types.hpp"

namespace segxal {

/// Decoded PNG: samples are row-major, `channels` per pixel, values in [0, 2^bit_depth).
struct PngImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;
};

PngImage read_png(const std::string& path);
void write_png(const std::string& path, int height, int width, int channels, int bit_depth,
               std::span<const std::uint16_t> samples);

void save_label_png(const std::string& path, const LabelMask& mask);
/// Pixel value = class id; 255 stays ignore.
LabelMask load_label_png(const std::string& path, int num_classes);

/// 16-bit single channel, value = round(nearness * 65535).
void save_depth_png(const std::string& path, const DepthMap& depth);
/// Bit-exact linear mapping v / 65535.
DepthMap load_depth_png(const std::string& path, DepthSource provider);

void save_image_png(const std::string& path, const Image& image);
Image load_image_png(const std::string& path, std::string id, ImageSource source);

/// 8-bit grayscale, value = round(255 * v).
void save_heatmap_png(const std::string& path, const HeatMap& map);

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed 256-entry heat colormap shared with the workbench; see heat_colormap_anchors().
const std::array<Rgb, 256>& heat_colormap();
/// Anchor colours at lut indices 0, 64, 128, 192, 255; entries between anchors are linear in integer math.
const std::array<Rgb, 5>& heat_colormap_anchors();
/// Class colour for label id; ignore maps to black.
Rgb class_color(std::uint8_t label);

/// Alpha-blends the colormapped heatmap over the image: out = round((1-a)*img + a*lut(v)).
std::vector<std::uint8_t> heat_overlay_rgb(const Image& image, const HeatMap& map, double alpha = 0.5);
std::vector<std::uint8_t> label_rgb(const LabelMask& mask);

}  // namespace segxal
