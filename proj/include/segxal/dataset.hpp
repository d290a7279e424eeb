#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/types.hpp"

namespace segxal {

/// Explicit object placement; zero height/width selects the perspective default for that row.
struct ObjectSpec {
    int cls = 2;
    int bottom_row = 0;
    int center_col = 0;
    int height = 0;
    int width = 0;
};

struct SceneSpec {
    int width = 128;
    int height = 64;
    int num_classes = 5;
    int num_objects = 0;
    std::uint64_t seed = 1;
    /// Per-pixel texture noise amplitude.
    double noise = 0.05;
    std::string id;  ///< defaults to "syn-<seed>"
    /// When non-empty, replaces the random placement of num_objects.
    std::vector<ObjectSpec> objects;
};

/// Where the generator put an object, inclusive pixel bounds, plus the nearness it was drawn at.
struct ObjectPlacement {
    int cls = 0;
    int top = 0, left = 0, bottom = 0, right = 0;
    double nearness = 0.0;
    int visible_pixels = 0;
};

struct SyntheticScene {
    Sample sample;
    int horizon_row = 0;
    std::vector<ObjectPlacement> objects;  ///< in painting order, far to near
};

/// Pure function of the spec. Throws spec_too_small when objects cannot fit.
SyntheticScene generate_scene(const SceneSpec& spec);

struct SyntheticDatasetSpec {
    int count = 0;
    int width = 128;
    int height = 64;
    int num_classes = 5;
    int max_objects = 4;
    std::uint64_t seed = 1;
    std::string id_prefix = "syn";
};

/// Scene i is generated from a seed derived from (seed, i); object counts vary in [1, max_objects].
std::vector<SyntheticScene> generate_dataset(const SyntheticDatasetSpec& spec);
SceneSpec dataset_scene_spec(const SyntheticDatasetSpec& spec, int index);

/// Writes image/, label/, depth/ PNGs plus manifest.json.
void export_synthetic(const std::string& dir, const SyntheticDatasetSpec& spec, const std::vector<SyntheticScene>& scenes);
/// Reads a directory written by export_synthetic.
std::vector<Sample> load_synthetic_dir(const std::string& dir);

enum class Split { train, val, test };
Split split_from_string(const std::string& s);

struct CityscapesOptions {
    int height = 64;
    int width = 128;
};

/// Raw Cityscapes label id to the 19 evaluated train ids; everything else is ignore.
const std::array<std::uint8_t, 256>& cityscapes_label_to_train();

/// Reads leftImg8bit/<split>/<city>/*_leftImg8bit.png with gtFine/<split>/<city>/*_gtFine_labelIds.png.
/// Images are resized bilinearly, labels by nearest neighbour.
std::vector<Sample> load_cityscapes_dir(const std::string& root, Split split, const CityscapesOptions& opt = {});

Image resize_bilinear(const Image& img, int height, int width);
LabelMask resize_nearest(const LabelMask& mask, int height, int width);

/// |labeled| = round(initial_label_fraction * N), remainder unlabeled; deterministic in seed.
SamplePool initial_split(const std::vector<std::string>& ids, const ALConfig& config, std::uint64_t seed);

}  // namespace segxal
