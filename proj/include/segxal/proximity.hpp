#pragma once

#include <string>
#include <vector>

#include "segxal/model.hpp"
#include "segxal/types.hpp"

namespace segxal {

/// Serves a DepthMap per sample, either from a directory of <id>.depth.png files
/// or from the depth carried by synthetic samples.
class DepthProvider {
public:
    static DepthProvider synthetic_gt();
    static DepthProvider from_directory(DepthSource kind, std::string directory);

    DepthSource kind() const { return kind_; }
    const std::string& directory() const { return dir_; }

    /// Throws not_found when the sample is not covered, shape_mismatch when sizes differ.
    DepthMap lookup(const Sample& sample) const;
    bool covers(const Sample& sample) const;
    /// Ids of samples the provider cannot serve, in input order.
    std::vector<std::string> missing(const std::vector<Sample>& samples) const;

private:
    DepthSource kind_ = DepthSource::synthetic;
    std::string dir_;
};

std::string depth_file_path(const std::string& directory, const std::string& sample_id);

struct ProximityMask {
    HeatMap soft;            ///< kind=proximity, values in [0,1]
    double tau_used = 0.0;   ///< realized nearness threshold t
    bool degenerate = false; ///< constant depth; soft is all ones
};

/// Linear-interpolated quantile (q in [0,1]) of the values.
double quantile(std::vector<double> values, double q);

/// Soft ramp above the per-image threshold t = quantile(nearness, 1 - tau_quantile).
/// With `hard`, pixels at or above t get 1 and all others 0.
ProximityMask proximity_mask(const DepthMap& depth, double tau_quantile, bool hard = false);

Image depth_informed_image(const Image& image, const ProximityMask& mask);

enum class ZMode { positive_grad_sum, spatial_count };

std::string_view to_string(ZMode z);
ZMode z_mode_from_string(std::string_view s);

struct GradCamOptions {
    std::string layer;  ///< empty selects the model's default target layer
    ZMode z_mode = ZMode::positive_grad_sum;
    double z_scale = 1.0;  ///< multiplies Z; only useful for checking the normalizer
};

struct GradCamResult {
    HeatMap map;  ///< kind=gradcam, upsampled to the image and min-max normalized
    bool all_zero = false;
    double z = 0.0;
};

GradCamResult gradcam_from_context(const GradCamContext& ctx, int height, int width,
                                   ZMode z_mode = ZMode::positive_grad_sum, double z_scale = 1.0);

GradCamResult gradcam(const SegModel& model, const Image& image, int target_class,
                      const GradCamOptions& opt = {}, const LabelMask* ignore = nullptr);

/// Bilinear resampling of a single-channel plane with half-pixel centres.
std::vector<double> resize_plane_bilinear(const std::vector<double>& src, int sh, int sw, int dh, int dw);

struct ProxGradCamOptions {
    double tau_quantile = 0.5;
    bool hard_mask = false;
    double min_area_fraction = 0.01;
    /// Pixels farther than this (Chebyshev) from the mask support are zeroed in the output.
    int halo_px = 2;
    /// Fixed target classes; empty derives them from the prediction inside the mask support.
    std::vector<int> classes;
    GradCamOptions gradcam;
};

struct ProxGradCamResult {
    HeatMap map;  ///< kind=prox_gradcam
    ProximityMask mask;
    std::vector<int> target_classes;
    bool fallback = false;  ///< no target class; map is the proximity mask
    bool all_zero = false;
};

ProxGradCamResult prox_gradcam(const SegModel& model, const Image& image, const ProximityMask& mask,
                               const ProxGradCamOptions& opt = {});
ProxGradCamResult prox_gradcam(const SegModel& model, const Sample& sample, const DepthProvider& provider,
                               const ProxGradCamOptions& opt = {});

}  // namespace segxal
