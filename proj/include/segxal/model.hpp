#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/types.hpp"

namespace segxal {

struct ModelConfig {
    int levels = 3;
    int base_channels = 16;
    int num_classes = 5;
    int height = 64;
    int width = 128;
    bool use_bias = true;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    int batch_size = 16;
    int epochs_per_cycle = 10;
    std::uint64_t seed = 1;

    /// Hyperparameters of the full-scale setup (256x512, 100 epochs).
    static ModelConfig full_scale_preset(int num_classes = 19);
    /// Laptop-CPU preset used by the synthetic benchmark.
    static ModelConfig desk_preset(int num_classes = 5);

    std::vector<std::string> violations() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct TrainingReport {
    std::vector<double> epoch_losses;  ///< mean per-pixel cross-entropy of each epoch
    int epochs_run = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// A C x h x w feature block, row-major within each channel.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    double at(int k, int r, int c) const {
        return data[(static_cast<std::size_t>(k) * height + r) * width + c];
    }
};

/// Activations of one layer, the gradient of the class score with respect to them,
/// and the score itself.
struct GradCamContext {
    std::string layer;
    int target_class = 0;
    double class_score = 0.0;
    FeatureMap activations;
    FeatureMap gradients;
    /// Sum of positive entries of `gradients`; 0 when none are positive.
    double positive_grad_sum = 0.0;
};

/// Small U-Net: per level two 3x3 conv + ReLU, 2x2 max-pool down, 2x2 transposed conv up,
/// skip concatenation, 1x1 classifier head. Input images are ImageNet-normalized internally.
class SegModel {
public:
    explicit SegModel(const ModelConfig& config);
    SegModel(const SegModel&);
    SegModel& operator=(const SegModel&);
    SegModel(SegModel&&) noexcept;
    SegModel& operator=(SegModel&&) noexcept;
    ~SegModel();

    const ModelConfig& config() const;
    ModelConfig& mutable_config();

    /// Feature layer names in forward order, e.g. enc0, enc1, bottleneck, dec1, dec0.
    std::vector<std::string> layer_names() const;
    std::string default_target_layer() const;

    /// Named parameter arrays (weights "<layer>.w", biases "<layer>.b").
    std::vector<std::string> parameter_names() const;
    std::span<double> parameter(const std::string& name);
    std::span<const double> parameter(const std::string& name) const;

    /// One pass of minibatch SGD with momentum for `epochs` epochs; throws divergence on NaN loss.
    TrainingReport train(const std::vector<const Image*>& images, const std::vector<const LabelMask*>& labels,
                         int epochs);

    /// Mean cross-entropy over non-ignore pixels without updating parameters.
    double loss(const std::vector<const Image*>& images, const std::vector<const LabelMask*>& labels) const;

    ProbMap predict_probs(const Image& image) const;
    /// Pre-softmax scores, class-major.
    std::vector<double> logits(const Image& image) const;

    /// y^c = sum of class-c logits over pixels (excluding `ignore` pixels where that mask is 255),
    /// with its exact gradient with respect to `layer`'s post-ReLU activations.
    GradCamContext class_score_with_grads(const Image& image, int target_class, const std::string& layer,
                                          const LabelMask* ignore = nullptr) const;

    /// Same as class_score_with_grads for several classes, sharing one forward pass.
    std::vector<GradCamContext> class_scores_with_grads(const Image& image, const std::vector<int>& classes,
                                                        const std::string& layer,
                                                        const LabelMask* ignore = nullptr) const;

    /// y^c recomputed with `layer`'s activations replaced by `replacement` (same shape as the context).
    /// When `relu_pattern` is set it receives the on/off state of every ReLU and the winner of every
    /// max-pool window, so equal patterns mean the network stayed on one linear piece.
    double class_score_with_override(const Image& image, int target_class, const std::string& layer,
                                     std::span<const double> replacement,
                                     std::vector<std::uint8_t>* relu_pattern = nullptr) const;

    void save(const std::string& path) const;
    static SegModel load(const std::string& path);

    std::uint64_t epochs_trained() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace segxal
