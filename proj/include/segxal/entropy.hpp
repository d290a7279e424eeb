#pragma once

#include "segxal/types.hpp"

namespace segxal {

/// Summary of raw per-pixel entropy, in bits.
struct EntropyStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    int num_classes = 0;
    std::vector<double> raw_bits;  ///< raw H per counted pixel, for quantile queries

    /// Fraction of counted pixels whose raw entropy exceeds q * log2(C).
    double fraction_above(double q) const;
};

struct EntropyResult {
    HeatMap map;  ///< kind=entropy, raw H / log2(C) clamped to [0,1]; ignore pixels are 0
    EntropyStats stats;
};

/// Shannon entropy in bits of one distribution, with 0 * log 0 := 0.
double entropy_bits(const double* probs, int num_classes, std::size_t stride = 1);

/// Per-pixel entropy map. When `ignore` is given, its 255 pixels are zeroed and left out of the stats.
EntropyResult entropy_map(const ProbMap& probs, const LabelMask* ignore = nullptr);

}  // namespace segxal
