#include "segxal/entropy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace segxal {

double entropy_bits(const double* probs, int num_classes, std::size_t stride) {
    // Terms are summed in ascending probability order so the result does not depend on class order.
    std::array<double, 256> p;
    const int n = std::min(num_classes, 256);
    for (int c = 0; c < n; ++c) p[c] = probs[c * stride];
    std::sort(p.begin(), p.begin() + n);
    double h = 0.0;
    for (int c = 0; c < n; ++c)
        if (p[c] > 0.0) h -= p[c] * std::log2(p[c]);
    return h > 0.0 ? h : 0.0;
}

double EntropyStats::fraction_above(double q) const {
    if (raw_bits.empty()) return 0.0;
    const double cut = q * std::log2(static_cast<double>(num_classes));
    const auto n = std::count_if(raw_bits.begin(), raw_bits.end(), [cut](double h) { return h > cut; });
    return static_cast<double>(n) / static_cast<double>(raw_bits.size());
}

EntropyResult entropy_map(const ProbMap& probs, const LabelMask* ignore) {
    if (ignore && (ignore->height != probs.height || ignore->width != probs.width))
        throw Error(Errc::shape_mismatch, "ignore mask does not match probmap");
    const std::size_t n = probs.plane();
    const int C = probs.num_classes;
    const double hmax = C > 1 ? std::log2(static_cast<double>(C)) : 1.0;

    EntropyResult out;
    out.map = HeatMap(HeatKind::entropy, probs.height, probs.width);
    EntropyStats& st = out.stats;
    st.num_classes = C;
    st.raw_bits.reserve(n);
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (std::size_t px = 0; px < n; ++px) {
        if (ignore && ignore->labels[px] == kIgnoreLabel) continue;
        const double h = entropy_bits(probs.probs.data() + px, C, n);
        st.raw_bits.push_back(h);
        sum += h;
        lo = std::min(lo, h);
        hi = std::max(hi, h);
        out.map.values[px] = std::clamp(h / hmax, 0.0, 1.0);
    }
    if (!st.raw_bits.empty()) {
        st.mean = sum / static_cast<double>(st.raw_bits.size());
        st.min = lo;
        st.max = hi;
    }
    return out;
}

}  // namespace segxal
