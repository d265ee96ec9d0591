#pragma once

#include "uac/datasets.hpp"
#include "uac/diffcore/ops.hpp"
#include "uac/diffcore/rng.hpp"
#include "uac/model.hpp"

namespace fixture {

// Narrow network on [3, 20] windows: 20 -> 18 -> 16 -> 8 -> 6 -> 3, 18 features.
inline uac::model::Architecture small_arch(std::size_t classes = 3)
{
    uac::model::Architecture a;
    a.channels = 3;
    a.window = 20;
    a.classes = classes;
    a.conv_channels = {4, 4, 6};
    a.kernel = 3;
    a.head_hidden = 8;
    a.variance_hidden = 5;
    return a;
}

inline uac::datasets::SynthConfig small_synth(std::uint64_t seed = 1)
{
    uac::datasets::SynthConfig c;
    c.classes = 3;
    c.subjects = 6;
    c.sequences_per_subject = 6;
    c.length = 40;
    c.channels = 3;
    c.noise = 0.2;
    c.subject_shift = 0.2;
    c.seed = seed;
    return c;
}

inline uac::datasets::DatasetSplit small_split(std::uint64_t seed = 1)
{
    const auto corpus = uac::datasets::synth_generate(small_synth(seed));
    auto split = uac::datasets::split_mixed(corpus.recordings, {20, 5}, seed);
    uac::datasets::normalize_split(split);
    return split;
}

struct LabeledLogits {
    uac::diffcore::Tensor logits;  // [N, C]
    std::vector<int> labels;
};

// Logits z ~ N(0, scale^2 I) with labels drawn from softmax(z / temperature).
inline LabeledLogits tempered_logits(double temperature, std::size_t n, std::size_t classes, std::uint64_t seed,
                                     double scale = 3.0)
{
    uac::diffcore::RngStream rng(seed);
    LabeledLogits out{uac::diffcore::Tensor({n, classes}), {}};
    std::vector<double> z(classes);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
            z[c] = scale * rng.normal();
            out.logits[i * classes + c] = z[c];
        }
        for (auto& v : z)
            v /= temperature;
        const auto p = uac::diffcore::softmax(z);
        const double u = rng.uniform();
        double acc = 0.0;
        int y = static_cast<int>(classes) - 1;
        for (std::size_t c = 0; c < classes; ++c) {
            acc += p[c];
            if (u < acc) {
                y = static_cast<int>(c);
                break;
            }
        }
        out.labels.push_back(y);
    }
    return out;
}

}  // namespace fixture
