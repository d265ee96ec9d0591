#include "uac/datasets.hpp"
#include "uac/diffcore/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace uac::datasets {

Corpus synth_generate(const SynthConfig& config)
{
    if (config.classes < 2)
        throw std::invalid_argument("synthetic corpus needs at least 2 classes");
    if (config.subjects < 1 || config.sequences_per_subject < 1 || config.length < 1 || config.channels < 1)
        throw std::invalid_argument("synthetic corpus sizes must be positive");
    using diffcore::RngStream;
    const RngStream root(config.seed, diffcore::hash_name("synth"));
    const std::size_t d = config.channels;
    const auto classes = static_cast<std::size_t>(config.classes);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    // Per (class, channel): amplitude, frequency (cycles per sample), phase.
    struct Component {
        double amplitude, frequency, phase;
    };
    std::vector<Component> templates(classes * d);
    RngStream trng = root.fork("templates");
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t j = 0; j < d; ++j) {
            auto& t = templates[c * d + j];
            t.amplitude = 0.5 + trng.uniform();
            t.frequency = (2.0 + 3.0 * static_cast<double>(c) + trng.uniform()) / 50.0;
            t.phase = two_pi * trng.uniform();
        }

    Corpus corpus;
    for (std::size_t c = 0; c < classes; ++c)
        corpus.class_names.push_back(std::to_string(c));

    char id[64];
    for (std::size_t s = 0; s < config.subjects; ++s) {
        RngStream srng = root.fork("subject").fork(s);
        std::vector<double> bias(d), scale(d);
        for (std::size_t j = 0; j < d; ++j) {
            bias[j] = config.subject_shift * srng.normal();
            scale[j] = std::exp(0.5 * config.subject_shift * srng.normal());
        }
        std::snprintf(id, sizeof(id), "s%03zu", s);
        const std::string subject = id;
        for (std::size_t q = 0; q < config.sequences_per_subject; ++q) {
            RawRecording rec;
            rec.subject_id = subject;
            std::snprintf(id, sizeof(id), "%s-q%03zu", subject.c_str(), q);
            rec.sequence_id = id;
            rec.label = static_cast<int>((s * config.sequences_per_subject + q) % classes);
            rec.channels = d;
            RngStream nrng = root.fork("noise").fork(s * config.sequences_per_subject + q);
            rec.timestamps.resize(config.length);
            rec.values.resize(config.length * d);
            for (std::size_t t = 0; t < config.length; ++t) {
                rec.timestamps[t] = static_cast<std::int64_t>(t) * 50;  // 20 Hz
                for (std::size_t j = 0; j < d; ++j) {
                    const auto& tp = templates[static_cast<std::size_t>(rec.label) * d + j];
                    const double clean =
                        tp.amplitude * std::sin(two_pi * tp.frequency * static_cast<double>(t) + tp.phase);
                    const double noise = config.noise > 0.0 ? config.noise * nrng.normal() : 0.0;
                    rec.values[t * d + j] = scale[j] * clean + bias[j] + noise;
                }
            }
            corpus.recordings.push_back(std::move(rec));
        }
    }
    return corpus;
}

}  // namespace uac::datasets
