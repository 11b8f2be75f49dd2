#pragma once

#include <string>

#include "thermogen/data.hpp"

namespace thermogen {

class GeneratorImpl;

enum class MixtureKind { real, synthesized, combined, mixed };

/// A detector training regime: all-real, all-synthetic, both combined, or a
/// fixed-size mix with the given fraction of real frames.
struct MixtureSpec {
    MixtureKind kind = MixtureKind::real;
    double real_fraction = 1.0;  // meaningful for kind == mixed
    long seed = 0;

    void validate() const;
    std::string label() const;  // e.g. "mixed_80_20"
    static MixtureSpec parse(const std::string& text, long seed = 0);
};

/// Fraction of real frames a regime trains on (combined counts as 0.5);
/// drives the learning-rate rule.
double real_fraction_of(const MixtureSpec& spec);

/// The 12 ablation regimes: real, synthesized, combined, mixed 10/90..90/10.
std::vector<MixtureSpec> ablation_regimes(long seed);

/// Runs the generator over every visible frame and writes one synthetic
/// thermal image (16-bit grayscale PNG) per source frame into output_dir.
/// Returned records carry origin=synthetic with boxes and day/night tags
/// copied from the source.
DatasetManifest synthesize_dataset(GeneratorImpl& generator, const DatasetManifest& rgb_source,
                                   const std::string& output_dir);

/// Builds the training set for a regime from paired real/synthetic manifests
/// (equal size, matching frame_id sets). For kind=mixed the output has
/// exactly |real| frames: round(real_fraction*N) real frames chosen uniformly
/// by seed, and the synthetic counterparts of the rest.
DatasetManifest build_mixture(const DatasetManifest& real, const DatasetManifest& synthetic,
                              const MixtureSpec& spec);

}  // namespace thermogen
