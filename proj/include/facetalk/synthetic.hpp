#pragma once

#include <string>
#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/condstream.hpp"
#include "facetalk/headfield.hpp"

namespace facetalk {
namespace synth {

// Points on the zero set of the composite field (base SDF of the deformed
// point), found by bisection along rays from the head center.
Points<double> sample_surface_points(const field::HeadField& f,
                                     const VecX<double>& theta_id,
                                     const VecX<double>& theta_exp,
                                     Index count, uint64_t seed);

// A code inside the row space of the deformation map, i.e. one with a
// nonzero deformation response, scaled to the requested norm.
VecX<double> observable_code(const field::HeadField& f, uint64_t seed,
                             double norm);

// A code the zero-set observations can actually pin down: drawn from the
// span of the leading right singular vectors of the linearized
// normal-response operator (surface normal dotted with the deformation
// Jacobian at base-surface samples). Tangential deformation modes slide
// along the surface and are invisible to an SDF fit; this excludes them.
VecX<double> identifiable_code(const field::HeadField& f,
                               const VecX<double>& theta_id, uint64_t seed,
                               double norm);

// Smooth observable trajectory (n_frames x 200) for fitting demos.
MatX<double> scripted_trajectory(const field::HeadField& f, Index n_frames,
                                 uint64_t seed, double norm);

// Audio-paired records: procedurally generated amplitude-modulated tones
// whose envelope drives the expression codes, so the conditional mapping is
// deterministic and learnable from the filterbank features.
struct SyntheticRecord {
  std::string id;
  audio::Waveform wav;
  MatX<double> codes;  // frames x 200, 24 fps
};

std::vector<SyntheticRecord> make_paired_records(Index records, Index frames,
                                                 uint64_t seed);

}  // namespace synth
}  // namespace facetalk
