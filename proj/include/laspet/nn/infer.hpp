#pragma once

#include <algorithm>
#include <functional>
#include <utility>

#include "laspet/nn/lasnet.hpp"
#include "laspet/volume.hpp"

namespace laspet::nn {

// Network input scaling: PET maps [0,30] SUV onto [0,1] and CT maps
// [-150,250] HU onto [0,1], both clamped.
inline double scale_pet(double suv) { return std::clamp(suv / 30.0, 0.0, 1.0); }
inline double scale_ct(double hu) { return std::clamp((hu + 150.0) / 400.0, 0.0, 1.0); }

// Stacks a co-registered PET/CT pair into one [2, nz, ny, nx] input tensor
// with the scaling above. Throws when the grids differ.
Tensor stack_inputs(const Volume3D& pet, const Volume3D& ct);

// Patch-level forward: maps two [2,P,P,P] inputs to two [1,P,P,P] outputs.
using PatchForward =
    std::function<std::pair<Tensor, Tensor>(const Tensor&, const Tensor&)>;

// Gaussian-blended sliding window over stacked [2,nz,ny,nx] inputs. Windows
// advance by patch*(1-overlap), the trailing window is clamped to the volume
// edge, and each voxel is the Gaussian-weighted average (sigma = patch/8,
// centered on the window) of every covering patch output. Patch forwards may
// run on several threads (LASPET_THREADS); accumulation order is fixed, so
// results are bit-stable for any thread count.
std::pair<Tensor, Tensor> sliding_window_blend(const Tensor& in1,
                                               const Tensor& in2, int patch,
                                               double overlap,
                                               const PatchForward& forward);

// Network inference: sigmoid probabilities for both branches, blended as
// above with patch size params.cfg.patch_size.
std::pair<Tensor, Tensor> sliding_window_infer(const Tensor& in1,
                                               const Tensor& in2,
                                               const LasNetParams& params,
                                               double overlap = 0.625);

// Convenience wrapper: stacks the four volumes, runs inference, and returns
// per-branch probability volumes on the input grid.
std::pair<Volume3D, Volume3D> infer_volumes(const Volume3D& pet1,
                                            const Volume3D& ct1,
                                            const Volume3D& pet2,
                                            const Volume3D& ct2,
                                            const LasNetParams& params,
                                            double overlap = 0.625);

}  // namespace laspet::nn
