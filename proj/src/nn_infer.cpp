#include "laspet/nn/infer.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace laspet::nn {

namespace {

int env_threads() {
  const char* s = std::getenv("LASPET_THREADS");
  if (!s) return 1;
  int n = std::atoi(s);
  return n > 0 ? n : 1;
}

// Window starts advance by `stride`; the trailing window is clamped so the
// far edge is covered exactly once.
std::vector<int> window_starts(int extent, int patch, int stride) {
  std::vector<int> starts;
  for (int s = 0;; s += stride) {
    if (s + patch >= extent) {
      starts.push_back(extent - patch);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

std::vector<double> gaussian_profile(int patch) {
  double sigma = patch / 8.0;
  double center = (patch - 1) / 2.0;
  std::vector<double> w(static_cast<size_t>(patch));
  for (int i = 0; i < patch; ++i) {
    double d = (i - center) / sigma;
    w[static_cast<size_t>(i)] = std::exp(-0.5 * d * d);
  }
  return w;
}

void copy_patch(const Tensor& src, std::array<int, 3> corner, int patch, Tensor& dst) {
  int ch = src.shape[0], nz = src.shape[1], ny = src.shape[2], nx = src.shape[3];
  int64_t di = 0;
  for (int c = 0; c < ch; ++c)
    for (int z = 0; z < patch; ++z)
      for (int y = 0; y < patch; ++y) {
        int64_t si = ((static_cast<int64_t>(c) * nz + corner[0] + z) * ny + corner[1] + y) * nx +
                     corner[2];
        std::copy(src.v.begin() + si, src.v.begin() + si + patch, dst.v.begin() + di);
        di += patch;
      }
}

double sigmoid_value(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor stack_inputs(const Volume3D& pet, const Volume3D& ct) {
  if (!pet.same_grid(ct)) throw std::invalid_argument("stack_inputs: PET and CT grids differ");
  if (pet.kind != VoxelKind::SUV || ct.kind != VoxelKind::HU)
    throw std::invalid_argument("stack_inputs: expected SUV and HU volumes");
  Tensor out({2, pet.dims[2], pet.dims[1], pet.dims[0]});
  int64_t n = pet.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.v[static_cast<size_t>(i)] = scale_pet(pet.values[static_cast<size_t>(i)]);
    out.v[static_cast<size_t>(n + i)] = scale_ct(ct.values[static_cast<size_t>(i)]);
  }
  return out;
}

std::pair<Tensor, Tensor> sliding_window_blend(const Tensor& in1, const Tensor& in2,
                                               int patch, double overlap,
                                               const PatchForward& forward) {
  if (in1.shape.size() != 4 || in1.shape != in2.shape)
    throw std::invalid_argument("sliding_window_blend: inputs must be matching rank-4 tensors");
  if (patch <= 0) throw std::invalid_argument("sliding_window_blend: patch must be positive");
  if (overlap < 0.0 || overlap >= 1.0)
    throw std::invalid_argument("sliding_window_blend: overlap outside [0,1)");
  int nz = in1.shape[1], ny = in1.shape[2], nx = in1.shape[3];
  if (nz < patch || ny < patch || nx < patch)
    throw std::invalid_argument("sliding_window_blend: volume smaller than patch");

  int stride = std::max(1, static_cast<int>(std::llround(patch * (1.0 - overlap))));
  std::vector<int> zs = window_starts(nz, patch, stride);
  std::vector<int> ys = window_starts(ny, patch, stride);
  std::vector<int> xs = window_starts(nx, patch, stride);

  std::vector<std::array<int, 3>> corners;
  corners.reserve(zs.size() * ys.size() * xs.size());
  for (int z : zs)
    for (int y : ys)
      for (int x : xs) corners.push_back({z, y, x});

  // patch forwards may run in parallel; blending below walks `corners` in
  // order, so the result does not depend on the thread count
  std::vector<std::pair<Tensor, Tensor>> outputs(corners.size());
  int threads = std::min<int>(env_threads(), static_cast<int>(corners.size()));
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    std::vector<int> pshape{in1.shape[0], patch, patch, patch};
    Tensor p1(pshape), p2(pshape);
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= corners.size()) return;
      try {
        copy_patch(in1, corners[i], patch, p1);
        copy_patch(in2, corners[i], patch, p2);
        outputs[i] = forward(p1, p2);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  for (size_t i = 0; i < corners.size(); ++i) {
    for (const Tensor* o : {&outputs[i].first, &outputs[i].second}) {
      if (o->shape.size() != 4 || o->shape[1] != patch || o->shape[2] != patch ||
          o->shape[3] != patch || o->shape[0] != outputs[0].first.shape[0])
        throw std::runtime_error("sliding_window_blend: patch forward returned a bad shape");
    }
  }

  int ch = outputs[0].first.shape[0];
  std::vector<double> prof = gaussian_profile(patch);
  std::vector<int> out_shape{ch, nz, ny, nx};
  Tensor acc1(out_shape), acc2(out_shape);
  std::vector<double> wsum(static_cast<size_t>(Tensor::numel_of({nz, ny, nx})), 0.0);

  for (size_t i = 0; i < corners.size(); ++i) {
    const std::array<int, 3>& c = corners[i];
    int64_t pi = 0;
    for (int z = 0; z < patch; ++z)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x, ++pi) {
          double w = prof[static_cast<size_t>(z)] * prof[static_cast<size_t>(y)] *
                     prof[static_cast<size_t>(x)];
          int64_t vi = (static_cast<int64_t>(c[0] + z) * ny + c[1] + y) * nx + c[2] + x;
          wsum[static_cast<size_t>(vi)] += w;
          int64_t psize = static_cast<int64_t>(patch) * patch * patch;
          int64_t vsize = static_cast<int64_t>(nz) * ny * nx;
          for (int k = 0; k < ch; ++k) {
            acc1.v[static_cast<size_t>(k * vsize + vi)] +=
                w * outputs[i].first.v[static_cast<size_t>(k * psize + pi)];
            acc2.v[static_cast<size_t>(k * vsize + vi)] +=
                w * outputs[i].second.v[static_cast<size_t>(k * psize + pi)];
          }
        }
  }

  int64_t vsize = static_cast<int64_t>(nz) * ny * nx;
  for (int k = 0; k < ch; ++k)
    for (int64_t i = 0; i < vsize; ++i) {
      acc1.v[static_cast<size_t>(k * vsize + i)] /= wsum[static_cast<size_t>(i)];
      acc2.v[static_cast<size_t>(k * vsize + i)] /= wsum[static_cast<size_t>(i)];
    }
  return {std::move(acc1), std::move(acc2)};
}

std::pair<Tensor, Tensor> sliding_window_infer(const Tensor& in1, const Tensor& in2,
                                               const LasNetParams& params, double overlap) {
  PatchForward forward = [&params](const Tensor& p1, const Tensor& p2) {
    std::pair<Tensor, Tensor> logits = lasnet_eval(p1, p2, params);
    for (double& x : logits.first.v) x = sigmoid_value(x);
    for (double& x : logits.second.v) x = sigmoid_value(x);
    return logits;
  };
  return sliding_window_blend(in1, in2, params.cfg.patch_size, overlap, forward);
}

std::pair<Volume3D, Volume3D> infer_volumes(const Volume3D& pet1, const Volume3D& ct1,
                                            const Volume3D& pet2, const Volume3D& ct2,
                                            const LasNetParams& params, double overlap) {
  if (!pet1.same_grid(pet2)) throw std::invalid_argument("infer_volumes: time-point grids differ");
  Tensor in1 = stack_inputs(pet1, ct1);
  Tensor in2 = stack_inputs(pet2, ct2);
  std::pair<Tensor, Tensor> probs = sliding_window_infer(in1, in2, params, overlap);

  Volume3D out1(pet2.dims, pet2.spacing, VoxelKind::Prob, 0.0, pet2.origin);
  Volume3D out2 = out1;
  out1.values.assign(probs.first.v.begin(), probs.first.v.end());
  out2.values.assign(probs.second.v.begin(), probs.second.v.end());
  return {std::move(out1), std::move(out2)};
}

}  // namespace laspet::nn
