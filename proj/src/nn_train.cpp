#include "laspet/nn/train.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "laspet/nn/graph.hpp"
#include "laspet/nn/infer.hpp"

namespace laspet::nn {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 axis_rotation(int axis, double deg) {
  double rad = deg * std::acos(-1.0) / 180.0;
  double c = std::cos(rad), s = std::sin(rad);
  int u = (axis + 1) % 3, v = (axis + 2) % 3;
  Mat3 r{};
  r[axis][axis] = 1.0;
  r[u][u] = c;
  r[u][v] = -s;
  r[v][u] = s;
  r[v][v] = c;
  return r;
}

// Maps patch-centered offsets (mm) to source offsets: rotate the flipped,
// zoom-scaled offset. Draw order is fixed so the sample stream is stable.
Mat3 sample_augmentation(Rng& rng) {
  std::array<double, 3> deg;
  for (int a = 0; a < 3; ++a) deg[a] = rng.uniform(-25.0, 25.0);
  double zoom = rng.uniform(0.8, 1.2);
  std::array<double, 3> flip;
  for (int a = 0; a < 3; ++a) flip[a] = rng.bernoulli(0.5) ? -1.0 : 1.0;

  Mat3 rot = matmul(axis_rotation(2, deg[2]),
                    matmul(axis_rotation(1, deg[1]), axis_rotation(0, deg[0])));
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = rot[i][j] * flip[j] / zoom;
  return m;
}

void check_study(const PatientStudy& st, int patch) {
  if (patch <= 0) throw std::invalid_argument("sample_patch_pair: patch must be positive");
  const Volume3D& ref = st.pet2;
  if (!st.pet1.same_grid(ref) || !st.ct1.same_grid(ref) || !st.ct2.same_grid(ref))
    throw std::invalid_argument("sample_patch_pair: study volumes on different grids");
  for (int a = 0; a < 3; ++a)
    if (ref.dims[a] < patch)
      throw std::invalid_argument("sample_patch_pair: volume smaller than patch for " + st.id);
}

}  // namespace

void OptimizerConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("OptimizerConfig: negative steps");
  if (lr < 0.0 || weight_decay < 0.0) throw std::invalid_argument("OptimizerConfig: negative rate");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("OptimizerConfig: betas must lie in [0,1)");
  if (eps <= 0.0) throw std::invalid_argument("OptimizerConfig: eps must be positive");
  if (lesion_center_prob < 0.0 || lesion_center_prob > 1.0)
    throw std::invalid_argument("OptimizerConfig: lesion_center_prob outside [0,1]");
}

PatchPair sample_patch_pair(const PatientStudy& st, int patch, bool augment,
                            double lesion_center_prob, Rng& rng) {
  check_study(st, patch);
  const Volume3D& ref = st.pet2;

  std::vector<int64_t> lesion_voxels;
  for (const Lesion& l : st.gt1.lesions)
    lesion_voxels.insert(lesion_voxels.end(), l.voxels.begin(), l.voxels.end());
  for (const Lesion& l : st.gt2.lesions)
    lesion_voxels.insert(lesion_voxels.end(), l.voxels.begin(), l.voxels.end());

  std::array<int, 3> corner{};
  bool lesion_centered = rng.bernoulli(lesion_center_prob) && !lesion_voxels.empty();
  if (lesion_centered) {
    int64_t lin = lesion_voxels[rng.uniform_int(static_cast<uint64_t>(lesion_voxels.size()))];
    std::array<int, 3> c{static_cast<int>(lin % ref.dims[0]),
                         static_cast<int>((lin / ref.dims[0]) % ref.dims[1]),
                         static_cast<int>(lin / (static_cast<int64_t>(ref.dims[0]) * ref.dims[1]))};
    for (int a = 0; a < 3; ++a)
      corner[a] = std::clamp(c[a] - patch / 2, 0, ref.dims[a] - patch);
  } else {
    for (int a = 0; a < 3; ++a)
      corner[a] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(ref.dims[a] - patch + 1)));
  }

  Volume3D m1 = st.gt1.to_mask();
  Volume3D m2 = st.gt2.to_mask();

  std::vector<int> in_shape{2, patch, patch, patch};
  std::vector<int> y_shape{1, patch, patch, patch};
  PatchPair pp{Tensor(in_shape), Tensor(in_shape), Tensor(y_shape), Tensor(y_shape)};
  int64_t plane = static_cast<int64_t>(patch) * patch * patch;

  if (!augment) {
    int64_t i = 0;
    for (int z = 0; z < patch; ++z)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x, ++i) {
          int vx = corner[0] + x, vy = corner[1] + y, vz = corner[2] + z;
          pp.in1.v[i] = scale_pet(st.pet1.at(vx, vy, vz));
          pp.in1.v[plane + i] = scale_ct(st.ct1.at(vx, vy, vz));
          pp.in2.v[i] = scale_pet(st.pet2.at(vx, vy, vz));
          pp.in2.v[plane + i] = scale_ct(st.ct2.at(vx, vy, vz));
          pp.y1.v[i] = m1.at(vx, vy, vz);
          pp.y2.v[i] = m2.at(vx, vy, vz);
        }
    return pp;
  }

  Mat3 m = sample_augmentation(rng);
  std::array<double, 3> center_mm;
  for (int a = 0; a < 3; ++a)
    center_mm[a] = ref.origin[a] + (corner[a] + (patch - 1) / 2.0 + 0.5) * ref.spacing[a];

  double half = (patch - 1) / 2.0;
  int64_t i = 0;
  for (int z = 0; z < patch; ++z)
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x, ++i) {
        std::array<double, 3> off{(x - half) * ref.spacing[0], (y - half) * ref.spacing[1],
                                  (z - half) * ref.spacing[2]};
        std::array<double, 3> p;
        for (int r = 0; r < 3; ++r)
          p[r] = center_mm[r] + m[r][0] * off[0] + m[r][1] * off[1] + m[r][2] * off[2];
        pp.in1.v[i] = scale_pet(st.pet1.sample_trilinear(p));
        pp.in1.v[plane + i] = scale_ct(st.ct1.sample_trilinear(p));
        pp.in2.v[i] = scale_pet(st.pet2.sample_trilinear(p));
        pp.in2.v[plane + i] = scale_ct(st.ct2.sample_trilinear(p));
        pp.y1.v[i] = m1.sample_nearest_zero(p) > 0.5 ? 1.0 : 0.0;
        pp.y2.v[i] = m2.sample_nearest_zero(p) > 0.5 ? 1.0 : 0.0;
      }
  return pp;
}

TrainResult train_toy(const std::vector<PatientStudy>& studies,
                      const LasNetConfig& cfg, const OptimizerConfig& opt) {
  if (studies.empty()) throw std::invalid_argument("train_toy: no studies");
  cfg.validate();
  opt.validate();
  for (const PatientStudy& st : studies) check_study(st, cfg.patch_size);

  LasNetParams params = init_params(cfg, Rng::derive(opt.seed, "train.init"));
  size_t np = params.values.size();
  std::vector<std::vector<double>> m1(np), m2(np);
  for (size_t p = 0; p < np; ++p) {
    m1[p].assign(params.values[p].v.size(), 0.0);
    m2[p].assign(params.values[p].v.size(), 0.0);
  }

  Rng sample_rng(Rng::derive(opt.seed, "train.sample"));
  TrainResult out;
  out.loss_trace.reserve(static_cast<size_t>(opt.steps));

  for (int step = 0; step < opt.steps; ++step) {
    const PatientStudy& st = studies[sample_rng.uniform_int(studies.size())];
    PatchPair pp = sample_patch_pair(st, cfg.patch_size, opt.augment,
                                     opt.lesion_center_prob, sample_rng);

    Graph g;
    int in1 = g.input(std::move(pp.in1), false);
    int in2 = g.input(std::move(pp.in2), false);
    ForwardNodes f = lasnet_forward(g, in1, in2, params, true);
    LossNodes loss = joint_loss(g, f.logits1, f.logits2,
                                std::make_shared<Tensor>(std::move(pp.y1)),
                                std::make_shared<Tensor>(std::move(pp.y2)));
    g.backward(loss.total);
    out.loss_trace.push_back(g.val(loss.total).v[0]);

    double lr_t = opt.lr;
    if (opt.cosine && opt.steps > 0)
      lr_t *= 0.5 * (1.0 + std::cos(std::acos(-1.0) * step / opt.steps));
    double bc1 = 1.0 - std::pow(opt.beta1, step + 1);
    double bc2 = 1.0 - std::pow(opt.beta2, step + 1);

    for (size_t p = 0; p < np; ++p) {
      const std::vector<double>& grad = g.grad(f.params[p]);
      std::vector<double>& val = params.values[p].v;
      for (size_t k = 0; k < val.size(); ++k) {
        double gk = grad[k];
        m1[p][k] = opt.beta1 * m1[p][k] + (1.0 - opt.beta1) * gk;
        m2[p][k] = opt.beta2 * m2[p][k] + (1.0 - opt.beta2) * gk * gk;
        double mhat = m1[p][k] / bc1;
        double vhat = m2[p][k] / bc2;
        val[k] -= lr_t * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * val[k]);
      }
    }
  }

  out.params = std::move(params);
  return out;
}

}  // namespace laspet::nn
