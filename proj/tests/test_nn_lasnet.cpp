#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "laspet/nn/graph.hpp"
#include "laspet/nn/lasnet.hpp"
#include "laspet/rng.hpp"

using namespace laspet;
using namespace laspet::nn;
namespace fs = std::filesystem;

namespace {

LasNetConfig tiny_cfg() {
  LasNetConfig c;
  c.base_dim = 4;
  c.depths = {1};
  c.num_heads = {2};
  c.window_size = 3;
  c.patch_size = 6;
  return c;
}

LasNetConfig two_stage_cfg() {
  LasNetConfig c;
  c.base_dim = 4;
  c.depths = {1, 1};
  c.num_heads = {2, 4};
  c.window_size = 3;
  c.patch_size = 12;
  return c;
}

Tensor rnd_map(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& e : t.v) e = rng.uniform(lo, hi);
  return t;
}

// init plus noise on every block, so cross weights are active too
LasNetParams random_params(const LasNetConfig& cfg, uint64_t seed) {
  LasNetParams p = init_params(cfg, seed);
  Rng rng(seed ^ 0x5eedULL);
  for (Tensor& t : p.values)
    for (double& e : t.v) e += 0.05 * rng.normal();
  return p;
}

// graph with one constant node per parameter, for driving block builders
struct ParamCtx {
  Graph g;
  const LasNetParams& p;
  std::vector<int> nodes;
  explicit ParamCtx(const LasNetParams& params) : p(params) {
    nodes.reserve(p.values.size());
    for (const Tensor& t : p.values) nodes.push_back(g.input(t, false));
  }
  ParamNodeFn pnode() {
    return [this](const std::string& name) {
      return nodes[static_cast<size_t>(p.find(name))];
    };
  }
};

std::shared_ptr<Tensor> random_target(std::vector<int> shape, Rng& rng, double p = 0.3) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  for (double& e : t->v) e = rng.bernoulli(p) ? 1.0 : 0.0;
  return t;
}

double joint_loss_value(const LasNetParams& p, const Tensor& in1, const Tensor& in2,
                        std::shared_ptr<const Tensor> y1,
                        std::shared_ptr<const Tensor> y2) {
  Graph g;
  const int a = g.input(in1, false);
  const int b = g.input(in2, false);
  const ForwardNodes f = lasnet_forward(g, a, b, p, false);
  return g.val(joint_loss(g, f.logits1, f.logits2, y1, y2).total).v[0];
}

}  // namespace

TEST_CASE("config validation enforces window and head divisibility") {
  CHECK_NOTHROW(LasNetConfig{}.validate());
  CHECK_NOTHROW(tiny_cfg().validate());
  CHECK_NOTHROW(two_stage_cfg().validate());

  LasNetConfig full;  // full-scale shape from the reference setting
  full.base_dim = 8;
  full.depths = {2, 2, 2};
  full.num_heads = {2, 4, 8};
  full.window_size = 7;
  full.patch_size = 112;
  CHECK_NOTHROW(full.validate());

  LasNetConfig bad = tiny_cfg();
  bad.patch_size = 32;  // 16 at the first stage is not a multiple of 3
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = tiny_cfg();
  bad.num_heads = {3};  // dim 4 not divisible
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = tiny_cfg();
  bad.depths = {1, 1};  // heads list no longer aligned
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = tiny_cfg();
  bad.patch_size = 10;  // first stage resolution 5 not a multiple of 3
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("window partition makes nWindows x tokens matrices and reverse undoes it") {
  Rng rng(7);
  const Tensor x = rnd_map({5, 6, 6, 6}, rng);
  SUBCASE("8 windows of 27 tokens at extent 6, window 3") {
    const Tensor t = window_partition(x, 3, 0);
    CHECK(t.shape == std::vector<int>{8 * 27, 5});
    const Tensor back = window_reverse(t, 3, 0, x.shape);
    CHECK(back.v == x.v);
  }
  SUBCASE("shifted partition still reverses exactly") {
    const Tensor t = window_partition(x, 3, 1);
    const Tensor back = window_reverse(t, 3, 1, x.shape);
    CHECK(back.v == x.v);
    // the roll moves values: partition with and without shift differ
    const Tensor t0 = window_partition(x, 3, 0);
    CHECK(t.v != t0.v);
  }
  SUBCASE("window equal to full extent gives a single window") {
    const Tensor y = rnd_map({2, 3, 3, 3}, rng);
    const Tensor t = window_partition(y, 3, 0);
    CHECK(t.shape == std::vector<int>{27, 2});
    CHECK(window_reverse(t, 3, 0, y.shape).v == y.v);
  }
  SUBCASE("first window of an unshifted partition is the corner block") {
    const Tensor t = window_partition(x, 3, 0);
    // token (0,0,0) of window 0, channel 0 reads x[0,0,0,0]
    CHECK(t.v[0] == x.v[0]);
    // token (0,0,1): x[0,0,0,1]
    CHECK(t.v[static_cast<size_t>(1 * 5)] == x.v[1]);
  }
}

TEST_CASE("shifted window mask separates wrapped tokens only") {
  const auto mask = shifted_window_mask(6, 3, 1);
  const int T = 27;
  // window (0,0,0) covers rolled coords 0..2 per axis: interior, no masking
  for (int i = 0; i < T * T; ++i) CHECK((*mask)[static_cast<size_t>(i)] == 0.0);
  // window (1,1,1) covers rolled coords 3..5: regions 1 and 2 per axis
  const size_t w7 = 7;  // (1*2+1)*2+1
  bool any_masked = false, any_open = false;
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j) {
      const double m = (*mask)[w7 * T * T + static_cast<size_t>(i * T + j)];
      if (m < 0.0) any_masked = true;
      if (m == 0.0) any_open = true;
      // rolled coords 3,4 neighbour truly; 5 wraps to source coord 0
      const int zi = 3 + i / 9, zj = 3 + j / 9;
      const bool wrap_differs = (zi == 5) != (zj == 5);
      if (wrap_differs) CHECK(m < 0.0);
    }
  CHECK(any_masked);
  CHECK(any_open);
  CHECK(shifted_window_mask(6, 3, 0)->size() == static_cast<size_t>(8) * T * T);
  CHECK_THROWS_AS(shifted_window_mask(6, 3, 3), std::invalid_argument);
}

TEST_CASE("parameter registry: shared portion equals a single-branch network") {
  for (const LasNetConfig& cfg : {tiny_cfg(), two_stage_cfg(), LasNetConfig{}}) {
    const LasNetParams p = init_params(cfg, 5);
    CHECK(p.count_shared() == single_branch_param_count(cfg));
    CHECK(p.count_cross() > 0);
    CHECK(p.count_total() == p.count_shared() + p.count_cross());
    // asymmetric blocks are exactly the cross-attention stages and the
    // gate-refinement kernels
    for (const ParamSpec& s : p.specs) {
      const bool is_cross_name = s.name.find(".cross.") != std::string::npos ||
                                 s.name.find(".refine.") != std::string::npos;
      CHECK(s.cross == is_cross_name);
    }
  }
}

TEST_CASE("init is deterministic per name and respects the init rules") {
  const LasNetConfig cfg = two_stage_cfg();
  const LasNetParams a = init_params(cfg, 17);
  const LasNetParams b = init_params(cfg, 17);
  const LasNetParams c = init_params(cfg, 18);
  bool any_diff = false;
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values[i].v == b.values[i].v);
    if (a.values[i].v != c.values[i].v) any_diff = true;
  }
  CHECK(any_diff);
  for (size_t i = 0; i < a.specs.size(); ++i) {
    const ParamSpec& s = a.specs[i];
    for (double e : a.values[i].v) {
      switch (s.init) {
        case InitKind::Weight:
        case InitKind::RelPos:
          CHECK(std::fabs(e) <= 0.04);  // two sigmas
          break;
        case InitKind::Gamma:
          CHECK(e == 1.0);
          break;
        case InitKind::Bias:
        case InitKind::ZeroKernel:
          CHECK(e == 0.0);
          break;
      }
    }
  }
}

TEST_CASE("baseline logits ignore the interim input entirely") {
  for (const uint64_t seed : {101ULL, 102ULL, 103ULL}) {
    const LasNetConfig cfg = tiny_cfg();
    const LasNetParams p = random_params(cfg, seed);
    Rng rng(seed);
    const Tensor in1 = rnd_map({2, 6, 6, 6}, rng);
    const Tensor zeros({2, 6, 6, 6});
    const Tensor noise = rnd_map({2, 6, 6, 6}, rng, -3.0, 3.0);
    const auto [l1a, l2a] = lasnet_eval(in1, zeros, p);
    const auto [l1b, l2b] = lasnet_eval(in1, noise, p);
    CHECK(l1a.v == l1b.v);   // bit-identical
    CHECK(l2a.v != l2b.v);   // interim branch does react
  }
  // two stages, to cover multi-stage routing as well
  const LasNetConfig cfg = two_stage_cfg();
  const LasNetParams p = random_params(cfg, 7);
  Rng rng(7);
  const Tensor in1 = rnd_map({2, 12, 12, 12}, rng);
  const auto [l1a, l2a] = lasnet_eval(in1, Tensor({2, 12, 12, 12}), p);
  const auto [l1b, l2b] = lasnet_eval(in1, rnd_map({2, 12, 12, 12}, rng), p);
  CHECK(l1a.v == l1b.v);
  CHECK(l2a.v != l2b.v);
}

TEST_CASE("swapping the baseline input changes the interim logits") {
  const LasNetConfig cfg = tiny_cfg();
  const LasNetParams p = random_params(cfg, 31);
  Rng rng(31);
  const Tensor in2 = rnd_map({2, 6, 6, 6}, rng);
  const Tensor base_a = rnd_map({2, 6, 6, 6}, rng);
  const Tensor base_b = rnd_map({2, 6, 6, 6}, rng);
  const auto [l1a, l2a] = lasnet_eval(base_a, in2, p);
  const auto [l1b, l2b] = lasnet_eval(base_b, in2, p);
  CHECK(l2a.v != l2b.v);
  CHECK(l1a.v != l1b.v);
}

TEST_CASE("logit maps keep the input spatial shape") {
  const LasNetConfig cfg = two_stage_cfg();
  const LasNetParams p = init_params(cfg, 3);
  Rng rng(3);
  const auto [l1, l2] =
      lasnet_eval(rnd_map({2, 12, 12, 12}, rng), rnd_map({2, 12, 12, 12}, rng), p);
  CHECK(l1.shape == std::vector<int>{1, 12, 12, 12});
  CHECK(l2.shape == std::vector<int>{1, 12, 12, 12});

  Graph g;
  const int a = g.input(rnd_map({2, 6, 6, 6}, rng), false);
  CHECK_THROWS_AS(lasnet_forward(g, a, a, p, false), std::invalid_argument);
}

TEST_CASE("stage keeps the baseline path independent of the interim features") {
  const LasNetConfig cfg = tiny_cfg();
  const LasNetParams p = random_params(cfg, 41);
  Rng rng(41);
  const Tensor z1 = rnd_map({4, 3, 3, 3}, rng);
  const Tensor z2a = rnd_map({4, 3, 3, 3}, rng);
  const Tensor z2b = rnd_map({4, 3, 3, 3}, rng);

  auto run = [&](const Tensor& z2in) {
    ParamCtx ctx(p);
    const int n1 = ctx.g.input(z1, false);
    const int n2 = ctx.g.input(z2in, false);
    const auto [o1, o2] = lawa_stage(ctx.g, n1, n2, cfg, 0, ctx.pnode());
    return std::pair{ctx.g.val(o1).v, ctx.g.val(o2).v};
  };
  const auto [a1, a2] = run(z2a);
  const auto [b1, b2] = run(z2b);
  CHECK(a1 == b1);  // bit-identical baseline features
  CHECK(a2 != b2);

  // the baseline output equals the shared self-attention chain applied alone
  ParamCtx ctx(p);
  const int n1 = ctx.g.input(z1, false);
  const int solo = swin_block(ctx.g, n1, cfg, 0, 0, ctx.pnode());
  const auto [o1, o2] = lawa_stage(ctx.g, n1, ctx.g.input(z2a, false), cfg, 0, ctx.pnode());
  CHECK(ctx.g.val(o1).v == ctx.g.val(solo).v);
  (void)o2;
}

TEST_CASE("zeroed cross projections reduce the stage to the shared path") {
  const LasNetConfig cfg = tiny_cfg();
  LasNetParams p = random_params(cfg, 43);
  for (const char* nm : {"stage0.cross.proj.w", "stage0.cross.proj.b",
                         "stage0.cross.mlp2.w", "stage0.cross.mlp2.b"})
    for (double& e : p.value_of(nm).v) e = 0.0;

  Rng rng(43);
  const Tensor z1 = rnd_map({4, 3, 3, 3}, rng);
  const Tensor z2 = rnd_map({4, 3, 3, 3}, rng);
  ParamCtx ctx(p);
  const int n1 = ctx.g.input(z1, false);
  const int n2 = ctx.g.input(z2, false);
  const auto [o1, o2] = lawa_stage(ctx.g, n1, n2, cfg, 0, ctx.pnode());
  const int solo = swin_block(ctx.g, n2, cfg, 0, 0, ctx.pnode());
  CHECK(ctx.g.val(o2).v == ctx.g.val(solo).v);
  (void)o1;
}

TEST_CASE("cross attention with tied weights and equal inputs equals self attention") {
  const LasNetConfig cfg = tiny_cfg();
  const LasNetParams p = random_params(cfg, 47);
  Rng rng(47);
  const Tensor z = rnd_map({4, 3, 3, 3}, rng);

  ParamCtx ctx(p);
  const ParamNodeFn base = ctx.pnode();
  // serve the cross names from the first self-attention block
  const ParamNodeFn tied = [&base](const std::string& name) {
    std::string n = name;
    const auto swap = [&n](std::string_view from, std::string_view to) {
      const size_t at = n.find(from);
      if (at != std::string::npos) n = n.substr(0, at) + std::string(to) +
                                       n.substr(at + from.size());
    };
    swap("cross.lnq", "blk0.ln1");
    swap("cross.lnkv", "blk0.ln1");
    swap("cross.lnm", "blk0.ln2");
    swap("cross.", "blk0.");
    return base(n);
  };
  const int zq = ctx.g.input(z, false);
  const int zkv = ctx.g.input(z, false);
  const int crossed = cross_block(ctx.g, zq, zkv, cfg, 0, tied);
  const int selfed = swin_block(ctx.g, zq, cfg, 0, 0, base);
  CHECK(ctx.g.val(crossed).v == ctx.g.val(selfed).v);
}

TEST_CASE("gate coefficients stay in (0,1) and refinement starts as a pass-through") {
  const LasNetConfig cfg = tiny_cfg();
  Rng rng(53);
  SUBCASE("zero kernel: refined coefficients equal the plain sigmoid") {
    const LasNetParams p = init_params(cfg, 11);  // refine kernel is zero here
    ParamCtx ctx(p);
    const int u1 = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int s1 = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int u2 = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int s2 = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const GateNodes gn = laag_gate(ctx.g, u1, s1, u2, s2, 4, "dec1", ctx.pnode());
    for (double a : ctx.g.val(gn.alpha1).v) {
      CHECK(a > 0.0);
      CHECK(a < 1.0);
    }
    // alpha2 with a zero kernel must equal sigmoid of its own gate logit,
    // which is what the same gate produces for the pair (u2, s2) on branch 1
    const GateNodes swapped = laag_gate(ctx.g, u2, s2, u1, s1, 4, "dec1", ctx.pnode());
    CHECK(ctx.g.val(gn.alpha2).v == ctx.g.val(swapped.alpha1).v);
  }
  SUBCASE("active kernel changes the interim coefficients only") {
    LasNetParams p = random_params(cfg, 13);
    for (double& e : p.value_of("dec1.refine.w").v) e = 0.3 * rng.normal();
    ParamCtx ctx(p);
    const Tensor u1t = rnd_map({4, 6, 6, 6}, rng);
    const Tensor s1t = rnd_map({4, 6, 6, 6}, rng);
    const int u1 = ctx.g.input(u1t, false);
    const int s1 = ctx.g.input(s1t, false);
    const int u2a = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int s2a = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int u2b = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const int s2b = ctx.g.input(rnd_map({4, 6, 6, 6}, rng), false);
    const GateNodes ga = laag_gate(ctx.g, u1, s1, u2a, s2a, 4, "dec1", ctx.pnode());
    const GateNodes gb = laag_gate(ctx.g, u1, s1, u2b, s2b, 4, "dec1", ctx.pnode());
    // interim inputs do not leak into the baseline side
    CHECK(ctx.g.val(ga.alpha1).v == ctx.g.val(gb.alpha1).v);
    CHECK(ctx.g.val(ga.gated1).v == ctx.g.val(gb.gated1).v);
    CHECK(ctx.g.val(ga.alpha2).v != ctx.g.val(gb.alpha2).v);
    for (double a : ctx.g.val(ga.alpha2).v) {
      CHECK(a > 0.0);
      CHECK(a < 1.0);
    }
  }
}

TEST_CASE("network gradients match finite differences through every block type") {
  const LasNetConfig cfg = tiny_cfg();
  const LasNetParams p = random_params(cfg, 61);
  Rng rng(61);
  const Tensor in1 = rnd_map({2, 6, 6, 6}, rng, 0.0, 2.0);
  const Tensor in2 = rnd_map({2, 6, 6, 6}, rng, 0.0, 2.0);
  auto y1 = random_target({1, 6, 6, 6}, rng);
  auto y2 = random_target({1, 6, 6, 6}, rng);

  Graph g;
  const int a = g.input(in1, true);
  const int b = g.input(in2, true);
  const ForwardNodes f = lasnet_forward(g, a, b, p, true);
  const LossNodes loss = joint_loss(g, f.logits1, f.logits2, y1, y2);
  g.backward(loss.total);
  const double f0 = g.val(loss.total).v[0];
  CHECK(f0 > 0.0);

  // representative blocks from every component, three coordinates each
  const std::vector<std::string> picks = {
      "enc0.conv1.w",       "enc0.norm1.g",      "down0.w",
      "stage0.blk0.q.w",    "stage0.blk0.relpos", "stage0.blk0.mlp2.w",
      "stage0.cross.v.w",   "stage0.cross.lnkv.g", "stage0.cross.mlp1.w",
      "dec1.up.w",          "dec1.gate.psi.w",   "dec1.refine.w",
      "dec1.block.conv2.w", "head.w",            "head.b"};
  const double h = 1e-5;
  double worst = 0.0;
  for (const std::string& name : picks) {
    const int bi = p.find(name);
    const auto& grad = g.grad(f.params[static_cast<size_t>(bi)]);
    const int64_t n = p.values[static_cast<size_t>(bi)].numel();
    for (int rep = 0; rep < 3; ++rep) {
      const int64_t c = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
      LasNetParams q = p;
      q.values[static_cast<size_t>(bi)].v[static_cast<size_t>(c)] += h;
      const double up = joint_loss_value(q, in1, in2, y1, y2);
      q.values[static_cast<size_t>(bi)].v[static_cast<size_t>(c)] -= 2.0 * h;
      const double dn = joint_loss_value(q, in1, in2, y1, y2);
      const double fd = (up - dn) / (2.0 * h);
      const double an = grad[static_cast<size_t>(c)];
      const double diff = std::fabs(an - fd);
      if (diff >= 1e-8)
        worst = std::max(worst, diff / std::max({std::fabs(an), std::fabs(fd), 1e-12}));
    }
  }
  CHECK(worst < 1e-4);

  // gradient reaches both inputs: cross attention pulls on the baseline too
  double g1 = 0.0, g2 = 0.0;
  for (double e : g.grad(a)) g1 += std::fabs(e);
  for (double e : g.grad(b)) g2 += std::fabs(e);
  CHECK(g1 > 0.0);
  CHECK(g2 > 0.0);
}

TEST_CASE("checkpoint files round-trip bit-for-bit") {
  const fs::path dir = fs::temp_directory_path() / "laspet_test_ckpt";
  fs::create_directories(dir);
  const LasNetConfig cfg = two_stage_cfg();
  const LasNetParams p = random_params(cfg, 71);
  const fs::path f1 = dir / "a.lasp";
  const fs::path f2 = dir / "b.lasp";
  save_params(p, f1.string());
  const LasNetParams q = load_params(f1.string());
  CHECK(q.cfg == p.cfg);
  CHECK(q.specs.size() == p.specs.size());
  for (size_t i = 0; i < p.values.size(); ++i) {
    REQUIRE(q.values[i].shape == p.values[i].shape);
    for (size_t j = 0; j < p.values[i].v.size(); ++j)
      CHECK(q.values[i].v[j] ==
            static_cast<double>(static_cast<float>(p.values[i].v[j])));
  }
  save_params(q, f2.string());
  std::ifstream s1(f1, std::ios::binary), s2(f2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(s1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(s2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  // corrupted magic is rejected
  std::string corrupt = b1;
  corrupt[0] = 'X';
  const fs::path f3 = dir / "c.lasp";
  std::ofstream(f3, std::ios::binary).write(corrupt.data(),
                                            static_cast<std::streamsize>(corrupt.size()));
  CHECK_THROWS_AS(load_params(f3.string()), std::runtime_error);
  fs::remove_all(dir);
}
