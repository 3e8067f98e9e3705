#include "laspet/nn/lasnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "laspet/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace laspet::nn {

void LasNetConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("config: in_channels must be >= 1");
  if (base_dim < 1) throw std::invalid_argument("config: base_dim must be >= 1");
  if (depths.empty() || depths.size() != num_heads.size())
    throw std::invalid_argument("config: depths and num_heads must align and be nonempty");
  if (window_size < 1) throw std::invalid_argument("config: window_size must be >= 1");
  if (patch_size < 2) throw std::invalid_argument("config: patch_size must be >= 2");
  if (mlp_ratio < 1) throw std::invalid_argument("config: mlp_ratio must be >= 1");
  if (leaky_slope < 0.0) throw std::invalid_argument("config: leaky_slope must be >= 0");
  for (int s = 0; s < stages(); ++s) {
    if (depths[static_cast<size_t>(s)] < 1 || num_heads[static_cast<size_t>(s)] < 1)
      throw std::invalid_argument("config: stage depths and heads must be >= 1");
    if (patch_size % (1 << (s + 1)) != 0)
      throw std::invalid_argument("config: patch_size must halve cleanly at every stage");
    const int r = res_at(s);
    if (r < window_size || r % window_size != 0)
      throw std::invalid_argument(
          "config: every stage resolution must be a positive multiple of window_size");
    if (dim_at(s) % num_heads[static_cast<size_t>(s)] != 0)
      throw std::invalid_argument("config: feature dim must be divisible by num_heads");
  }
}

int LasNetParams::find(std::string_view name) const {
  const auto it = index.find(name);
  if (it == index.end())
    throw std::invalid_argument("params: unknown parameter " + std::string(name));
  return it->second;
}

int64_t LasNetParams::count_total() const {
  int64_t n = 0;
  for (const Tensor& t : values) n += t.numel();
  return n;
}

int64_t LasNetParams::count_cross() const {
  int64_t n = 0;
  for (size_t i = 0; i < specs.size(); ++i)
    if (specs[i].cross) n += values[i].numel();
  return n;
}

namespace {

void add_spec(std::vector<ParamSpec>& out, std::string name, std::vector<int> shape,
              bool cross, InitKind init) {
  out.push_back({std::move(name), std::move(shape), cross, init});
}

void add_conv_block_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                          int ci, int co) {
  add_spec(out, prefix + ".conv1.w", {co, ci, 3, 3, 3}, false, InitKind::Weight);
  add_spec(out, prefix + ".conv1.b", {co}, false, InitKind::Bias);
  add_spec(out, prefix + ".norm1.g", {co}, false, InitKind::Gamma);
  add_spec(out, prefix + ".norm1.b", {co}, false, InitKind::Bias);
  add_spec(out, prefix + ".conv2.w", {co, co, 3, 3, 3}, false, InitKind::Weight);
  add_spec(out, prefix + ".conv2.b", {co}, false, InitKind::Bias);
  add_spec(out, prefix + ".norm2.g", {co}, false, InitKind::Gamma);
  add_spec(out, prefix + ".norm2.b", {co}, false, InitKind::Bias);
  if (ci != co) {
    add_spec(out, prefix + ".proj.w", {co, ci, 1, 1, 1}, false, InitKind::Weight);
    add_spec(out, prefix + ".proj.b", {co}, false, InitKind::Bias);
  }
}

void add_attention_specs(std::vector<ParamSpec>& out, const std::string& prefix, int c,
                         int heads, int ws, bool cross) {
  const int rel = (2 * ws - 1) * (2 * ws - 1) * (2 * ws - 1);
  for (const char* nm : {".q", ".k", ".v", ".proj"}) {
    add_spec(out, prefix + nm + ".w", {c, c}, cross, InitKind::Weight);
    add_spec(out, prefix + nm + ".b", {c}, cross, InitKind::Bias);
  }
  add_spec(out, prefix + ".relpos", {rel, heads}, cross, InitKind::RelPos);
}

void add_mlp_specs(std::vector<ParamSpec>& out, const std::string& prefix, int c,
                   int hidden, bool cross) {
  add_spec(out, prefix + ".mlp1.w", {c, hidden}, cross, InitKind::Weight);
  add_spec(out, prefix + ".mlp1.b", {hidden}, cross, InitKind::Bias);
  add_spec(out, prefix + ".mlp2.w", {hidden, c}, cross, InitKind::Weight);
  add_spec(out, prefix + ".mlp2.b", {c}, cross, InitKind::Bias);
}

void add_ln_specs(std::vector<ParamSpec>& out, const std::string& prefix, int c,
                  bool cross) {
  add_spec(out, prefix + ".g", {c}, cross, InitKind::Gamma);
  add_spec(out, prefix + ".b", {c}, cross, InitKind::Bias);
}

int gate_inter_channels(int c) { return std::max(c / 2, 1); }

}  // namespace

std::vector<ParamSpec> param_specs(const LasNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  add_conv_block_specs(out, "enc0", cfg.in_channels, cfg.base_dim);
  for (int s = 0; s < cfg.stages(); ++s) {
    const int c = cfg.dim_at(s);
    const int prev = s == 0 ? cfg.base_dim : cfg.dim_at(s - 1);
    const int heads = cfg.num_heads[static_cast<size_t>(s)];
    const std::string stage = "stage" + std::to_string(s);
    add_spec(out, "down" + std::to_string(s) + ".w", {c, prev, 2, 2, 2}, false,
             InitKind::Weight);
    add_spec(out, "down" + std::to_string(s) + ".b", {c}, false, InitKind::Bias);
    for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b) {
      const std::string blk = stage + ".blk" + std::to_string(b);
      add_ln_specs(out, blk + ".ln1", c, false);
      add_attention_specs(out, blk, c, heads, cfg.window_size, false);
      add_ln_specs(out, blk + ".ln2", c, false);
      add_mlp_specs(out, blk, c, c * cfg.mlp_ratio, false);
    }
    const std::string cross = stage + ".cross";
    add_ln_specs(out, cross + ".lnq", c, true);
    add_ln_specs(out, cross + ".lnkv", c, true);
    add_attention_specs(out, cross, c, heads, cfg.window_size, true);
    add_ln_specs(out, cross + ".lnm", c, true);
    add_mlp_specs(out, cross, c, c * cfg.mlp_ratio, true);
  }
  for (int l = cfg.stages(); l >= 1; --l) {
    const int ci = cfg.skip_dim(l);
    const int co = cfg.skip_dim(l - 1);
    const int f = gate_inter_channels(co);
    const std::string dec = "dec" + std::to_string(l);
    add_spec(out, dec + ".up.w", {co, ci, 1, 1, 1}, false, InitKind::Weight);
    add_spec(out, dec + ".up.b", {co}, false, InitKind::Bias);
    add_spec(out, dec + ".gate.wg.w", {f, co, 1, 1, 1}, false, InitKind::Weight);
    add_spec(out, dec + ".gate.wg.b", {f}, false, InitKind::Bias);
    add_spec(out, dec + ".gate.wx.w", {f, co, 1, 1, 1}, false, InitKind::Weight);
    add_spec(out, dec + ".gate.wx.b", {f}, false, InitKind::Bias);
    add_spec(out, dec + ".gate.psi.w", {1, f, 1, 1, 1}, false, InitKind::Weight);
    add_spec(out, dec + ".gate.psi.b", {1}, false, InitKind::Bias);
    add_spec(out, dec + ".refine.w", {1, 2, 7, 7, 7}, true, InitKind::ZeroKernel);
    add_spec(out, dec + ".refine.b", {1}, true, InitKind::ZeroKernel);
    add_conv_block_specs(out, dec + ".block", 2 * co, co);
  }
  add_spec(out, "head.w", {1, cfg.base_dim, 1, 1, 1}, false, InitKind::Weight);
  add_spec(out, "head.b", {1}, false, InitKind::Bias);
  return out;
}

int64_t single_branch_param_count(const LasNetConfig& cfg) {
  cfg.validate();
  auto conv_n = [](int64_t co, int64_t ci, int64_t k) { return co * ci * k * k * k + co; };
  auto block_n = [&](int64_t ci, int64_t co) {
    int64_t n = conv_n(co, ci, 3) + 2 * co + conv_n(co, co, 3) + 2 * co;
    if (ci != co) n += co * ci + co;
    return n;
  };
  const int64_t w = cfg.window_size;
  const int64_t rel_rows = (2 * w - 1) * (2 * w - 1) * (2 * w - 1);
  int64_t total = block_n(cfg.in_channels, cfg.base_dim);
  for (int s = 0; s < cfg.stages(); ++s) {
    const int64_t c = cfg.dim_at(s);
    const int64_t prev = s == 0 ? cfg.base_dim : cfg.dim_at(s - 1);
    total += conv_n(c, prev, 2);
    const int64_t hidden = c * cfg.mlp_ratio;
    const int64_t one_block = 2 * c                                    // ln1
                              + 4 * (c * c + c)                        // q,k,v,proj
                              + rel_rows * cfg.num_heads[static_cast<size_t>(s)]
                              + 2 * c                                  // ln2
                              + (c * hidden + hidden) + (hidden * c + c);
    total += cfg.depths[static_cast<size_t>(s)] * one_block;
  }
  for (int l = cfg.stages(); l >= 1; --l) {
    const int64_t ci = cfg.skip_dim(l);
    const int64_t co = cfg.skip_dim(l - 1);
    const int64_t f = gate_inter_channels(static_cast<int>(co));
    total += co * ci + co;                              // upsample projection
    total += (f * co + f) + (f * co + f) + (f + 1);     // gate wg, wx, psi
    total += block_n(2 * co, co);
  }
  total += cfg.base_dim + 1;  // head
  return total;
}

LasNetParams init_params(const LasNetConfig& cfg, uint64_t seed) {
  LasNetParams p;
  p.cfg = cfg;
  p.specs = param_specs(cfg);
  p.values.reserve(p.specs.size());
  for (size_t i = 0; i < p.specs.size(); ++i) {
    const ParamSpec& s = p.specs[i];
    p.index.emplace(s.name, static_cast<int>(i));
    Tensor t(s.shape);
    switch (s.init) {
      case InitKind::Weight:
      case InitKind::RelPos: {
        // per-name stream, so init does not depend on registration order
        Rng rng(Rng::derive(seed, s.name));
        for (double& e : t.v) {
          double z;
          do {
            z = rng.normal();
          } while (std::fabs(z) > 2.0);
          e = 0.02 * z;
        }
        break;
      }
      case InitKind::Gamma:
        for (double& e : t.v) e = 1.0;
        break;
      case InitKind::Bias:
      case InitKind::ZeroKernel:
        break;  // zero-filled by construction
    }
    p.values.push_back(std::move(t));
  }
  return p;
}

namespace {

constexpr char kMagic[4] = {'L', 'A', 'S', 'P'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("load_params: truncated file");
  return v;
}

}  // namespace

void save_params(const LasNetParams& params, const std::string& path) {
  params.cfg.validate();
  if (params.specs.size() != params.values.size())
    throw std::invalid_argument("save_params: specs and values out of step");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  const LasNetConfig& c = params.cfg;
  put<uint32_t>(os, static_cast<uint32_t>(c.in_channels));
  put<uint32_t>(os, static_cast<uint32_t>(c.base_dim));
  put<uint32_t>(os, static_cast<uint32_t>(c.stages()));
  for (int s = 0; s < c.stages(); ++s) {
    put<uint32_t>(os, static_cast<uint32_t>(c.depths[static_cast<size_t>(s)]));
    put<uint32_t>(os, static_cast<uint32_t>(c.num_heads[static_cast<size_t>(s)]));
  }
  put<uint32_t>(os, static_cast<uint32_t>(c.window_size));
  put<uint32_t>(os, static_cast<uint32_t>(c.patch_size));
  put<uint32_t>(os, static_cast<uint32_t>(c.mlp_ratio));
  put<double>(os, c.leaky_slope);
  put<uint32_t>(os, static_cast<uint32_t>(params.specs.size()));
  for (size_t i = 0; i < params.specs.size(); ++i) {
    const ParamSpec& s = params.specs[i];
    put<uint32_t>(os, static_cast<uint32_t>(s.name.size()));
    os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    put<uint8_t>(os, s.cross ? 1 : 0);
    put<uint32_t>(os, static_cast<uint32_t>(s.shape.size()));
    for (int d : s.shape) put<uint32_t>(os, static_cast<uint32_t>(d));
    for (double x : params.values[i].v) put<float>(os, static_cast<float>(x));
  }
  if (!os) throw std::runtime_error("save_params: write failed for " + path);
}

LasNetParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_params: bad magic in " + path);
  if (get<uint32_t>(is) != kVersion)
    throw std::runtime_error("load_params: unsupported version in " + path);
  LasNetConfig c;
  c.in_channels = static_cast<int>(get<uint32_t>(is));
  c.base_dim = static_cast<int>(get<uint32_t>(is));
  const uint32_t stages = get<uint32_t>(is);
  if (stages == 0 || stages > 16)
    throw std::runtime_error("load_params: implausible stage count in " + path);
  c.depths.resize(stages);
  c.num_heads.resize(stages);
  for (uint32_t s = 0; s < stages; ++s) {
    c.depths[s] = static_cast<int>(get<uint32_t>(is));
    c.num_heads[s] = static_cast<int>(get<uint32_t>(is));
  }
  c.window_size = static_cast<int>(get<uint32_t>(is));
  c.patch_size = static_cast<int>(get<uint32_t>(is));
  c.mlp_ratio = static_cast<int>(get<uint32_t>(is));
  c.leaky_slope = get<double>(is);
  c.validate();

  LasNetParams p;
  p.cfg = c;
  p.specs = param_specs(c);
  const uint32_t n_blocks = get<uint32_t>(is);
  if (n_blocks != p.specs.size())
    throw std::runtime_error("load_params: parameter block count mismatch in " + path);
  p.values.reserve(p.specs.size());
  for (size_t i = 0; i < p.specs.size(); ++i) {
    const ParamSpec& s = p.specs[i];
    p.index.emplace(s.name, static_cast<int>(i));
    const uint32_t name_len = get<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != s.name)
      throw std::runtime_error("load_params: parameter name mismatch in " + path);
    const bool cross = get<uint8_t>(is) != 0;
    const uint32_t ndim = get<uint32_t>(is);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get<uint32_t>(is));
    if (cross != s.cross || shape != s.shape)
      throw std::runtime_error("load_params: parameter layout mismatch in " + path);
    Tensor t(shape);
    for (double& e : t.v) e = static_cast<double>(get<float>(is));
    p.values.push_back(std::move(t));
  }
  return p;
}

namespace {

int64_t flat4(int c, int z, int y, int x, int R) {
  return ((static_cast<int64_t>(c) * R + z) * R + y) * R + x;
}

}  // namespace

Graph::Indices window_partition_indices(int channels, int res, int ws, int shift) {
  if (res < 1 || ws < 1 || res % ws != 0)
    throw std::invalid_argument("window_partition: resolution must be a multiple of ws");
  const int n = res / ws;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(channels) * res * res * res);
  for (int wz = 0; wz < n; ++wz)
    for (int wy = 0; wy < n; ++wy)
      for (int wx = 0; wx < n; ++wx)
        for (int tz = 0; tz < ws; ++tz)
          for (int ty = 0; ty < ws; ++ty)
            for (int tx = 0; tx < ws; ++tx) {
              // roll by -shift: rolled coordinate i reads source i+shift
              const int z = (wz * ws + tz + shift) % res;
              const int y = (wy * ws + ty + shift) % res;
              const int x = (wx * ws + tx + shift) % res;
              for (int c = 0; c < channels; ++c)
                idx->push_back(flat4(c, z, y, x, res));
            }
  return idx;
}

Graph::Indices window_reverse_indices(int channels, int res, int ws, int shift) {
  if (res < 1 || ws < 1 || res % ws != 0)
    throw std::invalid_argument("window_reverse: resolution must be a multiple of ws");
  const int n = res / ws;
  const int T = ws * ws * ws;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(channels) * res * res * res);
  auto token_of = [&](int zr, int yr, int xr) {
    const int w = ((zr / ws) * n + yr / ws) * n + xr / ws;
    const int t = ((zr % ws) * ws + yr % ws) * ws + xr % ws;
    return static_cast<int64_t>(w) * T + t;
  };
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < res; ++z)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
          const int zr = (z - shift % res + res) % res;
          const int yr = (y - shift % res + res) % res;
          const int xr = (x - shift % res + res) % res;
          idx->push_back(token_of(zr, yr, xr) * channels + c);
        }
  return idx;
}

Tensor window_partition(const Tensor& x, int ws, int shift) {
  if (x.shape.size() != 4 || x.shape[1] != x.shape[2] || x.shape[2] != x.shape[3])
    throw std::invalid_argument("window_partition: expects [C,R,R,R]");
  const int C = x.shape[0], R = x.shape[1];
  const auto idx = window_partition_indices(C, R, ws, shift);
  const int n = R / ws;
  Tensor out({n * n * n * ws * ws * ws, C});
  for (size_t i = 0; i < idx->size(); ++i)
    out.v[i] = x.v[static_cast<size_t>((*idx)[i])];
  return out;
}

Tensor window_reverse(const Tensor& tokens, int ws, int shift,
                      const std::vector<int>& shape) {
  if (shape.size() != 4 || shape[1] != shape[2] || shape[2] != shape[3])
    throw std::invalid_argument("window_reverse: target must be [C,R,R,R]");
  if (Tensor::numel_of(shape) != tokens.numel())
    throw std::invalid_argument("window_reverse: element count mismatch");
  const auto idx = window_reverse_indices(shape[0], shape[1], ws, shift);
  Tensor out(shape);
  for (size_t i = 0; i < idx->size(); ++i)
    out.v[i] = tokens.v[static_cast<size_t>((*idx)[i])];
  return out;
}

std::shared_ptr<const std::vector<double>> shifted_window_mask(int res, int ws,
                                                               int shift) {
  if (res < 1 || ws < 1 || res % ws != 0 || shift < 0 || shift >= ws)
    throw std::invalid_argument("shifted_window_mask: bad geometry");
  const int n = res / ws;
  const int nW = n * n * n;
  const int T = ws * ws * ws;
  auto mask =
      std::make_shared<std::vector<double>>(static_cast<size_t>(nW) * T * T, 0.0);
  if (shift == 0) return mask;
  // region of a rolled coordinate: interior, true edge, or wrapped-around
  auto region = [&](int r) { return r < res - ws ? 0 : (r < res - shift ? 1 : 2); };
  std::vector<int> id(static_cast<size_t>(T));
  for (int wz = 0; wz < n; ++wz)
    for (int wy = 0; wy < n; ++wy)
      for (int wx = 0; wx < n; ++wx) {
        const int w = (wz * n + wy) * n + wx;
        for (int tz = 0; tz < ws; ++tz)
          for (int ty = 0; ty < ws; ++ty)
            for (int tx = 0; tx < ws; ++tx)
              id[static_cast<size_t>((tz * ws + ty) * ws + tx)] =
                  (region(wz * ws + tz) * 3 + region(wy * ws + ty)) * 3 +
                  region(wx * ws + tx);
        double* m = &(*mask)[static_cast<size_t>(w) * T * T];
        for (int i = 0; i < T; ++i)
          for (int j = 0; j < T; ++j)
            if (id[static_cast<size_t>(i)] != id[static_cast<size_t>(j)])
              m[static_cast<size_t>(i) * T + j] = -1e9;
      }
  return mask;
}

namespace {

Graph::Indices relpos_pair_indices(int ws) {
  const int T = ws * ws * ws;
  const int D = 2 * ws - 1;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(T) * T);
  for (int zi = 0; zi < ws; ++zi)
    for (int yi = 0; yi < ws; ++yi)
      for (int xi = 0; xi < ws; ++xi)
        for (int zj = 0; zj < ws; ++zj)
          for (int yj = 0; yj < ws; ++yj)
            for (int xj = 0; xj < ws; ++xj)
              idx->push_back(
                  (static_cast<int64_t>(zi - zj + ws - 1) * D + (yi - yj + ws - 1)) * D +
                  (xi - xj + ws - 1));
  return idx;
}

// [nW*T, C] -> [nW*nh, T, hd]; heads are fastest along the batch axis
Graph::Indices head_split_indices(int nW, int T, int C, int nh) {
  const int hd = C / nh;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(nW) * T * C);
  for (int w = 0; w < nW; ++w)
    for (int h = 0; h < nh; ++h)
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < hd; ++d)
          idx->push_back((static_cast<int64_t>(w) * T + t) * C + h * hd + d);
  return idx;
}

// [nW*nh, T, hd] -> [nW*T, C]
Graph::Indices head_merge_indices(int nW, int T, int C, int nh) {
  const int hd = C / nh;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(nW) * T * C);
  for (int w = 0; w < nW; ++w)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        const int h = c / hd;
        const int d = c % hd;
        idx->push_back((static_cast<int64_t>(w) * nh + h) * T * hd +
                       static_cast<int64_t>(t) * hd + d);
      }
  return idx;
}

// scaled dot-product attention over pre-normalized token matrices
int windowed_attention(Graph& g, int q_tokens, int kv_tokens, int nW, int ws, int C,
                       int nh, const std::string& prefix, const ParamNodeFn& pnode,
                       std::shared_ptr<const std::vector<double>> mask) {
  const int T = ws * ws * ws;
  const int hd = C / nh;
  const auto split = head_split_indices(nW, T, C, nh);
  auto project = [&](int tokens, const char* nm) {
    const int lin = g.add_rowvec(g.matmul2d(tokens, pnode(prefix + nm + ".w")),
                                 pnode(prefix + nm + ".b"));
    return g.gather(lin, split, {nW * nh, T, hd});
  };
  const int q = project(q_tokens, ".q");
  const int k = project(kv_tokens, ".k");
  const int v = project(kv_tokens, ".v");
  int s = g.scale(g.bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(hd)));
  s = g.add_relpos(s, pnode(prefix + ".relpos"), relpos_pair_indices(ws), nh);
  if (mask) s = g.add_winmask(s, mask, nh);
  const int mixed = g.bmm(g.softmax_lastdim(s), v, false, false);
  const int merged =
      g.gather(mixed, head_merge_indices(nW, T, C, nh), {nW * T, C});
  return g.add_rowvec(g.matmul2d(merged, pnode(prefix + ".proj.w")),
                      pnode(prefix + ".proj.b"));
}

int mlp_sublayer(Graph& g, int tokens, const std::string& prefix,
                 const ParamNodeFn& pnode) {
  const int h = g.gelu(g.add_rowvec(g.matmul2d(tokens, pnode(prefix + ".mlp1.w")),
                                    pnode(prefix + ".mlp1.b")));
  return g.add_rowvec(g.matmul2d(h, pnode(prefix + ".mlp2.w")),
                      pnode(prefix + ".mlp2.b"));
}

void check_stage_input(const Graph& g, int x_map, const LasNetConfig& cfg, int stage) {
  const std::vector<int> want = {cfg.dim_at(stage), cfg.res_at(stage),
                                 cfg.res_at(stage), cfg.res_at(stage)};
  if (g.val(x_map).shape != want)
    throw std::invalid_argument("stage input shape does not match config");
}

}  // namespace

int conv_block(Graph& g, int x, int in_ch, int out_ch, double slope,
               const std::string& prefix, const ParamNodeFn& pnode) {
  if (g.val(x).shape.size() != 4 || g.val(x).shape[0] != in_ch)
    throw std::invalid_argument("conv_block: input channels mismatch");
  auto unit = [&](int in, int num) {
    const std::string c = prefix + ".conv" + std::to_string(num);
    const std::string n = prefix + ".norm" + std::to_string(num);
    const int conv = g.conv3d(in, pnode(c + ".w"), pnode(c + ".b"), 1, 1);
    return g.leaky_relu(g.instance_norm(conv, pnode(n + ".g"), pnode(n + ".b")), slope);
  };
  const int h = unit(unit(x, 1), 2);
  const int shortcut =
      in_ch == out_ch
          ? x
          : g.conv3d(x, pnode(prefix + ".proj.w"), pnode(prefix + ".proj.b"), 1, 0);
  return g.add(shortcut, h);
}

int swin_block(Graph& g, int x_map, const LasNetConfig& cfg, int stage, int block,
               const ParamNodeFn& pnode) {
  check_stage_input(g, x_map, cfg, stage);
  const int C = cfg.dim_at(stage);
  const int R = cfg.res_at(stage);
  const int ws = cfg.window_size;
  const int shift = (block % 2 == 1 && R > ws) ? ws / 2 : 0;
  const int n = R / ws;
  const int nW = n * n * n;
  const int T = ws * ws * ws;
  const std::string prefix =
      "stage" + std::to_string(stage) + ".blk" + std::to_string(block);
  const int t = g.gather(x_map, window_partition_indices(C, R, ws, shift), {nW * T, C});
  const int h = g.layer_norm(t, pnode(prefix + ".ln1.g"), pnode(prefix + ".ln1.b"));
  const auto mask = shift > 0 ? shifted_window_mask(R, ws, shift) : nullptr;
  const int attn = windowed_attention(g, h, h, nW, ws, C,
                                      cfg.num_heads[static_cast<size_t>(stage)], prefix,
                                      pnode, mask);
  const int t2 = g.add(t, attn);
  const int m = g.layer_norm(t2, pnode(prefix + ".ln2.g"), pnode(prefix + ".ln2.b"));
  const int t3 = g.add(t2, mlp_sublayer(g, m, prefix, pnode));
  return g.gather(t3, window_reverse_indices(C, R, ws, shift), {C, R, R, R});
}

int cross_block(Graph& g, int x2_map, int x1_map, const LasNetConfig& cfg, int stage,
                const ParamNodeFn& pnode) {
  check_stage_input(g, x2_map, cfg, stage);
  check_stage_input(g, x1_map, cfg, stage);
  const int C = cfg.dim_at(stage);
  const int R = cfg.res_at(stage);
  const int ws = cfg.window_size;
  const int n = R / ws;
  const int nW = n * n * n;
  const int T = ws * ws * ws;
  const std::string prefix = "stage" + std::to_string(stage) + ".cross";
  const auto part = window_partition_indices(C, R, ws, 0);
  const int t2 = g.gather(x2_map, part, {nW * T, C});
  const int t1 = g.gather(x1_map, part, {nW * T, C});
  const int hq = g.layer_norm(t2, pnode(prefix + ".lnq.g"), pnode(prefix + ".lnq.b"));
  const int hkv = g.layer_norm(t1, pnode(prefix + ".lnkv.g"), pnode(prefix + ".lnkv.b"));
  const int attn = windowed_attention(g, hq, hkv, nW, ws, C,
                                      cfg.num_heads[static_cast<size_t>(stage)], prefix,
                                      pnode, nullptr);
  const int t2b = g.add(t2, attn);
  const int m = g.layer_norm(t2b, pnode(prefix + ".lnm.g"), pnode(prefix + ".lnm.b"));
  const int t2c = g.add(t2b, mlp_sublayer(g, m, prefix, pnode));
  return g.gather(t2c, window_reverse_indices(C, R, ws, 0), {C, R, R, R});
}

std::pair<int, int> lawa_stage(Graph& g, int z1_map, int z2_map,
                               const LasNetConfig& cfg, int stage,
                               const ParamNodeFn& pnode) {
  int z1 = z1_map;
  int z2 = z2_map;
  for (int b = 0; b < cfg.depths[static_cast<size_t>(stage)]; ++b) {
    z1 = swin_block(g, z1, cfg, stage, b, pnode);
    z2 = swin_block(g, z2, cfg, stage, b, pnode);
  }
  z2 = cross_block(g, z2, z1, cfg, stage, pnode);
  return {z1, z2};
}

GateNodes laag_gate(Graph& g, int u1, int skip1, int u2, int skip2, int channels,
                    const std::string& prefix, const ParamNodeFn& pnode) {
  for (int node : {u1, skip1, u2, skip2})
    if (g.val(node).shape.size() != 4 || g.val(node).shape[0] != channels)
      throw std::invalid_argument("laag_gate: operand channels mismatch");
  auto logit = [&](int u, int sk) {
    const int a = g.add(
        g.conv3d(u, pnode(prefix + ".gate.wg.w"), pnode(prefix + ".gate.wg.b"), 1, 0),
        g.conv3d(sk, pnode(prefix + ".gate.wx.w"), pnode(prefix + ".gate.wx.b"), 1, 0));
    return g.conv3d(g.leaky_relu(a, 0.0), pnode(prefix + ".gate.psi.w"),
                    pnode(prefix + ".gate.psi.b"), 1, 0);
  };
  const int l1 = logit(u1, skip1);
  const int l2 = logit(u2, skip2);
  GateNodes out;
  out.alpha1 = g.sigmoid(l1);
  const int a2_raw = g.sigmoid(l2);
  const int refined = g.conv3d(g.concat0(out.alpha1, a2_raw),
                               pnode(prefix + ".refine.w"),
                               pnode(prefix + ".refine.b"), 1, 3);
  out.alpha2 = g.sigmoid(g.add(l2, refined));
  out.gated1 = g.mul_bcast0(skip1, out.alpha1);
  out.gated2 = g.mul_bcast0(skip2, out.alpha2);
  return out;
}

ForwardNodes lasnet_forward(Graph& g, int pet1ct, int pet2ct,
                            const LasNetParams& params, bool params_need_grad) {
  const LasNetConfig& cfg = params.cfg;
  cfg.validate();
  if (params.specs.size() != params.values.size())
    throw std::invalid_argument("lasnet_forward: specs and values out of step");
  const std::vector<int> want = {cfg.in_channels, cfg.patch_size, cfg.patch_size,
                                 cfg.patch_size};
  if (g.val(pet1ct).shape != want || g.val(pet2ct).shape != want)
    throw std::invalid_argument("lasnet_forward: input must be [in_channels,P,P,P]");

  ForwardNodes out;
  out.params.reserve(params.specs.size());
  for (const Tensor& t : params.values) out.params.push_back(g.input(t, params_need_grad));
  const ParamNodeFn pnode = [&params, &out](const std::string& name) {
    return out.params[static_cast<size_t>(params.find(name))];
  };

  const int S = cfg.stages();
  std::vector<int> sk1(static_cast<size_t>(S) + 1), sk2(static_cast<size_t>(S) + 1);
  sk1[0] = conv_block(g, pet1ct, cfg.in_channels, cfg.base_dim, cfg.leaky_slope, "enc0",
                      pnode);
  sk2[0] = conv_block(g, pet2ct, cfg.in_channels, cfg.base_dim, cfg.leaky_slope, "enc0",
                      pnode);
  int c1 = sk1[0], c2 = sk2[0];
  for (int s = 0; s < S; ++s) {
    const std::string dn = "down" + std::to_string(s);
    c1 = g.conv3d(c1, pnode(dn + ".w"), pnode(dn + ".b"), 2, 0);
    c2 = g.conv3d(c2, pnode(dn + ".w"), pnode(dn + ".b"), 2, 0);
    std::tie(c1, c2) = lawa_stage(g, c1, c2, cfg, s, pnode);
    sk1[static_cast<size_t>(s) + 1] = c1;
    sk2[static_cast<size_t>(s) + 1] = c2;
  }
  int d1 = sk1[static_cast<size_t>(S)], d2 = sk2[static_cast<size_t>(S)];
  for (int l = S; l >= 1; --l) {
    const std::string dec = "dec" + std::to_string(l);
    const int co = cfg.skip_dim(l - 1);
    const int u1 = g.conv3d(g.upsample_nearest2(d1), pnode(dec + ".up.w"),
                            pnode(dec + ".up.b"), 1, 0);
    const int u2 = g.conv3d(g.upsample_nearest2(d2), pnode(dec + ".up.w"),
                            pnode(dec + ".up.b"), 1, 0);
    const GateNodes gate = laag_gate(g, u1, sk1[static_cast<size_t>(l) - 1], u2,
                                     sk2[static_cast<size_t>(l) - 1], co, dec, pnode);
    d1 = conv_block(g, g.concat0(u1, gate.gated1), 2 * co, co, cfg.leaky_slope,
                    dec + ".block", pnode);
    d2 = conv_block(g, g.concat0(u2, gate.gated2), 2 * co, co, cfg.leaky_slope,
                    dec + ".block", pnode);
  }
  out.logits1 = g.conv3d(d1, pnode("head.w"), pnode("head.b"), 1, 0);
  out.logits2 = g.conv3d(d2, pnode("head.w"), pnode("head.b"), 1, 0);
  return out;
}

std::pair<Tensor, Tensor> lasnet_eval(const Tensor& pet1ct, const Tensor& pet2ct,
                                      const LasNetParams& params) {
  Graph g;
  const int in1 = g.input(pet1ct, false);
  const int in2 = g.input(pet2ct, false);
  const ForwardNodes f = lasnet_forward(g, in1, in2, params, false);
  return {g.val(f.logits1), g.val(f.logits2)};
}

LossNodes joint_loss(Graph& g, int logits1, int logits2,
                     std::shared_ptr<const Tensor> y1,
                     std::shared_ptr<const Tensor> y2) {
  LossNodes out;
  out.bce1 = g.bce_with_logits_mean(logits1, y1);
  out.dice1 = g.soft_dice_loss(logits1, y1);
  out.bce2 = g.bce_with_logits_mean(logits2, y2);
  out.dice2 = g.soft_dice_loss(logits2, y2);
  out.total = g.add(g.add(out.bce1, out.dice1), g.add(out.bce2, out.dice2));
  return out;
}

}  // namespace laspet::nn
