#include "advforge/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unordered_map>
#include <array>
#include <cstdint>

#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "advforge/rng.hpp"
#include "json.hpp"

namespace advforge {

namespace {

using P = DetectorParams;
constexpr int kPad = 3;
constexpr double kMassEps = 1e-6;
constexpr double kGateRate = 3.0;      // input gate g(c) = 1 - exp(-3 c)
constexpr double kLogSizeClamp = 3.0;  // decoded log-size offsets are clamped to +-3
constexpr double kSmoothL1Beta = 1.0 / 9.0;

using Input = std::array<double, P::kIn>;
using Act1 = std::array<double, P::kC1>;
using Act2 = std::array<double, P::kC2>;
using Out = std::array<double, P::kOut>;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double wrap_half_pi(double a) {
  a = std::fmod(a + 0.5 * std::numbers::pi, std::numbers::pi);
  if (a < 0.0) a += std::numbers::pi;
  return a - 0.5 * std::numbers::pi;
}

// ---------------------------------------------------------------------------
// Featurisation with the bookkeeping the gradient needs
// ---------------------------------------------------------------------------

struct FeatureBuild {
  BevFeatures features;
  std::vector<std::int32_t> point_group;  // per point: index into features.cells, or -1
  std::vector<double> s0;                 // per group: sum w * exp((z - zref) / T)
  std::vector<double> zref;
};

FeatureBuild build_features(const PointCloud& cloud, const BevSpec& spec) {
  FeatureBuild b;
  b.features.spec = spec;
  const std::size_t n = cloud.size();
  b.point_group.assign(n, -1);
  std::vector<std::pair<std::int32_t, std::uint32_t>> keyed;
  keyed.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = spec.cell_of(cloud.points[i].position);
    if (c >= 0) keyed.emplace_back(c, static_cast<std::uint32_t>(i));
  }
  std::sort(keyed.begin(), keyed.end());
  const int ny = spec.ny();
  const double T = spec.height_temperature;
  for (std::size_t lo = 0; lo < keyed.size();) {
    std::size_t hi = lo;
    while (hi < keyed.size() && keyed[hi].first == keyed[lo].first) ++hi;
    const std::int32_t cell = keyed[lo].first;
    const Vec2 cc = spec.cell_center(cell / ny, cell % ny);
    const auto g = static_cast<std::int32_t>(b.features.cells.size());
    double w_sum = 0.0, wi = 0.0, wdx = 0.0, wdy = 0.0;
    double zref = -1e300;
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& p = cloud.points[keyed[k].second];
      b.point_group[keyed[k].second] = g;
      w_sum += p.weight;
      wi += p.weight * p.intensity;
      wdx += p.weight * (p.position.x() - cc.x());
      wdy += p.weight * (p.position.y() - cc.y());
      if (p.weight > 0.0) zref = std::max(zref, p.position.z());
    }
    double s0 = 0.0, s1 = 0.0;
    if (zref > -1e299) {
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& p = cloud.points[keyed[k].second];
        const double e = std::exp((p.position.z() - zref) / T);
        s0 += p.weight * e;
        s1 += p.weight * p.position.z() * e;
      }
    }
    std::array<double, kFeatureChannels> v{};
    v[kCount] = w_sum;
    v[kHeight] = s0 > 0.0 ? s1 / s0 : 0.0;
    v[kIntensity] = wi / (w_sum + kMassEps);
    v[kOffsetX] = wdx / (w_sum + kMassEps);
    v[kOffsetY] = wdy / (w_sum + kMassEps);
    b.features.cells.push_back(cell);
    b.features.values.push_back(v);
    b.s0.push_back(s0);
    b.zref.push_back(zref);
    lo = hi;
  }
  return b;
}

// Network input transform. Channels other than the count are gated by the
// cell mass so a cell holding a sliver of soft weight looks nearly empty.
Input network_input(const std::array<double, kFeatureChannels>& f, const BevSpec& spec) {
  const double c = f[kCount];
  const double g = 1.0 - std::exp(-kGateRate * c);
  const double half = 0.5 * spec.cell;
  return {std::log1p(c), f[kHeight] * g, f[kIntensity] * g, f[kOffsetX] / half * g, f[kOffsetY] / half * g};
}

// ---------------------------------------------------------------------------
// Sparse network over an infinite grid: cells further than two steps from any
// point all share one background output.
// ---------------------------------------------------------------------------

class SparseNet {
 public:
  struct Cell {
    int ix, iy;
    int level;  // 0: has input, 1: within one step, 2: within two steps
  };

  SparseNet(const BevFeatures& f, const DetectorParams& params) : spec_(f.spec), p_(params) {
    nx_ = spec_.nx();
    ny_ = spec_.ny();
    stride_ = ny_ + 2 * kPad;
    std::vector<std::int8_t> level(static_cast<std::size_t>((nx_ + 2 * kPad) * stride_), 3);
    for (auto c : f.cells) {
      const int ix = c / ny_, iy = c % ny_;
      for (int dx = -2; dx <= 2; ++dx) {
        for (int dy = -2; dy <= 2; ++dy) {
          const int l = std::max(std::abs(dx), std::abs(dy));
          auto& slot = level[pad_index(ix + dx, iy + dy)];
          slot = static_cast<std::int8_t>(std::min<int>(slot, l));
        }
      }
    }
    slot_.assign(level.size(), -1);
    for (int px = 0; px < nx_ + 2 * kPad; ++px) {
      for (int py = 0; py < stride_; ++py) {
        const auto l = level[static_cast<std::size_t>(px * stride_ + py)];
        if (l > 2) continue;
        slot_[static_cast<std::size_t>(px * stride_ + py)] = static_cast<std::int32_t>(cells_.size());
        cells_.push_back({px - kPad, py - kPad, l});
      }
    }
    x_.assign(cells_.size(), Input{});
    for (std::size_t k = 0; k < f.cells.size(); ++k) {
      x_[static_cast<std::size_t>(slot(f.cells[k] / ny_, f.cells[k] % ny_))] = network_input(f.values[k], spec_);
    }
    forward();
  }

  const std::vector<Cell>& cells() const { return cells_; }
  const Out& out(std::size_t s) const { return out_[s]; }
  const Out& background() const { return out_bg_; }
  const BevSpec& spec() const { return spec_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  bool in_grid(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < nx_ && iy < ny_; }

  std::int32_t slot(int ix, int iy) const {
    if (ix < -kPad || iy < -kPad || ix >= nx_ + kPad || iy >= ny_ + kPad) return -1;
    return slot_[pad_index(ix, iy)];
  }
  const Out& out_at(int ix, int iy) const {
    const auto s = slot(ix, iy);
    return s >= 0 ? out_[static_cast<std::size_t>(s)] : out_bg_;
  }
  std::size_t in_grid_active() const {
    std::size_t n = 0;
    for (const auto& c : cells_) n += in_grid(c.ix, c.iy) ? 1 : 0;
    return n;
  }

  /// Accumulates parameter gradients into `grad` (optional) and input
  /// gradients per slot into `dx` (optional), given output gradients per
  /// slot and the summed gradient over all background cells.
  void backward(const std::vector<Out>& dout, const Out& dout_bg, std::vector<double>* grad,
                std::vector<Input>* dx) const {
    std::vector<double> local(P::kTotal, 0.0);
    double* gw1 = local.data();
    double* gb1 = gw1 + P::kW1;
    double* gw2 = gb1 + P::kB1;
    double* gb2 = gw2 + P::kW2;
    double* gwh = gb2 + P::kB2;
    double* gbh = gwh + P::kWh;
    const double* w1 = p_.w1();
    const double* w2 = p_.w2();
    const double* wh = p_.wh();

    auto head_back = [&](const Out& d, const Act2& a2, const Act2& z2, Act2& dz2) {
      Act2 da2{};
      for (int o = 0; o < P::kOut; ++o) {
        if (d[o] == 0.0) continue;
        gbh[o] += d[o];
        for (int j = 0; j < P::kC2; ++j) {
          gwh[o * P::kC2 + j] += d[o] * a2[j];
          da2[j] += wh[o * P::kC2 + j] * d[o];
        }
      }
      for (int j = 0; j < P::kC2; ++j) dz2[j] = z2[j] > 0.0 ? da2[j] : 0.0;
    };

    const std::size_t n = cells_.size();
    std::vector<Act1> da1(n, Act1{});
    Act1 da1_bg{};
    for (std::size_t s = 0; s < n; ++s) {
      Act2 dz2;
      head_back(dout[s], a2_[s], z2_[s], dz2);
      bool any = false;
      for (double v : dz2) any |= v != 0.0;
      if (!any) continue;
      for (int o = 0; o < P::kC2; ++o) gb2[o] += dz2[o];
      for (int dxk = -1; dxk <= 1; ++dxk) {
        for (int dyk = -1; dyk <= 1; ++dyk) {
          const int k = (dxk + 1) * 3 + (dyk + 1);
          const auto nb = slot(cells_[s].ix + dxk, cells_[s].iy + dyk);
          const bool own = nb >= 0 && cells_[static_cast<std::size_t>(nb)].level <= 1;
          const Act1& a1 = own ? a1_[static_cast<std::size_t>(nb)] : a1_bg_;
          Act1& target = own ? da1[static_cast<std::size_t>(nb)] : da1_bg;
          for (int o = 0; o < P::kC2; ++o) {
            if (dz2[o] == 0.0) continue;
            for (int j = 0; j < P::kC1; ++j) {
              const std::size_t wi = static_cast<std::size_t>((o * P::kC1 + j) * 9 + k);
              gw2[wi] += dz2[o] * a1[j];
              target[j] += w2[wi] * dz2[o];
            }
          }
        }
      }
    }
    {
      Act2 dz2;
      head_back(dout_bg, a2_bg_, z2_bg_, dz2);
      for (int o = 0; o < P::kC2; ++o) {
        if (dz2[o] == 0.0) continue;
        gb2[o] += dz2[o];
        for (int k = 0; k < 9; ++k) {
          for (int j = 0; j < P::kC1; ++j) {
            const std::size_t wi = static_cast<std::size_t>((o * P::kC1 + j) * 9 + k);
            gw2[wi] += dz2[o] * a1_bg_[j];
            da1_bg[j] += w2[wi] * dz2[o];
          }
        }
      }
    }
    if (dx) dx->assign(n, Input{});
    for (std::size_t s = 0; s < n; ++s) {
      if (cells_[s].level > 1) continue;
      Act1 dz1;
      bool any = false;
      for (int o = 0; o < P::kC1; ++o) {
        dz1[o] = z1_[s][o] > 0.0 ? da1[s][o] : 0.0;
        any |= dz1[o] != 0.0;
      }
      if (!any) continue;
      for (int o = 0; o < P::kC1; ++o) gb1[o] += dz1[o];
      for (int dxk = -1; dxk <= 1; ++dxk) {
        for (int dyk = -1; dyk <= 1; ++dyk) {
          const int k = (dxk + 1) * 3 + (dyk + 1);
          const auto nb = slot(cells_[s].ix + dxk, cells_[s].iy + dyk);
          if (nb < 0 || cells_[static_cast<std::size_t>(nb)].level != 0) continue;
          const Input& xin = x_[static_cast<std::size_t>(nb)];
          for (int o = 0; o < P::kC1; ++o) {
            if (dz1[o] == 0.0) continue;
            for (int i = 0; i < P::kIn; ++i) {
              const std::size_t wi = static_cast<std::size_t>((o * P::kIn + i) * 9 + k);
              gw1[wi] += dz1[o] * xin[i];
              if (dx) (*dx)[static_cast<std::size_t>(nb)][i] += w1[wi] * dz1[o];
            }
          }
        }
      }
    }
    // Background first layer: zero input, so only the bias sees a gradient.
    for (int o = 0; o < P::kC1; ++o) {
      if (p_.b1()[o] > 0.0) gb1[o] += da1_bg[o];
    }
    if (grad) {
      for (std::size_t i = 0; i < P::kTotal; ++i) (*grad)[i] += local[i];
    }
  }

 private:
  std::size_t pad_index(int ix, int iy) const {
    return static_cast<std::size_t>((ix + kPad) * stride_ + (iy + kPad));
  }

  void forward() {
    const double* w1 = p_.w1();
    const double* b1 = p_.b1();
    const double* w2 = p_.w2();
    const double* b2 = p_.b2();
    const double* wh = p_.wh();
    const double* bh = p_.bh();
    const std::size_t n = cells_.size();
    z1_.assign(n, Act1{});
    a1_.assign(n, Act1{});
    for (int o = 0; o < P::kC1; ++o) a1_bg_[o] = std::max(0.0, b1[o]);
    for (std::size_t s = 0; s < n; ++s) {
      if (cells_[s].level > 1) continue;
      Act1 z;
      for (int o = 0; o < P::kC1; ++o) z[o] = b1[o];
      for (int dxk = -1; dxk <= 1; ++dxk) {
        for (int dyk = -1; dyk <= 1; ++dyk) {
          const int k = (dxk + 1) * 3 + (dyk + 1);
          const auto nb = slot(cells_[s].ix + dxk, cells_[s].iy + dyk);
          if (nb < 0 || cells_[static_cast<std::size_t>(nb)].level != 0) continue;
          const Input& xin = x_[static_cast<std::size_t>(nb)];
          for (int o = 0; o < P::kC1; ++o) {
            for (int i = 0; i < P::kIn; ++i) z[o] += w1[(o * P::kIn + i) * 9 + k] * xin[i];
          }
        }
      }
      z1_[s] = z;
      for (int o = 0; o < P::kC1; ++o) a1_[s][o] = std::max(0.0, z[o]);
    }
    auto second = [&](auto&& a1_of, Act2& z2, Act2& a2, Out& out) {
      for (int o = 0; o < P::kC2; ++o) z2[o] = b2[o];
      for (int k = 0; k < 9; ++k) {
        const Act1& a1 = a1_of(k);
        for (int o = 0; o < P::kC2; ++o) {
          for (int j = 0; j < P::kC1; ++j) z2[o] += w2[(o * P::kC1 + j) * 9 + k] * a1[j];
        }
      }
      for (int j = 0; j < P::kC2; ++j) a2[j] = std::max(0.0, z2[j]);
      for (int o = 0; o < P::kOut; ++o) {
        double v = bh[o];
        for (int j = 0; j < P::kC2; ++j) v += wh[o * P::kC2 + j] * a2[j];
        out[o] = v;
      }
    };
    z2_.assign(n, Act2{});
    a2_.assign(n, Act2{});
    out_.assign(n, Out{});
    for (std::size_t s = 0; s < n; ++s) {
      second(
          [&](int k) -> const Act1& {
            const auto nb = slot(cells_[s].ix + k / 3 - 1, cells_[s].iy + k % 3 - 1);
            if (nb >= 0 && cells_[static_cast<std::size_t>(nb)].level <= 1) return a1_[static_cast<std::size_t>(nb)];
            return a1_bg_;
          },
          z2_[s], a2_[s], out_[s]);
    }
    second([&](int) -> const Act1& { return a1_bg_; }, z2_bg_, a2_bg_, out_bg_);
  }

  BevSpec spec_;
  const DetectorParams& p_;
  int nx_ = 0, ny_ = 0, stride_ = 0;
  std::vector<std::int32_t> slot_;
  std::vector<Cell> cells_;
  std::vector<Input> x_;
  std::vector<Act1> z1_, a1_;
  std::vector<Act2> z2_, a2_;
  std::vector<Out> out_;
  Act1 a1_bg_{};
  Act2 z2_bg_{}, a2_bg_{};
  Out out_bg_{};
};

Box3D decode_box(const Out& out, int ix, int iy, const BevSpec& spec) {
  const Vec2 c = spec.cell_center(ix, iy);
  Box3D b;
  b.center = Vec3(c.x() + out[1], c.y() + out[2], kAnchorCenterZ + out[3]);
  b.size = Vec3(kAnchorLength * std::exp(std::clamp(out[4], -kLogSizeClamp, kLogSizeClamp)),
                kAnchorWidth * std::exp(std::clamp(out[5], -kLogSizeClamp, kLogSizeClamp)),
                kAnchorHeight * std::exp(std::clamp(out[6], -kLogSizeClamp, kLogSizeClamp)));
  b.yaw = normalize_yaw(std::atan2(c.y(), c.x()) + std::numbers::pi + out[7]);
  return b;
}

Out regression_target(const Box3D& gt, int ix, int iy, const BevSpec& spec) {
  const Vec2 c = spec.cell_center(ix, iy);
  Out t{};
  t[1] = gt.center.x() - c.x();
  t[2] = gt.center.y() - c.y();
  t[3] = gt.center.z() - kAnchorCenterZ;
  t[4] = std::log(gt.size.x() / kAnchorLength);
  t[5] = std::log(gt.size.y() / kAnchorWidth);
  t[6] = std::log(gt.size.z() / kAnchorHeight);
  t[7] = wrap_half_pi(gt.yaw - (std::atan2(c.y(), c.x()) + std::numbers::pi));
  return t;
}

struct CellChoice {
  std::int32_t slot = -1;  // -1 means a background cell
  int ix = 0, iy = 0;
  double logit = -1e300;
  bool found = false;
};

bool better(double logit, std::int32_t cell, const CellChoice& best, int ny) {
  if (!best.found) return true;
  if (logit != best.logit) return logit > best.logit;
  return cell < best.ix * ny + best.iy;
}

// Highest-logit in-grid cell, optionally restricted to boxes passing the gate.
CellChoice best_cell(const SparseNet& net, const std::optional<Box3D>& gt, double gate) {
  const BevSpec& spec = net.spec();
  const int ny = net.ny();
  CellChoice best;
  auto consider = [&](std::int32_t slot, int ix, int iy, const Out& out) {
    if (gt && !(iou3d(decode_box(out, ix, iy, spec), *gt) > gate)) return;
    if (better(out[0], ix * ny + iy, best, ny)) best = {slot, ix, iy, out[0], true};
  };
  const auto& cells = net.cells();
  for (std::size_t s = 0; s < cells.size(); ++s) {
    if (net.in_grid(cells[s].ix, cells[s].iy)) consider(static_cast<std::int32_t>(s), cells[s].ix, cells[s].iy, net.out(s));
  }
  const Out& bg = net.background();
  if (net.in_grid_active() == static_cast<std::size_t>(net.nx()) * static_cast<std::size_t>(net.ny())) return best;
  if (!gt) {
    // Any background cell ties; the lowest index wins ties.
    for (int ix = 0; ix < net.nx(); ++ix) {
      for (int iy = 0; iy < net.ny(); ++iy) {
        if (net.slot(ix, iy) >= 0) continue;
        consider(-1, ix, iy, bg);
        return best;
      }
    }
    return best;
  }
  // Background cells whose decoded box can reach the gt footprint.
  const Box3D probe = decode_box(bg, 0, 0, spec);
  const double reach = 0.5 * (std::hypot(gt->size.x(), gt->size.y()) + std::hypot(probe.size.x(), probe.size.y()));
  const double cx = gt->center.x() - bg[1], cy = gt->center.y() - bg[2];
  const int ix0 = std::max(0, static_cast<int>(std::floor((cx - reach - spec.x_min) / spec.cell)) - 1);
  const int ix1 = std::min(net.nx() - 1, static_cast<int>(std::floor((cx + reach - spec.x_min) / spec.cell)) + 1);
  const int iy0 = std::max(0, static_cast<int>(std::floor((cy - reach - spec.y_min) / spec.cell)) - 1);
  const int iy1 = std::min(net.ny() - 1, static_cast<int>(std::floor((cy + reach - spec.y_min) / spec.cell)) + 1);
  for (int ix = ix0; ix <= ix1; ++ix) {
    for (int iy = iy0; iy <= iy1; ++iy) {
      if (net.slot(ix, iy) < 0) consider(-1, ix, iy, bg);
    }
  }
  return best;
}

double focal_pos(double x, double alpha, double gamma, double* d) {
  const double p = sigmoid(x);
  const double logp = -softplus(-x);
  const double q = std::pow(1.0 - p, gamma);
  *d = alpha * q * (gamma * p * logp - (1.0 - p));
  return -alpha * q * logp;
}

double focal_neg(double x, double alpha, double gamma, double* d) {
  const double p = sigmoid(x);
  const double log1mp = -softplus(x);
  const double q = std::pow(p, gamma);
  *d = (1.0 - alpha) * q * (p - gamma * (1.0 - p) * log1mp);
  return -(1.0 - alpha) * q * log1mp;
}

double smooth_l1(double diff, double* d) {
  if (std::abs(diff) < kSmoothL1Beta) {
    *d = diff / kSmoothL1Beta;
    return 0.5 * diff * diff / kSmoothL1Beta;
  }
  *d = diff > 0.0 ? 1.0 : -1.0;
  return std::abs(diff) - 0.5 * kSmoothL1Beta;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::kIo, "truncated params file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  return lo | static_cast<std::uint64_t>(get_u32(in)) << 32;
}

constexpr char kMagic[8] = {'A', 'D', 'V', 'F', 'D', 'E', 'T', '1'};
constexpr std::uint32_t kParamsVersion = 1;
constexpr std::array<std::size_t, 6> kTensorSizes{P::kW1, P::kB1, P::kW2, P::kB2, P::kWh, P::kBh};

}  // namespace

// ---------------------------------------------------------------------------

std::int32_t BevSpec::cell_of(const Vec3& p) const {
  if (!(p.z() >= z_min && p.z() <= z_max)) return -1;
  if (!(p.x() >= x_min && p.x() < x_max && p.y() >= y_min && p.y() < y_max)) return -1;
  const int ix = std::min(nx() - 1, static_cast<int>((p.x() - x_min) / cell));
  const int iy = std::min(ny() - 1, static_cast<int>((p.y() - y_min) / cell));
  return ix * ny() + iy;
}

double BevFeatures::at(int ix, int iy, int channel) const {
  const std::int32_t key = ix * spec.ny() + iy;
  const auto it = std::lower_bound(cells.begin(), cells.end(), key);
  if (it == cells.end() || *it != key) return 0.0;
  return values[static_cast<std::size_t>(it - cells.begin())][static_cast<std::size_t>(channel)];
}

BevFeatures featurize(const PointCloud& cloud, const BevSpec& spec) { return build_features(cloud, spec).features; }

std::uint64_t DetectorParams::topology_hash() {
  return derive_seed({0x626576ULL, static_cast<std::uint64_t>(kIn), static_cast<std::uint64_t>(kC1),
                      static_cast<std::uint64_t>(kC2), static_cast<std::uint64_t>(kOut), 3, 3});
}

DetectorParams DetectorParams::initial(std::uint64_t seed) {
  DetectorParams p;
  Rng rng(derive_seed({seed, 0x696e6974ULL}));
  auto fill = [&](std::size_t offset, std::size_t count, double fan_in) {
    const double s = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < count; ++i) p.values[offset + i] = s * rng.normal();
  };
  fill(0, kW1, kIn * 9.0);
  fill(kW1 + kB1, kW2, kC1 * 9.0);
  const std::size_t wh = kW1 + kB1 + kW2 + kB2;
  fill(wh, kWh, kC2);
  for (std::size_t i = 0; i < kWh; ++i) p.values[wh + i] *= 0.1;
  for (std::size_t o = 0; o < kB1; ++o) p.values[kW1 + o] = 0.01;
  p.values[wh + kWh] = -std::log((1.0 - 0.01) / 0.01);
  p.round_to_float();
  return p;
}

bool DetectorParams::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void DetectorParams::round_to_float() {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::vector<Detection> candidates(const PointCloud& cloud, const DetectorParams& params, double min_conf,
                                  const BevSpec& spec) {
  const auto f = featurize(cloud, spec);
  const SparseNet net(f, params);
  const int ny = net.ny();
  std::vector<Detection> out;
  const auto& cells = net.cells();
  for (std::size_t s = 0; s < cells.size(); ++s) {
    if (!net.in_grid(cells[s].ix, cells[s].iy)) continue;
    const double conf = sigmoid(net.out(s)[0]);
    if (conf >= min_conf) out.push_back({decode_box(net.out(s), cells[s].ix, cells[s].iy, spec), conf, cells[s].ix * ny + cells[s].iy});
  }
  const double bg_conf = sigmoid(net.background()[0]);
  if (bg_conf >= min_conf) {
    for (int ix = 0; ix < net.nx(); ++ix) {
      for (int iy = 0; iy < ny; ++iy) {
        if (net.slot(ix, iy) < 0) out.push_back({decode_box(net.background(), ix, iy, spec), bg_conf, ix * ny + iy});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.confidence != b.confidence ? a.confidence > b.confidence : a.cell < b.cell;
  });
  return out;
}

namespace {

// Kept boxes bucketed by the cells their bounding circles touch.
class KeptIndex {
 public:
  static constexpr double kBucket = 1.0;
  static constexpr std::int64_t kMaxSpan = 64;

  template <class F>
  bool any_near(const Box3D& b, F&& pred) const {
    for (const std::size_t i : large_) {
      if (pred(i)) return true;
    }
    const auto r = range(b);
    for (std::int64_t x = r[0]; x <= r[2]; ++x) {
      for (std::int64_t y = r[1]; y <= r[3]; ++y) {
        const auto it = buckets_.find(key(x, y));
        if (it == buckets_.end()) continue;
        for (const std::size_t i : it->second) {
          if (pred(i)) return true;
        }
      }
    }
    return false;
  }

  void insert(const Box3D& b, std::size_t i) {
    const auto r = range(b);
    if (r[2] - r[0] > kMaxSpan || r[3] - r[1] > kMaxSpan) {
      large_.push_back(i);
      return;
    }
    for (std::int64_t x = r[0]; x <= r[2]; ++x) {
      for (std::int64_t y = r[1]; y <= r[3]; ++y) buckets_[key(x, y)].push_back(i);
    }
  }

 private:
  static std::int64_t key(std::int64_t x, std::int64_t y) { return (x << 32) ^ (y & 0xffffffff); }
  static std::array<std::int64_t, 4> range(const Box3D& b) {
    const double r = 0.5 * std::hypot(b.size.x(), b.size.y()) + 1e-6;
    auto lo = [](double v) { return static_cast<std::int64_t>(std::floor(v / kBucket)); };
    return {lo(b.center.x() - r), lo(b.center.y() - r), lo(b.center.x() + r), lo(b.center.y() + r)};
  }

  std::unordered_map<std::int64_t, std::vector<std::size_t>> buckets_;
  std::vector<std::size_t> large_;
};

}  // namespace

std::vector<Detection> nms(std::span<const Detection> sorted, double iou_threshold) {
  std::vector<Detection> kept;
  if (iou_threshold < 0.0 || !std::all_of(sorted.begin(), sorted.end(), [](const Detection& d) {
        return std::isfinite(d.box.center.x()) && std::isfinite(d.box.center.y()) && std::isfinite(d.box.size.x()) &&
               std::isfinite(d.box.size.y());
      })) {
    for (const auto& d : sorted) {
      const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
        return bev_iou(k.box, d.box) > iou_threshold;
      });
      if (!suppressed) kept.push_back(d);
    }
    return kept;
  }
  // Boxes whose bounding circles are disjoint have zero overlap, so only nearby kept boxes are tested.
  KeptIndex index;
  for (const auto& d : sorted) {
    const bool suppressed = index.any_near(d.box, [&](std::size_t i) { return bev_iou(kept[i].box, d.box) > iou_threshold; });
    if (!suppressed) {
      index.insert(d.box, kept.size());
      kept.push_back(d);
    }
  }
  return kept;
}

std::vector<Detection> detect(const PointCloud& cloud, const DetectorParams& params, double conf_threshold,
                              const BevSpec& spec) {
  const auto all = candidates(cloud, params, conf_threshold, spec);
  return nms(all);
}

FeatureGradient feature_confidence_gradient(const BevFeatures& features, const DetectorParams& params,
                                            const std::optional<Box3D>& gt, double iou_gate) {
  const BevSpec& spec = features.spec;
  const SparseNet net(features, params);
  FeatureGradient result;
  result.d_features.assign(features.cells.size(), FeatureVector{});
  const CellChoice best = best_cell(net, gt, iou_gate);
  if (!best.found) return result;
  result.matched = true;
  result.cell = best.ix * net.ny() + best.iy;
  const double p = sigmoid(best.logit);
  result.confidence = p;
  if (best.slot < 0) return result;  // background cells do not depend on any point

  std::vector<Out> dout(net.cells().size(), Out{});
  dout[static_cast<std::size_t>(best.slot)][0] = p * (1.0 - p);
  std::vector<Input> dx;
  net.backward(dout, Out{}, nullptr, &dx);

  // Transpose of the input transform's Jacobian.
  const double half = 0.5 * spec.cell;
  const int ny = spec.ny();
  for (std::size_t k = 0; k < features.cells.size(); ++k) {
    const std::int32_t cell = features.cells[k];
    const Input& dl = dx[static_cast<std::size_t>(net.slot(cell / ny, cell % ny))];
    const auto& f = features.values[k];
    const double c = f[kCount];
    const double gate = 1.0 - std::exp(-kGateRate * c);
    const double dgate = kGateRate * std::exp(-kGateRate * c);
    FeatureVector& d = result.d_features[k];
    d[kCount] = dl[0] / (1.0 + c) +
                dgate * (dl[1] * f[kHeight] + dl[2] * f[kIntensity] + (dl[3] * f[kOffsetX] + dl[4] * f[kOffsetY]) / half);
    d[kHeight] = dl[1] * gate;
    d[kIntensity] = dl[2] * gate;
    d[kOffsetX] = dl[3] * gate / half;
    d[kOffsetY] = dl[4] * gate / half;
  }
  return result;
}

ConfidenceGradient confidence_gradient(const PointCloud& cloud, const DetectorParams& params,
                                       const std::optional<Box3D>& gt, double iou_gate, const BevSpec& spec) {
  const FeatureBuild fb = build_features(cloud, spec);
  const FeatureGradient fg = feature_confidence_gradient(fb.features, params, gt, iou_gate);
  ConfidenceGradient result;
  result.confidence = fg.confidence;
  result.matched = fg.matched;
  result.cell = fg.cell;
  result.d_weight.assign(cloud.size(), 0.0);
  if (!fg.matched) return result;

  const double T = spec.height_temperature;
  const int ny = spec.ny();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto g = fb.point_group[i];
    if (g < 0) continue;
    const auto gi = static_cast<std::size_t>(g);
    const std::int32_t cell = fb.features.cells[gi];
    const auto& f = fb.features.values[gi];
    const auto& dl = fg.d_features[gi];
    const auto& pt = cloud.points[i];
    const Vec2 cc = spec.cell_center(cell / ny, cell % ny);
    const double mass = f[kCount] + kMassEps;
    const double dh = fb.s0[gi] > 0.0
                          ? std::exp((pt.position.z() - fb.zref[gi]) / T) * (pt.position.z() - f[kHeight]) / fb.s0[gi]
                          : 0.0;
    result.d_weight[i] = dl[kCount] + dl[kHeight] * dh + dl[kIntensity] * (pt.intensity - f[kIntensity]) / mass +
                         dl[kOffsetX] * ((pt.position.x() - cc.x()) - f[kOffsetX]) / mass +
                         dl[kOffsetY] * ((pt.position.y() - cc.y()) - f[kOffsetY]) / mass;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Moment mixture
// ---------------------------------------------------------------------------

BevMixture::BevMixture(const PointCloud& fixed, std::span<const PointCloud> components, const BevSpec& spec)
    : spec_(spec) {
  // Union of cells and the per-cell reference height (max z of any point).
  std::vector<std::pair<std::int32_t, double>> keyed;
  auto collect = [&](const PointCloud& c) {
    for (const auto& p : c.points) {
      const auto cell = spec.cell_of(p.position);
      if (cell >= 0) keyed.emplace_back(cell, p.position.z());
    }
  };
  collect(fixed);
  for (const auto& c : components) collect(c);
  std::sort(keyed.begin(), keyed.end());
  std::vector<double> zref;
  for (const auto& [cell, z] : keyed) {
    if (cells_.empty() || cells_.back() != cell) {
      cells_.push_back(cell);
      zref.push_back(z);
    } else {
      zref.back() = std::max(zref.back(), z);
    }
  }
  const int ny = spec.ny();
  auto accumulate = [&](const PointCloud& c, double scale, auto&& sink) {
    for (const auto& p : c.points) {
      const auto cell = spec.cell_of(p.position);
      if (cell < 0) continue;
      const auto k = static_cast<std::size_t>(std::lower_bound(cells_.begin(), cells_.end(), cell) - cells_.begin());
      const Vec2 cc = spec.cell_center(cell / ny, cell % ny);
      const double w = p.weight * scale;
      const double e = std::exp((p.position.z() - zref[k]) / spec.height_temperature);
      sink(k, Moments{w, w * p.intensity, w * (p.position.x() - cc.x()), w * (p.position.y() - cc.y()), w * e,
                      w * p.position.z() * e});
    }
  };
  fixed_.assign(cells_.size(), Moments{});
  accumulate(fixed, 1.0, [&](std::size_t k, const Moments& m) {
    for (int j = 0; j < 6; ++j) fixed_[k][j] += m[j];
  });
  for (const auto& c : components) {
    std::vector<std::pair<std::uint32_t, Moments>> sparse;
    accumulate(c, 1.0, [&](std::size_t k, const Moments& m) { sparse.emplace_back(static_cast<std::uint32_t>(k), m); });
    std::stable_sort(sparse.begin(), sparse.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<std::uint32_t, Moments>> merged;
    for (const auto& [k, m] : sparse) {
      if (merged.empty() || merged.back().first != k) {
        merged.emplace_back(k, m);
      } else {
        for (int j = 0; j < 6; ++j) merged.back().second[j] += m[j];
      }
    }
    component_cells_.push_back(std::move(merged));
  }
}

std::vector<BevMixture::Moments> BevMixture::moments(std::span<const double> factors) const {
  if (factors.size() != component_cells_.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "mixture factor count does not match component count");
  }
  std::vector<Moments> m = fixed_;
  for (std::size_t i = 0; i < component_cells_.size(); ++i) {
    const double f = factors[i];
    for (const auto& [k, cm] : component_cells_[i]) {
      for (int j = 0; j < 6; ++j) m[k][j] += f * cm[j];
    }
  }
  return m;
}

BevFeatures BevMixture::features(std::span<const double> factors) const {
  const auto m = moments(factors);
  BevFeatures f;
  f.spec = spec_;
  f.cells = cells_;
  f.values.resize(cells_.size());
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    const auto& mk = m[k];
    auto& v = f.values[k];
    v[kCount] = mk[0];
    v[kHeight] = mk[4] > 0.0 ? mk[5] / mk[4] : 0.0;
    v[kIntensity] = mk[1] / (mk[0] + kMassEps);
    v[kOffsetX] = mk[2] / (mk[0] + kMassEps);
    v[kOffsetY] = mk[3] / (mk[0] + kMassEps);
  }
  return f;
}

std::vector<double> BevMixture::factor_gradient(std::span<const double> factors,
                                                std::span<const FeatureVector> d_features) const {
  const auto m = moments(factors);
  // d loss / d moments per cell.
  std::vector<Moments> dm(cells_.size(), Moments{});
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    const auto& mk = m[k];
    const auto& d = d_features[k];
    const double mass = mk[0] + kMassEps;
    dm[k][0] = d[kCount] - (d[kIntensity] * mk[1] + d[kOffsetX] * mk[2] + d[kOffsetY] * mk[3]) / (mass * mass);
    dm[k][1] = d[kIntensity] / mass;
    dm[k][2] = d[kOffsetX] / mass;
    dm[k][3] = d[kOffsetY] / mass;
    if (mk[4] > 0.0) {
      dm[k][4] = -d[kHeight] * mk[5] / (mk[4] * mk[4]);
      dm[k][5] = d[kHeight] / mk[4];
    }
  }
  std::vector<double> g(component_cells_.size(), 0.0);
  for (std::size_t i = 0; i < component_cells_.size(); ++i) {
    double acc = 0.0;
    for (const auto& [k, cm] : component_cells_[i]) {
      for (int j = 0; j < 6; ++j) acc += dm[k][j] * cm[j];
    }
    g[i] = acc;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double scene_loss(const BevFeatures& features, const std::optional<Box3D>& gt, const DetectorParams& params,
                  const TrainHyper& hyper, std::vector<double>* grad) {
  if (grad && grad->size() != P::kTotal) grad->assign(P::kTotal, 0.0);
  const SparseNet net(features, params);
  const BevSpec& spec = features.spec;
  const int nx = net.nx(), ny = net.ny();
  const double alpha = hyper.focal_alpha, gamma = hyper.focal_gamma;

  int gx = -1000, gy = -1000;
  bool has_pos = false;
  if (gt) {
    const double fx = (gt->center.x() - spec.x_min) / spec.cell;
    const double fy = (gt->center.y() - spec.y_min) / spec.cell;
    if (fx >= 0.0 && fy >= 0.0 && fx < nx && fy < ny) {
      gx = static_cast<int>(fx);
      gy = static_cast<int>(fy);
      has_pos = true;
    }
  }
  auto role = [&](int ix, int iy) {  // 0 negative, 1 positive, 2 ignored
    if (!has_pos) return 0;
    const int d = std::max(std::abs(ix - gx), std::abs(iy - gy));
    return d == 0 ? 1 : (d == 1 ? 2 : 0);
  };
  const double cls_norm = 1.0;
  int n_reg = 0;
  for (int dx = -1; dx <= 1; ++dx) {
    for (int dy = -1; dy <= 1; ++dy) n_reg += has_pos && net.in_grid(gx + dx, gy + dy) ? 1 : 0;
  }

  double loss = 0.0;
  const auto& cells = net.cells();
  std::vector<Out> dout(cells.size(), Out{});
  Out dout_bg{};
  std::size_t special_bg = 0;

  auto cell_terms = [&](int ix, int iy, const Out& out, Out& d) {
    const int r = role(ix, iy);
    double dl = 0.0;
    if (r == 0) {
      loss += focal_neg(out[0], alpha, gamma, &dl) / cls_norm;
      d[0] += dl / cls_norm;
    } else if (r == 1) {
      loss += focal_pos(out[0], alpha, gamma, &dl) / cls_norm;
      d[0] += dl / cls_norm;
    }
    if (has_pos && std::abs(ix - gx) <= 1 && std::abs(iy - gy) <= 1) {
      const Out t = regression_target(*gt, ix, iy, spec);
      for (int k = 1; k < P::kOut; ++k) {
        double dr = 0.0;
        loss += hyper.regression_weight * smooth_l1(out[k] - t[k], &dr) / n_reg;
        d[k] += hyper.regression_weight * dr / n_reg;
      }
    }
  };

  for (std::size_t s = 0; s < cells.size(); ++s) {
    if (net.in_grid(cells[s].ix, cells[s].iy)) cell_terms(cells[s].ix, cells[s].iy, net.out(s), dout[s]);
  }
  // The 3x3 block around the gt centre may lie in the background.
  if (has_pos) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        const int ix = gx + dx, iy = gy + dy;
        if (!net.in_grid(ix, iy) || net.slot(ix, iy) >= 0) continue;
        cell_terms(ix, iy, net.background(), dout_bg);
        ++special_bg;
      }
    }
  }
  const std::size_t n_bg = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) - net.in_grid_active() - special_bg;
  if (n_bg > 0) {
    double dl = 0.0;
    loss += static_cast<double>(n_bg) * focal_neg(net.background()[0], alpha, gamma, &dl) / cls_norm;
    dout_bg[0] += static_cast<double>(n_bg) * dl / cls_norm;
  }
  if (grad) net.backward(dout, dout_bg, grad, nullptr);
  return loss;
}

TrainResult train(const SceneSampler& sampler, int n_scenes, const TrainHyper& hyper, const BevSpec& spec) {
  if (n_scenes < 0 || hyper.epochs < 0 || hyper.batch < 1 || !(hyper.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid training hyper-parameters");
  }
  struct Sample {
    BevFeatures features;
    std::optional<Box3D> gt;
  };
  std::vector<Sample> data(static_cast<std::size_t>(n_scenes));
  parallel_for(data.size(), [&](std::size_t i) {
    TrainingScene scene = sampler.sample(i);
    data[i] = {featurize(scene.cloud, spec), scene.gt};
  });
  const auto positives = std::count_if(data.begin(), data.end(), [](const Sample& s) { return s.gt.has_value(); });
  if (positives == 0) throw Error(ErrorCode::kNoPositiveScenes, "training needs at least one pedestrian scene");

  TrainResult result;
  DetectorParams params = DetectorParams::initial(hyper.seed);
  std::vector<double> m(P::kTotal, 0.0), v(P::kTotal, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  long step = 0;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed({hyper.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch), order.size() - start);
      std::vector<std::vector<double>> grads(count, std::vector<double>(P::kTotal, 0.0));
      std::vector<double> losses(count, 0.0);
      parallel_for(count, [&](std::size_t k) {
        const Sample& s = data[order[start + k]];
        losses[k] = scene_loss(s.features, s.gt, params, hyper, &grads[k]);
      });
      std::vector<double> g(P::kTotal, 0.0);
      for (std::size_t k = 0; k < count; ++k) {
        epoch_loss += losses[k];
        for (std::size_t i = 0; i < P::kTotal; ++i) g[i] += grads[k][i] / static_cast<double>(count);
      }
      if (!std::isfinite(epoch_loss)) throw Error(ErrorCode::kDivergedTraining, "training loss is not finite");
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < P::kTotal; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        params.values[i] -= hyper.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
      }
    }
    if (!params.finite()) throw Error(ErrorCode::kDivergedTraining, "parameters became non-finite");
    result.epoch_loss.push_back(data.empty() ? 0.0 : epoch_loss / static_cast<double>(data.size()));
  }
  params.round_to_float();

  const int n_eval = std::max(0, hyper.held_out_scenes);
  std::vector<char> hit(static_cast<std::size_t>(n_eval), 0);
  parallel_for(hit.size(), [&](std::size_t k) {
    const TrainingScene scene = sampler.held_out(k);
    if (!scene.gt) return;
    for (const auto& d : detect(scene.cloud, params, kDefaultConfThreshold, spec)) {
      if (iou3d(d.box, *scene.gt) > 0.5) {
        hit[k] = 1;
        break;
      }
    }
  });
  result.held_out_n = n_eval;
  result.held_out_dsr = n_eval > 0 ? 100.0 * static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / n_eval : 0.0;
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Params I/O
// ---------------------------------------------------------------------------

void save_params(const DetectorParams& params, const ParamsMetadata& meta, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kParamsVersion);
    put_u64(out, DetectorParams::topology_hash());
    put_u32(out, static_cast<std::uint32_t>(kTensorSizes.size()));
    std::size_t offset = 0;
    for (auto n : kTensorSizes) {
      put_u32(out, static_cast<std::uint32_t>(n));
      for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(params.values[offset + i])));
      offset += n;
    }
    if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
  }
  nlohmann::ordered_json j;
  j["format"] = "advforge-detector";
  j["version"] = kParamsVersion;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(DetectorParams::topology_hash()));
  j["topology_hash"] = hash;
  j["seed"] = meta.seed;
  j["n_scenes"] = meta.n_scenes;
  j["hyper"] = {{"epochs", meta.hyper.epochs},
                {"batch", meta.hyper.batch},
                {"learning_rate", meta.hyper.learning_rate},
                {"focal_alpha", meta.hyper.focal_alpha},
                {"focal_gamma", meta.hyper.focal_gamma},
                {"regression_weight", meta.hyper.regression_weight},
                {"held_out_scenes", meta.hyper.held_out_scenes}};
  j["held_out_dsr"] = meta.held_out_dsr;
  j["held_out_n"] = meta.held_out_n;
  std::ofstream out(path.string() + ".json");
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string() + ".json");
  out << j.dump(2) << '\n';
}

DetectorParams load_params(const std::filesystem::path& path, ParamsMetadata* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open params file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw Error(ErrorCode::kIo, path.string() + ": not a detector params file");
  }
  if (get_u32(in) != kParamsVersion) throw Error(ErrorCode::kIo, path.string() + ": unsupported params version");
  if (get_u64(in) != DetectorParams::topology_hash()) throw Error(ErrorCode::kIo, path.string() + ": topology mismatch");
  if (get_u32(in) != kTensorSizes.size()) throw Error(ErrorCode::kIo, path.string() + ": unexpected tensor count");
  DetectorParams p;
  std::size_t offset = 0;
  for (auto n : kTensorSizes) {
    if (get_u32(in) != n) throw Error(ErrorCode::kIo, path.string() + ": unexpected tensor size");
    for (std::size_t i = 0; i < n; ++i) p.values[offset + i] = std::bit_cast<float>(get_u32(in));
    offset += n;
  }
  if (!p.finite()) throw Error(ErrorCode::kIo, path.string() + ": non-finite parameters");
  if (meta) {
    *meta = ParamsMetadata{};
    std::ifstream mj(path.string() + ".json");
    if (mj) {
      try {
        const auto j = nlohmann::json::parse(mj);
        meta->seed = j.value("seed", std::uint64_t{0});
        meta->n_scenes = j.value("n_scenes", 0);
        meta->held_out_dsr = j.value("held_out_dsr", 0.0);
        meta->held_out_n = j.value("held_out_n", 0);
        if (j.contains("hyper")) {
          const auto& h = j["hyper"];
          meta->hyper.epochs = h.value("epochs", meta->hyper.epochs);
          meta->hyper.batch = h.value("batch", meta->hyper.batch);
          meta->hyper.learning_rate = h.value("learning_rate", meta->hyper.learning_rate);
        }
        meta->hyper.seed = meta->seed;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kIo, path.string() + ".json: " + e.what());
      }
    }
  }
  return p;
}

}  // namespace advforge
