#include "mvss/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mvss/error.hpp"
#include "mvss/image_io.hpp"

namespace mvss::synth {

namespace fs = std::filesystem;

std::string kind_to_string(Kind kind) {
  switch (kind) {
    case Kind::Splice: return "splice";
    case Kind::CopyMove: return "copymove";
    case Kind::Inpaint: return "inpaint";
    case Kind::Authentic: return "authentic";
  }
  throw UsageError("invalid kind value");
}

Kind kind_from_string(const std::string& s) {
  if (s == "splice") return Kind::Splice;
  if (s == "copymove") return Kind::CopyMove;
  if (s == "inpaint") return Kind::Inpaint;
  if (s == "authentic") return Kind::Authentic;
  throw ParseError("unknown sample kind '" + s + "'");
}

void GenConfig::validate() const {
  if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0) {
    throw ConfigError("generator H, W must be multiples of 16 and >= 16");
  }
  if (!(region_min > 0.02 && region_max < 0.5 && region_min <= region_max)) {
    throw ConfigError("region fraction range must lie inside (0.02, 0.5)");
  }
  const double mix[4] = {mix_splice, mix_copymove, mix_inpaint, mix_authentic};
  double sum = 0.0;
  for (double m : mix) {
    if (m < 0.0) throw ConfigError("mix fractions must be nonnegative");
    sum += m;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw ConfigError("mix fractions must sum to 1");
  }
  if (wave_count < 1) throw ConfigError("wave_count must be >= 1");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (wave_amp < 0.0) throw ConfigError("wave_amp must be >= 0");
  if (base_level < 0.0 || base_level > 1.0) {
    throw ConfigError("base_level must lie in [0, 1]");
  }
  if (splice_noise_factor <= 0.0) {
    throw ConfigError("splice_noise_factor must be > 0");
  }
}

// ---- base texture -----------------------------------------------------------

Tensor gen_base(const GenConfig& cfg, Rng& rng) {
  Tensor img = Tensor::zeros({1, 3, cfg.h, cfg.w});
  constexpr double tau = 2.0 * std::numbers::pi;
  for (int c = 0; c < 3; ++c) {
    struct Wave {
      double fx, fy, phase, amp;
    };
    std::vector<Wave> waves(static_cast<std::size_t>(cfg.wave_count));
    for (Wave& wv : waves) {
      wv.fx = rng.uniform(0.5, 2.5);
      wv.fy = rng.uniform(0.5, 2.5);
      wv.phase = rng.uniform(0.0, tau);
      wv.amp = cfg.wave_amp / cfg.wave_count * rng.uniform(0.5, 1.5);
    }
    for (int y = 0; y < cfg.h; ++y) {
      for (int x = 0; x < cfg.w; ++x) {
        double v = cfg.base_level;
        for (const Wave& wv : waves) {
          v += wv.amp * std::sin(tau * (wv.fx * x / cfg.w + wv.fy * y / cfg.h) +
                                 wv.phase);
        }
        v += rng.normal(0.0, cfg.noise_sigma);
        img.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

// ---- region geometry ----------------------------------------------------------

namespace {

struct Rect {
  int x0, y0, w, h;
};

Rect draw_region(const GenConfig& cfg, Rng& rng) {
  const double frac = rng.uniform(cfg.region_min, cfg.region_max);
  const double aspect = rng.uniform(0.6, 1.6);
  const double area = frac * cfg.h * cfg.w;
  const long lo = static_cast<long>(std::ceil(cfg.region_min * cfg.h * cfg.w));
  const long hi = static_cast<long>(std::floor(cfg.region_max * cfg.h * cfg.w));
  const int want = static_cast<int>(std::lround(std::sqrt(area * aspect)));

  // The mask area must land inside the configured fraction band even after
  // integer rounding. Regions narrower than 4 pixels would vanish under 4x
  // downsampling, so sides stay >= 4. Pick the width closest to the drawn
  // aspect whose admissible height interval is nonempty.
  auto rh_interval = [&](int rw) {
    const int rh_lo = std::max(4, static_cast<int>((lo + rw - 1) / rw));
    const int rh_hi = std::min(cfg.h - 2, static_cast<int>(hi / rw));
    return std::pair<int, int>{rh_lo, rh_hi};
  };
  int rw = -1;
  for (int cand = 4; cand <= cfg.w - 2; ++cand) {
    auto [l, h] = rh_interval(cand);
    if (l > h) continue;
    if (rw < 0 || std::abs(cand - want) < std::abs(rw - want)) rw = cand;
  }
  if (rw < 0) {
    throw DomainError("no region size satisfies the area fraction range");
  }
  auto [rh_lo, rh_hi] = rh_interval(rw);
  const int rh =
      std::clamp(static_cast<int>(std::lround(area / rw)), rh_lo, rh_hi);
  const int x0 = rng.uniform_int(cfg.w - rw + 1);
  const int y0 = rng.uniform_int(cfg.h - rh + 1);
  return {x0, y0, rw, rh};
}

Tensor rect_mask(const GenConfig& cfg, const Rect& r) {
  Tensor mask = Tensor::zeros({1, 1, cfg.h, cfg.w});
  for (int y = r.y0; y < r.y0 + r.h; ++y) {
    for (int x = r.x0; x < r.x0 + r.w; ++x) mask.at(0, 0, y, x) = 1.0;
  }
  return mask;
}

void finish_tampered(const GenConfig& cfg, Sample& s, const Rect& r) {
  s.pixel_mask = rect_mask(cfg, r);
  s.edge_mask = downsample_mask(derive_edge_mask(s.pixel_mask), 4);
  s.label = 1;
}

}  // namespace

// ---- tampering operations ---------------------------------------------------------

Sample gen_tampered(const GenConfig& cfg, Rng& rng, Kind kind) {
  if (kind == Kind::Authentic) {
    throw UsageError("gen_tampered called with the authentic kind");
  }
  Sample s;
  s.kind = kind;
  s.image = gen_base(cfg, rng);
  const Rect r = draw_region(cfg, rng);

  switch (kind) {
    case Kind::Splice: {
      // donor texture with a different sensor-noise level: the host/donor
      // noise contrast is the property the noise branch is built to catch
      GenConfig donor_cfg = cfg;
      donor_cfg.noise_sigma = cfg.noise_sigma * cfg.splice_noise_factor;
      Tensor donor = gen_base(donor_cfg, rng);
      for (int c = 0; c < 3; ++c) {
        for (int y = r.y0; y < r.y0 + r.h; ++y) {
          for (int x = r.x0; x < r.x0 + r.w; ++x) {
            s.image.at(0, c, y, x) = donor.at(0, c, y, x);
          }
        }
      }
      break;
    }
    case Kind::CopyMove: {
      // destination must be displaced by at least half the short region side
      const int min_shift = std::max(4, std::min(r.w, r.h) / 2);
      int x1 = -1, y1 = -1;
      bool placed = false;
      for (int attempt = 0; attempt < 10; ++attempt) {
        x1 = rng.uniform_int(cfg.w - r.w + 1);
        y1 = rng.uniform_int(cfg.h - r.h + 1);
        if (std::abs(x1 - r.x0) + std::abs(y1 - r.y0) >= min_shift) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        throw DomainError("copymove: no displaced position in 10 attempts");
      }
      // snapshot the source first; source and destination may overlap
      std::vector<double> patch(static_cast<std::size_t>(3) * r.h * r.w);
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < r.h; ++y) {
          for (int x = 0; x < r.w; ++x) {
            patch[(static_cast<std::size_t>(c) * r.h + y) * r.w + x] =
                s.image.at(0, c, r.y0 + y, r.x0 + x);
          }
        }
      }
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < r.h; ++y) {
          for (int x = 0; x < r.w; ++x) {
            s.image.at(0, c, y1 + y, x1 + x) =
                patch[(static_cast<std::size_t>(c) * r.h + y) * r.w + x];
          }
        }
      }
      finish_tampered(cfg, s, {x1, y1, r.w, r.h});
      return s;
    }
    case Kind::Inpaint: {
      // fill with the mean of the one-pixel ring around the region, add a
      // little noise, then box-smooth the interior
      for (int c = 0; c < 3; ++c) {
        double ring_sum = 0.0;
        int ring_n = 0;
        for (int y = r.y0 - 1; y <= r.y0 + r.h; ++y) {
          for (int x = r.x0 - 1; x <= r.x0 + r.w; ++x) {
            const bool inside = y >= r.y0 && y < r.y0 + r.h && x >= r.x0 &&
                                x < r.x0 + r.w;
            if (inside || y < 0 || y >= cfg.h || x < 0 || x >= cfg.w) continue;
            ring_sum += s.image.at(0, c, y, x);
            ++ring_n;
          }
        }
        const double fill = ring_n > 0 ? ring_sum / ring_n : cfg.base_level;
        for (int y = r.y0; y < r.y0 + r.h; ++y) {
          for (int x = r.x0; x < r.x0 + r.w; ++x) {
            s.image.at(0, c, y, x) = std::clamp(
                fill + rng.normal(0.0, cfg.noise_sigma / 3.0), 0.0, 1.0);
          }
        }
        for (int pass = 0; pass < 2; ++pass) {
          Tensor copy = s.image.clone();
          for (int y = r.y0; y < r.y0 + r.h; ++y) {
            for (int x = r.x0; x < r.x0 + r.w; ++x) {
              double acc = 0.0;
              int cnt = 0;
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int yy = y + dy, xx = x + dx;
                  if (yy < 0 || yy >= cfg.h || xx < 0 || xx >= cfg.w) continue;
                  acc += copy.at(0, c, yy, xx);
                  ++cnt;
                }
              }
              s.image.at(0, c, y, x) = acc / cnt;
            }
          }
        }
      }
      break;
    }
    case Kind::Authentic:
      break;  // unreachable
  }
  finish_tampered(cfg, s, r);
  return s;
}

Sample gen_authentic(const GenConfig& cfg, Rng& rng) {
  Sample s;
  s.kind = Kind::Authentic;
  s.image = gen_base(cfg, rng);
  s.pixel_mask = Tensor::zeros({1, 1, cfg.h, cfg.w});
  s.edge_mask = Tensor::zeros({1, 1, cfg.h / 4, cfg.w / 4});
  s.label = 0;
  return s;
}

Sample gen_sample(const GenConfig& cfg, int index, Kind kind) {
  Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(index)));
  return kind == Kind::Authentic ? gen_authentic(cfg, rng)
                                 : gen_tampered(cfg, rng, kind);
}

// ---- morphology -----------------------------------------------------------------

Tensor derive_edge_mask(const Tensor& pixel_mask) {
  const Shape s = pixel_mask.shape();
  if (s.n != 1 || s.c != 1) {
    throw DimensionError("derive_edge_mask expects (1,1,H,W), got " + s.str());
  }
  constexpr int r = 2;
  Tensor out = Tensor::zeros(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      bool any = false;
      bool all = true;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) {
            all = false;  // out of bounds counts as background
            continue;
          }
          if (pixel_mask.at(0, 0, yy, xx) > 0.5) {
            any = true;
          } else {
            all = false;
          }
        }
      }
      out.at(0, 0, y, x) = (any != all) ? 1.0 : 0.0;  // dilation XOR erosion
    }
  }
  return out;
}

Tensor downsample_mask(const Tensor& mask, int factor) {
  const Shape s = mask.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw DimensionError("downsample_mask: dims " + s.str() +
                         " not divisible by " + std::to_string(factor));
  }
  Tensor out = Tensor::zeros({s.n, s.c, s.h / factor, s.w / factor});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          if (mask.at(n, c, y, x) > 0.5) {
            out.at(n, c, y / factor, x / factor) = 1.0;
          }
        }
      }
    }
  }
  return out;
}

// ---- dataset I/O ----------------------------------------------------------------

std::vector<Kind> plan_kinds(const GenConfig& cfg, int count) {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  const double mix[4] = {cfg.mix_splice, cfg.mix_copymove, cfg.mix_inpaint,
                         cfg.mix_authentic};
  const Kind kinds[4] = {Kind::Splice, Kind::CopyMove, Kind::Inpaint,
                         Kind::Authentic};
  int counts[4];
  double rem[4];
  int assigned = 0;
  for (int i = 0; i < 4; ++i) {
    const double exact = mix[i] * count;
    counts[i] = static_cast<int>(std::floor(exact));
    rem[i] = exact - counts[i];
    assigned += counts[i];
  }
  // largest remainder; ties break toward the earlier kind
  int order[4] = {0, 1, 2, 3};
  std::stable_sort(order, order + 4,
                   [&](int a, int b) { return rem[a] > rem[b]; });
  for (int i = 0; assigned < count; ++i, ++assigned) counts[order[i % 4]]++;

  std::vector<Kind> plan;
  plan.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < 4; ++i) {
    plan.insert(plan.end(), static_cast<std::size_t>(counts[i]), kinds[i]);
  }
  Rng rng(Rng::mix(cfg.seed, 0x4b494e44ull));  // arrangement stream
  shuffle(plan, rng);
  return plan;
}

namespace {
std::string sample_id(int index) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}
}  // namespace

void write_dataset(const std::string& dir, const GenConfig& cfg, int count) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());

  const std::vector<Kind> plan = plan_kinds(cfg, count);
  std::ostringstream index;
  for (int i = 0; i < count; ++i) {
    const Kind kind = plan[static_cast<std::size_t>(i)];
    const Sample s = gen_sample(cfg, i, kind);
    const std::string id = sample_id(i);
    img::write_ppm(dir + "/" + id + "_img.ppm", s.image);
    img::write_pgm(dir + "/" + id + "_mask.pgm", s.pixel_mask);
    img::write_pgm(dir + "/" + id + "_edge.pgm", s.edge_mask);
    index << id << " " << kind_to_string(kind) << " " << s.label << "\n";
  }
  std::ofstream out(dir + "/index.txt", std::ios::binary);
  if (!out) throw IoError("cannot write '" + dir + "/index.txt'");
  out << index.str();
  out.flush();
  if (!out) throw IoError("write failed for '" + dir + "/index.txt'");
}

namespace {
Tensor binarize(Tensor t) {
  for (double& v : t.data()) v = v > 0.5 ? 1.0 : 0.0;
  return t;
}
}  // namespace

Dataset read_dataset(const std::string& dir) {
  std::ifstream in(dir + "/index.txt");
  if (!in) throw IoError("cannot open '" + dir + "/index.txt'");

  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, kind_str;
    int label = -1;
    if (!(ls >> id >> kind_str >> label) || (label != 0 && label != 1)) {
      throw ParseError(dir + "/index.txt: malformed line " +
                       std::to_string(lineno));
    }
    Sample s;
    s.kind = kind_from_string(kind_str);
    s.label = label;
    s.image = img::read_ppm(dir + "/" + id + "_img.ppm");
    s.pixel_mask = binarize(img::read_pgm(dir + "/" + id + "_mask.pgm"));
    s.edge_mask = binarize(img::read_pgm(dir + "/" + id + "_edge.pgm"));

    bool mask_nonempty = false;
    for (double v : s.pixel_mask.data()) {
      if (v > 0.5) {
        mask_nonempty = true;
        break;
      }
    }
    if (mask_nonempty != (s.label == 1)) {
      throw IntegrityError(dir + ": sample " + id +
                           " label disagrees with its mask");
    }
    if (s.label == 1) ++ds.manipulated; else ++ds.authentic;
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError(dir + "/index.txt: no samples");
  return ds;
}

}  // namespace mvss::synth
