#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mvss/error.hpp"
#include "mvss/image_io.hpp"
#include "mvss/layers.hpp"
#include "mvss/rng.hpp"
#include "mvss/synthdata.hpp"
#include "mvss/tensor.hpp"

using namespace mvss;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("mvss_synth_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double mask_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

bool is_binary(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

// Independent morphology oracle: dilate XOR erode with a (2r+1)^2 square
// structuring element; out-of-bounds neighbors count as 0.
Tensor morphology_oracle(const Tensor& mask, int r) {
  const Shape s = mask.shape();
  Tensor out = Tensor::zeros(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      bool any = false;
      bool all = true;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          double v = 0.0;
          if (yy >= 0 && yy < s.h && xx >= 0 && xx < s.w) {
            v = mask.at(0, 0, yy, xx);
          }
          if (v > 0.5) any = true;
          if (v <= 0.5) all = false;
        }
      }
      out.at(0, 0, y, x) = (any && !all) ? 1.0 : 0.0;
    }
  }
  return out;
}

double image_mean(const Tensor& t) {
  return mask_sum(t) / static_cast<double>(t.numel());
}

synth::GenConfig small_cfg(std::uint64_t seed = 1) {
  synth::GenConfig cfg;
  cfg.h = 32;
  cfg.w = 32;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("pgm mask round trip is bit exact") {
  fs::path dir = temp_dir("pgm");
  Rng rng(31);
  Tensor mask = Tensor::zeros({1, 1, 9, 13});
  for (double& v : mask.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  const std::string path = (dir / "m.pgm").string();
  img::write_pgm(path, mask);
  Tensor back = img::read_pgm(path);
  REQUIRE(back.shape() == mask.shape());
  CHECK(back.data() == mask.data());

  // arbitrary gray maps survive within one quantization step and are a
  // fixpoint afterwards
  Tensor gray = Tensor::zeros({1, 1, 6, 6});
  for (double& v : gray.data()) v = rng.uniform();
  img::write_pgm(path, gray);
  Tensor g1 = img::read_pgm(path);
  for (std::size_t i = 0; i < gray.data().size(); ++i) {
    CHECK(std::fabs(g1.data()[i] - gray.data()[i]) <= 1.0 / 255.0);
  }
  img::write_pgm(path, g1);
  Tensor g2 = img::read_pgm(path);
  CHECK(g2.data() == g1.data());
}

TEST_CASE("ppm image round trip within quantization") {
  fs::path dir = temp_dir("ppm");
  Rng rng(37);
  Tensor image = Tensor::zeros({1, 3, 8, 5});
  for (double& v : image.data()) v = rng.uniform();
  image.data()[0] = 0.0;  // exercise the extremes
  image.data()[1] = 1.0;
  const std::string path = (dir / "i.ppm").string();
  img::write_ppm(path, image);
  Tensor back = img::read_ppm(path);
  REQUIRE(back.shape() == image.shape());
  for (std::size_t i = 0; i < image.data().size(); ++i) {
    CHECK(std::fabs(back.data()[i] - image.data()[i]) <= 1.0 / 255.0);
  }
  CHECK(back.data()[0] == 0.0);
  CHECK(back.data()[1] == 1.0);

  CHECK_THROWS_AS(img::write_ppm(path, Tensor::zeros({1, 1, 4, 4})),
                  DimensionError);
  CHECK_THROWS_AS(img::write_pgm(path, Tensor::zeros({1, 3, 4, 4})),
                  DimensionError);
}

TEST_CASE("image readers reject malformed and truncated files") {
  fs::path dir = temp_dir("badio");
  Tensor image = Tensor::full({1, 3, 4, 4}, 0.5);
  const fs::path good = dir / "good.ppm";
  img::write_ppm(good.string(), image);
  const std::string bytes = slurp(good);

  CHECK_THROWS_AS(img::read_ppm((dir / "absent.ppm").string()), IoError);

  // wrong magic
  std::string magic = bytes;
  magic[1] = '5';
  spit(dir / "magic.ppm", magic);
  CHECK_THROWS_AS(img::read_ppm((dir / "magic.ppm").string()), ParseError);

  // truncations at several depths: inside the header and inside the pixels
  for (std::size_t cut : {std::size_t{2}, std::size_t{6}, bytes.size() / 2,
                          bytes.size() - 1}) {
    spit(dir / "trunc.ppm", bytes.substr(0, cut));
    try {
      img::read_ppm((dir / "trunc.ppm").string());
      FAIL("expected ParseError at cut " << cut);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }

  // trailing junk is an error, not silently ignored
  spit(dir / "trail.ppm", bytes + "x");
  CHECK_THROWS_AS(img::read_ppm((dir / "trail.ppm").string()), ParseError);

  // absurd dimensions must not allocate
  spit(dir / "huge.ppm", "P6\n999999999 999999999\n255\nabc");
  CHECK_THROWS_AS(img::read_ppm((dir / "huge.ppm").string()), ParseError);
}

TEST_CASE("gen_base stays in range and is seed deterministic") {
  synth::GenConfig cfg = small_cfg();
  double prev_mean = -1.0;
  for (int seed = 0; seed < 200; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed + 1));
    Tensor base = synth::gen_base(cfg, rng);
    REQUIRE(base.shape() == Shape{1, 3, 32, 32});
    for (double v : base.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (seed < 3) {
      Rng again(static_cast<std::uint64_t>(seed + 1));
      Tensor repeat = synth::gen_base(cfg, again);
      CHECK(repeat.data() == base.data());
    }
    prev_mean = image_mean(base);
  }
  (void)prev_mean;

  // distinct seeds give visibly different content
  Rng r1(1), r2(2);
  Tensor a = synth::gen_base(cfg, r1);
  Tensor b = synth::gen_base(cfg, r2);
  double mad = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    mad += std::fabs(a.data()[i] - b.data()[i]);
  }
  mad /= static_cast<double>(a.numel());
  CHECK(mad > 0.01);
}

TEST_CASE("tampered samples honor the mask contract") {
  synth::GenConfig cfg = small_cfg(9);
  const double area = 32.0 * 32.0;
  for (auto kind :
       {synth::Kind::Splice, synth::Kind::CopyMove, synth::Kind::Inpaint}) {
    for (int i = 0; i < 30; ++i) {
      synth::Sample s = synth::gen_sample(cfg, i, kind);
      CHECK(s.label == 1);
      CHECK(s.kind == kind);
      REQUIRE(s.pixel_mask.shape() == Shape{1, 1, 32, 32});
      REQUIRE(s.edge_mask.shape() == Shape{1, 1, 8, 8});
      CHECK(is_binary(s.pixel_mask));
      CHECK(is_binary(s.edge_mask));
      const double frac = mask_sum(s.pixel_mask) / area;
      CHECK(frac >= cfg.region_min);
      CHECK(frac <= cfg.region_max);
      CHECK(mask_sum(s.edge_mask) > 0.0);
      for (double v : s.image.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      // the stored edge mask is exactly the derived, downsampled band
      Tensor derived =
          synth::downsample_mask(synth::derive_edge_mask(s.pixel_mask), 4);
      CHECK(derived.data() == s.edge_mask.data());
    }
  }
}

TEST_CASE("authentic samples are clean and match the base distribution") {
  synth::GenConfig cfg = small_cfg(13);
  double auth_mean = 0.0;
  double base_mean = 0.0;
  for (int i = 0; i < 100; ++i) {
    synth::Sample s = synth::gen_sample(cfg, i, synth::Kind::Authentic);
    CHECK(s.label == 0);
    CHECK(mask_sum(s.pixel_mask) == 0.0);
    CHECK(mask_sum(s.edge_mask) == 0.0);
    auth_mean += image_mean(s.image);
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(i) + 5000));
    base_mean += image_mean(synth::gen_base(cfg, rng));
  }
  auth_mean /= 100.0;
  base_mean /= 100.0;
  CHECK(std::fabs(auth_mean - base_mean) < 0.05);

  synth::Sample a = synth::gen_sample(cfg, 4, synth::Kind::Authentic);
  synth::Sample b = synth::gen_sample(cfg, 4, synth::Kind::Authentic);
  CHECK(a.image.data() == b.image.data());
}

TEST_CASE("splice regions carry a stronger high-pass response") {
  synth::GenConfig cfg = small_cfg(17);
  Rng rng(99);
  layers::BayarConvLayer probe(3, rng);
  double margin = 0.0;
  const int trials = 60;
  for (int i = 0; i < trials; ++i) {
    synth::Sample s = synth::gen_sample(cfg, i, synth::Kind::Splice);
    Tape::NoGradGuard guard;
    Tensor resp = probe.forward(s.image);
    double in_sum = 0.0, out_sum = 0.0, in_n = 0.0, out_n = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const double r = std::fabs(resp.at(0, c, y, x));
          if (s.pixel_mask.at(0, 0, y, x) > 0.5) {
            in_sum += r;
            in_n += 1.0;
          } else {
            out_sum += r;
            out_n += 1.0;
          }
        }
      }
    }
    margin += in_sum / in_n - out_sum / out_n;
  }
  margin /= static_cast<double>(trials);
  INFO("mean high-pass margin inside vs outside: " << margin);
  CHECK(margin > 0.0);
}

TEST_CASE("inpainted regions are smoother than their surroundings") {
  synth::GenConfig cfg = small_cfg(19);
  Rng rng(101);
  layers::BayarConvLayer probe(3, rng);
  double margin = 0.0;
  const int trials = 30;
  for (int i = 0; i < trials; ++i) {
    synth::Sample s = synth::gen_sample(cfg, i, synth::Kind::Inpaint);
    Tape::NoGradGuard guard;
    Tensor resp = probe.forward(s.image);
    double in_sum = 0.0, out_sum = 0.0, in_n = 0.0, out_n = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const double r = std::fabs(resp.at(0, c, y, x));
          if (s.pixel_mask.at(0, 0, y, x) > 0.5) {
            in_sum += r;
            in_n += 1.0;
          } else {
            out_sum += r;
            out_n += 1.0;
          }
        }
      }
    }
    margin += in_sum / in_n - out_sum / out_n;
  }
  margin /= static_cast<double>(trials);
  INFO("mean high-pass margin inside vs outside: " << margin);
  CHECK(margin < 0.0);
}

TEST_CASE("derive_edge_mask matches a brute-force morphology oracle") {
  // empty stays empty
  Tensor empty = Tensor::zeros({1, 1, 8, 8});
  CHECK(mask_sum(synth::derive_edge_mask(empty)) == 0.0);

  // full 8x8 mask: dilation saturates, erosion leaves the interior
  Tensor full = Tensor::full({1, 1, 8, 8}, 1.0);
  Tensor full_edge = synth::derive_edge_mask(full);
  CHECK(full_edge.data() == morphology_oracle(full, 2).data());
  // the band is the 2-pixel border frame: 64 - 16 interior pixels
  CHECK(mask_sum(full_edge) == 48.0);
  CHECK(full_edge.at(0, 0, 4, 4) == 0.0);
  CHECK(full_edge.at(0, 0, 1, 4) == 1.0);

  // centered 8x8 square in 32x32: symmetric ring of width 4
  Tensor square = Tensor::zeros({1, 1, 32, 32});
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) square.at(0, 0, y, x) = 1.0;
  Tensor ring = synth::derive_edge_mask(square);
  CHECK(ring.data() == morphology_oracle(square, 2).data());
  // dilated 12x12 block minus eroded 4x4 block
  CHECK(mask_sum(ring) == 144.0 - 16.0);
  CHECK(ring.at(0, 0, 15, 15) == 0.0);  // deep interior erased
  CHECK(ring.at(0, 0, 12, 12) == 1.0);  // inner side of the band
  CHECK(ring.at(0, 0, 10, 15) == 1.0);  // outer side of the band

  // random masks: oracle agreement plus the subset/disjointness properties
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor m = Tensor::zeros({1, 1, 16, 16});
    for (double& v : m.data()) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
    Tensor edge = synth::derive_edge_mask(m);
    CHECK(edge.data() == morphology_oracle(m, 2).data());
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        if (edge.at(0, 0, y, x) == 0.0) continue;
        // inside the dilation: some neighbor within radius 2 is set
        bool any = false;
        bool all = true;
        for (int dy = -2; dy <= 2; ++dy) {
          for (int dx = -2; dx <= 2; ++dx) {
            const int yy = y + dy;
            const int xx = x + dx;
            const bool set = yy >= 0 && yy < 16 && xx >= 0 && xx < 16 &&
                             m.at(0, 0, yy, xx) > 0.5;
            any = any || set;
            all = all && set;
          }
        }
        CHECK(any);
        CHECK_FALSE(all);  // disjoint from the erosion
      }
    }
  }

  CHECK_THROWS_AS(synth::derive_edge_mask(Tensor::zeros({1, 3, 8, 8})),
                  DimensionError);
}

TEST_CASE("downsample_mask block max") {
  Tensor empty = Tensor::zeros({1, 1, 8, 8});
  CHECK(mask_sum(synth::downsample_mask(empty, 4)) == 0.0);

  // one positive pixel lights exactly its own block
  Tensor single = Tensor::zeros({1, 1, 8, 8});
  single.at(0, 0, 5, 2) = 1.0;
  Tensor down = synth::downsample_mask(single, 4);
  REQUIRE(down.shape() == Shape{1, 1, 2, 2});
  CHECK(mask_sum(down) == 1.0);
  CHECK(down.at(0, 0, 1, 0) == 1.0);

  // checkerboard of 4x4 tiles saturates the output
  Tensor checker = Tensor::zeros({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      checker.at(0, 0, y, x) = ((y / 4 + x / 4) % 2 == 0) ? 1.0 : 0.0;
  Tensor cd = synth::downsample_mask(checker, 4);
  CHECK(mask_sum(cd) == 2.0);  // the two set tiles
  Tensor inv = checker.clone();
  for (double& v : inv.data()) v = 1.0 - v;
  Tensor full = checker.clone();
  for (std::size_t i = 0; i < full.data().size(); ++i) {
    full.data()[i] = checker.data()[i] + inv.data()[i];
  }
  CHECK(mask_sum(synth::downsample_mask(full, 4)) == 4.0);

  CHECK(synth::downsample_mask(single, 2).shape() == Shape{1, 1, 4, 4});
  CHECK_THROWS_AS(synth::downsample_mask(Tensor::zeros({1, 1, 9, 8}), 4),
                  DimensionError);
}

TEST_CASE("gen_sample is deterministic and order independent") {
  synth::GenConfig cfg = small_cfg(23);
  synth::Sample s5a = synth::gen_sample(cfg, 5, synth::Kind::CopyMove);
  synth::Sample s3 = synth::gen_sample(cfg, 3, synth::Kind::Splice);
  synth::Sample s5b = synth::gen_sample(cfg, 5, synth::Kind::CopyMove);
  CHECK(s5a.image.data() == s5b.image.data());
  CHECK(s5a.pixel_mask.data() == s5b.pixel_mask.data());
  CHECK(s5a.edge_mask.data() == s5b.edge_mask.data());

  // different index or different seed changes the content
  CHECK(s3.image.data() != s5a.image.data());
  synth::GenConfig other = small_cfg(24);
  synth::Sample o5 = synth::gen_sample(other, 5, synth::Kind::CopyMove);
  CHECK(o5.image.data() != s5a.image.data());
}

TEST_CASE("plan_kinds uses largest-remainder quotas") {
  synth::GenConfig cfg = small_cfg(3);
  auto plan = synth::plan_kinds(cfg, 100);
  REQUIRE(plan.size() == 100);
  std::map<synth::Kind, int> counts;
  for (auto k : plan) counts[k]++;
  CHECK(counts[synth::Kind::Splice] == 25);
  CHECK(counts[synth::Kind::CopyMove] == 25);
  CHECK(counts[synth::Kind::Inpaint] == 25);
  CHECK(counts[synth::Kind::Authentic] == 25);

  // deterministic arrangement
  auto plan2 = synth::plan_kinds(cfg, 100);
  CHECK(plan == plan2);

  // non-divisible counts still sum exactly, each within one of its quota
  auto plan7 = synth::plan_kinds(cfg, 7);
  REQUIRE(plan7.size() == 7);
  std::map<synth::Kind, int> c7;
  for (auto k : plan7) c7[k]++;
  int total = 0;
  for (auto& [k, n] : c7) {
    CHECK(n >= 1);  // floor(7 * 0.25)
    CHECK(n <= 2);
    total += n;
  }
  CHECK(total == 7);

  // skewed mix: all mass on one class
  synth::GenConfig skew = small_cfg(3);
  skew.mix_splice = 0.0;
  skew.mix_copymove = 0.0;
  skew.mix_inpaint = 0.0;
  skew.mix_authentic = 1.0;
  auto plana = synth::plan_kinds(skew, 10);
  for (auto k : plana) CHECK(k == synth::Kind::Authentic);
}

TEST_CASE("dataset round trip and integrity checks") {
  fs::path dir = temp_dir("dataset");
  synth::GenConfig cfg = small_cfg(29);
  synth::write_dataset(dir.string(), cfg, 12);

  CHECK(fs::exists(dir / "index.txt"));
  CHECK(fs::exists(dir / "0000_img.ppm"));
  CHECK(fs::exists(dir / "0011_mask.pgm"));

  synth::Dataset ds = synth::read_dataset(dir.string());
  REQUIRE(ds.samples.size() == 12);
  CHECK(ds.manipulated == 9);  // 12 * 3/4 via largest remainder
  CHECK(ds.authentic == 3);
  for (const auto& s : ds.samples) {
    CHECK(is_binary(s.pixel_mask));
    CHECK(is_binary(s.edge_mask));
    CHECK((s.label == 1) == (mask_sum(s.pixel_mask) > 0.0));
    REQUIRE(s.image.shape() == Shape{1, 3, 32, 32});
  }

  // regeneration is byte-identical
  fs::path dir2 = temp_dir("dataset2");
  synth::write_dataset(dir2.string(), cfg, 12);
  CHECK(slurp(dir / "index.txt") == slurp(dir2 / "index.txt"));
  CHECK(slurp(dir / "0003_img.ppm") == slurp(dir2 / "0003_img.ppm"));
  CHECK(slurp(dir / "0007_edge.pgm") == slurp(dir2 / "0007_edge.pgm"));

  // tampering with a label in index.txt is detected on read
  std::string index = slurp(dir / "index.txt");
  const auto pos = index.find(" 1\n");
  const auto pos0 = index.find(" 0\n");
  REQUIRE(pos != std::string::npos);
  REQUIRE(pos0 != std::string::npos);
  std::string tampered = index;
  tampered[pos + 1] = '0';
  spit(dir / "index.txt", tampered);
  CHECK_THROWS_AS(synth::read_dataset(dir.string()), IntegrityError);

  // malformed index lines are a parse error
  spit(dir / "index.txt", "0000 splice banana\n");
  CHECK_THROWS_AS(synth::read_dataset(dir.string()), ParseError);
  spit(dir / "index.txt", "");
  CHECK_THROWS_AS(synth::read_dataset(dir.string()), ParseError);
  CHECK_THROWS_AS(synth::read_dataset((dir / "absent").string()), IoError);

  // restore and confirm the original still reads
  spit(dir / "index.txt", index);
  CHECK(synth::read_dataset(dir.string()).samples.size() == 12);
}

TEST_CASE("kind string round trip") {
  for (auto k : {synth::Kind::Splice, synth::Kind::CopyMove,
                 synth::Kind::Inpaint, synth::Kind::Authentic}) {
    CHECK(synth::kind_from_string(synth::kind_to_string(k)) == k);
  }
  CHECK_THROWS_AS(synth::kind_from_string("collage"), ParseError);
}

TEST_CASE("generator configuration validation") {
  synth::GenConfig bad = small_cfg();
  bad.h = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg();
  bad.region_min = 0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg();
  bad.region_max = 0.6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg();
  bad.mix_splice = 0.9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg();
  bad.mix_splice = -0.25;
  bad.mix_copymove = 0.75;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg();
  bad.splice_noise_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(small_cfg().validate());
}
