#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvss/rng.hpp"
#include "mvss/tensor.hpp"

namespace mvss::synth {

enum class Kind { Splice, CopyMove, Inpaint, Authentic };

std::string kind_to_string(Kind kind);
Kind kind_from_string(const std::string& s);  // ParseError otherwise

struct GenConfig {
  int h = 64;
  int w = 64;
  // tampered-region area as a fraction of the image
  double region_min = 0.08;
  double region_max = 0.35;
  // class mix (must sum to 1)
  double mix_splice = 0.25;
  double mix_copymove = 0.25;
  double mix_inpaint = 0.25;
  double mix_authentic = 0.25;
  // base-texture synthesis
  double base_level = 0.45;
  int wave_count = 3;
  double wave_amp = 0.35;
  double noise_sigma = 0.03;
  // donor images carry this multiple of the host's sensor noise, giving the
  // noise branch a constructive signal
  double splice_noise_factor = 3.0;
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError on violation
};

struct Sample {
  Tensor image;       // (1,3,H,W) in [0,1]
  Tensor pixel_mask;  // (1,1,H,W), values exactly 0/1
  Tensor edge_mask;   // (1,1,H/4,W/4), values exactly 0/1
  int label = 0;      // 1 iff pixel_mask is nonempty
  Kind kind = Kind::Authentic;
};

// smooth low-frequency sinusoid texture plus Gaussian sensor noise, clipped
Tensor gen_base(const GenConfig& cfg, Rng& rng);

Sample gen_tampered(const GenConfig& cfg, Rng& rng, Kind kind);
Sample gen_authentic(const GenConfig& cfg, Rng& rng);

// Deterministic per index: sample i of a dataset depends only on
// (cfg.seed, i, kind), so generation order and parallelism do not matter.
Sample gen_sample(const GenConfig& cfg, int index, Kind kind);

// Morphological boundary band: dilate(mask, r=2) XOR erode(mask, r=2) with a
// 5x5 square structuring element; out-of-bounds neighbors count as 0, so
// dilation clips at borders and erosion shrinks there.
Tensor derive_edge_mask(const Tensor& pixel_mask);

// block max over factor x factor tiles (any positive pixel marks the block)
Tensor downsample_mask(const Tensor& mask, int factor = 4);

// per-kind counts via largest remainder, then a seed-determined arrangement
std::vector<Kind> plan_kinds(const GenConfig& cfg, int count);

// Directory layout: NNNN_img.ppm, NNNN_mask.pgm, NNNN_edge.pgm and an
// index.txt of "NNNN kind label" lines.
void write_dataset(const std::string& dir, const GenConfig& cfg, int count);

struct Dataset {
  std::vector<Sample> samples;
  int manipulated = 0;
  int authentic = 0;
};

Dataset read_dataset(const std::string& dir);

}  // namespace mvss::synth
