#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

struct Split {
  Tensor frames;                       // [M x N x F]
  std::vector<std::uint32_t> labels;   // M entries, each < classes

  std::size_t size() const { return labels.size(); }
  std::size_t seq() const { return frames.extent(1); }
  std::size_t feat() const { return frames.extent(2); }
  Tensor sample(std::size_t i) const;  // [N x F] copy of one record
};

struct DatasetBundle {
  std::size_t classes = 0;
  Split train;
  Split val;
  Split test;
  std::string manifest;  // JSON provenance of the generator run
};

// Zero-mean mixture data: class c draws every frame feature from ±delta_c
// plus Gaussian noise, delta_c = delta0 + c·delta_step. Per-feature means
// vanish for every class while second moments delta_c² + sigma² separate
// classes, so mean pooling alone carries no signal.
//
// shift_profile models a recording-condition mismatch between training and
// deployment: "none" leaves all splits identically distributed; "gain"
// multiplies every val/test record by a per-record gain g ~ U(0.5, 1.5)
// while the train split stays clean.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t seq = 16;
  std::size_t feat = 8;
  double delta0 = 0.5;
  double delta_step = 0.5;
  double sigma = 0.2;
  std::string shift_profile = "none";
  std::uint64_t seed = 1;
};

DatasetBundle gen_synthetic(const SyntheticSpec& spec);

// One file per split: "PTDS", u32 version, u32 classes, u64 M/N/F,
// M u32 labels, then M·N·F float64 frames, all little-endian.
void write_dataset(const std::string& path, const Split& split, std::size_t classes);
std::pair<Split, std::size_t> read_dataset(const std::string& path);

}  // namespace hpt
