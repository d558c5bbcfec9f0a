#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hpt/nn.hpp"
#include "hpt/param.hpp"
#include "hpt/petl.hpp"

namespace hpt {

struct LayerNormParams {
  Parameter gain;  // ones
  Parameter bias;  // zeros

  LayerNormParams(const std::string& prefix, std::size_t dim)
      : gain(prefix + ".gain", Tensor(Shape{dim}, 1.0)),
        bias(prefix + ".bias", Tensor(Shape{dim}, 0.0)) {}
};

// Pre-norm transformer block with optional additive tuning branches. The
// branch modules are owned by the model's PetlModules; a block only wires
// them into its forward pass.
struct EncoderBlock {
  std::size_t dim;
  LayerNormParams ln1;
  LayerNormParams ln2;
  MhsaLayer mhsa;
  FfnLayer ffn;

  const Adapter* adapter = nullptr;
  const HistogramLayer* hist = nullptr;
  HistPlacement placement = HistPlacement::parallel_mhsa;
  const LoraAdapter* lora = nullptr;
  const SsfPack* ssf = nullptr;

  EncoderBlock(const std::string& prefix, std::size_t dim, std::size_t heads);
};

Tensor block_forward(const EncoderBlock& b, const Tensor& x);

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  std::size_t feat = 16;     // raw frame features F
  std::size_t max_seq = 32;  // positional table length N_max
  std::size_t classes = 4;
};

struct EncoderModel {
  ModelConfig cfg;
  Linear input_proj;    // [D x F]
  Parameter pos_embed;  // [N_max x D], U(−0.02, 0.02)
  std::vector<std::unique_ptr<EncoderBlock>> blocks;
  LayerNormParams head_norm;
  Linear head;  // [C x D]
  PetlModules petl;

  // Builds, initializes, wires tuning branches, then freezes per the config.
  EncoderModel(const ModelConfig& cfg, const PetlConfig& petl_cfg, Rng& rng);

  ParamRefs all_params();
  ParamRefs trainable_params();
  Parameter* find_param(const std::string& name);
  std::size_t head_param_count() const;  // head norm + classifier linear
};

// frames: [N x F], N ≤ max_seq. Returns C logits. When `features` is given,
// each block's post-residual output is appended without disturbing the result.
Tensor model_forward(const EncoderModel& m, const Tensor& frames,
                     std::vector<Tensor>* features = nullptr);

std::vector<Tensor> capture_features(const EncoderModel& m, const Tensor& frames);

// Trainability per method: full_finetune frees everything; linear_probe the
// classifier head only; tuning methods their module parameters plus the head.
void freeze_base(EncoderModel& m);

// Named-tensor archive with an embedded manifest string.
void save_checkpoint(EncoderModel& m, const std::string& path, const std::string& manifest);
std::string load_checkpoint(EncoderModel& m, const std::string& path);
std::string read_checkpoint_manifest(const std::string& path);

}  // namespace hpt
