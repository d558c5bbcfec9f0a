#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "hpt/hist.hpp"
#include "hpt/nn.hpp"
#include "hpt/param.hpp"
#include "hpt/rng.hpp"

namespace hpt {

// Bottleneck adapter: down-project to h = max(1, dim/rate), GELU, up-project.
// The up projection is zero-initialized so a fresh adapter is an exact no-op.
struct Adapter {
  std::size_t dim;
  std::size_t bottleneck;
  Linear down;  // [h x D]
  Linear up;    // [D x h]

  Adapter(const std::string& prefix, std::size_t dim, std::size_t rate);

  std::size_t param_count() const { return 2 * dim * bottleneck + bottleneck + dim; }
};

Tensor adapter_forward(const Adapter& a, const Tensor& x);
void adapter_init(Adapter& a, Rng& rng);  // down gets Kaiming draws; up stays zero

// Low-rank update attached to the query slice of the fused QKV projection.
struct LoraAdapter {
  std::size_t dim;
  std::size_t rank;
  double alpha = 1.0;
  Parameter a;  // [r x D]
  Parameter b;  // [D x r], zero-initialized

  LoraAdapter(const std::string& prefix, std::size_t dim, std::size_t rank);

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t param_count() const { return 2 * dim * rank; }
};

Tensor lora_forward(const LoraAdapter& l, const Tensor& x);       // (α/r)·x·Aᵀ·Bᵀ
Tensor lora_merge(const LoraAdapter& l, const Tensor& w_query);   // W_q + (α/r)·B·A
void lora_init(LoraAdapter& l, Rng& rng);  // A from U(−1/√D, 1/√D); B stays zero

// Elementwise affine x ← scale ⊙ x + shift; identity at initialization.
struct SsfLayer {
  Parameter scale;  // ones
  Parameter shift;  // zeros

  SsfLayer(const std::string& prefix, std::size_t dim);

  std::size_t dim() const { return scale.value.extent(0); }
  std::size_t param_count() const { return 2 * dim(); }
};

Tensor ssf_apply(const SsfLayer& s, const Tensor& x);

// Folds the affine into the linear that produced its input.
Linear ssf_merge(const SsfLayer& s, const Linear& l);

// Valid SSF insertion points within one encoder block, in canonical order.
const std::vector<std::string>& ssf_insertion_points();

// One SsfLayer per configured insertion point of a block.
struct SsfPack {
  std::vector<std::pair<std::string, SsfLayer>> layers;

  SsfPack(const std::string& prefix, std::size_t dim, const std::set<std::string>& insertions);

  const SsfLayer* find(const std::string& point) const;
  std::size_t param_count() const;
};

// Merge the pack's layer at `point` into the linear feeding it. Points that
// sit after a layer norm (ln1, ln2) have no producing linear and are refused.
Linear ssf_merge_at(const SsfPack& pack, const std::string& point, const Linear& producer);

enum class Method { full_finetune, linear_probe, adapter, hpt, lora, ssf };
enum class HistPlacement { parallel_mhsa, parallel_ffn, both };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
HistPlacement placement_from_string(const std::string& s);
std::string to_string(HistPlacement p);

struct PetlConfig {
  Method method = Method::linear_probe;
  bool shared = true;
  std::size_t rate = 256;  // adapter
  std::size_t bins = 8;    // hpt
  HistPlacement placement = HistPlacement::parallel_mhsa;
  std::size_t rank = 6;    // lora
  std::set<std::string> insertions = {"ln1"};  // ssf
};

// Module instances backing a PetlConfig: one instance when shared, one per
// block otherwise. Pointers keep parameter addresses stable.
struct PetlModules {
  PetlConfig config;
  std::size_t num_blocks = 0;
  std::vector<std::unique_ptr<Adapter>> adapters;
  std::vector<std::unique_ptr<HistogramLayer>> hists;
  std::vector<std::unique_ptr<LoraAdapter>> loras;
  std::vector<std::unique_ptr<SsfPack>> ssfs;

  std::size_t index_for(std::size_t block) const { return config.shared ? 0 : block; }
  ParamRefs params();
  std::size_t param_count() const;
};

PetlModules instantiate_petl(const PetlConfig& cfg, std::size_t num_blocks, std::size_t dim,
                             Rng& rng);

}  // namespace hpt
