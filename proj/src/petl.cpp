#include "hpt/petl.hpp"

#include <algorithm>
#include <cmath>

namespace hpt {

namespace {

std::size_t adapter_bottleneck(std::size_t dim, std::size_t rate) {
  if (rate == 0) throw ConfigError("adapter: reduction rate must be positive");
  return std::max<std::size_t>(1, dim / rate);
}

std::size_t checked_rank(std::size_t rank) {
  if (rank == 0) throw ConfigError("lora: rank must be positive");
  return rank;
}

}  // namespace

Adapter::Adapter(const std::string& prefix, std::size_t dim, std::size_t rate)
    : dim(dim),
      bottleneck(adapter_bottleneck(dim, rate)),
      down(prefix + ".down", bottleneck, dim),
      up(prefix + ".up", dim, bottleneck) {}

Tensor adapter_forward(const Adapter& a, const Tensor& x) {
  return linear_forward(a.up, gelu(linear_forward(a.down, x)));
}

void adapter_init(Adapter& a, Rng& rng) { kaiming_uniform_init(a.down, rng); }

LoraAdapter::LoraAdapter(const std::string& prefix, std::size_t dim, std::size_t rank)
    : dim(dim),
      rank(checked_rank(rank)),
      a(prefix + ".a", Tensor(Shape{rank, dim}, 0.0)),
      b(prefix + ".b", Tensor(Shape{dim, rank}, 0.0)) {}

Tensor lora_forward(const LoraAdapter& l, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != l.dim) {
    throw ShapeError("lora_forward: expected [N x " + std::to_string(l.dim) + "], got " +
                     shape_str(x.shape()));
  }
  return scale(matmul(matmul(x, transpose(l.a.value)), transpose(l.b.value)), l.scaling());
}

Tensor lora_merge(const LoraAdapter& l, const Tensor& w_query) {
  if (w_query.rank() != 2 || w_query.extent(0) != l.dim || w_query.extent(1) != l.dim) {
    throw ShapeError("lora_merge: query weight must be [" + std::to_string(l.dim) + " x " +
                     std::to_string(l.dim) + "], got " + shape_str(w_query.shape()));
  }
  return add(w_query, scale(matmul(l.b.value, l.a.value), l.scaling()));
}

void lora_init(LoraAdapter& l, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.dim));
  for (double& w : l.a.value.values()) w = rng.uniform(-bound, bound);
}

SsfLayer::SsfLayer(const std::string& prefix, std::size_t dim)
    : scale(prefix + ".scale", Tensor(Shape{dim}, 1.0)),
      shift(prefix + ".shift", Tensor(Shape{dim}, 0.0)) {}

Tensor ssf_apply(const SsfLayer& s, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != s.dim()) {
    throw ShapeError("ssf_apply: expected trailing extent " + std::to_string(s.dim()) + ", got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.extent(0);
  return add(mul(x, broadcast_rows(s.scale.value, n)), broadcast_rows(s.shift.value, n));
}

Linear ssf_merge(const SsfLayer& s, const Linear& l) {
  if (l.out_features() != s.dim()) {
    throw CompatError("ssf_merge: affine extent " + std::to_string(s.dim()) +
                      " does not match linear output extent " + std::to_string(l.out_features()));
  }
  Linear merged(l.weight.name.substr(0, l.weight.name.rfind(".weight")), l.out_features(),
                l.in_features());
  const auto sv = s.scale.value.values();
  const auto tv = s.shift.value.values();
  const auto wv = l.weight.value.values();
  const auto bv = l.bias.value.values();
  auto mw = merged.weight.value.values();
  auto mb = merged.bias.value.values();
  const std::size_t in = l.in_features();
  for (std::size_t o = 0; o < l.out_features(); ++o) {
    for (std::size_t j = 0; j < in; ++j) mw[o * in + j] = sv[o] * wv[o * in + j];
    mb[o] = sv[o] * bv[o] + tv[o];
  }
  return merged;
}

const std::vector<std::string>& ssf_insertion_points() {
  static const std::vector<std::string> points{"ln1", "qkv", "proj", "ln2", "fc1", "fc2"};
  return points;
}

namespace {

std::size_t ssf_point_dim(const std::string& point, std::size_t dim) {
  if (point == "qkv") return 3 * dim;
  if (point == "fc1") return 4 * dim;
  return dim;
}

}  // namespace

SsfPack::SsfPack(const std::string& prefix, std::size_t dim,
                 const std::set<std::string>& insertions) {
  if (insertions.empty()) throw ConfigError("ssf: at least one insertion point required");
  const auto& valid = ssf_insertion_points();
  for (const auto& point : insertions) {
    if (std::find(valid.begin(), valid.end(), point) == valid.end()) {
      throw ConfigError("ssf: unknown insertion point '" + point + "'");
    }
  }
  for (const auto& point : valid) {  // canonical order, independent of set order
    if (insertions.count(point)) {
      layers.emplace_back(point, SsfLayer(prefix + "." + point, ssf_point_dim(point, dim)));
    }
  }
}

const SsfLayer* SsfPack::find(const std::string& point) const {
  for (const auto& [name, layer] : layers) {
    if (name == point) return &layer;
  }
  return nullptr;
}

std::size_t SsfPack::param_count() const {
  std::size_t total = 0;
  for (const auto& [name, layer] : layers) total += layer.param_count();
  return total;
}

Linear ssf_merge_at(const SsfPack& pack, const std::string& point, const Linear& producer) {
  if (point == "ln1" || point == "ln2") {
    throw CompatError("ssf_merge_at: point '" + point +
                      "' follows a layer norm, not a linear; nothing to fold into");
  }
  const SsfLayer* layer = pack.find(point);
  if (!layer) throw CompatError("ssf_merge_at: no affine at point '" + point + "'");
  return ssf_merge(*layer, producer);
}

Method method_from_string(const std::string& s) {
  if (s == "full_finetune") return Method::full_finetune;
  if (s == "linear_probe") return Method::linear_probe;
  if (s == "adapter") return Method::adapter;
  if (s == "hpt") return Method::hpt;
  if (s == "lora") return Method::lora;
  if (s == "ssf") return Method::ssf;
  throw ConfigError("unknown method '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::full_finetune: return "full_finetune";
    case Method::linear_probe: return "linear_probe";
    case Method::adapter: return "adapter";
    case Method::hpt: return "hpt";
    case Method::lora: return "lora";
    case Method::ssf: return "ssf";
  }
  throw ValueError("invalid method enum");
}

HistPlacement placement_from_string(const std::string& s) {
  if (s == "parallel_mhsa") return HistPlacement::parallel_mhsa;
  if (s == "parallel_ffn") return HistPlacement::parallel_ffn;
  if (s == "both") return HistPlacement::both;
  throw ConfigError("unknown placement '" + s + "'");
}

std::string to_string(HistPlacement p) {
  switch (p) {
    case HistPlacement::parallel_mhsa: return "parallel_mhsa";
    case HistPlacement::parallel_ffn: return "parallel_ffn";
    case HistPlacement::both: return "both";
  }
  throw ValueError("invalid placement enum");
}

ParamRefs PetlModules::params() {
  ParamRefs out;
  for (auto& a : adapters) {
    out.push_back(&a->down.weight);
    out.push_back(&a->down.bias);
    out.push_back(&a->up.weight);
    out.push_back(&a->up.bias);
  }
  for (auto& h : hists) {
    out.push_back(&h->proj_weight);
    out.push_back(&h->centers);
    out.push_back(&h->widths);
  }
  for (auto& l : loras) {
    out.push_back(&l->a);
    out.push_back(&l->b);
  }
  for (auto& s : ssfs) {
    for (auto& [name, layer] : s->layers) {
      out.push_back(&layer.scale);
      out.push_back(&layer.shift);
    }
  }
  return out;
}

std::size_t PetlModules::param_count() const {
  std::size_t total = 0;
  for (const auto& a : adapters) total += a->param_count();
  for (const auto& h : hists) total += h->param_count();
  for (const auto& l : loras) total += l->param_count();
  for (const auto& s : ssfs) total += s->param_count();
  return total;
}

PetlModules instantiate_petl(const PetlConfig& cfg, std::size_t num_blocks, std::size_t dim,
                             Rng& rng) {
  if (num_blocks == 0) throw ConfigError("instantiate_petl: need at least one block");
  PetlModules mods;
  mods.config = cfg;
  mods.num_blocks = num_blocks;
  const std::size_t copies = cfg.shared ? 1 : num_blocks;
  const auto prefix = [&](std::size_t i) {
    return cfg.shared ? std::string("shared") : "blocks." + std::to_string(i);
  };
  switch (cfg.method) {
    case Method::full_finetune:
    case Method::linear_probe:
      break;  // no extra modules
    case Method::adapter:
      for (std::size_t i = 0; i < copies; ++i) {
        auto a = std::make_unique<Adapter>(prefix(i) + ".adapter", dim, cfg.rate);
        adapter_init(*a, rng);
        mods.adapters.push_back(std::move(a));
      }
      break;
    case Method::hpt:
      for (std::size_t i = 0; i < copies; ++i) {
        auto h = std::make_unique<HistogramLayer>(prefix(i) + ".hist", cfg.bins, dim);
        hist_init(*h, rng);
        mods.hists.push_back(std::move(h));
      }
      break;
    case Method::lora:
      for (std::size_t i = 0; i < copies; ++i) {
        auto l = std::make_unique<LoraAdapter>(prefix(i) + ".lora", dim, cfg.rank);
        lora_init(*l, rng);
        mods.loras.push_back(std::move(l));
      }
      break;
    case Method::ssf:
      for (std::size_t i = 0; i < copies; ++i) {
        mods.ssfs.push_back(std::make_unique<SsfPack>(prefix(i) + ".ssf", dim, cfg.insertions));
      }
      break;
  }
  return mods;
}

}  // namespace hpt
