#include "hpt/encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

namespace hpt {

EncoderBlock::EncoderBlock(const std::string& prefix, std::size_t dim, std::size_t heads)
    : dim(dim),
      ln1(prefix + ".ln1", dim),
      ln2(prefix + ".ln2", dim),
      mhsa(prefix, dim, heads),
      ffn(prefix, dim) {}

namespace {

MhsaHooks make_mhsa_hooks(const EncoderBlock& b) {
  MhsaHooks hooks;
  if (b.lora) {
    hooks.query_increment = [l = b.lora](const Tensor& x) { return lora_forward(*l, x); };
  }
  if (b.ssf) {
    if (const SsfLayer* s = b.ssf->find("qkv")) {
      hooks.after_qkv = [s](const Tensor& t) { return ssf_apply(*s, t); };
    }
    if (const SsfLayer* s = b.ssf->find("proj")) {
      hooks.after_proj = [s](const Tensor& t) { return ssf_apply(*s, t); };
    }
  }
  return hooks;
}

FfnHooks make_ffn_hooks(const EncoderBlock& b) {
  FfnHooks hooks;
  if (b.ssf) {
    if (const SsfLayer* s = b.ssf->find("fc1")) {
      hooks.after_fc1 = [s](const Tensor& t) { return ssf_apply(*s, t); };
    }
    if (const SsfLayer* s = b.ssf->find("fc2")) {
      hooks.after_fc2 = [s](const Tensor& t) { return ssf_apply(*s, t); };
    }
  }
  return hooks;
}

}  // namespace

Tensor block_forward(const EncoderBlock& b, const Tensor& x) {
  Tensor t = layer_norm(x, b.ln1.gain.value, b.ln1.bias.value);
  if (b.ssf) {
    if (const SsfLayer* s = b.ssf->find("ln1")) t = ssf_apply(*s, t);
  }

  Tensor z = add(x, mhsa_forward(b.mhsa, t, make_mhsa_hooks(b)));
  if (b.adapter) z = add(z, adapter_forward(*b.adapter, t));
  if (b.hist &&
      (b.placement == HistPlacement::parallel_mhsa || b.placement == HistPlacement::both)) {
    z = add(z, hist_forward(*b.hist, t));
  }

  Tensor u = layer_norm(z, b.ln2.gain.value, b.ln2.bias.value);
  if (b.ssf) {
    if (const SsfLayer* s = b.ssf->find("ln2")) u = ssf_apply(*s, u);
  }

  Tensor out = add(z, ffn_forward(b.ffn, u, make_ffn_hooks(b)));
  if (b.hist &&
      (b.placement == HistPlacement::parallel_ffn || b.placement == HistPlacement::both)) {
    out = add(out, hist_forward(*b.hist, u));
  }
  return out;
}

EncoderModel::EncoderModel(const ModelConfig& cfg, const PetlConfig& petl_cfg, Rng& rng)
    : cfg(cfg),
      input_proj("input_proj", cfg.dim, cfg.feat),
      pos_embed("pos_embed", Tensor(Shape{cfg.max_seq, cfg.dim}, 0.0)),
      head_norm("head_norm", cfg.dim),
      head("head", cfg.classes, cfg.dim) {
  if (cfg.blocks == 0) throw ConfigError("model: need at least one block");
  if (cfg.classes < 2) throw ConfigError("model: need at least two classes");

  kaiming_uniform_init(input_proj, rng);
  for (double& v : pos_embed.value.values()) v = rng.uniform(-0.02, 0.02);
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    auto b = std::make_unique<EncoderBlock>("blocks." + std::to_string(i), cfg.dim, cfg.heads);
    kaiming_uniform_init(b->mhsa.qkv, rng);
    kaiming_uniform_init(b->mhsa.proj, rng);
    kaiming_uniform_init(b->ffn.fc1, rng);
    kaiming_uniform_init(b->ffn.fc2, rng);
    blocks.push_back(std::move(b));
  }
  kaiming_uniform_init(head, rng);

  petl = instantiate_petl(petl_cfg, cfg.blocks, cfg.dim, rng);
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    EncoderBlock& b = *blocks[i];
    const std::size_t k = petl.index_for(i);
    b.placement = petl_cfg.placement;
    switch (petl_cfg.method) {
      case Method::adapter: b.adapter = petl.adapters[k].get(); break;
      case Method::hpt: b.hist = petl.hists[k].get(); break;
      case Method::lora: b.lora = petl.loras[k].get(); break;
      case Method::ssf: b.ssf = petl.ssfs[k].get(); break;
      case Method::full_finetune:
      case Method::linear_probe: break;
    }
  }
  freeze_base(*this);
}

ParamRefs EncoderModel::all_params() {
  ParamRefs out{&input_proj.weight, &input_proj.bias, &pos_embed};
  for (auto& b : blocks) {
    out.push_back(&b->ln1.gain);
    out.push_back(&b->ln1.bias);
    out.push_back(&b->mhsa.qkv.weight);
    out.push_back(&b->mhsa.qkv.bias);
    out.push_back(&b->mhsa.proj.weight);
    out.push_back(&b->mhsa.proj.bias);
    out.push_back(&b->ln2.gain);
    out.push_back(&b->ln2.bias);
    out.push_back(&b->ffn.fc1.weight);
    out.push_back(&b->ffn.fc1.bias);
    out.push_back(&b->ffn.fc2.weight);
    out.push_back(&b->ffn.fc2.bias);
  }
  out.push_back(&head_norm.gain);
  out.push_back(&head_norm.bias);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  for (Parameter* p : petl.params()) out.push_back(p);
  return out;
}

ParamRefs EncoderModel::trainable_params() {
  ParamRefs out;
  for (Parameter* p : all_params()) {
    if (p->trainable()) out.push_back(p);
  }
  return out;
}

Parameter* EncoderModel::find_param(const std::string& name) {
  for (Parameter* p : all_params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t EncoderModel::head_param_count() const {
  return head_norm.gain.count() + head_norm.bias.count() + head.weight.count() +
         head.bias.count();
}

Tensor model_forward(const EncoderModel& m, const Tensor& frames, std::vector<Tensor>* features) {
  if (frames.rank() != 2 || frames.extent(1) != m.cfg.feat) {
    throw ShapeError("model_forward: expected [N x " + std::to_string(m.cfg.feat) + "], got " +
                     shape_str(frames.shape()));
  }
  const std::size_t n = frames.extent(0);
  if (n > m.cfg.max_seq) {
    throw ValueError("model_forward: sequence length " + std::to_string(n) +
                     " exceeds positional table " + std::to_string(m.cfg.max_seq));
  }
  Tensor x = add(linear_forward(m.input_proj, frames), slice_rows(m.pos_embed.value, 0, n));
  for (const auto& b : m.blocks) {
    x = block_forward(*b, x);
    if (features) features->push_back(x);
  }
  Tensor pooled = reduce_mean(layer_norm(x, m.head_norm.gain.value, m.head_norm.bias.value), 0);
  Tensor logits = linear_forward(m.head, reshape(pooled, Shape{1, m.cfg.dim}));
  return reshape(logits, Shape{m.cfg.classes});
}

std::vector<Tensor> capture_features(const EncoderModel& m, const Tensor& frames) {
  std::vector<Tensor> features;
  model_forward(m, frames, &features);
  return features;
}

void freeze_base(EncoderModel& m) {
  const Method method = m.petl.config.method;
  for (Parameter* p : m.all_params()) p->set_trainable(method == Method::full_finetune);
  if (method == Method::full_finetune) return;
  m.head_norm.gain.set_trainable(true);
  m.head_norm.bias.set_trainable(true);
  m.head.weight.set_trainable(true);
  m.head.bias.set_trainable(true);
  for (Parameter* p : m.petl.params()) p->set_trainable(true);
}

namespace {

constexpr char kArchiveMagic[4] = {'H', 'P', 'T', 'A'};
constexpr std::uint32_t kArchiveVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TruncationError(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(EncoderModel& m, const std::string& path, const std::string& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kArchiveMagic, 4);
  write_pod<std::uint32_t>(os, kArchiveVersion);
  write_pod<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const ParamRefs params = m.all_params();
  write_pod<std::uint64_t>(os, params.size());
  for (const Parameter* p : params) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_tensor(os, p->value);
  }
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

namespace {

std::string read_manifest_header(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kArchiveMagic, 4) != 0) {
    throw FormatError("checkpoint: '" + path + "' lacks the HPTA magic");
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kArchiveVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(is, "manifest length");
  std::string manifest(len, '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(len));
  if (!is) throw TruncationError("checkpoint: truncated manifest");
  return manifest;
}

}  // namespace

std::string load_checkpoint(EncoderModel& m, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string manifest = read_manifest_header(is, path);

  std::map<std::string, Tensor> entries;
  const auto count = read_pod<std::uint64_t>(is, "entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "entry name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw TruncationError("checkpoint: truncated entry name");
    entries.emplace(std::move(name), read_tensor(is));
  }

  ParamRefs params = m.all_params();
  if (entries.size() != params.size()) {
    throw CompatError("checkpoint: holds " + std::to_string(entries.size()) +
                      " tensors but the model registers " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      throw CompatError("checkpoint: missing parameter '" + p->name + "'");
    }
    if (it->second.shape() != p->value.shape()) {
      throw CompatError("checkpoint: parameter '" + p->name + "' has shape " +
                        shape_str(it->second.shape()) + ", model expects " +
                        shape_str(p->value.shape()));
    }
    const auto src = it->second.values();
    std::copy(src.begin(), src.end(), p->value.values().begin());
  }
  return manifest;
}

std::string read_checkpoint_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  return read_manifest_header(is, path);
}

}  // namespace hpt
