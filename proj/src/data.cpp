#include "hpt/data.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "hpt/rng.hpp"

namespace hpt {

Tensor Split::sample(std::size_t i) const {
  if (i >= size()) throw ValueError("split: sample index out of range");
  const std::size_t n = seq(), f = feat();
  const auto src = frames.values().subspan(i * n * f, n * f);
  return Tensor(Shape{n, f}, std::vector<double>(src.begin(), src.end()));
}

namespace {

Split gen_split(const SyntheticSpec& s, std::size_t per_class, bool shifted, Rng& rng) {
  const std::size_t m = s.classes * per_class;
  std::vector<double> frames(m * s.seq * s.feat);
  std::vector<std::uint32_t> labels(m);
  std::size_t idx = 0;
  for (std::size_t c = 0; c < s.classes; ++c) {
    const double delta = s.delta0 + static_cast<double>(c) * s.delta_step;
    for (std::size_t k = 0; k < per_class; ++k, ++idx) {
      labels[idx] = static_cast<std::uint32_t>(c);
      double* row = frames.data() + idx * s.seq * s.feat;
      for (std::size_t j = 0; j < s.seq * s.feat; ++j) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        row[j] = sign * delta + s.sigma * rng.normal();
      }
      if (shifted) {
        const double gain = rng.uniform(0.5, 1.5);
        for (std::size_t j = 0; j < s.seq * s.feat; ++j) row[j] *= gain;
      }
    }
  }
  return Split{Tensor(Shape{m, s.seq, s.feat}, std::move(frames)), std::move(labels)};
}

}  // namespace

DatasetBundle gen_synthetic(const SyntheticSpec& s) {
  if (s.classes < 2) throw ConfigError("gen_synthetic: need at least two classes");
  if (s.train_per_class == 0 || s.val_per_class == 0 || s.test_per_class == 0) {
    throw ConfigError("gen_synthetic: every split needs at least one sample per class");
  }
  if (s.seq == 0 || s.feat == 0) throw ConfigError("gen_synthetic: empty frame geometry");
  if (s.sigma < 0) throw ConfigError("gen_synthetic: sigma must be non-negative");
  if (s.shift_profile != "none" && s.shift_profile != "gain") {
    throw ConfigError("gen_synthetic: unknown shift profile '" + s.shift_profile +
                      "' (expected 'none' or 'gain')");
  }

  const bool shifted = s.shift_profile == "gain";
  Rng rng(s.seed);
  DatasetBundle bundle;
  bundle.classes = s.classes;
  bundle.train = gen_split(s, s.train_per_class, false, rng);
  bundle.val = gen_split(s, s.val_per_class, shifted, rng);
  bundle.test = gen_split(s, s.test_per_class, shifted, rng);

  nlohmann::json manifest{
      {"generator",
       {{"classes", s.classes},
        {"train_per_class", s.train_per_class},
        {"val_per_class", s.val_per_class},
        {"test_per_class", s.test_per_class},
        {"seq", s.seq},
        {"feat", s.feat},
        {"delta0", s.delta0},
        {"delta_step", s.delta_step},
        {"sigma", s.sigma},
        {"shift_profile", s.shift_profile},
        {"seed", s.seed}}},
      {"splits",
       {{"train", bundle.train.size()},
        {"val", bundle.val.size()},
        {"test", bundle.test.size()}}}};
  bundle.manifest = manifest.dump(2);
  return bundle;
}

namespace {

constexpr char kMagic[4] = {'P', 'T', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TruncationError(std::string("dataset: truncated reading ") + what);
  return v;
}

}  // namespace

void write_dataset(const std::string& path, const Split& split, std::size_t classes) {
  static_assert(std::endian::native == std::endian::little, "serializer assumes little-endian");
  if (split.frames.rank() != 3 || split.frames.extent(0) != split.labels.size()) {
    throw ShapeError("dataset: frames must be [M x N x F] with one label per record");
  }
  for (std::uint32_t label : split.labels) {
    if (label >= classes) throw ValueError("dataset: label exceeds class count");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("dataset: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(classes));
  write_pod<std::uint64_t>(os, split.size());
  write_pod<std::uint64_t>(os, split.seq());
  write_pod<std::uint64_t>(os, split.feat());
  for (std::uint32_t label : split.labels) write_pod<std::uint32_t>(os, label);
  const auto vals = split.frames.values();
  os.write(reinterpret_cast<const char*>(vals.data()),
           static_cast<std::streamsize>(vals.size() * sizeof(double)));
  if (!os) throw IoError("dataset: write to '" + path + "' failed");
}

std::pair<Split, std::size_t> read_dataset(const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "serializer assumes little-endian");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dataset: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("dataset: '" + path + "' lacks the PTDS magic");
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  const auto classes = read_pod<std::uint32_t>(is, "class count");
  const auto m = read_pod<std::uint64_t>(is, "record count");
  const auto n = read_pod<std::uint64_t>(is, "sequence length");
  const auto f = read_pod<std::uint64_t>(is, "feature count");
  std::vector<std::uint32_t> labels(m);
  for (auto& label : labels) {
    label = read_pod<std::uint32_t>(is, "label");
    if (label >= classes) throw ValueError("dataset: label exceeds class count");
  }
  std::vector<double> frames(m * n * f);
  is.read(reinterpret_cast<char*>(frames.data()),
          static_cast<std::streamsize>(frames.size() * sizeof(double)));
  if (!is) throw TruncationError("dataset: truncated frames payload");
  return {Split{Tensor(Shape{m, n, f}, std::move(frames)), std::move(labels)},
          static_cast<std::size_t>(classes)};
}

}  // namespace hpt
