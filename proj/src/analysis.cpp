#include "hpt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "hpt/tensor.hpp"

namespace hpt {

namespace {

std::string module_of(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

ParamAudit count_params(EncoderModel& model, bool trainable_only) {
  ParamAudit audit;
  for (const Parameter* p : model.all_params()) {
    if (p->trainable()) {
      audit.trainable += p->count();
    } else {
      audit.frozen += p->count();
    }
    if (trainable_only && !p->trainable()) continue;
    const std::string mod = module_of(p->name);
    auto it = std::find_if(audit.modules.begin(), audit.modules.end(),
                           [&](const AuditRow& r) { return r.module == mod; });
    if (it == audit.modules.end()) {
      audit.modules.push_back({mod, p->count(), p->trainable()});
    } else {
      it->count += p->count();
      it->trainable = it->trainable || p->trainable();
    }
  }
  audit.closed_form = closed_form_trainable(model.cfg, model.petl.config);
  audit.reference = reference_budget(model.cfg, model.petl.config);
  if (audit.reference) {
    audit.rel_delta =
        (static_cast<double>(audit.trainable) - audit.reference->value) / audit.reference->value;
  }
  return audit;
}

std::size_t closed_form_trainable(const ModelConfig& mc, const PetlConfig& pc) {
  const std::size_t d = mc.dim;
  const std::size_t head = 2 * d + mc.classes * d + mc.classes;
  const std::size_t k = pc.shared ? 1 : mc.blocks;
  switch (pc.method) {
    case Method::full_finetune: {
      const std::size_t input = d * mc.feat + d;
      const std::size_t pos = mc.max_seq * d;
      const std::size_t per_block = 12 * d * d + 13 * d;
      return input + pos + mc.blocks * per_block + head;
    }
    case Method::linear_probe:
      return head;
    case Method::adapter: {
      const std::size_t h = std::max<std::size_t>(1, d / pc.rate);
      return head + k * (2 * d * h + h + d);
    }
    case Method::lora:
      return head + k * (2 * d * pc.rank);
    case Method::ssf: {
      std::size_t dims = 0;
      for (const std::string& point : pc.insertions) {
        if (point == "qkv") {
          dims += 3 * d;
        } else if (point == "fc1") {
          dims += 4 * d;
        } else {
          dims += d;  // ln1, proj, ln2, fc2
        }
      }
      return head + k * 2 * dims;
    }
    case Method::hpt:
      return head + k * (pc.bins * d + 2 * pc.bins);
  }
  throw ConfigError("closed_form_trainable: unknown method");
}

std::optional<ReferenceBudget> reference_budget(const ModelConfig& mc, const PetlConfig& pc) {
  if (mc.dim != 768 || mc.blocks != 12) return std::nullopt;
  if (mc.classes != 4 && mc.classes != 5) return std::nullopt;
  const bool five = mc.classes == 5;
  const std::string tail = five ? ", 5-class" : ", 4-class";
  const auto budget = [&](const std::string& row, double v) {
    return std::optional<ReferenceBudget>{ReferenceBudget{row + tail, v}};
  };

  switch (pc.method) {
    case Method::full_finetune:
      return budget("full fine-tune", 86.9e6);
    case Method::linear_probe:
      return budget("linear probe", five ? 5.6e3 : 4.9e3);
    case Method::adapter:
      if (pc.shared) {
        if (pc.rate == 256) return budget("adapter (256), shared", five ? 11.0e3 : 10.2e3);
        if (pc.rate == 128) return budget("adapter (128), shared", five ? 15.6e3 : 14.9e3);
        if (pc.rate == 64) return budget("adapter (64), shared", five ? 24.8e3 : 24.1e3);
      } else if (five) {
        if (pc.rate == 256) return budget("adapter (256), non-shared", 70.2e3);
        if (pc.rate == 128) return budget("adapter (128), non-shared", 125.0e3);
        if (pc.rate == 64) return budget("adapter (64), non-shared", 236.0e3);
      }
      return std::nullopt;
    case Method::hpt:
      if (pc.placement != HistPlacement::parallel_mhsa) return std::nullopt;
      if (pc.shared) {
        if (pc.bins == 4) return budget("hpt (4), shared", five ? 8.7e3 : 7.9e3);
        if (pc.bins == 8) return budget("hpt (8), shared", five ? 11.8e3 : 11.0e3);
        if (pc.bins == 16) return budget("hpt (16), shared", five ? 18.0e3 : 17.2e3);
      } else if (five) {
        if (pc.bins == 4) return budget("hpt (4), non-shared", 42.6e3);
        if (pc.bins == 8) return budget("hpt (8), non-shared", 79.6e3);
        if (pc.bins == 16) return budget("hpt (16), non-shared", 153.0e3);
      }
      return std::nullopt;
    case Method::lora:
      if (!pc.shared) return std::nullopt;
      if (pc.rank == 6) return budget("lora (rank 6), shared", five ? 14.9e3 : 14.1e3);
      if (pc.rank == 12) return budget("lora (rank 12), shared", five ? 24.1e3 : 23.3e3);
      return std::nullopt;
    case Method::ssf: {
      if (!pc.shared) return std::nullopt;
      const std::set<std::string> ln{"ln1"};
      const std::set<std::string> mhsa{"ln1", "qkv", "proj"};
      const std::set<std::string> all{"ln1", "qkv", "proj", "ln2", "fc1", "fc2"};
      if (pc.insertions == ln) return budget("ssf (layernorm), shared", five ? 7.2e3 : 6.4e3);
      if (pc.insertions == mhsa) return budget("ssf (mhsa), shared", five ? 13.3e3 : 12.5e3);
      if (pc.insertions == all) return budget("ssf (mhsa+ffn), shared", five ? 22.5e3 : 21.8e3);
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::string audit_csv_string(const ParamAudit& audit) {
  std::string out = "module,count\n";
  for (const AuditRow& row : audit.modules) {
    out += row.module + "," + std::to_string(row.count) + "\n";
  }
  out += "total_trainable," + std::to_string(audit.trainable) + "\n";
  out += "total_frozen," + std::to_string(audit.frozen) + "\n";
  return out;
}

std::string audit_table_string(const ParamAudit& audit) {
  std::size_t width = 16;
  for (const AuditRow& row : audit.modules) width = std::max(width, row.module.size());
  std::string out;
  for (const AuditRow& row : audit.modules) {
    out += row.module + std::string(width - row.module.size() + 2, ' ') +
           std::to_string(row.count) + (row.trainable ? "" : "  (frozen)") + "\n";
  }
  out += "\ntrainable  " + std::to_string(audit.trainable);
  out += "\nfrozen     " + std::to_string(audit.frozen);
  out += "\nclosed form " + std::to_string(audit.closed_form) +
         (audit.closed_form == audit.trainable ? " (match)" : " (MISMATCH)");
  if (audit.reference) {
    out += "\nreference  " + audit.reference->row + ": " + fmt("%.4g", audit.reference->value) +
           " (delta " + fmt("%+.2f", 100.0 * audit.rel_delta) + "%)";
  }
  out += "\n";
  return out;
}

double cka_linear(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("cka_linear: expected rank-2 features, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0);
  if (b.extent(0) != m) {
    throw ShapeError("cka_linear: row counts differ: " + std::to_string(m) + " vs " +
                     std::to_string(b.extent(0)));
  }
  if (m < 2) throw ValueError("cka_linear: need at least 2 rows");
  const std::size_t da = a.extent(1), db = b.extent(1);

  const auto centered = [m](const Tensor& t, std::size_t cols) {
    std::vector<double> c(t.values().begin(), t.values().end());
    for (std::size_t j = 0; j < cols; ++j) {
      double mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += c[i * cols + j];
      mean /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) c[i * cols + j] -= mean;
    }
    return c;
  };
  const std::vector<double> ac = centered(a, da);
  const std::vector<double> bc = centered(b, db);

  // ‖XᵀY‖²_F accumulated column-pair by column-pair.
  const auto cross_norm_sq = [m](const std::vector<double>& x, std::size_t dx,
                                 const std::vector<double>& y, std::size_t dy) {
    double total = 0;
    for (std::size_t p = 0; p < dx; ++p) {
      for (std::size_t q = 0; q < dy; ++q) {
        double dot = 0;
        for (std::size_t i = 0; i < m; ++i) dot += x[i * dx + p] * y[i * dy + q];
        total += dot * dot;
      }
    }
    return total;
  };

  const double cross = cross_norm_sq(ac, da, bc, db);
  const double na = std::sqrt(cross_norm_sq(ac, da, ac, da));
  const double nb = std::sqrt(cross_norm_sq(bc, db, bc, db));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return cross / (na * nb);
}

std::vector<Tensor> block_features(const EncoderModel& m, const Split& probe) {
  const std::size_t samples = probe.size();
  if (samples == 0) throw ValueError("block_features: empty probe split");
  std::vector<Tensor> feats(m.cfg.blocks, Tensor(Shape{samples, m.cfg.dim}, 0.0));
  for (std::size_t i = 0; i < samples; ++i) {
    const std::vector<Tensor> per_block = capture_features(m, probe.sample(i));
    for (std::size_t b = 0; b < m.cfg.blocks; ++b) {
      const Tensor mean = reduce_mean(per_block[b], 0);  // token mean, [D]
      const auto src = mean.values();
      auto dst = feats[b].values();
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * m.cfg.dim));
    }
  }
  return feats;
}

SimilarityReport similarity_report(const EncoderModel& candidate, const EncoderModel& reference,
                                   const Split& probe) {
  if (candidate.cfg.blocks != reference.cfg.blocks || candidate.cfg.dim != reference.cfg.dim ||
      candidate.cfg.feat != reference.cfg.feat) {
    throw CompatError("similarity_report: architectures differ (blocks " +
                      std::to_string(candidate.cfg.blocks) + " vs " +
                      std::to_string(reference.cfg.blocks) + ", dim " +
                      std::to_string(candidate.cfg.dim) + " vs " +
                      std::to_string(reference.cfg.dim) + ", feat " +
                      std::to_string(candidate.cfg.feat) + " vs " +
                      std::to_string(reference.cfg.feat) + ")");
  }
  const std::vector<Tensor> fc = block_features(candidate, probe);
  const std::vector<Tensor> fr = block_features(reference, probe);
  SimilarityReport report;
  report.scores.reserve(fc.size());
  for (std::size_t b = 0; b < fc.size(); ++b) {
    report.scores.push_back(cka_linear(fc[b], fr[b]));
  }
  return report;
}

std::string similarity_csv_string(const SimilarityReport& report) {
  std::string out = "block,score\n";
  for (std::size_t b = 0; b < report.scores.size(); ++b) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", b + 1, report.scores[b]);
    out += buf;
  }
  return out;
}

std::string similarity_table_string(const SimilarityReport& report) {
  std::string out = "block  cka\n";
  for (std::size_t b = 0; b < report.scores.size(); ++b) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-5zu  %.6f\n", b + 1, report.scores[b]);
    out += buf;
  }
  return out;
}

}  // namespace hpt
