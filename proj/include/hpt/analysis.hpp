#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hpt/data.hpp"
#include "hpt/encoder.hpp"

namespace hpt {

struct AuditRow {
  std::string module;
  std::size_t count = 0;
  bool trainable = false;
};

// Published trainable-parameter budget this configuration should land near.
struct ReferenceBudget {
  std::string row;
  double value = 0;
};

struct ParamAudit {
  std::vector<AuditRow> modules;  // grouped by parameter prefix, walk order
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t closed_form = 0;  // formula-derived trainable count
  std::optional<ReferenceBudget> reference;
  double rel_delta = 0;  // (trainable − reference)/reference when present

  std::size_t total() const { return trainable + frozen; }
};

// Walks the model's registered parameters and groups them by module prefix.
// `trainable_only` filters the per-module rows; both totals are always kept.
ParamAudit count_params(EncoderModel& model, bool trainable_only = false);

// Formula-level trainable count for a configuration, kept separate from the
// model walk so the two can cross-check each other.
std::size_t closed_form_trainable(const ModelConfig& mc, const PetlConfig& pc);

// Reference budgets exist for the full-scale study grid (D=768, 12 blocks,
// 4- or 5-class heads); other configurations get std::nullopt.
std::optional<ReferenceBudget> reference_budget(const ModelConfig& mc, const PetlConfig& pc);

std::string audit_csv_string(const ParamAudit& audit);
std::string audit_table_string(const ParamAudit& audit);

// Linear centered-kernel alignment between feature matrices [M x Da] and
// [M x Db]: column-center both, then ‖AᵀB‖²_F / (‖AᵀA‖_F·‖BᵀB‖_F).
// An all-zero (or otherwise degenerate) side scores 0 by convention.
double cka_linear(const Tensor& a, const Tensor& b);

struct SimilarityReport {
  std::vector<double> scores;  // one per block, each in [0, 1]
};

// Token-mean features over a probe split: one [M x D] matrix per block.
std::vector<Tensor> block_features(const EncoderModel& m, const Split& probe);

SimilarityReport similarity_report(const EncoderModel& candidate, const EncoderModel& reference,
                                   const Split& probe);

std::string similarity_csv_string(const SimilarityReport& report);
std::string similarity_table_string(const SimilarityReport& report);

}  // namespace hpt
