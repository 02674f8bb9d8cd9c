#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edtm/assignment.hpp"
#include "edtm/corpus.hpp"
#include "edtm/metrics.hpp"
#include "edtm/ot.hpp"
#include "edtm/provider.hpp"

namespace edtm {

enum class CostKind { L2, CrossEncoder, SeedDoc };
enum class AssignMode { Complete, Partial };

CostKind parse_cost_kind(const std::string& s);
const char* to_string(CostKind kind);
AssignMode parse_assign_mode(const std::string& s);
const char* to_string(AssignMode mode);

struct OmissionSpec {
  // Label ids to drop, one per run (cycled). Empty: draw from the five most
  // frequent gold labels.
  std::vector<std::string> labels;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::filesystem::path labels;
  ProviderConfig provider;
  CostKind cost = CostKind::L2;
  std::size_t seed_k = 5;
  std::string label_template = "LABEL";
  std::size_t token_budget = 450;
  BatchSchedule schedule;
  SolverConfig solver;
  AssignMode mode = AssignMode::Complete;
  std::optional<double> p;
  OmissionSpec omission;
  std::filesystem::path run_dir;

  // Relative paths are resolved against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Mode/p consistency and parameter ranges; with `check_files`, also that
  // every referenced input exists.
  void validate(bool check_files = true) const;
};

// Builds the cost matrix for `labels`, dropping the label indices in `drop`
// before any per-row normalization.
CostMatrix build_costs(const ExperimentConfig& config, const Corpus& corpus,
                       const std::vector<LabelSpec>& labels, const std::vector<std::size_t>& drop = {});

struct AssignOutcome {
  TransportPlan plan;
  Clustering clustering;
  std::optional<metrics::MetricsReport> metrics;
};

// Costs -> batched assignment -> hardening -> evaluation when gold labels
// exist. Errors carry the failing stage as a prefix.
AssignOutcome assign_pipeline(const ExperimentConfig& config, const Corpus& corpus,
                              const std::vector<LabelSpec>& labels);

// Same, on an already built cost matrix.
AssignOutcome assign_costs(const ExperimentConfig& config, const CostMatrix& cost, const Corpus& corpus,
                           const std::vector<LabelSpec>& labels);

// Predicted and gold labels over one shared label-id universe; nullopt when
// the corpus has no gold labels at all.
std::optional<metrics::MetricsReport> evaluate_against_gold(const Clustering& predicted, const Corpus& corpus,
                                                            const std::vector<LabelSpec>& labels);

// Each run writes its artifacts under config.run_dir (when set) and returns
// the report it wrote as report.json.
nlohmann::json run_assign(const ExperimentConfig& config);
nlohmann::json run_nn_baseline(const ExperimentConfig& config);
nlohmann::json run_label_omission(const ExperimentConfig& config);
nlohmann::json run_costs(const ExperimentConfig& config);

// Scores a clustering file against the corpus gold labels.
metrics::MetricsReport evaluate_files(const std::filesystem::path& corpus,
                                      const std::filesystem::path& clustering);

// Dispatches "assign" | "nn" | "omit" | "costs".
nlohmann::json run_command(const std::string& command, const ExperimentConfig& config);

}  // namespace edtm
