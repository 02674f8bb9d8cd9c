#include "edtm/harness.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "edtm/costs.hpp"
#include "edtm/error.hpp"
#include "edtm/io.hpp"

namespace edtm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_with_context(e, stage);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string(stage) + ": " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) fail(ErrorKind::Config, std::string(what) + " path is not set");
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) {
    fail(ErrorKind::Input, std::string(what) + " file " + p.string() + " does not exist");
  }
}

std::vector<std::string> document_texts(const Corpus& corpus, std::size_t budget) {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.documents()) out.push_back(costs::truncate_tokens(d.text, budget));
  return out;
}

std::vector<std::string> label_texts(const std::vector<LabelSpec>& labels, const std::string& tmpl) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(costs::render_label(l, tmpl));
  return out;
}

std::vector<std::size_t> kept_indices(std::size_t m, const std::vector<std::size_t>& drop) {
  std::set<std::size_t> dropped(drop.begin(), drop.end());
  for (std::size_t d : dropped) {
    if (d >= m) fail(ErrorKind::Input, "dropped label index " + std::to_string(d) + " is out of range");
  }
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < m; ++j) {
    if (!dropped.count(j)) keep.push_back(j);
  }
  if (keep.empty()) fail(ErrorKind::Input, "no labels remain after omission");
  return keep;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& keep) {
  Matrix out(static_cast<Eigen::Index>(keep.size()), m.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(keep[k]));
  return out;
}

Matrix select_cols(const Matrix& m, const std::vector<std::size_t>& keep) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(keep[k]));
  return out;
}

std::vector<LabelSpec> subset(const std::vector<LabelSpec>& labels, const std::vector<std::size_t>& keep) {
  std::vector<LabelSpec> out;
  for (std::size_t k : keep) out.push_back(labels[k]);
  return out;
}

json plan_summary(const TransportPlan& plan) {
  const Vector mass = plan.values.colwise().sum().transpose();
  return json{{"converged", plan.converged},
              {"iterations", plan.iterations},
              {"residual", plan.residual},
              {"total_mass", plan.total_mass},
              {"label_mass", std::vector<double>(mass.data(), mass.data() + mass.size())}};
}

json metrics_json(const std::optional<metrics::MetricsReport>& m) {
  if (!m) return nullptr;
  return json(*m);
}

void write_report(const fs::path& dir, const json& report) {
  io::write_file_atomic(dir / "report.json", report.dump(2) + "\n");
}

void write_outcome(const fs::path& dir, const AssignOutcome& outcome, const Corpus& corpus,
                   const std::vector<LabelSpec>& labels) {
  in_stage("output", [&] {
    fs::create_directories(dir);
    io::write_matrix(dir / "plan.edtm", outcome.plan.values);
    io::write_file_atomic(dir / "clustering.jsonl", name_clustering(outcome.clustering, corpus, labels).to_jsonl());
    return 0;
  });
}

struct Inputs {
  Corpus corpus;
  std::vector<LabelSpec> labels;
};

Inputs load_inputs(const ExperimentConfig& config) {
  return in_stage("input", [&] {
    config.validate();
    Inputs in{Corpus::load(config.corpus), load_labels(config.labels)};
    validate_labels(in.labels, &in.corpus);
    return in;
  });
}

std::size_t gold_count(const Corpus& corpus, const std::string& label) {
  return static_cast<std::size_t>(std::count_if(corpus.documents().begin(), corpus.documents().end(),
                                                [&](const Document& d) { return d.gold_label == label; }));
}

}  // namespace

CostKind parse_cost_kind(const std::string& s) {
  if (s == "l2") return CostKind::L2;
  if (s == "ce") return CostKind::CrossEncoder;
  if (s == "seed-doc") return CostKind::SeedDoc;
  fail(ErrorKind::Config, "cost kind must be l2, ce or seed-doc, got \"" + s + "\"");
}

const char* to_string(CostKind kind) {
  switch (kind) {
    case CostKind::L2: return "l2";
    case CostKind::CrossEncoder: return "ce";
    case CostKind::SeedDoc: return "seed-doc";
  }
  return "?";
}

AssignMode parse_assign_mode(const std::string& s) {
  if (s == "complete") return AssignMode::Complete;
  if (s == "partial") return AssignMode::Partial;
  fail(ErrorKind::Config, "mode must be complete or partial, got \"" + s + "\"");
}

const char* to_string(AssignMode mode) {
  return mode == AssignMode::Complete ? "complete" : "partial";
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> known{"corpus", "labels", "provider", "cost", "seed_k",
                                           "label_template", "token_budget", "schedule", "solver",
                                           "mode", "p", "omission", "run_dir"};
  if (!j.is_object()) fail(ErrorKind::Config, "experiment config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorKind::Config, "unknown config field \"" + key + "\"");
  }
  ExperimentConfig c;
  try {
    if (j.contains("corpus")) c.corpus = resolve(j["corpus"].get<std::string>(), base_dir);
    if (j.contains("labels")) c.labels = resolve(j["labels"].get<std::string>(), base_dir);
    if (j.contains("provider")) {
      c.provider = j["provider"].get<ProviderConfig>();
      c.provider.documents = resolve(c.provider.documents, base_dir);
      c.provider.labels = resolve(c.provider.labels, base_dir);
      c.provider.scores = resolve(c.provider.scores, base_dir);
      c.provider.cache_dir = resolve(c.provider.cache_dir, base_dir);
    }
    if (j.contains("cost")) c.cost = parse_cost_kind(j["cost"].get<std::string>());
    c.seed_k = j.value("seed_k", c.seed_k);
    c.label_template = j.value("label_template", c.label_template);
    c.token_budget = j.value("token_budget", c.token_budget);
    if (auto it = j.find("schedule"); it != j.end()) {
      c.schedule.batch_size = it->value("batch_size", c.schedule.batch_size);
      c.schedule.epochs = it->value("epochs", c.schedule.epochs);
      c.schedule.shuffle_seed = it->value("seed", c.schedule.shuffle_seed);
    }
    if (auto it = j.find("solver"); it != j.end()) {
      c.solver.lambda = it->value("lambda", c.solver.lambda);
      c.solver.tolerance = it->value("tolerance", c.solver.tolerance);
      c.solver.max_iters = it->value("max_iters", c.solver.max_iters);
    }
    if (j.contains("mode")) c.mode = parse_assign_mode(j["mode"].get<std::string>());
    if (auto it = j.find("p"); it != j.end() && !it->is_null()) c.p = it->get<double>();
    if (auto it = j.find("omission"); it != j.end()) {
      c.omission.labels = it->value("labels", c.omission.labels);
      c.omission.repeats = it->value("repeats", c.omission.repeats);
      c.omission.seed = it->value("seed", c.omission.seed);
    }
    if (j.contains("run_dir")) c.run_dir = resolve(j["run_dir"].get<std::string>(), base_dir);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": malformed JSON: " + e.what());
  }
  try {
    return from_json(j, path.parent_path());
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

json ExperimentConfig::to_json() const {
  json j{{"corpus", corpus.string()},
         {"labels", labels.string()},
         {"provider", provider},
         {"cost", edtm::to_string(cost)},
         {"seed_k", seed_k},
         {"label_template", label_template},
         {"token_budget", token_budget},
         {"schedule", {{"batch_size", schedule.batch_size}, {"epochs", schedule.epochs}, {"seed", schedule.shuffle_seed}}},
         {"solver", {{"lambda", solver.lambda}, {"tolerance", solver.tolerance}, {"max_iters", solver.max_iters}}},
         {"mode", edtm::to_string(mode)},
         {"p", p ? json(*p) : json(nullptr)},
         {"omission", {{"labels", omission.labels}, {"repeats", omission.repeats}, {"seed", omission.seed}}},
         {"run_dir", run_dir.string()}};
  return j;
}

void ExperimentConfig::validate(bool check_files) const {
  if (mode == AssignMode::Partial) {
    if (!p) fail(ErrorKind::Config, "partial mode requires p");
    if (!(*p > 0.0 && *p <= 1.0)) fail(ErrorKind::Config, "p must lie in (0, 1]");
  } else if (p) {
    fail(ErrorKind::Config, "p is only meaningful in partial mode");
  }
  if (seed_k < 1) fail(ErrorKind::Config, "seed_k must be at least 1");
  if (token_budget < 1) fail(ErrorKind::Config, "token_budget must be at least 1");
  if (omission.repeats < 1) fail(ErrorKind::Config, "omission repeats must be at least 1");
  if (label_template.find(kLabelPlaceholder) == std::string::npos) {
    fail(ErrorKind::Config, "label_template lacks the LABEL placeholder");
  }
  try {
    schedule.validate();
    solver.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  if (!check_files) return;
  require_file(corpus, "corpus");
  require_file(labels, "labels");
  if (provider.kind == "file") {
    if (cost == CostKind::CrossEncoder) {
      require_file(provider.scores, "provider scores");
    } else {
      require_file(provider.documents, "provider documents");
      if (cost == CostKind::L2) require_file(provider.labels, "provider labels");
    }
  }
}

CostMatrix build_costs(const ExperimentConfig& config, const Corpus& corpus, const std::vector<LabelSpec>& labels,
                       const std::vector<std::size_t>& drop) {
  const auto keep = in_stage("costs", [&] { return kept_indices(labels.size(), drop); });
  const auto docs_text = document_texts(corpus, config.token_budget);
  const auto labels_text = in_stage("costs", [&] { return label_texts(labels, config.label_template); });

  if (config.cost == CostKind::CrossEncoder) {
    Matrix scores = in_stage("provider", [&] { return fetch_scores(docs_text, labels_text, config.provider); });
    return in_stage("costs", [&] { return costs::ce_costs(ScoreMatrix(select_cols(scores, keep))); });
  }

  Matrix docs = in_stage("provider", [&] {
    auto source = make_embedding_source(config.provider, EmbeddingRole::Documents);
    return fetch_embeddings(docs_text, *source);
  });
  if (config.cost == CostKind::SeedDoc) {
    return in_stage("costs", [&] {
      const EmbeddingMatrix doc_vectors(std::move(docs));
      const auto label_vectors =
          costs::seed_doc_label_embeddings(doc_vectors, corpus, subset(labels, keep), config.seed_k);
      return costs::l2_costs(doc_vectors, label_vectors);
    });
  }
  Matrix label_vectors = in_stage("provider", [&] {
    auto source = make_embedding_source(config.provider, EmbeddingRole::Labels);
    return fetch_embeddings(labels_text, *source);
  });
  return in_stage("costs", [&] {
    return costs::l2_costs(EmbeddingMatrix(std::move(docs)), EmbeddingMatrix(select_rows(label_vectors, keep)));
  });
}

std::optional<metrics::MetricsReport> evaluate_against_gold(const Clustering& predicted, const Corpus& corpus,
                                                            const std::vector<LabelSpec>& labels) {
  std::vector<std::string> universe;
  const Clustering gold = gold_clustering(corpus, universe);
  if (gold.assigned_count() == 0) return std::nullopt;
  std::vector<std::string> order;
  for (const auto& d : corpus.documents()) order.push_back(d.id);
  const Clustering pred = index_clustering(name_clustering(predicted, corpus, labels), order, universe);
  metrics::MetricsReport report = metrics::evaluate(pred, gold);
  report.assigned_fraction = predicted.assigned_fraction();
  return report;
}

AssignOutcome assign_costs(const ExperimentConfig& config, const CostMatrix& cost, const Corpus& corpus,
                           const std::vector<LabelSpec>& labels) {
  SolverConfig solver = config.solver;
  solver.mass_p = config.mode == AssignMode::Partial ? config.p : std::nullopt;
  AssignOutcome out;
  out.plan = in_stage("assignment", [&] {
    return config.mode == AssignMode::Partial ? assign::batched_partial_assign(cost, config.schedule, solver)
                                              : assign::batched_complete_assign(cost, config.schedule, solver);
  });
  out.clustering = in_stage("hardening", [&] {
    return config.mode == AssignMode::Partial ? assign::harden_partial(out.plan, *config.p)
                                              : assign::harden_complete(out.plan);
  });
  out.metrics = in_stage("evaluation", [&] { return evaluate_against_gold(out.clustering, corpus, labels); });
  return out;
}

AssignOutcome assign_pipeline(const ExperimentConfig& config, const Corpus& corpus,
                              const std::vector<LabelSpec>& labels) {
  in_stage("config", [&] { config.validate(false); return 0; });
  const CostMatrix cost = build_costs(config, corpus, labels);
  return assign_costs(config, cost, corpus, labels);
}

json run_assign(const ExperimentConfig& config) {
  const Inputs in = load_inputs(config);
  const AssignOutcome outcome = assign_pipeline(config, in.corpus, in.labels);
  json report{{"command", "assign"},
              {"mode", to_string(config.mode)},
              {"p", config.p ? json(*config.p) : json(nullptr)},
              {"cost", to_string(config.cost)},
              {"n_documents", in.corpus.size()},
              {"n_labels", in.labels.size()},
              {"assigned_fraction", outcome.clustering.assigned_fraction()},
              {"plan", plan_summary(outcome.plan)},
              {"metrics", metrics_json(outcome.metrics)}};
  if (!config.run_dir.empty()) {
    write_outcome(config.run_dir, outcome, in.corpus, in.labels);
    in_stage("output", [&] { write_report(config.run_dir, report); return 0; });
  }
  return report;
}

json run_nn_baseline(const ExperimentConfig& config) {
  const Inputs in = load_inputs(config);
  const CostMatrix cost = build_costs(config, in.corpus, in.labels);
  const Clustering clustering = in_stage("hardening", [&] { return assign::nearest_label(cost); });
  const auto metrics = in_stage("evaluation", [&] { return evaluate_against_gold(clustering, in.corpus, in.labels); });
  json report{{"command", "nn"},
              {"cost", to_string(config.cost)},
              {"n_documents", in.corpus.size()},
              {"n_labels", in.labels.size()},
              {"assigned_fraction", clustering.assigned_fraction()},
              {"metrics", metrics_json(metrics)}};
  if (!config.run_dir.empty()) {
    in_stage("output", [&] {
      fs::create_directories(config.run_dir);
      io::write_file_atomic(config.run_dir / "clustering.jsonl",
                            name_clustering(clustering, in.corpus, in.labels).to_jsonl());
      write_report(config.run_dir, report);
      return 0;
    });
  }
  return report;
}

json run_label_omission(const ExperimentConfig& config) {
  const Inputs in = load_inputs(config);
  const std::size_t n = in.corpus.size();
  if (in.labels.size() < 2) fail(ErrorKind::Config, "label omission needs at least 2 labels");
  if (std::none_of(in.corpus.documents().begin(), in.corpus.documents().end(),
                   [](const Document& d) { return d.gold_label.has_value(); })) {
    fail(ErrorKind::Config, "label omission needs gold labels");
  }

  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < in.labels.size(); ++k) index.emplace(in.labels[k].id, k);

  std::vector<std::string> choices = config.omission.labels;
  if (choices.empty()) {
    std::vector<std::size_t> by_freq(in.labels.size());
    std::iota(by_freq.begin(), by_freq.end(), std::size_t{0});
    std::vector<std::size_t> freq(in.labels.size());
    for (std::size_t k = 0; k < in.labels.size(); ++k) freq[k] = gold_count(in.corpus, in.labels[k].id);
    std::stable_sort(by_freq.begin(), by_freq.end(), [&](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
    for (std::size_t k = 0; k < by_freq.size() && choices.size() < 5; ++k) {
      if (freq[by_freq[k]] > 0) choices.push_back(in.labels[by_freq[k]].id);
    }
    if (choices.empty()) fail(ErrorKind::Config, "no label of the label set occurs in the gold labels");
    std::mt19937_64 rng(config.omission.seed);
    std::shuffle(choices.begin(), choices.end(), rng);
  }

  json runs = json::array();
  metrics::MetricsReport mean;
  std::size_t evaluated_runs = 0;
  for (std::size_t r = 0; r < config.omission.repeats; ++r) {
    const std::string& omitted = choices[r % choices.size()];
    auto it = index.find(omitted);
    if (it == index.end()) fail(ErrorKind::Config, "omitted label \"" + omitted + "\" is not in the label set");
    const std::size_t freq = gold_count(in.corpus, omitted);
    if (freq == 0) fail(ErrorKind::Config, "omitted label \"" + omitted + "\" does not occur in the gold labels");
    if (freq >= n) fail(ErrorKind::Config, "omitted label \"" + omitted + "\" covers every document");

    ExperimentConfig run = config;
    run.mode = AssignMode::Partial;
    run.p = 1.0 - static_cast<double>(freq) / static_cast<double>(n);
    run.schedule.shuffle_seed = config.schedule.shuffle_seed + r;
    std::vector<LabelSpec> kept;
    for (std::size_t k = 0; k < in.labels.size(); ++k) {
      if (k != it->second) kept.push_back(in.labels[k]);
    }

    AssignOutcome outcome;
    try {
      const CostMatrix cost = build_costs(run, in.corpus, in.labels, {it->second});
      outcome = assign_costs(run, cost, in.corpus, kept);
    } catch (const Error& e) {
      rethrow_with_context(e, "omission run " + std::to_string(r));
    }

    json entry{{"run", r},
               {"omitted", omitted},
               {"p", *run.p},
               {"assigned_fraction", outcome.clustering.assigned_fraction()},
               {"plan", plan_summary(outcome.plan)},
               {"metrics", metrics_json(outcome.metrics)}};
    if (outcome.metrics) {
      mean.purity += outcome.metrics->purity;
      mean.inverse_purity += outcome.metrics->inverse_purity;
      mean.p1 += outcome.metrics->p1;
      mean.mi_nats += outcome.metrics->mi_nats;
      mean.assigned_fraction += outcome.metrics->assigned_fraction;
      mean.n_evaluated += outcome.metrics->n_evaluated;
      ++evaluated_runs;
    }
    if (!config.run_dir.empty()) {
      const fs::path dir = config.run_dir / ("run-" + std::to_string(r));
      write_outcome(dir, outcome, in.corpus, kept);
      in_stage("output", [&] { write_report(dir, entry); return 0; });
    }
    runs.push_back(std::move(entry));
  }

  json mean_json = nullptr;
  if (evaluated_runs > 0) {
    const double k = static_cast<double>(evaluated_runs);
    mean.purity /= k;
    mean.inverse_purity /= k;
    mean.p1 /= k;
    mean.mi_nats /= k;
    mean.assigned_fraction /= k;
    mean.n_evaluated /= evaluated_runs;
    mean_json = mean;
  }
  json report{{"command", "omit"},
              {"cost", to_string(config.cost)},
              {"n_documents", n},
              {"n_labels", in.labels.size()},
              {"runs", std::move(runs)},
              {"mean", std::move(mean_json)}};
  if (!config.run_dir.empty()) in_stage("output", [&] { write_report(config.run_dir, report); return 0; });
  return report;
}

json run_costs(const ExperimentConfig& config) {
  const Inputs in = load_inputs(config);
  const CostMatrix cost = build_costs(config, in.corpus, in.labels);
  json report{{"command", "costs"},
              {"cost", to_string(config.cost)},
              {"rows", cost.rows()},
              {"cols", cost.cols()},
              {"min", cost.values().minCoeff()},
              {"max", cost.values().maxCoeff()}};
  if (!config.run_dir.empty()) {
    in_stage("output", [&] {
      fs::create_directories(config.run_dir);
      io::write_matrix(config.run_dir / "costs.edtm", cost.values());
      write_report(config.run_dir, report);
      return 0;
    });
  }
  return report;
}

metrics::MetricsReport evaluate_files(const fs::path& corpus_path, const fs::path& clustering_path) {
  const Corpus corpus = Corpus::load(corpus_path);
  const NamedClustering named = NamedClustering::load(clustering_path);
  std::vector<std::string> universe;
  const Clustering gold = gold_clustering(corpus, universe);
  if (gold.assigned_count() == 0) fail(ErrorKind::Evaluation, corpus_path.string() + " has no gold labels");
  std::vector<std::string> order;
  for (const auto& d : corpus.documents()) order.push_back(d.id);
  const Clustering pred = index_clustering(named, order, universe);
  metrics::MetricsReport report = metrics::evaluate(pred, gold);
  report.assigned_fraction = pred.assigned_fraction();
  return report;
}

json run_command(const std::string& command, const ExperimentConfig& config) {
  if (command == "assign") return run_assign(config);
  if (command == "nn") return run_nn_baseline(config);
  if (command == "omit") return run_label_omission(config);
  if (command == "costs") return run_costs(config);
  fail(ErrorKind::Config, "unknown command \"" + command + "\"");
}

}  // namespace edtm
