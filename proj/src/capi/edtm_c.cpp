#include "edtm/edtm.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edtm/assignment.hpp"
#include "edtm/costs.hpp"
#include "edtm/error.hpp"
#include "edtm/harness.hpp"
#include "edtm/io.hpp"
#include "edtm/metrics.hpp"
#include "edtm/ot.hpp"
#include "edtm/service.hpp"

struct edtm_matrix {
  edtm::Matrix values;
};

struct edtm_plan {
  edtm::TransportPlan plan;
};

struct edtm_clustering {
  edtm::Clustering clustering;
};

struct edtm_service {
  edtm::Service service;
};

namespace {

thread_local std::string last_error;

edtm_status status_of(edtm::ErrorKind kind) {
  switch (kind) {
    case edtm::ErrorKind::Input: return EDTM_ERR_INPUT;
    case edtm::ErrorKind::Solver: return EDTM_ERR_SOLVER;
    case edtm::ErrorKind::Provider: return EDTM_ERR_PROVIDER;
    case edtm::ErrorKind::Config: return EDTM_ERR_CONFIG;
    case edtm::ErrorKind::Hardening: return EDTM_ERR_HARDENING;
    case edtm::ErrorKind::Evaluation: return EDTM_ERR_EVALUATION;
    case edtm::ErrorKind::Io: return EDTM_ERR_IO;
    case edtm::ErrorKind::Conflict: return EDTM_ERR_CONFLICT;
    case edtm::ErrorKind::NotFound: return EDTM_ERR_NOT_FOUND;
  }
  return EDTM_ERR_INTERNAL;
}

template <typename Fn>
edtm_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return EDTM_OK;
  } catch (const edtm::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return EDTM_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return EDTM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return EDTM_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return EDTM_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) edtm::fail(edtm::ErrorKind::Input, std::string(what) + " is NULL");
}

edtm::SolverConfig solver_from(const edtm_solver_config* cfg) {
  edtm::SolverConfig s;
  if (cfg) {
    s.lambda = cfg->lambda;
    s.max_iters = cfg->max_iters;
    s.tolerance = cfg->tolerance;
    if (cfg->mass_p != 0.0) s.mass_p = cfg->mass_p;
  }
  return s;
}

edtm::Marginal marginal_from(const double* w, std::size_t n) {
  if (!w) return edtm::Marginal::uniform(n);
  return edtm::Marginal(Eigen::Map<const edtm::Vector>(w, static_cast<Eigen::Index>(n)));
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* edtm_version(void) { return "1.0.0"; }

const char* edtm_status_name(edtm_status status) {
  switch (status) {
    case EDTM_OK: return "ok";
    case EDTM_ERR_INPUT: return "input";
    case EDTM_ERR_SOLVER: return "solver";
    case EDTM_ERR_PROVIDER: return "provider";
    case EDTM_ERR_CONFIG: return "config";
    case EDTM_ERR_HARDENING: return "hardening";
    case EDTM_ERR_EVALUATION: return "evaluation";
    case EDTM_ERR_IO: return "io";
    case EDTM_ERR_CONFLICT: return "conflict";
    case EDTM_ERR_NOT_FOUND: return "not found";
    case EDTM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* edtm_last_error(void) { return last_error.c_str(); }

edtm_status edtm_matrix_create(size_t rows, size_t cols, const double* values, edtm_matrix** out) {
  return guard([&] {
    require(out, "out");
    if (rows == 0 || cols == 0) edtm::fail(edtm::ErrorKind::Input, "matrix shape must be non-empty");
    require(values, "values");
    auto m = std::make_unique<edtm_matrix>();
    m->values = Eigen::Map<const edtm::Matrix>(values, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!m->values.allFinite()) edtm::fail(edtm::ErrorKind::Input, "matrix values must be finite");
    *out = m.release();
  });
}

edtm_status edtm_matrix_read(const char* path, edtm_matrix** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto m = std::make_unique<edtm_matrix>();
    m->values = edtm::io::read_matrix(path);
    *out = m.release();
  });
}

edtm_status edtm_matrix_write(const edtm_matrix* m, const char* path) {
  return guard([&] {
    require(m, "matrix");
    require(path, "path");
    edtm::io::write_matrix(path, m->values);
  });
}

size_t edtm_matrix_rows(const edtm_matrix* m) { return m ? static_cast<size_t>(m->values.rows()) : 0; }
size_t edtm_matrix_cols(const edtm_matrix* m) { return m ? static_cast<size_t>(m->values.cols()) : 0; }
const double* edtm_matrix_data(const edtm_matrix* m) { return m ? m->values.data() : nullptr; }
void edtm_matrix_free(edtm_matrix* m) { delete m; }

void edtm_solver_config_default(edtm_solver_config* cfg) {
  if (!cfg) return;
  const edtm::SolverConfig d;
  cfg->lambda = d.lambda;
  cfg->max_iters = d.max_iters;
  cfg->tolerance = d.tolerance;
  cfg->mass_p = 0.0;
}

void edtm_schedule_default(edtm_schedule* schedule) {
  if (!schedule) return;
  const edtm::BatchSchedule d;
  schedule->batch_size = d.batch_size;
  schedule->epochs = d.epochs;
  schedule->shuffle_seed = d.shuffle_seed;
}

edtm_status edtm_sinkhorn(const edtm_matrix* cost, const double* row_weights, const double* col_weights,
                          const edtm_solver_config* cfg, edtm_plan** out) {
  return guard([&] {
    require(cost, "cost");
    require(out, "out");
    const edtm::CostMatrix c(cost->values);
    const edtm::Marginal a = marginal_from(row_weights, c.rows());
    const edtm::Marginal b = marginal_from(col_weights, c.cols());
    const edtm::SolverConfig s = solver_from(cfg);
    auto p = std::make_unique<edtm_plan>();
    p->plan = s.mass_p ? edtm::ot::sinkhorn_partial(c, a, b, s) : edtm::ot::sinkhorn_complete(c, a, b, s);
    *out = p.release();
  });
}

edtm_status edtm_assign(const edtm_matrix* cost, const edtm_schedule* schedule, const edtm_solver_config* cfg,
                        edtm_plan** out) {
  return guard([&] {
    require(cost, "cost");
    require(out, "out");
    const edtm::CostMatrix c(cost->values);
    edtm::BatchSchedule b;
    if (schedule) {
      b.batch_size = schedule->batch_size;
      b.epochs = schedule->epochs;
      b.shuffle_seed = schedule->shuffle_seed;
    }
    const edtm::SolverConfig s = solver_from(cfg);
    auto p = std::make_unique<edtm_plan>();
    p->plan = s.mass_p ? edtm::assign::batched_partial_assign(c, b, s) : edtm::assign::batched_complete_assign(c, b, s);
    *out = p.release();
  });
}

size_t edtm_plan_rows(const edtm_plan* plan) { return plan ? plan->plan.rows() : 0; }
size_t edtm_plan_cols(const edtm_plan* plan) { return plan ? plan->plan.cols() : 0; }
const double* edtm_plan_data(const edtm_plan* plan) { return plan ? plan->plan.values.data() : nullptr; }
double edtm_plan_total_mass(const edtm_plan* plan) { return plan ? plan->plan.total_mass : 0.0; }
int edtm_plan_converged(const edtm_plan* plan) { return plan && plan->plan.converged ? 1 : 0; }
size_t edtm_plan_iterations(const edtm_plan* plan) { return plan ? plan->plan.iterations : 0; }
double edtm_plan_residual(const edtm_plan* plan) { return plan ? plan->plan.residual : 0.0; }

edtm_status edtm_plan_cost(const edtm_plan* plan, const edtm_matrix* cost, double* out) {
  return guard([&] {
    require(plan, "plan");
    require(cost, "cost");
    require(out, "out");
    *out = edtm::ot::wasserstein_cost(plan->plan, edtm::CostMatrix(cost->values));
  });
}

void edtm_plan_free(edtm_plan* plan) { delete plan; }

edtm_status edtm_clustering_create(const int32_t* labels, size_t n, edtm_clustering** out) {
  return guard([&] {
    require(out, "out");
    if (n > 0) require(labels, "labels");
    auto c = std::make_unique<edtm_clustering>();
    c->clustering = edtm::Clustering(std::vector<std::int32_t>(labels, labels + n));
    *out = c.release();
  });
}

size_t edtm_clustering_size(const edtm_clustering* c) { return c ? c->clustering.size() : 0; }
const int32_t* edtm_clustering_labels(const edtm_clustering* c) {
  return c ? c->clustering.labels().data() : nullptr;
}
void edtm_clustering_free(edtm_clustering* c) { delete c; }

edtm_status edtm_harden_complete(const edtm_plan* plan, edtm_clustering** out) {
  return guard([&] {
    require(plan, "plan");
    require(out, "out");
    auto c = std::make_unique<edtm_clustering>();
    c->clustering = edtm::assign::harden_complete(plan->plan);
    *out = c.release();
  });
}

edtm_status edtm_harden_partial(const edtm_plan* plan, double p, edtm_clustering** out) {
  return guard([&] {
    require(plan, "plan");
    require(out, "out");
    auto c = std::make_unique<edtm_clustering>();
    c->clustering = edtm::assign::harden_partial(plan->plan, p);
    *out = c.release();
  });
}

edtm_status edtm_nearest_label(const edtm_matrix* cost, edtm_clustering** out) {
  return guard([&] {
    require(cost, "cost");
    require(out, "out");
    auto c = std::make_unique<edtm_clustering>();
    c->clustering = edtm::assign::nearest_label(edtm::CostMatrix(cost->values));
    *out = c.release();
  });
}

edtm_status edtm_l2_costs(const edtm_matrix* docs, const edtm_matrix* labels, edtm_matrix** out) {
  return guard([&] {
    require(docs, "docs");
    require(labels, "labels");
    require(out, "out");
    auto m = std::make_unique<edtm_matrix>();
    m->values = edtm::costs::l2_costs(edtm::EmbeddingMatrix(docs->values), edtm::EmbeddingMatrix(labels->values)).values();
    *out = m.release();
  });
}

edtm_status edtm_ce_costs(const edtm_matrix* scores, edtm_matrix** out) {
  return guard([&] {
    require(scores, "scores");
    require(out, "out");
    auto m = std::make_unique<edtm_matrix>();
    m->values = edtm::costs::ce_costs(edtm::ScoreMatrix(scores->values)).values();
    *out = m.release();
  });
}

edtm_status edtm_evaluate(const edtm_clustering* predicted, const edtm_clustering* gold, edtm_metrics* out) {
  return guard([&] {
    require(predicted, "predicted");
    require(gold, "gold");
    require(out, "out");
    if (predicted->clustering.size() != gold->clustering.size()) {
      edtm::fail(edtm::ErrorKind::Input, "predicted and gold clusterings differ in size");
    }
    const auto r = edtm::metrics::evaluate(predicted->clustering, gold->clustering);
    *out = edtm_metrics{r.purity, r.inverse_purity, r.p1, r.mi_nats, r.assigned_fraction, r.n_evaluated};
  });
}

edtm_status edtm_run_experiment(const char* command, const char* config_json, const char* base_dir,
                                char** result_json) {
  return guard([&] {
    require(command, "command");
    require(config_json, "config_json");
    require(result_json, "result_json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error& e) {
      edtm::fail(edtm::ErrorKind::Config, std::string("malformed config JSON: ") + e.what());
    }
    const auto config = edtm::ExperimentConfig::from_json(j, base_dir ? base_dir : "");
    *result_json = copy_string(edtm::run_command(command, config).dump(2));
  });
}

edtm_status edtm_evaluate_files(const char* corpus_path, const char* clustering_path, char** result_json) {
  return guard([&] {
    require(corpus_path, "corpus_path");
    require(clustering_path, "clustering_path");
    require(result_json, "result_json");
    const nlohmann::json report = edtm::evaluate_files(corpus_path, clustering_path);
    *result_json = copy_string(report.dump(2));
  });
}

void edtm_string_free(char* s) { std::free(s); }

edtm_status edtm_service_create(const char* config_json, const char* base_dir, edtm_service** out) {
  return guard([&] {
    require(out, "out");
    edtm::ServiceConfig config;
    if (config_json) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(config_json);
      } catch (const nlohmann::json::parse_error& e) {
        edtm::fail(edtm::ErrorKind::Config, std::string("malformed service config JSON: ") + e.what());
      }
      config = edtm::ServiceConfig::from_json(j, base_dir ? base_dir : "");
    }
    config.apply_environment();
    *out = new edtm_service{edtm::Service(std::move(config))};
  });
}

edtm_status edtm_service_start(edtm_service* service, int* bound_port) {
  return guard([&] {
    require(service, "service");
    const int port = service->service.start();
    if (bound_port) *bound_port = port;
  });
}

edtm_status edtm_service_stop(edtm_service* service) {
  return guard([&] {
    require(service, "service");
    service->service.stop();
  });
}

void edtm_service_free(edtm_service* service) { delete service; }

}  // extern "C"
