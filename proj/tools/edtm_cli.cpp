// edtm command-line driver. Talks to the engine only through the C API.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edtm/edtm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> interrupted{false};

void on_signal(int) { interrupted = true; }

struct ExperimentFlags {
  std::string config;
  std::string corpus, labels, run_dir;
  std::string provider_kind, documents, label_vectors, scores, endpoint, scores_endpoint;
  std::string auth_header, auth_env, cache_dir;
  std::string cost, label_template, mode;
  std::optional<std::size_t> seed_k, batch_size, epochs, max_iters, repeats, chunk_size, max_parallel;
  std::optional<std::uint64_t> seed, omit_seed;
  std::optional<double> lambda, tolerance, p;
  std::vector<std::string> omit;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--config", f.config, "experiment config file (JSON)");
  cmd->add_option("--corpus", f.corpus, "corpus JSONL");
  cmd->add_option("--labels", f.labels, "label specs JSON");
  cmd->add_option("--run-dir", f.run_dir, "directory for plan, clustering and report");
  cmd->add_option("--provider", f.provider_kind, "file | remote")->check(CLI::IsMember({"file", "remote"}));
  cmd->add_option("--documents", f.documents, "document embedding matrix (file provider)");
  cmd->add_option("--label-vectors", f.label_vectors, "label embedding matrix (file provider)");
  cmd->add_option("--scores", f.scores, "relevance score matrix (file provider)");
  cmd->add_option("--endpoint", f.endpoint, "embedding endpoint URL (remote provider)");
  cmd->add_option("--scores-endpoint", f.scores_endpoint, "scoring endpoint URL (remote provider)");
  cmd->add_option("--auth-header", f.auth_header, "auth header name");
  cmd->add_option("--auth-env", f.auth_env, "environment variable holding the auth value");
  cmd->add_option("--cache-dir", f.cache_dir, "embedding cache directory");
  cmd->add_option("--chunk-size", f.chunk_size, "texts per remote request");
  cmd->add_option("--max-parallel", f.max_parallel, "concurrent remote requests");
  cmd->add_option("--cost", f.cost, "l2 | ce | seed-doc")->check(CLI::IsMember({"l2", "ce", "seed-doc"}));
  cmd->add_option("--seed-k", f.seed_k, "seed documents averaged per label");
  cmd->add_option("--template", f.label_template, "label template containing LABEL");
  cmd->add_option("--batch-size", f.batch_size, "documents per batch");
  cmd->add_option("--epochs", f.epochs, "passes over the corpus");
  cmd->add_option("--seed", f.seed, "shuffle seed");
  cmd->add_option("--lambda", f.lambda, "entropy weight");
  cmd->add_option("--tolerance", f.tolerance, "solver tolerance");
  cmd->add_option("--max-iters", f.max_iters, "solver iteration cap");
  cmd->add_option("--mode", f.mode, "complete | partial")->check(CLI::IsMember({"complete", "partial"}));
  cmd->add_option("--p", f.p, "mass kept in partial mode");
  cmd->add_option("--omit", f.omit, "label id to omit (repeatable)");
  cmd->add_option("--repeats", f.repeats, "omission runs");
  cmd->add_option("--omit-seed", f.omit_seed, "seed for choosing omitted labels");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

// Flag paths are relative to the working directory, config paths to the
// config file; flags are made absolute so both can share one base.
std::string abs_path(const std::string& p) { return fs::absolute(p).string(); }

json merge_flags(const ExperimentFlags& f, std::string& base_dir) {
  json j = json::object();
  if (!f.config.empty()) {
    j = read_json_file(f.config);
    base_dir = fs::absolute(f.config).parent_path().string();
  }
  auto set_path = [](json& obj, const char* key, const std::string& v) {
    if (!v.empty()) obj[key] = abs_path(v);
  };
  set_path(j, "corpus", f.corpus);
  set_path(j, "labels", f.labels);
  set_path(j, "run_dir", f.run_dir);

  json& provider = j["provider"];
  if (provider.is_null()) provider = json::object();
  if (!f.provider_kind.empty()) provider["kind"] = f.provider_kind;
  set_path(provider, "documents", f.documents);
  set_path(provider, "labels", f.label_vectors);
  set_path(provider, "scores", f.scores);
  set_path(provider, "cache_dir", f.cache_dir);
  if (!f.endpoint.empty()) provider["endpoint"] = f.endpoint;
  if (!f.scores_endpoint.empty()) provider["scores_endpoint"] = f.scores_endpoint;
  if (!f.auth_header.empty()) provider["auth_header"] = f.auth_header;
  if (!f.auth_env.empty()) provider["auth_env"] = f.auth_env;
  if (f.chunk_size) provider["chunk_size"] = *f.chunk_size;
  if (f.max_parallel) provider["max_parallel"] = *f.max_parallel;

  if (!f.cost.empty()) j["cost"] = f.cost;
  if (f.seed_k) j["seed_k"] = *f.seed_k;
  if (!f.label_template.empty()) j["label_template"] = f.label_template;
  if (f.batch_size) j["schedule"]["batch_size"] = *f.batch_size;
  if (f.epochs) j["schedule"]["epochs"] = *f.epochs;
  if (f.seed) j["schedule"]["seed"] = *f.seed;
  if (f.lambda) j["solver"]["lambda"] = *f.lambda;
  if (f.tolerance) j["solver"]["tolerance"] = *f.tolerance;
  if (f.max_iters) j["solver"]["max_iters"] = *f.max_iters;
  if (!f.mode.empty()) j["mode"] = f.mode;
  if (f.p) j["p"] = *f.p;
  if (!f.omit.empty()) j["omission"]["labels"] = f.omit;
  if (f.repeats) j["omission"]["repeats"] = *f.repeats;
  if (f.omit_seed) j["omission"]["seed"] = *f.omit_seed;
  return j;
}

int report_failure(edtm_status status) {
  std::cerr << "edtm: " << edtm_status_name(status) << " error: " << edtm_last_error() << "\n";
  return static_cast<int>(status);
}

int print_result(edtm_status status, char* result) {
  if (status != EDTM_OK) return report_failure(status);
  std::cout << result << "\n";
  edtm_string_free(result);
  return 0;
}

int run_experiment(const std::string& command, const ExperimentFlags& flags) {
  std::string base_dir;
  json config;
  try {
    config = merge_flags(flags, base_dir);
  } catch (const std::exception& e) {
    std::cerr << "edtm: config error: " << e.what() << "\n";
    return static_cast<int>(EDTM_ERR_CONFIG);
  }
  char* result = nullptr;
  const edtm_status status =
      edtm_run_experiment(command.c_str(), config.dump().c_str(), base_dir.empty() ? nullptr : base_dir.c_str(), &result);
  return print_result(status, result);
}

int serve(const std::string& config_path, std::optional<int> port, const std::string& data_dir) {
  json config = json::object();
  std::string base_dir;
  try {
    if (!config_path.empty()) {
      config = read_json_file(config_path);
      base_dir = fs::absolute(config_path).parent_path().string();
    }
  } catch (const std::exception& e) {
    std::cerr << "edtm: config error: " << e.what() << "\n";
    return static_cast<int>(EDTM_ERR_CONFIG);
  }
  // Flags win over the environment, which wins over the config file.
  if (port) setenv("EDTM_PORT", std::to_string(*port).c_str(), 1);
  if (!data_dir.empty()) setenv("EDTM_DATA_DIR", abs_path(data_dir).c_str(), 1);
  edtm_service* service = nullptr;
  edtm_status status = edtm_service_create(config.dump().c_str(), base_dir.empty() ? nullptr : base_dir.c_str(), &service);
  if (status != EDTM_OK) return report_failure(status);
  int bound = 0;
  status = edtm_service_start(service, &bound);
  if (status != EDTM_OK) {
    edtm_service_free(service);
    return report_failure(status);
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "edtm service listening on port " << bound << std::endl;
  while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  edtm_service_stop(service);
  edtm_service_free(service);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edtm: topic assignment by optimal transport"};
  app.require_subcommand(1);
  app.set_version_flag("--version", edtm_version());

  ExperimentFlags assign_flags, nn_flags, omit_flags, costs_flags;
  auto* assign_cmd = app.add_subcommand("assign", "batched assignment, hardening and evaluation");
  add_experiment_flags(assign_cmd, assign_flags);
  auto* nn_cmd = app.add_subcommand("nn", "greedy nearest-label baseline");
  add_experiment_flags(nn_cmd, nn_flags);
  auto* omit_cmd = app.add_subcommand("omit", "label omission with partial assignment");
  add_experiment_flags(omit_cmd, omit_flags);
  auto* costs_cmd = app.add_subcommand("costs", "compute and store the cost matrix");
  add_experiment_flags(costs_cmd, costs_flags);

  std::string corpus, clustering;
  auto* metrics_cmd = app.add_subcommand("metrics", "score a clustering against corpus gold labels");
  metrics_cmd->add_option("--corpus", corpus, "corpus JSONL with gold labels")->required();
  metrics_cmd->add_option("--clustering", clustering, "clustering JSONL")->required();

  std::string serve_config, data_dir;
  std::optional<int> port;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP API");
  serve_cmd->add_option("--config", serve_config, "service config file (JSON)");
  serve_cmd->add_option("--port", port, "listen port");
  serve_cmd->add_option("--data-dir", data_dir, "session storage directory");

  CLI11_PARSE(app, argc, argv);

  if (*assign_cmd) return run_experiment("assign", assign_flags);
  if (*nn_cmd) return run_experiment("nn", nn_flags);
  if (*omit_cmd) return run_experiment("omit", omit_flags);
  if (*costs_cmd) return run_experiment("costs", costs_flags);
  if (*metrics_cmd) {
    char* result = nullptr;
    return print_result(edtm_evaluate_files(corpus.c_str(), clustering.c_str(), &result), result);
  }
  if (*serve_cmd) return serve(serve_config, port, data_dir);
  return 0;
}
