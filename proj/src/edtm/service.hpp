#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "edtm/assignment.hpp"
#include "edtm/harness.hpp"
#include "edtm/ot.hpp"
#include "edtm/provider.hpp"

namespace edtm {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "edtm-data";

  // Defaults for every session. A session created with uploaded document
  // embeddings reads them through a file provider instead.
  ProviderConfig provider;
  CostKind cost = CostKind::L2;
  std::string label_template = "LABEL";
  std::size_t seed_k = 5;
  BatchSchedule schedule;
  SolverConfig solver;

  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ServiceConfig load(const std::filesystem::path& path);
  // EDTM_PORT and EDTM_DATA_DIR override the port and data directory.
  void apply_environment();
};

// HTTP JSON API over sessions stored under data_dir/sessions/<id>/.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Loads persisted sessions, binds and serves on a background thread.
  // Returns the bound port.
  int start();
  // Stops accepting requests and waits for running jobs.
  void stop();
  int port() const;

  // Blocks until no session has a running job.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace edtm
