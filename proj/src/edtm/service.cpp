#include "edtm/service.hpp"

#include <algorithm>
#include <cctype>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "edtm/corpus.hpp"
#include "edtm/error.hpp"
#include "edtm/io.hpp"

namespace edtm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input:
    case ErrorKind::Config:
    case ErrorKind::Hardening:
    case ErrorKind::Evaluation:
      return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Provider: return 502;
    case ErrorKind::Solver:
    case ErrorKind::Io:
      return 500;
  }
  return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, json{{"error", {{"kind", kind}, {"message", message}}}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Input, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const char* const kStages[] = {"input", "config", "provider", "costs", "assignment", "hardening", "evaluation", "output"};

std::string stage_of(const std::string& message, const std::string& fallback) {
  const auto colon = message.find(": ");
  if (colon == std::string::npos) return fallback;
  const std::string head = message.substr(0, colon);
  for (const char* s : kStages) {
    if (head == s) return head;
  }
  return fallback;
}

struct JobRecord {
  std::size_t number = 0;
  std::string status = "running";  // running | done | failed
  std::string stage = "queued";
  std::string message;
  std::string mode;
  std::optional<double> p;
  std::size_t label_version = 0;

  std::string id() const { return "j" + std::to_string(number); }
};

json job_json(const JobRecord& j) {
  return json{{"id", j.id()},
              {"status", j.status},
              {"stage", j.stage},
              {"message", j.message},
              {"mode", j.mode},
              {"p", j.p ? json(*j.p) : json(nullptr)},
              {"label_version", j.label_version}};
}

JobRecord job_from_json(const json& j) {
  JobRecord r;
  const std::string id = j.at("id").get<std::string>();
  r.number = std::stoul(id.substr(1));
  r.status = j.at("status").get<std::string>();
  r.stage = j.value("stage", "");
  r.message = j.value("message", "");
  r.mode = j.value("mode", "");
  if (j.contains("p") && !j["p"].is_null()) r.p = j["p"].get<double>();
  r.label_version = j.value("label_version", std::size_t{0});
  return r;
}

std::optional<std::size_t> parse_prefixed_number(const std::string& id, char prefix) {
  if (id.size() < 2 || id[0] != prefix) return std::nullopt;
  std::size_t value = 0;
  for (std::size_t i = 1; i < id.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(id[i]))) return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(id[i] - '0');
  }
  return value;
}

struct Session {
  std::size_t number = 0;
  fs::path dir;
  Corpus corpus;
  bool uploaded_embeddings = false;
  ExperimentConfig base;

  std::mutex mu;
  std::vector<LabelSpec> labels;
  std::size_t label_version = 0;
  std::optional<std::vector<LabelSpec>> pending_labels;
  std::map<std::size_t, JobRecord> jobs;
  std::size_t next_job = 1;
  std::optional<std::size_t> running;
  std::optional<std::size_t> latest_job;
  std::shared_ptr<const std::string> latest;

  std::string id() const { return "s" + std::to_string(number); }
  fs::path job_dir(std::size_t job) const { return dir / "jobs" / ("j" + std::to_string(job)); }

  // Callers hold `mu`.
  void persist() const {
    json j{{"id", id()},
           {"cost", to_string(base.cost)},
           {"label_template", base.label_template},
           {"seed_k", base.seed_k},
           {"uploaded_embeddings", uploaded_embeddings},
           {"labels", labels},
           {"label_version", label_version},
           {"pending_labels", pending_labels ? json(*pending_labels) : json(nullptr)},
           {"next_job", next_job},
           {"latest_job", latest_job ? json("j" + std::to_string(*latest_job)) : json(nullptr)}};
    io::write_file_atomic(dir / "session.json", j.dump(2));
  }

  void persist_job(const JobRecord& job) const {
    fs::create_directories(job_dir(job.number));
    io::write_file_atomic(job_dir(job.number) / "job.json", job_json(job).dump(2));
  }

  void apply_labels(std::vector<LabelSpec> specs) {
    labels = std::move(specs);
    ++label_version;
    fs::create_directories(dir / "labels");
    io::write_file_atomic(dir / "labels" / ("v" + std::to_string(label_version) + ".json"), json(labels).dump(2));
  }

  std::string status() const {
    if (running) return "running";
    if (jobs.empty()) return "idle";
    return jobs.rbegin()->second.status;
  }

  json summary() const {
    return json{{"id", id()},
                {"n_documents", corpus.size()},
                {"n_labels", labels.size()},
                {"status", status()}};
  }

  json view() const {
    json job_ids = json::array();
    for (const auto& [n, _] : jobs) job_ids.push_back("j" + std::to_string(n));
    const bool has_gold = std::any_of(corpus.documents().begin(), corpus.documents().end(),
                                      [](const Document& d) { return d.gold_label.has_value(); });
    return json{{"id", id()},
                {"n_documents", corpus.size()},
                {"has_gold", has_gold},
                {"cost", to_string(base.cost)},
                {"label_template", base.label_template},
                {"labels", labels},
                {"label_version", label_version},
                {"pending_labels", pending_labels.has_value()},
                {"status", status()},
                {"running_job", running ? json("j" + std::to_string(*running)) : json(nullptr)},
                {"latest_result_job", latest_job ? json("j" + std::to_string(*latest_job)) : json(nullptr)},
                {"jobs", job_ids}};
  }
};

std::vector<LabelSpec> labels_from_body(const json& body, const Corpus& corpus) {
  const json& list = body.is_object() && body.contains("labels") ? body["labels"] : body;
  if (!list.is_array()) fail(ErrorKind::Input, "labels must be a JSON array of label specs");
  std::vector<LabelSpec> specs;
  for (std::size_t k = 0; k < list.size(); ++k) {
    try {
      specs.push_back(list[k].get<LabelSpec>());
    } catch (const Error& e) {
      rethrow_with_context(e, "label " + std::to_string(k));
    } catch (const json::exception& e) {
      fail(ErrorKind::Input, "label " + std::to_string(k) + ": " + e.what());
    }
  }
  validate_labels(specs, &corpus);
  return specs;
}

json document_entry(const Corpus& corpus, std::size_t i, double confidence) {
  return json{{"id", corpus[i].id}, {"confidence", confidence}};
}

std::string build_snapshot(const std::string& job_id, const ExperimentConfig& cfg, std::size_t label_version,
                           const Corpus& corpus, const std::vector<LabelSpec>& labels, const AssignOutcome& outcome) {
  const Vector confidence = outcome.plan.values.rowwise().sum();
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidence(static_cast<Eigen::Index>(a)) > confidence(static_cast<Eigen::Index>(b));
  });

  std::vector<json> members(labels.size(), json::array());
  json unassigned = json::array();
  for (std::size_t i : order) {
    json entry = document_entry(corpus, i, confidence(static_cast<Eigen::Index>(i)));
    if (outcome.clustering.assigned(i)) {
      members[static_cast<std::size_t>(outcome.clustering[i])].push_back(std::move(entry));
    } else {
      unassigned.push_back(std::move(entry));
    }
  }
  json clusters = json::array();
  for (std::size_t k = 0; k < labels.size(); ++k) {
    clusters.push_back(json{{"label", labels[k].id},
                            {"name", labels[k].name},
                            {"size", members[k].size()},
                            {"documents", std::move(members[k])}});
  }
  json snapshot{{"job", job_id},
                {"mode", to_string(cfg.mode)},
                {"p", cfg.p ? json(*cfg.p) : json(nullptr)},
                {"label_version", label_version},
                {"n_documents", corpus.size()},
                {"clusters", std::move(clusters)},
                {"unassigned", {{"size", unassigned.size()}, {"documents", std::move(unassigned)}}},
                {"plan",
                 {{"converged", outcome.plan.converged},
                  {"iterations", outcome.plan.iterations},
                  {"residual", outcome.plan.residual},
                  {"total_mass", outcome.plan.total_mass}}},
                {"metrics", outcome.metrics ? json(*outcome.metrics) : json(nullptr)}};
  return snapshot.dump();
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::Config, "service config must be a JSON object");
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("data_dir")) {
      fs::path d = j["data_dir"].get<std::string>();
      c.data_dir = d.is_absolute() || base_dir.empty() ? d : base_dir / d;
    }
    // The experiment parser already knows provider, cost, schedule and solver.
    json exp = json::object();
    for (const char* key : {"provider", "cost", "label_template", "seed_k", "schedule", "solver"}) {
      if (j.contains(key)) exp[key] = j[key];
    }
    const ExperimentConfig e = ExperimentConfig::from_json(exp, base_dir);
    c.provider = e.provider;
    c.cost = e.cost;
    c.label_template = e.label_template;
    c.seed_k = e.seed_k;
    c.schedule = e.schedule;
    c.solver = e.solver;
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("service config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) fail(ErrorKind::Config, "service port is out of range");
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": malformed JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

void ServiceConfig::apply_environment() {
  if (const char* port_env = std::getenv("EDTM_PORT"); port_env && *port_env) {
    char* end = nullptr;
    const long v = std::strtol(port_env, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) fail(ErrorKind::Config, "EDTM_PORT must be a port number");
    port = static_cast<int>(v);
  }
  if (const char* dir = std::getenv("EDTM_DATA_DIR"); dir && *dir) data_dir = dir;
}

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  std::thread listener;
  int bound_port = 0;
  bool started = false;

  std::mutex sessions_mu;
  std::map<std::size_t, std::shared_ptr<Session>> sessions;
  std::size_t next_session = 1;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::size_t active_jobs = 0;
  std::vector<std::thread> workers;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {}

  fs::path sessions_root() const { return config.data_dir / "sessions"; }

  ExperimentConfig default_experiment() const {
    ExperimentConfig e;
    e.provider = config.provider;
    e.cost = config.cost;
    e.label_template = config.label_template;
    e.seed_k = config.seed_k;
    e.schedule = config.schedule;
    e.solver = config.solver;
    return e;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    const auto number = parse_prefixed_number(id, 's');
    std::lock_guard lock(sessions_mu);
    auto it = number ? sessions.find(*number) : sessions.end();
    if (it == sessions.end()) fail(ErrorKind::NotFound, "no session \"" + id + "\"");
    return it->second;
  }

  void load_sessions() {
    std::error_code ec;
    if (!fs::is_directory(sessions_root(), ec)) return;
    for (const auto& entry : fs::directory_iterator(sessions_root())) {
      const fs::path meta = entry.path() / "session.json";
      if (!fs::is_regular_file(meta, ec)) continue;
      try {
        load_session(entry.path(), json::parse(io::read_file(meta)));
      } catch (const std::exception& e) {
        fail(ErrorKind::Io, "cannot restore session from " + entry.path().string() + ": " + e.what());
      }
    }
  }

  void load_session(const fs::path& dir, const json& j) {
    auto s = std::make_shared<Session>();
    const auto number = parse_prefixed_number(j.at("id").get<std::string>(), 's');
    if (!number) fail(ErrorKind::Io, "malformed session id");
    s->number = *number;
    s->dir = dir;
    s->corpus = Corpus::load(dir / "corpus.jsonl");
    s->base = default_experiment();
    s->base.cost = parse_cost_kind(j.at("cost").get<std::string>());
    s->base.label_template = j.value("label_template", s->base.label_template);
    s->base.seed_k = j.value("seed_k", s->base.seed_k);
    s->uploaded_embeddings = j.value("uploaded_embeddings", false);
    if (s->uploaded_embeddings) {
      s->base.provider.kind = "file";
      s->base.provider.documents = dir / "documents.edtm";
    }
    s->labels = j.at("labels").get<std::vector<LabelSpec>>();
    s->label_version = j.at("label_version").get<std::size_t>();
    if (!j.at("pending_labels").is_null()) s->pending_labels = j["pending_labels"].get<std::vector<LabelSpec>>();
    s->next_job = j.at("next_job").get<std::size_t>();
    if (!j.at("latest_job").is_null()) {
      s->latest_job = parse_prefixed_number(j["latest_job"].get<std::string>(), 'j');
    }
    std::error_code ec;
    if (fs::is_directory(dir / "jobs", ec)) {
      for (const auto& job_entry : fs::directory_iterator(dir / "jobs")) {
        const fs::path meta = job_entry.path() / "job.json";
        if (!fs::is_regular_file(meta, ec)) continue;
        JobRecord job = job_from_json(json::parse(io::read_file(meta)));
        if (job.status == "running") {
          job.status = "failed";
          job.message = "interrupted by a service restart";
          s->persist_job(job);
        }
        s->next_job = std::max(s->next_job, job.number + 1);
        s->jobs[job.number] = job;
      }
    }
    if (s->pending_labels) {
      s->apply_labels(std::move(*s->pending_labels));
      s->pending_labels.reset();
    }
    if (s->latest_job) {
      const fs::path results = s->job_dir(*s->latest_job) / "results.json";
      if (fs::is_regular_file(results, ec)) s->latest = std::make_shared<const std::string>(io::read_file(results));
    }
    s->persist();
    std::lock_guard lock(sessions_mu);
    next_session = std::max(next_session, s->number + 1);
    sessions[s->number] = std::move(s);
  }

  // POST /sessions
  json create_session(const httplib::Request& req) {
    const bool is_json = req.get_header_value("Content-Type").find("application/json") != std::string::npos;
    json body = is_json ? parse_body(req) : json{{"corpus", req.body}};
    if (!body.is_object() || !body.contains("corpus") || !body["corpus"].is_string()) {
      fail(ErrorKind::Input, "request needs a \"corpus\" string holding JSONL documents");
    }
    auto s = std::make_shared<Session>();
    s->corpus = Corpus::parse_jsonl(body["corpus"].get<std::string>());
    s->base = default_experiment();
    if (body.contains("cost")) s->base.cost = parse_cost_kind(body["cost"].get<std::string>());
    if (body.contains("label_template")) s->base.label_template = body["label_template"].get<std::string>();
    if (body.contains("seed_k")) s->base.seed_k = body["seed_k"].get<std::size_t>();
    s->base.validate(false);

    std::optional<Matrix> embeddings;
    if (auto it = body.find("embeddings"); it != body.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != s->corpus.size()) {
        fail(ErrorKind::Input, "embeddings must hold one vector per document");
      }
      const std::size_t dim = it->empty() ? 0 : (*it)[0].size();
      if (dim == 0) fail(ErrorKind::Input, "embedding vectors must be non-empty");
      Matrix m(static_cast<Eigen::Index>(it->size()), static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < it->size(); ++i) {
        const json& row = (*it)[i];
        if (!row.is_array() || row.size() != dim) {
          fail(ErrorKind::Input, "embedding of document " + std::to_string(i) + " has the wrong dimension");
        }
        for (std::size_t d = 0; d < dim; ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = row[d].get<double>();
      }
      if (!m.allFinite()) fail(ErrorKind::Input, "embeddings contain non-finite entries");
      embeddings = std::move(m);
    }
    std::optional<std::vector<LabelSpec>> labels;
    if (body.contains("labels")) labels = labels_from_body(body["labels"], s->corpus);

    {
      std::lock_guard lock(sessions_mu);
      s->number = next_session++;
    }
    s->dir = sessions_root() / s->id();
    fs::create_directories(s->dir);
    io::write_file_atomic(s->dir / "corpus.jsonl", s->corpus.to_jsonl());
    if (embeddings) {
      io::write_matrix(s->dir / "documents.edtm", *embeddings);
      s->uploaded_embeddings = true;
      s->base.provider.kind = "file";
      s->base.provider.documents = s->dir / "documents.edtm";
    }
    json view;
    {
      std::lock_guard lock(s->mu);
      if (labels) s->apply_labels(std::move(*labels));
      s->persist();
      view = s->view();
    }
    std::lock_guard lock(sessions_mu);
    sessions[s->number] = s;
    return view;
  }

  json list_sessions() {
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(sessions_mu);
      for (const auto& [_, s] : sessions) all.push_back(s);
    }
    json out = json::array();
    for (const auto& s : all) {
      std::lock_guard lock(s->mu);
      out.push_back(s->summary());
    }
    return out;
  }

  // PUT /sessions/{id}/labels
  std::pair<int, json> put_labels(Session& s, const httplib::Request& req) {
    std::vector<LabelSpec> specs = labels_from_body(parse_body(req), s.corpus);
    std::lock_guard lock(s.mu);
    if (s.running) {
      s.pending_labels = std::move(specs);
      s.persist();
      return {202, json{{"applied", false}, {"queued", true}, {"label_version", s.label_version}}};
    }
    s.apply_labels(std::move(specs));
    s.persist();
    return {200, json{{"applied", true}, {"queued", false}, {"label_version", s.label_version}, {"labels", s.labels}}};
  }

  // POST /sessions/{id}/assign
  json start_assignment(const std::shared_ptr<Session>& s, const httplib::Request& req) {
    json body = req.body.empty() ? json::object() : parse_body(req);
    if (!body.is_object()) fail(ErrorKind::Input, "assignment request must be a JSON object");
    ExperimentConfig cfg = s->base;
    try {
      cfg.mode = parse_assign_mode(body.value("mode", std::string("complete")));
      if (auto it = body.find("p"); it != body.end() && !it->is_null()) cfg.p = it->get<double>();
      if (auto it = body.find("solver"); it != body.end()) {
        cfg.solver.lambda = it->value("lambda", cfg.solver.lambda);
        cfg.solver.tolerance = it->value("tolerance", cfg.solver.tolerance);
        cfg.solver.max_iters = it->value("max_iters", cfg.solver.max_iters);
      }
      if (auto it = body.find("schedule"); it != body.end()) {
        cfg.schedule.batch_size = it->value("batch_size", cfg.schedule.batch_size);
        cfg.schedule.epochs = it->value("epochs", cfg.schedule.epochs);
        cfg.schedule.shuffle_seed = it->value("seed", cfg.schedule.shuffle_seed);
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::Input, std::string("assignment request: ") + e.what());
    }
    cfg.validate(false);

    std::lock_guard lock(s->mu);
    if (s->running) {
      fail(ErrorKind::Conflict, "session " + s->id() + " already runs job j" + std::to_string(*s->running));
    }
    if (s->labels.empty()) fail(ErrorKind::Config, "session " + s->id() + " has no labels");
    JobRecord job;
    job.number = s->next_job++;
    job.mode = to_string(cfg.mode);
    job.p = cfg.p;
    job.label_version = s->label_version;
    s->jobs[job.number] = job;
    s->running = job.number;
    s->persist_job(job);
    s->persist();

    {
      std::lock_guard jobs_lock(jobs_mu);
      ++active_jobs;
      workers.emplace_back([this, s, cfg, labels = s->labels, number = job.number, version = s->label_version] {
        run_job(s, number, cfg, labels, version);
      });
    }
    return job_json(job);
  }

  void set_stage(Session& s, std::size_t number, const char* stage) {
    std::lock_guard lock(s.mu);
    s.jobs[number].stage = stage;
  }

  void run_job(const std::shared_ptr<Session>& s, std::size_t number, const ExperimentConfig& cfg,
               const std::vector<LabelSpec>& labels, std::size_t version) {
    std::optional<std::string> snapshot;
    std::string error;
    std::string stage = "costs";
    try {
      set_stage(*s, number, "costs");
      const CostMatrix cost = build_costs(cfg, s->corpus, labels);
      stage = "assignment";
      set_stage(*s, number, "assignment");
      const AssignOutcome outcome = assign_costs(cfg, cost, s->corpus, labels);
      stage = "output";
      set_stage(*s, number, "output");
      snapshot = build_snapshot("j" + std::to_string(number), cfg, version, s->corpus, labels, outcome);
      const fs::path dir = s->job_dir(number);
      fs::create_directories(dir);
      io::write_matrix(dir / "plan.edtm", outcome.plan.values);
      io::write_file_atomic(dir / "results.json", *snapshot);
    } catch (const std::exception& e) {
      snapshot.reset();
      error = e.what();
    }

    {
      std::lock_guard lock(s->mu);
      JobRecord& job = s->jobs[number];
      if (snapshot) {
        job.status = "done";
        job.stage = "done";
        s->latest = std::make_shared<const std::string>(std::move(*snapshot));
        s->latest_job = number;
      } else {
        job.status = "failed";
        job.stage = stage_of(error, stage);
        job.message = error;
      }
      s->running.reset();
      if (s->pending_labels) {
        s->apply_labels(std::move(*s->pending_labels));
        s->pending_labels.reset();
      }
      try {
        s->persist_job(job);
        s->persist();
      } catch (const std::exception&) {
        // The in-memory state stays authoritative until the next write.
      }
    }
    std::lock_guard jobs_lock(jobs_mu);
    --active_jobs;
    jobs_cv.notify_all();
  }

  json documents(Session& s, const httplib::Request& req) {
    const std::string q = lowercase(req.get_param_value("q"));
    std::size_t offset = 0;
    std::size_t limit = 50;
    try {
      if (req.has_param("offset")) offset = std::stoul(req.get_param_value("offset"));
      if (req.has_param("limit")) limit = std::min<std::size_t>(500, std::stoul(req.get_param_value("limit")));
    } catch (const std::exception&) {
      fail(ErrorKind::Input, "offset and limit must be non-negative integers");
    }
    json docs = json::array();
    std::size_t matched = 0;
    for (const auto& d : s.corpus.documents()) {
      if (!q.empty() && lowercase(d.id).find(q) == std::string::npos && lowercase(d.text).find(q) == std::string::npos) {
        continue;
      }
      if (matched >= offset && docs.size() < limit) {
        docs.push_back(json{{"id", d.id},
                            {"text", d.text},
                            {"gold_label", d.gold_label ? json(*d.gold_label) : json(nullptr)}});
      }
      ++matched;
    }
    return json{{"total", matched}, {"offset", offset}, {"documents", std::move(docs)}};
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.kind()), to_string(e.kind()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "input", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 201, create_session(req));
    }));
    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, list_sessions());
    }));
    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      std::lock_guard lock(s->mu);
      send_json(res, 200, s->view());
    }));
    server.Put(R"(/sessions/([^/]+)/labels)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      auto [status, body] = put_labels(*s, req);
      send_json(res, status, body);
    }));
    server.Get(R"(/sessions/([^/]+)/labels)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      std::lock_guard lock(s->mu);
      send_json(res, 200, json{{"label_version", s->label_version}, {"labels", s->labels}});
    }));
    server.Post(R"(/sessions/([^/]+)/assign)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      send_json(res, 202, start_assignment(s, req));
    }));
    server.Get(R"(/sessions/([^/]+)/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      const std::string job_id = req.matches[2];
      const auto number = parse_prefixed_number(job_id, 'j');
      std::lock_guard lock(s->mu);
      auto it = number ? s->jobs.find(*number) : s->jobs.end();
      if (it == s->jobs.end()) fail(ErrorKind::NotFound, "no job \"" + job_id + "\" in session " + s->id());
      send_json(res, 200, job_json(it->second));
    }));
    server.Get(R"(/sessions/([^/]+)/jobs/([^/]+)/results)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 auto s = find(req.matches[1]);
                 const std::string job_id = req.matches[2];
                 const auto number = parse_prefixed_number(job_id, 'j');
                 {
                   std::lock_guard lock(s->mu);
                   auto it = number ? s->jobs.find(*number) : s->jobs.end();
                   if (it == s->jobs.end() || it->second.status != "done") {
                     fail(ErrorKind::NotFound, "job \"" + job_id + "\" has no results");
                   }
                 }
                 res.status = 200;
                 res.set_content(io::read_file(s->job_dir(*number) / "results.json"), "application/json");
               }));
    server.Get(R"(/sessions/([^/]+)/results)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      std::shared_ptr<const std::string> snapshot;
      {
        std::lock_guard lock(s->mu);
        snapshot = s->latest;
      }
      if (!snapshot) fail(ErrorKind::NotFound, "session " + s->id() + " has no results yet");
      res.status = 200;
      res.set_content(*snapshot, "application/json");
    }));
    server.Get(R"(/sessions/([^/]+)/documents)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1]);
      send_json(res, 200, documents(*s, req));
    }));
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::start() {
  if (impl_->started) return impl_->bound_port;
  std::error_code ec;
  fs::create_directories(impl_->sessions_root(), ec);
  if (ec) fail(ErrorKind::Io, "cannot create data directory " + impl_->sessions_root().string() + ": " + ec.message());
  impl_->load_sessions();
  impl_->routes();
  const auto& c = impl_->config;
  if (c.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(c.host);
  } else {
    impl_->bound_port = impl_->server.bind_to_port(c.host, c.port) ? c.port : -1;
  }
  if (impl_->bound_port < 0) {
    fail(ErrorKind::Io, "cannot bind " + c.host + ":" + std::to_string(c.port));
  }
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  // stop() is a no-op until the listener runs, so an early stop would hang.
  impl_->server.wait_until_ready();
  impl_->started = true;
  return impl_->bound_port;
}

void Service::stop() {
  if (!impl_ || !impl_->started) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  wait_idle();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->jobs_mu);
    workers.swap(impl_->workers);
  }
  for (auto& w : workers) w.join();
  impl_->started = false;
}

int Service::port() const { return impl_->bound_port; }

void Service::wait_idle() {
  std::unique_lock lock(impl_->jobs_mu);
  impl_->jobs_cv.wait(lock, [this] { return impl_->active_jobs == 0; });
}

}  // namespace edtm
