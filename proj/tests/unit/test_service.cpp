#include <doctest.h>

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "edtm/error.hpp"
#include "edtm/service.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen.
#include <httplib.h>

using namespace edtm;
using edtm::testing::GaussianFixture;
using edtm::testing::TempDir;
using nlohmann::json;

namespace {

struct Reply {
  int status = 0;
  json body;
  std::string cors;
};

class Api {
 public:
  explicit Api(int port) : client_("127.0.0.1", port) { client_.set_read_timeout(30, 0); }

  Reply get(const std::string& path) { return wrap(client_.Get(path)); }
  Reply post(const std::string& path, const json& body) {
    return wrap(client_.Post(path, body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body, const char* type) {
    return wrap(client_.Post(path, body, type));
  }
  Reply put(const std::string& path, const json& body) {
    return wrap(client_.Put(path, body.dump(), "application/json"));
  }

  json wait_job(const std::string& sid, const std::string& jid) {
    for (int i = 0; i < 3000; ++i) {
      const Reply r = get("/sessions/" + sid + "/jobs/" + jid);
      REQUIRE(r.status == 200);
      if (r.body["status"] != "running") return r.body;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    FAIL("job did not finish");
    return {};
  }

 private:
  static Reply wrap(const httplib::Result& res) {
    REQUIRE(res);
    Reply r;
    r.status = res->status;
    r.cors = res->get_header_value("Access-Control-Allow-Origin");
    if (!res->body.empty()) r.body = json::parse(res->body);
    return r;
  }
  httplib::Client client_;
};

GaussianFixture fixture() {
  GaussianFixture f;
  f.generate();
  return f;
}

json embeddings_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

ServiceConfig file_service(const TempDir& dir, const GaussianFixture& f) {
  f.write(dir / "fixture");
  ServiceConfig c;
  c.port = 0;
  c.data_dir = dir / "data";
  c.provider.kind = "file";
  c.provider.labels = dir / "fixture" / "labels.edtm";
  return c;
}

json session_body(const GaussianFixture& f) {
  return json{{"corpus", f.corpus_jsonl()}, {"embeddings", embeddings_json(f.documents)}};
}

// Embedding server answering with fixture vectors; holds requests while closed.
class GatedEmbedder {
 public:
  explicit GatedEmbedder(const GaussianFixture& f) : f_(f) {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::unique_lock lock(mu_);
        ++waiting_;
        cv_.notify_all();
        cv_.wait(lock, [&] { return open_; });
        --waiting_;
        if (fail_) {
          res.status = 400;
          return;
        }
      }
      const json body = json::parse(req.body);
      json out{{"vectors", json::array()}};
      for (const auto& t : body["texts"]) out["vectors"].push_back(vector_for(t.get<std::string>()));
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~GatedEmbedder() {
    set(true, false);
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/embed"; }
  void set(bool open, bool fail) {
    std::lock_guard lock(mu_);
    open_ = open;
    fail_ = fail;
    cv_.notify_all();
  }
  void wait_for_request() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return waiting_ > 0; });
  }

 private:
  json vector_for(const std::string& text) const {
    const Matrix* src = &f_.documents;
    Eigen::Index row = 0;
    if (text.rfind("Topic ", 0) == 0) {
      src = &f_.centroids;
      row = std::stol(text.substr(6));
    } else {
      row = std::stol(text.substr(text.rfind(' ') + 1));
    }
    return embeddings_json(src->row(row))[0];
  }

  const GaussianFixture& f_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  bool open_ = true;
  bool fail_ = false;
  int waiting_ = 0;
};

std::set<std::string> all_documents(const json& snapshot) {
  std::set<std::string> ids;
  std::size_t count = 0;
  for (const auto& c : snapshot["clusters"])
    for (const auto& d : c["documents"]) ids.insert(d["id"].get<std::string>()), ++count;
  for (const auto& d : snapshot["unassigned"]["documents"]) ids.insert(d["id"].get<std::string>()), ++count;
  CHECK(ids.size() == count);
  return ids;
}

}  // namespace

TEST_CASE("sessions are created from valid corpora only") {
  TempDir dir;
  const auto f = fixture();
  Service service(file_service(dir, f));
  Api api(service.start());

  const std::string three = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"c\",\"text\":\"z\"}\n";
  const Reply created = api.post("/sessions", json{{"corpus", three}});
  CHECK(created.status == 201);
  CHECK(created.body["n_documents"] == 3);
  CHECK(created.body["status"] == "idle");
  CHECK(created.cors == "*");
  const std::string sid = created.body["id"];

  const Reply raw = api.post_raw("/sessions", three, "application/x-ndjson");
  CHECK(raw.status == 201);
  CHECK(raw.body["id"] != sid);

  const Reply dup = api.post("/sessions", json{{"corpus", three + "{\"id\":\"b\",\"text\":\"again\"}\n"}});
  CHECK(dup.status == 400);
  CHECK(dup.body["error"]["message"].get<std::string>().find("\"b\"") != std::string::npos);

  const Reply empty = api.post("/sessions", json{{"corpus", ""}});
  CHECK(empty.status == 400);
  CHECK(empty.body["error"]["kind"] == "input");

  const Reply bad_line = api.post("/sessions", json{{"corpus", three + "{broken\n"}});
  CHECK(bad_line.status == 400);
  CHECK(bad_line.body["error"]["message"].get<std::string>().find("line 4") != std::string::npos);

  const Reply bad_embeddings = api.post("/sessions", json{{"corpus", three}, {"embeddings", {{1.0}}}});
  CHECK(bad_embeddings.status == 400);

  const Reply listed = api.get("/sessions");
  CHECK(listed.status == 200);
  CHECK(listed.body.size() == 2);
  CHECK(api.get("/sessions/" + sid).body["n_documents"] == 3);
  CHECK(api.get("/sessions/s999").status == 404);
  CHECK(api.get("/sessions/nonsense").status == 404);
  CHECK(api.get("/sessions/" + sid + "/results").status == 404);

  const Reply docs = api.get("/sessions/" + sid + "/documents?q=Y");
  CHECK(docs.body["total"] == 1);
  CHECK(docs.body["documents"][0]["id"] == "b");
  service.stop();
}

TEST_CASE("label edits are validated and versioned") {
  TempDir dir;
  const auto f = fixture();
  Service service(file_service(dir, f));
  Api api(service.start());
  const std::string sid = api.post("/sessions", session_body(f)).body["id"];
  const std::string path = "/sessions/" + sid + "/labels";

  auto labels = f.labels_json();
  auto broken = labels;
  broken[1]["name"] = "";
  CHECK(api.put(path, broken).status == 400);
  broken = labels;
  broken[0]["seed_doc_ids"].push_back("ghost");
  const Reply unknown = api.put(path, broken);
  CHECK(unknown.status == 400);
  CHECK(unknown.body["error"]["message"].get<std::string>().find("\"ghost\"") != std::string::npos);
  CHECK(api.post("/sessions/" + sid + "/assign", json::object()).status == 400);

  const Reply ok = api.put(path, labels);
  CHECK(ok.status == 200);
  CHECK(ok.body["label_version"] == 1);
  CHECK(api.put(path, json{{"labels", labels}}).body["label_version"] == 2);
  CHECK(api.get(path).body["labels"].size() == 4);
  CHECK(std::filesystem::exists(dir / "data" / "sessions" / sid / "labels" / "v2.json"));
  service.stop();
}

TEST_CASE("assignment jobs produce cluster snapshots") {
  TempDir dir;
  const auto f = fixture();
  Service service(file_service(dir, f));
  Api api(service.start());
  const std::string sid = api.post("/sessions", session_body(f)).body["id"];
  REQUIRE(api.put("/sessions/" + sid + "/labels", f.labels_json()).status == 200);

  const Reply started = api.post("/sessions/" + sid + "/assign", json{{"mode", "complete"}});
  CHECK(started.status == 202);
  const std::string jid = started.body["id"];
  CHECK(api.wait_job(sid, jid)["status"] == "done");

  const Reply results = api.get("/sessions/" + sid + "/results");
  REQUIRE(results.status == 200);
  const json& snap = results.body;
  CHECK(snap["job"] == jid);
  CHECK(snap["clusters"].size() == 4);
  CHECK(snap["unassigned"]["size"] == 0);
  CHECK(all_documents(snap).size() == 200);
  CHECK(snap["metrics"]["p1"].get<double>() >= 0.95);
  for (const auto& c : snap["clusters"]) {
    CHECK(c["size"].get<std::size_t>() > 0);
    // Sorted by confidence, which is the plan row sum (1/n in complete mode).
    double prev = 1.0;
    for (const auto& d : c["documents"]) {
      CHECK(d["confidence"].get<double>() <= prev);
      prev = d["confidence"].get<double>();
      CHECK(std::abs(prev - 1.0 / 200.0) <= 1e-6);
    }
  }

  const Reply partial = api.post("/sessions/" + sid + "/assign", json{{"mode", "partial"}, {"p", 0.7}});
  REQUIRE(partial.status == 202);
  const std::string pid = partial.body["id"];
  CHECK(api.wait_job(sid, pid)["status"] == "done");
  const json psnap = api.get("/sessions/" + sid + "/jobs/" + pid + "/results").body;
  CHECK(psnap["unassigned"]["size"] == 200 - 140);
  CHECK(psnap["p"] == 0.7);
  CHECK(all_documents(psnap).size() == 200);

  // Older snapshots stay addressable and unchanged.
  CHECK(api.get("/sessions/" + sid + "/jobs/" + jid + "/results").body == snap);
  CHECK(api.post("/sessions/" + sid + "/assign", json{{"mode", "partial"}}).status == 400);
  CHECK(api.post("/sessions/" + sid + "/assign", json{{"mode", "sideways"}}).status == 400);
  CHECK(api.get("/sessions/" + sid + "/jobs/j99").status == 404);

  // Identical inputs reproduce the snapshot apart from the job id.
  const std::string again = api.post("/sessions/" + sid + "/assign", json{{"mode", "complete"}}).body["id"];
  api.wait_job(sid, again);
  json rerun = api.get("/sessions/" + sid + "/jobs/" + again + "/results").body;
  rerun["job"] = jid;
  CHECK(rerun == snap);
  service.stop();
}

TEST_CASE("one running job per session; label edits queue behind it") {
  TempDir dir;
  const auto f = fixture();
  GatedEmbedder embedder(f);
  auto cfg = file_service(dir, f);
  cfg.provider = ProviderConfig{};
  cfg.provider.kind = "remote";
  cfg.provider.endpoint = embedder.url();
  cfg.provider.backoff_ms = 1;
  Service service(cfg);
  Api api(service.start());
  const std::string sid = api.post("/sessions", json{{"corpus", f.corpus_jsonl()}, {"labels", f.labels_json()}}).body["id"];

  embedder.set(false, false);
  const std::string j1 = api.post("/sessions/" + sid + "/assign", json::object()).body["id"];
  embedder.wait_for_request();
  CHECK(api.get("/sessions/" + sid).body["status"] == "running");

  const Reply second = api.post("/sessions/" + sid + "/assign", json::object());
  CHECK(second.status == 409);
  CHECK(second.body["error"]["kind"] == "conflict");

  auto renamed = f.labels_json();
  renamed[0]["name"] = "Renamed";
  const Reply queued = api.put("/sessions/" + sid + "/labels", renamed);
  CHECK(queued.status == 202);
  CHECK(queued.body["queued"] == true);
  CHECK(api.get("/sessions/" + sid + "/labels").body["labels"][0]["name"] == "Topic 0");

  embedder.set(true, false);
  const json done = api.wait_job(sid, j1);
  INFO(done.dump());
  REQUIRE(done["status"] == "done");
  CHECK(done["label_version"] == 1);
  const json snap = api.get("/sessions/" + sid + "/results").body;
  CHECK(snap["clusters"][0]["name"] == "Topic 0");
  CHECK(snap["clusters"].size() == 4);
  // The queued edit lands once the job finishes.
  const json view = api.get("/sessions/" + sid).body;
  CHECK(view["label_version"] == 2);
  CHECK(view["labels"][0]["name"] == "Renamed");

  // A failed job keeps the previous results and reports its stage.
  embedder.set(true, true);
  const std::string j2 = api.post("/sessions/" + sid + "/assign", json::object()).body["id"];
  const json failed = api.wait_job(sid, j2);
  CHECK(failed["status"] == "failed");
  CHECK(failed["stage"] == "provider");
  CHECK(failed["message"].get<std::string>().find("HTTP 400") != std::string::npos);
  CHECK(api.get("/sessions/" + sid + "/results").body == snap);
  CHECK(api.get("/sessions/" + sid + "/jobs/" + j2 + "/results").status == 404);
  service.stop();
}

TEST_CASE("sessions, labels and results survive a restart") {
  TempDir dir;
  const auto f = fixture();
  const auto cfg = file_service(dir, f);
  std::string sid, jid;
  json snap;
  {
    Service service(cfg);
    Api api(service.start());
    sid = api.post("/sessions", session_body(f)).body["id"];
    api.put("/sessions/" + sid + "/labels", f.labels_json());
    jid = api.post("/sessions/" + sid + "/assign", json{{"mode", "partial"}, {"p", 0.5}}).body["id"];
    api.wait_job(sid, jid);
    snap = api.get("/sessions/" + sid + "/results").body;
    service.stop();
  }
  // Simulate a crash in the middle of a later job.
  const auto jobs = dir / "data" / "sessions" / sid / "jobs";
  std::filesystem::create_directories(jobs / "j9");
  edtm::testing::write_text(jobs / "j9" / "job.json", json{{"id", "j9"}, {"status", "running"}, {"mode", "complete"}}.dump());

  Service service(cfg);
  Api api(service.start());
  const json view = api.get("/sessions/" + sid).body;
  CHECK(view["n_documents"] == 200);
  CHECK(view["labels"].size() == 4);
  CHECK(api.get("/sessions/" + sid + "/results").body == snap);
  const json crashed = api.get("/sessions/" + sid + "/jobs/j9").body;
  CHECK(crashed["status"] == "failed");
  CHECK(crashed["message"] == "interrupted by a service restart");

  // New sessions do not reuse ids.
  CHECK(api.post("/sessions", session_body(f)).body["id"] != sid);
  const std::string next = api.post("/sessions/" + sid + "/assign", json::object()).body["id"];
  CHECK(next != jid);
  CHECK(api.wait_job(sid, next)["status"] == "done");
  service.stop();
}

TEST_CASE("service config reads files and environment overrides") {
  TempDir dir;
  edtm::testing::write_text(dir / "svc.json", R"({"port": 9100, "data_dir": "store", "cost": "seed-doc",
    "provider": {"kind": "file", "labels": "l.edtm"}, "solver": {"lambda": 3}})");
  auto cfg = ServiceConfig::load(dir / "svc.json");
  CHECK(cfg.port == 9100);
  CHECK(cfg.data_dir == dir / "store");
  CHECK(cfg.cost == CostKind::SeedDoc);
  CHECK(cfg.provider.labels == dir / "l.edtm");
  CHECK(cfg.solver.lambda == 3.0);

  ::setenv("EDTM_PORT", "9200", 1);
  ::setenv("EDTM_DATA_DIR", "/tmp/edtm-elsewhere", 1);
  cfg.apply_environment();
  CHECK(cfg.port == 9200);
  CHECK(cfg.data_dir == "/tmp/edtm-elsewhere");
  ::setenv("EDTM_PORT", "http", 1);
  CHECK_THROWS_AS(cfg.apply_environment(), Error);
  ::unsetenv("EDTM_PORT");
  ::unsetenv("EDTM_DATA_DIR");
  CHECK_THROWS_AS(ServiceConfig::from_json(json{{"port", 70000}}), Error);
  CHECK_THROWS_AS(ServiceConfig::from_json(json{{"cost", "cosine"}}), Error);
}
