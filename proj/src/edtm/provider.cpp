#include "edtm/provider.hpp"

#include <chrono>
#include <cstdlib>
#include <exception>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "edtm/error.hpp"
#include "edtm/io.hpp"

namespace edtm {

namespace {

using nlohmann::json;

std::string auth_value(const ProviderConfig& c) {
  if (!c.auth_env.empty()) {
    if (const char* v = std::getenv(c.auth_env.c_str())) return v;
    fail(ErrorKind::Config, "environment variable " + c.auth_env + " holding the provider auth value is unset");
  }
  return c.auth_value;
}

json post_json(const ProviderConfig& cfg, const HttpEndpoint& ep, const json& body,
               std::atomic<std::size_t>& counter) {
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!cfg.auth_header.empty()) headers.emplace(cfg.auth_header, auth_value(cfg));
  std::string last_error;
  const std::size_t attempts = std::max<std::size_t>(1, cfg.attempts);
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1)));
    }
    httplib::Client client(ep.base);
    client.set_connection_timeout(cfg.timeout_s, 0);
    client.set_read_timeout(cfg.timeout_s, 0);
    client.set_write_timeout(cfg.timeout_s, 0);
    ++counter;
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorKind::Provider, ep.base + ep.path + " answered HTTP " + std::to_string(res->status) +
                                    ": " + res->body.substr(0, 200));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::Provider, ep.base + ep.path + " returned malformed JSON: " + e.what());
    }
  }
  std::ostringstream os;
  os << ep.base << ep.path << " failed after " << attempts << " attempts: " << last_error;
  fail(ErrorKind::Provider, os.str());
}

// Reads `key` as a list of equal-length numeric rows.
Matrix rows_from_json(const json& reply, const char* key, std::size_t expected_rows,
                      std::optional<std::size_t> expected_cols) {
  auto it = reply.find(key);
  if (it == reply.end() || !it->is_array()) {
    fail(ErrorKind::Provider, std::string("provider reply lacks a \"") + key + "\" array");
  }
  if (it->size() != expected_rows) {
    std::ostringstream os;
    os << "provider returned " << it->size() << " rows for " << expected_rows << " inputs";
    fail(ErrorKind::Provider, os.str());
  }
  Matrix out;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& row = (*it)[i];
    if (!row.is_array() || row.empty()) fail(ErrorKind::Provider, "provider returned an empty or non-array row");
    if (i == 0) {
      if (expected_cols && row.size() != *expected_cols) {
        std::ostringstream os;
        os << "provider row has " << row.size() << " entries, expected " << *expected_cols;
        fail(ErrorKind::Provider, os.str());
      }
      out.resize(static_cast<Eigen::Index>(expected_rows), static_cast<Eigen::Index>(row.size()));
    } else if (row.size() != static_cast<std::size_t>(out.cols())) {
      fail(ErrorKind::Provider, "provider returned rows of inconsistent dimension");
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j].is_number()) fail(ErrorKind::Provider, "provider returned a non-numeric entry");
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
    }
  }
  return out;
}

// Runs `work(chunk)` for every chunk on at most `parallel` threads and stacks
// the resulting row blocks in chunk order.
template <typename Work>
Matrix run_chunked(std::size_t total, std::size_t chunk_size, std::size_t parallel, Work work) {
  chunk_size = std::max<std::size_t>(1, chunk_size);
  const std::size_t chunks = (total + chunk_size - 1) / chunk_size;
  std::vector<Matrix> parts(chunks);
  std::vector<std::exception_ptr> errors(chunks);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t c = next++; c < chunks; c = next++) {
      try {
        parts[c] = work(c * chunk_size, std::min(total, (c + 1) * chunk_size));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(chunks, std::max<std::size_t>(1, parallel));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (chunks == 0) return Matrix(0, 0);
  const Eigen::Index cols = parts.front().cols();
  Matrix out(static_cast<Eigen::Index>(total), cols);
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) fail(ErrorKind::Provider, "provider returned rows of inconsistent dimension");
    out.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  return out;
}

std::string cache_key_material(const std::string& identity, const std::vector<std::string>& texts) {
  std::string key = "edtm-embeddings-v1";
  key.push_back('\0');
  key += identity;
  key.push_back('\0');
  for (const auto& t : texts) {
    const std::uint64_t len = t.size();
    for (int b = 0; b < 8; ++b) key.push_back(static_cast<char>((len >> (8 * b)) & 0xFF));
    key += t;
  }
  return key;
}

// Values as they survive a round trip through the matrix file format.
Matrix storage_precision(const Matrix& m) {
  return m.cast<float>().cast<double>();
}

}  // namespace

void to_json(json& j, const ProviderConfig& c) {
  j = json{{"kind", c.kind},
           {"documents", c.documents.string()},
           {"labels", c.labels.string()},
           {"scores", c.scores.string()},
           {"endpoint", c.endpoint},
           {"scores_endpoint", c.scores_endpoint},
           {"auth_header", c.auth_header},
           {"auth_env", c.auth_env},
           {"chunk_size", c.chunk_size},
           {"max_parallel", c.max_parallel},
           {"attempts", c.attempts},
           {"backoff_ms", c.backoff_ms},
           {"timeout_s", c.timeout_s},
           {"cache_dir", c.cache_dir.string()}};
}

void from_json(const json& j, ProviderConfig& c) {
  if (!j.is_object()) fail(ErrorKind::Config, "provider config must be a JSON object");
  auto str = [&](const char* key, auto& dst) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) dst = it->template get<std::string>();
  };
  str("kind", c.kind);
  std::string path;
  path.clear(); str("documents", path); if (!path.empty()) c.documents = path;
  path.clear(); str("labels", path); if (!path.empty()) c.labels = path;
  path.clear(); str("scores", path); if (!path.empty()) c.scores = path;
  path.clear(); str("cache_dir", path); if (!path.empty()) c.cache_dir = path;
  str("endpoint", c.endpoint);
  str("scores_endpoint", c.scores_endpoint);
  str("auth_header", c.auth_header);
  str("auth_value", c.auth_value);
  str("auth_env", c.auth_env);
  if (auto it = j.find("chunk_size"); it != j.end()) c.chunk_size = it->get<std::size_t>();
  if (auto it = j.find("max_parallel"); it != j.end()) c.max_parallel = it->get<std::size_t>();
  if (auto it = j.find("attempts"); it != j.end()) c.attempts = it->get<std::size_t>();
  if (auto it = j.find("backoff_ms"); it != j.end()) c.backoff_ms = it->get<int>();
  if (auto it = j.find("timeout_s"); it != j.end()) c.timeout_s = it->get<int>();
  if (c.kind != "file" && c.kind != "remote") {
    fail(ErrorKind::Config, "provider kind must be \"file\" or \"remote\", got \"" + c.kind + "\"");
  }
}

MatrixFileSource::MatrixFileSource(std::filesystem::path path) : path_(std::move(path)) {}

Matrix MatrixFileSource::embed(const std::vector<std::string>& texts) {
  if (path_.empty()) fail(ErrorKind::Config, "file provider has no matrix path for this input");
  Matrix m;
  try {
    m = io::read_matrix(path_);
  } catch (const Error& e) {
    throw Error(ErrorKind::Provider, e.what());
  }
  if (static_cast<std::size_t>(m.rows()) != texts.size()) {
    std::ostringstream os;
    os << path_.string() << " holds " << m.rows() << " vectors but " << texts.size()
       << " texts were requested";
    fail(ErrorKind::Provider, os.str());
  }
  return m;
}

std::string MatrixFileSource::identity() const { return "file:" + path_.string(); }

HttpEndpoint HttpEndpoint::parse(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    fail(ErrorKind::Config, "provider endpoint \"" + url + "\" must be an http:// URL");
  }
  const std::size_t slash = url.find('/', scheme.size());
  HttpEndpoint ep;
  ep.base = url.substr(0, slash);
  ep.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (ep.base.size() == scheme.size()) fail(ErrorKind::Config, "provider endpoint \"" + url + "\" has no host");
  return ep;
}

RemoteEmbeddingSource::RemoteEmbeddingSource(ProviderConfig config)
    : config_(std::move(config)), endpoint_(HttpEndpoint::parse(config_.endpoint)) {}

Matrix RemoteEmbeddingSource::embed(const std::vector<std::string>& texts) {
  return run_chunked(texts.size(), config_.chunk_size, config_.max_parallel,
                     [&](std::size_t begin, std::size_t end) {
                       json body{{"texts", json::array()}};
                       for (std::size_t i = begin; i < end; ++i) body["texts"].push_back(texts[i]);
                       const json reply = post_json(config_, endpoint_, body, requests_);
                       return rows_from_json(reply, "vectors", end - begin, std::nullopt);
                     });
}

std::string RemoteEmbeddingSource::identity() const { return "remote:" + config_.endpoint; }

CachedEmbeddingSource::CachedEmbeddingSource(std::shared_ptr<EmbeddingSource> inner,
                                             std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

std::filesystem::path CachedEmbeddingSource::entry_path(const std::vector<std::string>& texts) const {
  return dir_ / (sha256_hex(cache_key_material(inner_->identity(), texts)) + ".edtm");
}

Matrix CachedEmbeddingSource::embed(const std::vector<std::string>& texts) {
  const auto path = entry_path(texts);
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    Matrix m = io::read_matrix(path);
    if (static_cast<std::size_t>(m.rows()) == texts.size()) {
      ++hits_;
      return m;
    }
  }
  Matrix fresh = storage_precision(inner_->embed(texts));
  io::write_matrix(path, fresh);
  return fresh;
}

std::shared_ptr<EmbeddingSource> make_embedding_source(const ProviderConfig& config, EmbeddingRole role) {
  std::shared_ptr<EmbeddingSource> source;
  if (config.kind == "file") {
    source = std::make_shared<MatrixFileSource>(role == EmbeddingRole::Documents ? config.documents
                                                                                 : config.labels);
  } else if (config.kind == "remote") {
    source = std::make_shared<RemoteEmbeddingSource>(config);
  } else {
    fail(ErrorKind::Config, "unknown provider kind \"" + config.kind + "\"");
  }
  if (!config.cache_dir.empty() && config.kind == "remote") {
    source = std::make_shared<CachedEmbeddingSource>(source, config.cache_dir);
  }
  return source;
}

Matrix fetch_embeddings(const std::vector<std::string>& texts, EmbeddingSource& source) {
  Matrix m = source.embed(texts);
  if (static_cast<std::size_t>(m.rows()) != texts.size()) {
    fail(ErrorKind::Provider, "provider returned the wrong number of vectors");
  }
  if (!m.allFinite()) fail(ErrorKind::Provider, "provider returned non-finite vector entries");
  return m;
}

Matrix fetch_scores(const std::vector<std::string>& doc_texts,
                    const std::vector<std::string>& label_texts, const ProviderConfig& config) {
  if (config.kind == "file") {
    if (config.scores.empty()) fail(ErrorKind::Config, "file provider has no scores matrix path");
    Matrix m;
    try {
      m = io::read_matrix(config.scores);
    } catch (const Error& e) {
      throw Error(ErrorKind::Provider, e.what());
    }
    if (static_cast<std::size_t>(m.rows()) != doc_texts.size() ||
        static_cast<std::size_t>(m.cols()) != label_texts.size()) {
      std::ostringstream os;
      os << config.scores.string() << " is " << m.rows() << "x" << m.cols() << ", expected "
         << doc_texts.size() << "x" << label_texts.size();
      fail(ErrorKind::Provider, os.str());
    }
    return m;
  }
  if (config.scores_endpoint.empty()) fail(ErrorKind::Config, "remote provider has no scores_endpoint");
  const HttpEndpoint ep = HttpEndpoint::parse(config.scores_endpoint);
  std::atomic<std::size_t> counter{0};
  return run_chunked(doc_texts.size(), config.chunk_size, config.max_parallel,
                     [&](std::size_t begin, std::size_t end) {
                       json body{{"queries", label_texts}, {"texts", json::array()}};
                       for (std::size_t i = begin; i < end; ++i) body["texts"].push_back(doc_texts[i]);
                       const json reply = post_json(config, ep, body, counter);
                       return rows_from_json(reply, "scores", end - begin, label_texts.size());
                     });
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Provider, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace edtm
