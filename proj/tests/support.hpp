#pragma once

// Shared helpers for the test binaries: scratch directories and the synthetic
// Gaussian-cluster corpus.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "edtm/io.hpp"
#include "edtm/ot.hpp"

namespace edtm::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "edtm") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// `clusters` Gaussian clouds of `per_cluster` points in `dim` dimensions with
// unit variance. Centroid k sits at (separation / sqrt 2) e_k, so every pair
// of centroids is `separation` apart.
struct GaussianFixture {
  std::size_t clusters = 4;
  std::size_t per_cluster = 50;
  std::size_t dim = 8;
  double separation = 10.0;
  std::uint64_t seed = 7;

  Matrix documents;
  Matrix centroids;
  std::vector<int> gold;

  std::size_t n() const { return clusters * per_cluster; }
  static std::string doc_id(std::size_t i) { return "d" + std::to_string(i); }
  static std::string label_id(std::size_t k) { return "topic" + std::to_string(k); }

  void generate() {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    centroids = Matrix::Zero(static_cast<Eigen::Index>(clusters), static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < clusters; ++k) {
      centroids(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = separation / std::sqrt(2.0);
    }
    documents.resize(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(dim));
    gold.clear();
    // Interleave clusters so batches and document order carry no signal.
    for (std::size_t i = 0; i < n(); ++i) {
      const std::size_t k = i % clusters;
      gold.push_back(static_cast<int>(k));
      for (std::size_t d = 0; d < dim; ++d) {
        documents(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) =
            centroids(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) + noise(rng);
      }
    }
  }

  std::string corpus_jsonl() const {
    std::string out;
    for (std::size_t i = 0; i < n(); ++i) {
      nlohmann::json j{{"id", doc_id(i)},
                       {"text", "synthetic document " + std::to_string(i)},
                       {"gold_label", label_id(static_cast<std::size_t>(gold[i]))}};
      out += j.dump() + "\n";
    }
    return out;
  }

  // Labels carry their first five member documents as seeds.
  nlohmann::json labels_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t k = 0; k < clusters; ++k) {
      std::vector<std::string> seeds;
      for (std::size_t i = 0; i < n() && seeds.size() < 5; ++i) {
        if (gold[i] == static_cast<int>(k)) seeds.push_back(doc_id(i));
      }
      arr.push_back({{"id", label_id(k)}, {"name", "Topic " + std::to_string(k)}, {"seed_doc_ids", seeds}});
    }
    return arr;
  }

  // corpus.jsonl, labels.json, documents.edtm and labels.edtm under `dir`.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_text(dir / "corpus.jsonl", corpus_jsonl());
    write_text(dir / "labels.json", labels_json().dump(2));
    io::write_matrix(dir / "documents.edtm", documents);
    io::write_matrix(dir / "labels.edtm", centroids);
  }

  nlohmann::json experiment_config(const std::filesystem::path& dir) const {
    return nlohmann::json{{"corpus", (dir / "corpus.jsonl").string()},
                          {"labels", (dir / "labels.json").string()},
                          {"provider",
                           {{"kind", "file"},
                            {"documents", (dir / "documents.edtm").string()},
                            {"labels", (dir / "labels.edtm").string()}}},
                          {"cost", "l2"}};
  }
};

}  // namespace edtm::testing
