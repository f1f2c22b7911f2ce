#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <exception>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "erratlas/csv.hpp"
#include "erratlas/error.hpp"
#include "erratlas/synset.hpp"

namespace erratlas {

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

struct Neighbor {
  std::string id;
  std::size_t row = 0;
  double similarity = 0.0;
};

// Row-aligned embedding table. Rows are L2-normalized once at construction,
// so cosine similarity is a plain dot product afterwards.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> values)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) fail(ErrorKind::Validation, "embedding dimension must be positive");
    if (values_.size() != ids_.size() * dim_) {
      fail(ErrorKind::Validation, "embedding table has " + std::to_string(values_.size()) + " values for " +
                                      std::to_string(ids_.size()) + " ids of dimension " + std::to_string(dim_));
    }
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      if (!index_.try_emplace(ids_[r], r).second) fail(ErrorKind::Validation, "duplicate embedding id " + ids_[r]);
      auto row = std::span<float>(values_).subspan(r * dim_, dim_);
      double norm = 0.0;
      for (float v : row) {
        if (!std::isfinite(v)) fail(ErrorKind::Validation, "non-finite embedding value in row " + ids_[r]);
        norm += double(v) * double(v);
      }
      norm = std::sqrt(norm);
      if (!(norm > 0.0)) fail(ErrorKind::Validation, "zero-norm embedding row " + ids_[r]);
      for (float& v : row) v = static_cast<float>(double(v) / norm);
    }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::span<const float> row(std::size_t r) const { return std::span<const float>(values_).subspan(r * dim_, dim_); }

  bool contains(const std::string& id) const { return index_.contains(id); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const float> vector(const std::string& id) const {
    if (auto r = find(id)) return row(*r);
    fail(ErrorKind::MissingEmbedding, "no embedding for " + id);
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// EMB1 layout: magic "EMB1", u32le n, u32le dim, n*dim float32le row-major.
inline std::string encode_emb1(std::size_t n, std::size_t dim, std::span<const float> values) {
  if (values.size() != n * dim) fail(ErrorKind::InvalidArgument, "value count does not match n*dim");
  std::string out = "EMB1";
  detail::put_u32le(out, static_cast<std::uint32_t>(n));
  detail::put_u32le(out, static_cast<std::uint32_t>(dim));
  out.reserve(out.size() + values.size() * 4);
  for (float v : values) detail::put_u32le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

struct Emb1Payload {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> values;
};

inline Emb1Payload decode_emb1(std::string_view bytes, const std::string& source = "<emb1>") {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "EMB1") fail(ErrorKind::Parse, source + ": missing EMB1 header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Emb1Payload out;
  out.n = detail::get_u32le(p + 4);
  out.dim = detail::get_u32le(p + 8);
  const std::size_t expected = 12 + out.n * out.dim * 4;
  if (bytes.size() != expected) {
    fail(ErrorKind::Parse, source + ": expected " + std::to_string(expected) + " bytes, found " +
                               std::to_string(bytes.size()));
  }
  out.values.resize(out.n * out.dim);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = std::bit_cast<float>(detail::get_u32le(p + 12 + 4 * i));
  }
  return out;
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& binary, const std::filesystem::path& ids_file) {
  auto payload = decode_emb1(io::read_file(binary), binary.string());
  auto ids = io::read_list(ids_file);
  if (ids.size() != payload.n) {
    fail(ErrorKind::Validation, ids_file.string() + " lists " + std::to_string(ids.size()) + " ids for " +
                                    std::to_string(payload.n) + " embedding rows");
  }
  return EmbeddingMatrix(std::move(ids), payload.dim, std::move(payload.values));
}

inline void save_embeddings(const std::filesystem::path& binary, const std::filesystem::path& ids_file,
                            const std::vector<std::string>& ids, std::size_t dim, std::span<const float> values) {
  io::write_file(binary, encode_emb1(ids.size(), dim, values));
  std::string list;
  for (const auto& id : ids) list += id + "\n";
  io::write_file(ids_file, list);
}

inline std::vector<double> normalized(std::span<const float> v) {
  double norm = 0.0;
  for (float x : v) {
    if (!std::isfinite(x)) fail(ErrorKind::InvalidArgument, "non-finite query value");
    norm += double(x) * double(x);
  }
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) fail(ErrorKind::InvalidArgument, "zero-norm query vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

inline double dot(std::span<const double> q, std::span<const float> r) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * double(r[i]);
  return s;
}

// Exact top-k by cosine similarity, descending; ties go to the lower row index.
inline std::vector<Neighbor> knn(std::span<const float> query, const EmbeddingMatrix& index, std::size_t k) {
  if (index.empty()) fail(ErrorKind::EmptyIndex, "knn over an empty index");
  if (query.size() != index.dim()) {
    fail(ErrorKind::DimensionMismatch, "query has dimension " + std::to_string(query.size()) + ", index has " +
                                           std::to_string(index.dim()));
  }
  if (k == 0 || k > index.size()) {
    fail(ErrorKind::InvalidArgument, "k=" + std::to_string(k) + " outside [1, " + std::to_string(index.size()) + "]");
  }
  const auto q = normalized(query);
  std::vector<std::pair<double, std::size_t>> scored(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) scored[r] = {dot(q, index.row(r)), r};
  auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(Neighbor{index.ids()[scored[i].second], scored[i].second, scored[i].first});
  return out;
}

// Runs knn for every query row; work is split over `jobs` threads and the
// result is identical to a sequential loop.
inline std::vector<std::vector<Neighbor>> knn_batch(const EmbeddingMatrix& queries, const EmbeddingMatrix& index,
                                                    std::size_t k, std::size_t jobs = 1) {
  std::vector<std::vector<Neighbor>> out(queries.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, queries.size()));
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < queries.size(); i += jobs) out[i] = knn(queries.row(i), index, k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

struct ProposalScores {
  SynsetId best;
  double best_score = 0.0;
  std::map<SynsetId, double> scores;
};

// Open-world scoring: cosine between the image embedding and each proposal's
// text embedding. The argmax breaks ties towards the smaller synset id.
inline ProposalScores score_proposals(std::span<const float> image_emb, const std::vector<SynsetId>& proposals,
                                      const EmbeddingMatrix& label_text_index) {
  if (proposals.empty()) fail(ErrorKind::InvalidArgument, "no proposals to score");
  if (image_emb.size() != label_text_index.dim()) {
    fail(ErrorKind::DimensionMismatch, "image embedding has dimension " + std::to_string(image_emb.size()) +
                                           ", text index has " + std::to_string(label_text_index.dim()));
  }
  const auto q = normalized(image_emb);
  ProposalScores out;
  for (const auto& p : proposals) {
    auto row = label_text_index.find(p.str());
    if (!row) fail(ErrorKind::MissingTextEmbedding, "no text embedding for proposal " + p.str());
    out.scores[p] = dot(q, label_text_index.row(*row));
  }
  bool first = true;
  for (const auto& [id, score] : out.scores) {  // ascending id, so strict > keeps the smallest on ties
    if (first || score > out.best_score) {
      out.best = id;
      out.best_score = score;
      first = false;
    }
  }
  return out;
}

}  // namespace erratlas
