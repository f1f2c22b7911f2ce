#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "erratlas/erratlas.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace erratlas;

inline fs::path asset_dir() { return ERRATLAS_ASSET_DIR; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("erratlas_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline const LabelSpace& bundled_space() {
  static const LabelSpace space = [] {
    const auto m = load_manifest(asset_dir() / "manifest.json");
    return LabelSpace::load({m.require("labels"), m.resolve("overlap"), m.resolve("superclasses"), m.resolve("hypernyms")},
                            {true});
  }();
  return space;
}

inline SynsetId S(const std::string& id) { return SynsetId(id); }

// Small hand-built label space. Classes are given as (id, group).
inline LabelSpace make_space(const std::vector<std::pair<std::string, Group>>& classes,
                             const std::map<std::string, std::vector<std::string>>& supers,
                             const std::vector<std::pair<std::string, std::string>>& edges = {},
                             const OverlapSpec& overlap = {}) {
  std::vector<ClassInfo> infos;
  for (const auto& [id, g] : classes) infos.push_back(ClassInfo{SynsetId(id), id, g});
  std::map<std::string, std::vector<SynsetId>> sc;
  for (const auto& [name, ids] : supers) {
    for (const auto& id : ids) sc[name].push_back(SynsetId(id));
  }
  std::vector<std::pair<SynsetId, SynsetId>> e;
  for (const auto& [c, p] : edges) e.emplace_back(SynsetId(c), SynsetId(p));
  return LabelSpace::build(std::move(infos), overlap, sc, e);
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = g(rng);
  return v;
}

// Embeddings over the bundled label space: a random text vector per synset of
// the hypernym graph, `refs_per_class` reference images per listed class
// jittered around the class text vector, and whatever eval vectors the test sets.
struct EmbeddingWorld {
  std::size_t dim = 48;
  std::map<std::string, std::vector<float>> text;
  std::vector<std::string> ref_ids;
  std::vector<float> ref_values;
  std::map<std::string, std::vector<float>> eval;

  EmbeddingWorld(const LabelSpace& space, const std::vector<std::string>& ref_classes, std::size_t refs_per_class,
                 std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    const auto& g = space.hypernyms();
    for (HypernymGraph::Node n = 0; n < g.size(); ++n) text[g.id(n).str()] = random_vector(rng, dim);
    std::normal_distribution<float> noise(0.0f, 0.02f);
    for (const auto& c : ref_classes) {
      for (std::size_t i = 0; i < refs_per_class; ++i) {
        ref_ids.push_back(c + "_" + std::to_string(i));
        for (float x : text.at(c)) ref_values.push_back(x + noise(rng));
      }
    }
  }

  EmbeddingMatrix text_matrix() const {
    std::vector<std::string> ids;
    std::vector<float> values;
    for (const auto& [id, v] : text) {
      ids.push_back(id);
      values.insert(values.end(), v.begin(), v.end());
    }
    return EmbeddingMatrix(ids, dim, values);
  }
  EmbeddingMatrix ref_matrix() const { return EmbeddingMatrix(ref_ids, dim, ref_values); }
  EmbeddingMatrix eval_matrix() const {
    std::vector<std::string> ids;
    std::vector<float> values;
    for (const auto& [id, v] : eval) {
      ids.push_back(id);
      values.insert(values.end(), v.begin(), v.end());
    }
    return EmbeddingMatrix(ids, dim, values);
  }
};

// Full-scan ranking with a stable sort: equal similarities keep row order.
// `rows` must already be unit length (EmbeddingMatrix::row hands them out so).
inline std::vector<std::size_t> oracle_knn(const std::vector<float>& query, const std::vector<float>& rows,
                                           std::size_t dim, std::size_t k) {
  const std::size_t n = rows.size() / dim;
  double qn = 0.0;
  for (float x : query) qn += double(x) * double(x);
  qn = std::sqrt(qn);
  std::vector<double> q;
  for (float x : query) q.push_back(double(x) / qn);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t r = 0; r < n; ++r) {
    double d = 0.0;
    for (std::size_t j = 0; j < dim; ++j) d += q[j] * double(rows[r * dim + j]);
    sims.emplace_back(d, r);
  }
  std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(sims[i].second);
  return out;
}

inline std::vector<float> unit_rows(const EmbeddingMatrix& m) {
  std::vector<float> rows;
  for (std::size_t r = 0; r < m.size(); ++r) {
    auto row = m.row(r);
    rows.insert(rows.end(), row.begin(), row.end());
  }
  return rows;
}

// ------------------------------------------------------------------ audit
//
// Re-derives every stage predicate from raw primitives (graph edges, raw
// verdicts, raw embeddings) and checks that a record's category is the first
// stage whose predicate holds. Returns an empty string on success.

inline std::set<ClassIndex> audit_correct_labels(const ImageAnnotation& a) {
  std::set<ClassIndex> out;
  for (const auto& [label, v] : a.verdicts) {
    if (v != Verdict::Wrong) out.insert(label);
  }
  auto original = a.verdict_for(a.original_label);
  if (!original || *original != Verdict::Wrong) out.insert(a.original_label);
  return out;
}

inline std::set<std::string> audit_ancestors(const HypernymGraph& g, const std::string& id, bool include_self) {
  std::set<std::string> out;
  std::vector<HypernymGraph::Node> stack{g.node(id)};
  if (include_self) out.insert(id);
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    for (auto p : g.parents(n)) {
      if (out.insert(g.id(p).str()).second) stack.push_back(p);
    }
  }
  return out;
}

inline bool audit_shares(const LabelSpace& space, ClassIndex a, ClassIndex b) {
  for (const auto& sc : space.superclasses()) {
    const bool ha = std::find(sc.members.begin(), sc.members.end(), a) != sc.members.end();
    const bool hb = std::find(sc.members.begin(), sc.members.end(), b) != sc.members.end();
    if (ha && hb) return true;
  }
  return false;
}

inline bool audit_oov(const ImageId& img, ClassIndex pred, const CascadeContext& ctx) {
  const auto& space = *ctx.space;
  bool in_any = false;
  for (const auto& sc : space.superclasses()) {
    if (std::find(sc.members.begin(), sc.members.end(), pred) != sc.members.end()) in_any = true;
  }
  if (!in_any) return false;
  const auto q = ctx.eval_embeddings->vector(img);
  std::vector<float> query(q.begin(), q.end());
  const auto& refs = ctx.reference->embeddings;
  const auto rows = unit_rows(refs);
  bool gate = false;
  for (auto r : oracle_knn(query, rows, refs.dim(), ctx.config.k_neighbors)) {
    if (audit_shares(space, ctx.reference->labels[r], pred)) gate = true;
  }
  if (!gate) return false;

  const auto& g = space.hypernyms();
  const std::string p = space.id(pred).str();
  const std::string anchor = space.id(ctx.store->at(img).original_label).str();
  std::set<std::string> proposals;
  for (const auto& sc : space.superclasses()) {
    if (std::find(sc.members.begin(), sc.members.end(), pred) == sc.members.end()) continue;
    for (auto m : sc.members) proposals.insert(space.id(m).str());
  }
  for (auto parent : g.parents(g.node(p))) {
    for (auto child : g.children(parent)) {
      if (g.id(child).str() != p) proposals.insert(g.id(child).str());
    }
  }
  const auto shared = audit_ancestors(g, anchor, true);
  for (const auto& a : audit_ancestors(g, p, false)) {
    if (!shared.contains(a)) proposals.insert(a);
  }
  std::string best;
  double best_score = -2.0;
  for (const auto& prop : proposals) {  // ascending ids; strict > keeps the smallest on ties
    const auto t = ctx.text_embeddings->vector(prop);
    double d = 0.0, qn = 0.0, tn = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      d += double(query[j]) * double(t[j]);
      qn += double(query[j]) * double(query[j]);
      tn += double(t[j]) * double(t[j]);
    }
    const double cos = d / std::sqrt(qn * tn);
    if (cos > best_score) {
      best_score = cos;
      best = prop;
    }
  }
  return !space.find(best).has_value();
}

inline std::string audit_record(const ErrorRecord& r, const CascadeContext& ctx) {
  const auto& space = *ctx.space;
  const auto& a = ctx.store->at(r.image);
  const bool imagenet = ctx.config.mode == DatasetMode::ImageNet;
  const ClassIndex pred = space.index_of(r.predicted.str());
  if (a.problematic) return "record for a problematic image";
  if (pred == a.original_label) return "record for a top-1 correct prediction";

  const auto cl = imagenet ? audit_correct_labels(a) : std::set<ClassIndex>{};
  std::set<ClassIndex> anchors = imagenet ? cl : std::set<ClassIndex>{a.original_label};

  // Predicates beyond the record's own category are never needed (and the
  // OOV one would demand an embedding).
  const auto c = static_cast<std::size_t>(r.category);
  std::array<bool, 7> holds{};
  {
    bool ov = false;
    for (const auto& [gt, p] : space.accepted_pairs()) {
      if (p != r.predicted) continue;
      const auto gi = space.index_of(gt.str());
      if (gi == a.original_label || (cl.contains(gi) && gi != pred)) ov = true;
    }
    holds[0] = ov;
  }
  holds[1] = imagenet && cl.contains(pred);
  holds[2] = std::any_of(anchors.begin(), anchors.end(), [&](ClassIndex g) { return audit_shares(space, pred, g); });
  holds[3] = c >= 3 && audit_oov(r.image, pred, ctx);
  holds[4] = ctx.store->non_prototypical().contains(r.image);
  holds[5] = false;
  if (ctx.pairs) {
    for (const auto& pr : ctx.pairs->pairs()) {
      for (auto g : anchors) {
        const auto& gid = space.id(g);
        if ((pr.a == r.predicted && pr.b == gid) || (pr.b == r.predicted && pr.a == gid)) holds[5] = true;
      }
    }
  }
  holds[6] = true;

  for (std::size_t s = 0; s < c; ++s) {
    if (holds[s]) {
      return r.image + ": category " + std::string(to_string(r.category)) + " but less severe stage " +
             std::string(to_string(static_cast<Category>(s))) + " holds";
    }
  }
  if (!holds[c]) return r.image + ": predicate of " + std::string(to_string(r.category)) + " does not hold";
  if (r.evidence.index() != c) return r.image + ": evidence does not match category";
  return {};
}

// ------------------------------------------------------------------ accuracy fixtures

// Five classes n00000001..n00000005, the first two sharing a superclass.
inline LabelSpace tiny_space() {
  return make_space({{"n00000001", Group::Organism},
                     {"n00000002", Group::Organism},
                     {"n00000003", Group::Artifact},
                     {"n00000004", Group::Artifact},
                     {"n00000005", Group::Other}},
                    {{"s", {"n00000001", "n00000002"}}});
}

inline std::string cls(int i) { return "n0000000" + std::to_string(i); }

struct RandomFixture {
  AnnotationStore::Input input;
  Predictions preds;
};

inline RandomFixture random_fixture(std::mt19937_64& rng, int images) {
  RandomFixture f;
  std::uniform_int_distribution<int> c(1, 5), coin(0, 9), nv(0, 3), verdict(0, 2);
  for (int i = 0; i < images; ++i) {
    const auto img = "i" + std::to_string(i);
    f.input.ground_truth.emplace_back(img, S(cls(c(rng))));
    std::set<int> used;
    for (int k = nv(rng); k > 0; --k) {
      const int l = c(rng);
      if (!used.insert(l).second) continue;
      f.input.verdicts.push_back({img, S(cls(l)), static_cast<Verdict>(verdict(rng))});
    }
    if (coin(rng) == 0) f.input.problematic.push_back(img);
    if (coin(rng) != 1) f.preds[img] = S(cls(c(rng)));
  }
  f.preds["not_annotated"] = S(cls(1));
  return f;
}

// Direct enumeration over the raw fixture, independent of AnnotationStore.
inline std::pair<double, double> oracle_metrics(const RandomFixture& f) {
  std::map<std::string, std::string> original;
  for (const auto& [img, l] : f.input.ground_truth) original[img] = l.str();
  std::set<std::string> problematic(f.input.problematic.begin(), f.input.problematic.end());
  std::map<std::string, std::map<std::string, Verdict>> verdicts;
  for (const auto& v : f.input.verdicts) verdicts[v.image][v.label.str()] = v.verdict;
  std::size_t total = 0, hits = 0;
  std::map<std::string, std::pair<double, double>> per_class;
  for (const auto& [img, pred] : f.preds) {
    if (!original.contains(img) || problematic.contains(img)) continue;
    ++total;
    if (pred.str() == original[img]) ++hits;
    bool ok;
    auto vit = verdicts[img].find(pred.str());
    if (vit != verdicts[img].end()) {
      ok = vit->second != Verdict::Wrong;
    } else {
      ok = pred.str() == original[img];
    }
    per_class[original[img]].second += 1;
    if (ok) per_class[original[img]].first += 1;
  }
  double sum = 0;
  for (const auto& [c, ht] : per_class) sum += ht.first / ht.second;
  return {double(hits) / double(total), sum / double(per_class.size())};
}

// ------------------------------------------------------------------ planted worlds

struct PlantedRun {
  std::unique_ptr<TempDir> dir;
  fixture::PlantedWorld world;
  Assets assets;
  PairSet pairs;
  CascadeContext ctx;
  Predictions predictions;
};

inline std::unique_ptr<PlantedRun> load_planted(const fixture::Params& params) {
  auto run = std::make_unique<PlantedRun>();
  run->dir = std::make_unique<TempDir>("planted");
  run->world = fixture::generate(params);
  fixture::write(run->world, run->dir->path());
  run->assets = load_assets(load_manifest(run->dir->path() / "manifest.json"));
  run->pairs = pairs_for_classification(run->assets);
  run->ctx = make_context(run->assets, run->pairs);
  run->predictions = read_predictions_csv(run->dir->path() / "predictions" / "planted.csv");
  return run;
}

// Compares a classification of the planted predictions against the planted
// truth and audits every record. Returns one message per problem.
inline std::vector<std::string> check_planted(const PlantedRun& run, const ModelClassification& result) {
  std::vector<std::string> problems;
  std::map<ImageId, Category> got;
  for (const auto& r : result.records) got[r.image] = r.category;
  for (const auto& [img, expected] : run.world.expected) {
    auto it = got.find(img);
    if (!expected && it != got.end()) {
      problems.push_back(img + ": expected correct, got " + std::string(to_string(it->second)));
    } else if (expected && it == got.end()) {
      problems.push_back(img + ": expected " + std::string(to_string(*expected)) + ", got no record");
    } else if (expected && it->second != *expected) {
      problems.push_back(img + ": expected " + std::string(to_string(*expected)) + ", got " +
                         std::string(to_string(it->second)));
    }
  }
  if (got.size() != result.records.size()) problems.push_back("duplicate records");
  if (!result.skipped.empty()) problems.push_back(std::to_string(result.skipped.size()) + " images skipped");
  for (const auto& r : result.records) {
    if (!run.world.expected.contains(r.image)) problems.push_back(r.image + ": record for an unplanted image");
    auto msg = audit_record(r, run.ctx);
    if (!msg.empty()) problems.push_back(msg);
  }
  return problems;
}

// ------------------------------------------------------------------ CLI

struct CliResult {
  int code = -1;
  std::string output;
};

inline CliResult run_cli(const std::string& args) {
  TempDir tmp("cli_out");
  const auto log = tmp / "out.txt";
  const std::string cmd = std::string("\"") + ERRATLAS_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.output = io::read_file(log);
  return res;
}

inline std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  }
  return out;
}

}  // namespace testing_support
