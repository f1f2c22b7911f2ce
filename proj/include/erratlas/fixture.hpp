#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "erratlas/cascade.hpp"
#include "erratlas/csv.hpp"
#include "erratlas/embedding_index.hpp"
#include "erratlas/hash.hpp"
#include "erratlas/metrics.hpp"

namespace erratlas::fixture {

// Synthetic asset set with errors planted so that each one satisfies exactly
// its intended cascade stage and none of the earlier ones.
//
// Layout: 16 superclasses of 3 classes each (hypernym parent H_k, which also
// has one out-of-vocabulary child O_k), 6 unclassified classes forming the
// overlap relation, and 12 further unclassified "free" classes. Fine-grained
// OOV errors get an evaluation embedding near text(O_k) plus 10 reference
// images right next to it labelled with the prediction.
struct Params {
  std::uint64_t seed = 42;
  std::size_t per_category = 24;
  std::size_t dim = 32;
  std::size_t background_refs_per_class = 3;
  DatasetMode mode = DatasetMode::ImageNet;
};

struct PlantedWorld {
  Params params;
  std::map<std::string, std::string> files;                    // relative path -> bytes
  std::map<ImageId, std::optional<Category>> expected;          // nullopt = top-1 correct
  std::set<ImageId> problematic;
};

namespace detail {

inline constexpr std::size_t kSuperclasses = 16;
inline constexpr std::size_t kOverlapClasses = 6;
inline constexpr std::size_t kFreeClasses = 12;
inline constexpr std::size_t kClasses = 3 * kSuperclasses + kOverlapClasses + kFreeClasses;
inline constexpr std::size_t kNeighbors = 10;

// Only raw engine output is used so worlds are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * double(n)); }

  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::string sid(int prefix, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "n%02d%06zu", prefix, n);
  return buf;
}

inline std::string numbered(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06zu", prefix, n);
  return buf;
}

inline std::string class_id(std::size_t c) { return sid(1, c); }
inline std::string superclass_node(std::size_t k) { return sid(2, k); }
inline std::string unclassified_node(std::size_t j) { return sid(2, 100 + j); }
inline std::string oov_leaf(std::size_t k) { return sid(3, k); }
inline const std::string kRoot = "n00000001";

inline std::size_t overlap_class(std::size_t i) { return 3 * kSuperclasses + i; }
inline std::size_t free_class(std::size_t i) { return 3 * kSuperclasses + kOverlapClasses + i; }

using Vec = std::vector<float>;

inline Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = static_cast<float>(rng.gaussian());
    norm += double(x) * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

// Normalized `base + sigma * noise`, noise with unit expected norm.
inline Vec jitter(Rng& rng, const Vec& base, double sigma) {
  Vec v(base.size());
  double norm = 0.0;
  const double scale = sigma / std::sqrt(double(base.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<float>(base[i] + scale * rng.gaussian());
    norm += double(v[i]) * v[i];
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

struct Planting {
  std::optional<Category> category;
  std::size_t flavor = 0;
};

}  // namespace detail

inline PlantedWorld generate(const Params& params) {
  using namespace detail;
  Rng rng(params.seed);
  PlantedWorld world;
  world.params = params;
  const bool imagenet = params.mode == DatasetMode::ImageNet;

  // ---- label space
  auto group_of = [](std::size_t c) {
    const std::size_t bucket = c < 3 * kSuperclasses ? c / 3 : c;
    return kGroups[bucket % 3];
  };
  {
    auto labels = nlohmann::json::array();
    for (std::size_t c = 0; c < kClasses; ++c) {
      labels.push_back({{"id", class_id(c)}, {"name", numbered("class", c)}, {"group", std::string(to_string(group_of(c)))}});
    }
    world.files["labels.json"] = labels.dump(1) + "\n";

    nlohmann::json supers = nlohmann::json::object();
    for (std::size_t k = 0; k < kSuperclasses; ++k) {
      supers[numbered("super", k)] = {class_id(3 * k), class_id(3 * k + 1), class_id(3 * k + 2)};
    }
    world.files["superclasses.json"] = supers.dump(1) + "\n";

    nlohmann::json overlap = {
        {"equivalent", nlohmann::json::array({nlohmann::json::array({class_id(overlap_class(4)), class_id(overlap_class(5))})})},
        {"contains",
         {{{"superset", class_id(overlap_class(0))}, {"subsets", {class_id(overlap_class(1))}}},
          {{"superset", class_id(overlap_class(2))}, {"subsets", {class_id(overlap_class(3))}}}}},
    };
    world.files["overlap.json"] = overlap.dump(1) + "\n";
  }

  std::vector<std::pair<std::string, std::string>> edges;
  for (std::size_t k = 0; k < kSuperclasses; ++k) {
    edges.emplace_back(superclass_node(k), kRoot);
    for (std::size_t i = 0; i < 3; ++i) edges.emplace_back(class_id(3 * k + i), superclass_node(k));
    edges.emplace_back(oov_leaf(k), superclass_node(k));
  }
  for (std::size_t j = 0; j < (kOverlapClasses + kFreeClasses) / 2; ++j) {
    edges.emplace_back(unclassified_node(j), kRoot);
    edges.emplace_back(class_id(overlap_class(2 * j)), unclassified_node(j));
    edges.emplace_back(class_id(overlap_class(2 * j + 1)), unclassified_node(j));
  }
  edges.emplace_back(class_id(free_class(0)), superclass_node(0));  // a second parent: the graph is a DAG, not a tree
  std::sort(edges.begin(), edges.end());
  {
    io::CsvWriter w;
    for (const auto& [c, p] : edges) w.row(c, p);
    world.files["hypernyms.csv"] = w.str();
  }
  std::set<std::string> graph_nodes;
  for (const auto& [c, p] : edges) {
    graph_nodes.insert(c);
    graph_nodes.insert(p);
  }

  // ---- text embeddings, one per graph synset
  std::map<std::string, Vec> text;
  for (const auto& n : graph_nodes) text[n] = random_unit(rng, params.dim);

  auto random_superclass_class = [&] { return rng.below(3 * kSuperclasses); };
  auto random_free = [&] { return free_class(rng.below(kFreeClasses)); };
  auto random_non_overlap = [&] {
    const std::size_t i = rng.below(3 * kSuperclasses + kFreeClasses);
    return i < 3 * kSuperclasses ? i : free_class(i - 3 * kSuperclasses);
  };
  auto shares = [](std::size_t a, std::size_t b) { return a < 3 * kSuperclasses && b < 3 * kSuperclasses && a / 3 == b / 3; };

  // ---- plan
  std::vector<Planting> plan;
  auto plant = [&](std::optional<Category> c) {
    for (std::size_t i = 0; i < params.per_category; ++i) plan.push_back({c, i});
  };
  plant(std::nullopt);
  plant(Category::OverlapCorrect);
  if (imagenet) plant(Category::MultiLabelCorrect);
  plant(Category::FineGrained);
  plant(Category::FineGrainedOOV);
  if (imagenet) plant(Category::NonPrototypical);
  plant(Category::SpuriousCorrelation);
  plant(Category::ModelFailure);
  rng.shuffle(plan);
  const std::size_t problematic_count = std::max<std::size_t>(1, params.per_category / 4);

  struct EvalImage {
    ImageId id;
    std::size_t label = 0;
    std::size_t pred = 0;
    std::vector<std::pair<std::size_t, Verdict>> verdicts;
    Vec embedding;
    std::optional<Category> category;
    bool non_prototypical = false;
  };
  std::vector<EvalImage> images(plan.size() + problematic_count);
  for (std::size_t i = 0; i < images.size(); ++i) images[i].id = numbered("val", i);

  std::vector<std::pair<std::string, std::size_t>> refs;  // id, label
  std::vector<Vec> ref_vectors;
  auto add_ref = [&](std::size_t label, Vec v) {
    refs.emplace_back(numbered("ref", refs.size()), label);
    ref_vectors.push_back(std::move(v));
  };
  for (std::size_t c = 0; c < kClasses; ++c) {
    for (std::size_t r = 0; r < params.background_refs_per_class; ++r) add_ref(c, random_unit(rng, params.dim));
  }
  // Embedding near `target`, with the k nearest reference images labelled `label`.
  auto gated_embedding = [&](const std::string& target, std::size_t label) {
    Vec e = jitter(rng, text.at(target), 0.15);
    for (std::size_t r = 0; r < kNeighbors; ++r) add_ref(label, jitter(rng, e, 0.05));
    return e;
  };

  // Real (pair-mining) labels. Counted here so failures can avoid mined pairs.
  std::vector<std::vector<std::size_t>> real_images;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_counts;
  auto add_real = [&](std::vector<std::size_t> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t j = i + 1; j < labels.size(); ++j) ++pair_counts[{labels[i], labels[j]}];
    }
    real_images.push_back(std::move(labels));
  };
  auto key = [](std::size_t a, std::size_t b) { return std::make_pair(std::min(a, b), std::max(a, b)); };

  // Spurious plantings go first so that mined pairs are known before failures are drawn.
  std::vector<std::size_t> order(plan.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto rank = [&](std::size_t i) {
      return plan[i].category == Category::SpuriousCorrelation ? 0 : plan[i].category == Category::ModelFailure ? 2 : 1;
    };
    return rank(a) < rank(b);
  });

  bool noise_added = false;
  auto add_noise = [&] {
    // Same-superclass pairs (filtered by the superclass rule) and pairs seen once.
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t r = 0; r < 3; ++r) add_real({3 * k, 3 * k + 1});
    }
    for (std::size_t attempts = 0, added = 0; added < params.per_category && attempts < 1000; ++attempts) {
      const std::size_t a = random_superclass_class();
      const std::size_t b = random_free();
      if (pair_counts.contains(key(a, b))) continue;
      add_real({a, b});
      ++added;
    }
    noise_added = true;
  };
  auto mined = [&](std::size_t a, std::size_t b) {
    auto it = pair_counts.find(key(a, b));
    return it != pair_counts.end() && it->second >= 2 && !shares(a, b);
  };

  for (std::size_t slot : order) {
    const auto& p = plan[slot];
    auto& img = images[slot];
    img.category = p.category;
    img.embedding = random_unit(rng, params.dim);
    if (p.category == Category::ModelFailure && !noise_added) add_noise();

    if (!p.category) {
      img.label = rng.below(kClasses);
      img.pred = img.label;
      continue;
    }
    switch (*p.category) {
      case Category::OverlapCorrect: {
        static constexpr std::size_t kAccepted[4][2] = {{1, 0}, {3, 2}, {4, 5}, {5, 4}};  // (gt, pred)
        const auto& pick = kAccepted[p.flavor % 4];
        img.label = overlap_class(pick[0]);
        img.pred = overlap_class(pick[1]);
        break;
      }
      case Category::MultiLabelCorrect: {
        img.label = random_superclass_class();
        img.pred = random_free();
        img.verdicts.emplace_back(img.pred, p.flavor % 2 ? Verdict::Unclear : Verdict::Correct);
        if (p.flavor % 3 == 0) img.verdicts.emplace_back(img.label, Verdict::Correct);
        break;
      }
      case Category::FineGrained: {
        const std::size_t k = rng.below(kSuperclasses);
        const std::size_t a = 3 * k + rng.below(3);
        const std::size_t b = 3 * k + (a - 3 * k + 1 + rng.below(2)) % 3;
        if (imagenet && p.flavor % 2) {
          // matched through a multi-label rather than the original label
          img.label = random_free();
          img.verdicts.emplace_back(a, p.flavor % 4 == 1 ? Verdict::Unclear : Verdict::Correct);
        } else {
          img.label = a;
        }
        img.pred = b;
        break;
      }
      case Category::FineGrainedOOV: {
        const std::size_t k = rng.below(kSuperclasses);
        img.pred = 3 * k + rng.below(3);
        do {
          img.label = random_non_overlap();
        } while (shares(img.label, img.pred));
        img.embedding = gated_embedding(oov_leaf(k), 3 * k + rng.below(3));
        break;
      }
      case Category::NonPrototypical: {
        img.pred = random_free();
        do {
          img.label = random_non_overlap();
        } while (img.label == img.pred);
        img.non_prototypical = true;
        break;
      }
      case Category::SpuriousCorrelation:
      case Category::ModelFailure: {
        const bool spurious = *p.category == Category::SpuriousCorrelation;
        const bool gated = p.flavor % 2 == 1;  // passes the neighbor gate, in-vocabulary best proposal
        for (;;) {
          if (gated) {
            img.pred = random_superclass_class();
            img.label = random_free();
          } else {
            img.pred = random_free();
            img.label = random_non_overlap();
          }
          if (img.label == img.pred) continue;
          if (!spurious && mined(img.pred, img.label)) continue;
          break;
        }
        if (gated) img.embedding = gated_embedding(class_id(img.pred), img.pred);
        if (spurious) {
          add_real({img.pred, img.label});
          if (p.flavor % 3 == 0) {
            add_real({img.pred, img.label, random_free()});
          } else {
            add_real({img.pred, img.label});
          }
        } else if (imagenet && p.flavor % 4 == 0) {
          img.verdicts.emplace_back(img.pred, Verdict::Wrong);
        }
        break;
      }
    }
  }
  if (!noise_added) add_noise();

  // Problematic images: wrong predictions that must never be counted.
  for (std::size_t i = plan.size(); i < images.size(); ++i) {
    auto& img = images[i];
    img.label = rng.below(kClasses);
    img.pred = (img.label + 1 + rng.below(kClasses - 1)) % kClasses;
    img.embedding = random_unit(rng, params.dim);
    world.problematic.insert(img.id);
  }
  // Evaluation images also carry real labels; they are excluded from mining,
  // so this repeated pair must not surface.
  for (std::size_t i = 0; i < 3 && i < images.size(); ++i) {
    real_images.push_back({overlap_class(4), overlap_class(5)});
  }

  // ---- write annotation files
  {
    io::CsvWriter gt, ml, real;
    gt.row("image_id", "label_id");
    ml.row("image_id", "label_id", "verdict");
    real.row("image_id", "label_id");
    std::string nonproto, problematic;
    for (const auto& img : images) {
      gt.row(img.id, class_id(img.label));
      auto verdicts = img.verdicts;
      std::sort(verdicts.begin(), verdicts.end());
      for (const auto& [label, v] : verdicts) ml.row(img.id, class_id(label), to_string(v));
      if (img.non_prototypical) nonproto += img.id + "\n";
      if (world.problematic.contains(img.id)) problematic += img.id + "\n";
    }
    for (std::size_t i = 0; i < real_images.size(); ++i) {
      // the last three entries belong to evaluation images
      const bool eval_owned = i + 3 >= real_images.size();
      const std::string id = eval_owned ? images[i + 3 - real_images.size()].id : numbered("real", i);
      for (auto l : real_images[i]) real.row(id, class_id(l));
    }
    world.files["ground_truth.csv"] = gt.str();
    if (imagenet) {
      world.files["multilabel.csv"] = ml.str();
      world.files["non_prototypical.txt"] = nonproto;
    }
    world.files["problematic.txt"] = problematic;
    world.files["real_labels.csv"] = real.str();
  }

  // ---- embeddings
  {
    std::vector<std::string> ids;
    std::vector<float> values;
    io::CsvWriter labels;
    labels.row("image_id", "label_id");
    for (std::size_t r = 0; r < refs.size(); ++r) {
      ids.push_back(refs[r].first);
      labels.row(refs[r].first, class_id(refs[r].second));
      values.insert(values.end(), ref_vectors[r].begin(), ref_vectors[r].end());
    }
    auto write = [&](const std::string& stem, const std::vector<std::string>& row_ids, const std::vector<float>& v) {
      world.files[stem + ".emb"] = encode_emb1(row_ids.size(), params.dim, v);
      std::string list;
      for (const auto& id : row_ids) list += id + "\n";
      world.files[stem + ".ids"] = list;
    };
    write("ref", ids, values);
    world.files["ref_labels.csv"] = labels.str();

    ids.clear();
    values.clear();
    for (const auto& img : images) {
      ids.push_back(img.id);
      values.insert(values.end(), img.embedding.begin(), img.embedding.end());
    }
    write("eval", ids, values);

    ids.clear();
    values.clear();
    for (const auto& [n, v] : text) {
      ids.push_back(n);
      values.insert(values.end(), v.begin(), v.end());
    }
    write("text", ids, values);
  }

  // ---- predictions, models, expectations
  {
    Predictions planted, perfect;
    io::CsvWriter expected;
    expected.row("image_id", "expected");
    for (const auto& img : images) {
      planted.emplace(img.id, SynsetId(class_id(img.pred)));
      perfect.emplace(img.id, SynsetId(class_id(img.label)));
      if (world.problematic.contains(img.id)) continue;
      world.expected[img.id] = img.category;
      expected.row(img.id, img.category ? to_string(*img.category) : std::string_view("correct"));
    }
    world.files["predictions/planted.csv"] = predictions_to_csv(planted);
    world.files["predictions/perfect.csv"] = predictions_to_csv(perfect);
    world.files["planted.csv"] = expected.str();
    world.files["models.json"] = models_manifest_json({
        {"perfect", ArchitectureFamily::Transformer, 86'000'000, "synthetic-large", 2'000'000'000},
        {"planted", ArchitectureFamily::CNN, 25'000'000, "synthetic-small", 1'281'167},
    });
  }

  // ---- manifest (checksums cover every asset it references)
  {
    nlohmann::json paths = {
        {"labels", "labels.json"},         {"overlap", "overlap.json"},       {"superclasses", "superclasses.json"},
        {"hypernyms", "hypernyms.csv"},    {"ground_truth", "ground_truth.csv"}, {"problematic", "problematic.txt"},
        {"real_labels", "real_labels.csv"}, {"ref_embeddings", "ref.emb"},    {"ref_ids", "ref.ids"},
        {"ref_labels", "ref_labels.csv"},  {"eval_embeddings", "eval.emb"},   {"eval_ids", "eval.ids"},
        {"text_embeddings", "text.emb"},   {"text_ids", "text.ids"},
    };
    if (imagenet) {
      paths["multilabel"] = "multilabel.csv";
      paths["non_prototypical"] = "non_prototypical.txt";
    }
    nlohmann::json checksums = nlohmann::json::object();
    for (const auto& [key, rel] : paths.items()) checksums[rel.get<std::string>()] = sha256_hex(world.files.at(rel));
    nlohmann::json manifest = {
        {"dataset_mode", std::string(to_string(params.mode))},
        {"strict", false},
        {"embedding_provenance", "synthetic planted world, seed " + std::to_string(params.seed) + ", dim " +
                                     std::to_string(params.dim)},
        {"paths", paths},
        {"checksums", checksums},
    };
    world.files["manifest.json"] = manifest.dump(1) + "\n";
  }
  return world;
}

inline void write(const PlantedWorld& world, const std::filesystem::path& out_dir) {
  for (const auto& [rel, bytes] : world.files) io::write_file(out_dir / rel, bytes);
}

inline std::map<ImageId, std::optional<Category>> read_expected(const std::filesystem::path& path) {
  std::map<ImageId, std::optional<Category>> out;
  for (const auto& r : io::read_csv(path, 2, {"image_id", "expected"})) {
    out[r.fields[0]] = r.fields[1] == "correct" ? std::nullopt : std::optional<Category>(parse_category(r.fields[1]));
  }
  return out;
}

}  // namespace erratlas::fixture
