// erratlas: error-taxonomy engine for image-classifier predictions.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "erratlas/erratlas.hpp"

namespace {

using namespace erratlas;

struct Globals {
  std::string manifest;
  std::size_t jobs = 1;
  bool verify = false;
  std::string mode;
};

std::optional<DatasetMode> mode_override(const Globals& g) {
  if (g.mode.empty()) return std::nullopt;
  return parse_mode(g.mode);
}

Assets open_assets(const Globals& g) {
  const auto manifest = load_manifest(default_manifest_path(g.manifest));
  if (g.verify) verify_checksums(manifest);
  return load_assets(manifest, mode_override(g));
}

std::vector<ErrorRecord> read_records_arg(const std::string& path) {
  if (std::filesystem::is_directory(path)) {
    std::vector<ErrorRecord> out;
    for (auto& [model, recs] : load_records_dir(path)) out.insert(out.end(), recs.begin(), recs.end());
    return out;
  }
  return read_records_csv(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"erratlas - classify image-classifier errors by severity"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--manifest", g.manifest, "asset manifest (default: $ERRATLAS_ASSETS/manifest.json)");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verify", g.verify, "verify manifest checksums before loading");
  app.add_option("--mode", g.mode, "override the manifest dataset mode")->check(CLI::IsMember({"imagenet", "imagenet-a"}));

  auto* validate = app.add_subcommand("validate", "load every asset and check all invariants")->fallthrough();

  std::string pairs_out;
  auto* extract = app.add_subcommand("extract-pairs", "mine spurious-correlation pairs")->fallthrough();
  extract->add_option("--out", pairs_out, "pairs CSV")->required();

  std::string predictions_glob, out_dir;
  std::size_t k_neighbors = 10;
  auto* classify = app.add_subcommand("classify", "run the error cascade per model")->fallthrough();
  classify->add_option("--predictions", predictions_glob, "prediction CSVs (glob or directory)")->required();
  classify->add_option("--out", out_dir, "output directory")->required();
  classify->add_option("--k", k_neighbors, "neighbors for the OOV check")->check(CLI::PositiveNumber);

  std::string records_path, models_path, report_out;
  std::optional<double> split_at;
  auto* report = app.add_subcommand("report", "aggregate records into per-model reports and fits")->fallthrough();
  report->add_option("--records", records_path, "directory written by classify")->required();
  report->add_option("--predictions", predictions_glob, "prediction CSVs (glob or directory)")->required();
  report->add_option("--models", models_path, "models manifest JSON")->required();
  report->add_option("--out", report_out, "output directory")->required();
  report->add_option("--split-at", split_at, "fit two segments split at this accuracy");

  std::string expert_path, compare_out;
  auto* compare = app.add_subcommand("compare", "confusion matrix of expert vs automatic categories")->fallthrough();
  compare->add_option("--records", records_path, "records CSV or classify output directory")->required();
  compare->add_option("--expert", expert_path, "expert CSV: model,image_id,category")->required();
  compare->add_option("--out", compare_out, "matrix CSV")->required();

  fixture::Params fx;
  std::string fixture_out;
  auto* gen = app.add_subcommand("gen-fixture", "write a planted-error world")->fallthrough();
  gen->add_option("--seed", fx.seed, "generator seed");
  gen->add_option("--per-category", fx.per_category, "plantings per outcome")->check(CLI::PositiveNumber);
  gen->add_option("--dim", fx.dim, "embedding dimension")->check(CLI::Range(8, 4096));
  gen->add_option("--out", fixture_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      const auto assets = open_assets(g);
      std::cout << describe_assets(assets);
      if (assets.store && assets.mode == DatasetMode::ImageNet && assets.manifest.has("real_labels")) {
        const auto mined = mine_pairs(assets);
        std::cout << "co-occurrence pairs: " << mined.pairs.size() << " (" << mined.raw_pair_count << " raw from "
                  << mined.multi_label_image_count << " images)\n";
      }
      std::cout << "ok\n";
    } else if (extract->parsed()) {
      const auto assets = open_assets(g);
      const auto mined = mine_pairs(assets);
      io::write_file(pairs_out, pairs_to_csv(mined.pairs));
      std::cout << "raw pairs: " << mined.raw_pair_count << "\nmulti-label images: " << mined.multi_label_image_count
                << "\nfiltered pairs: " << mined.pairs.size() << "\n";
      if (mined.missing_exclusions) {
        std::cerr << "warning: " << mined.missing_exclusions << " excluded ids have no real labels\n";
      }
    } else if (classify->parsed()) {
      auto assets = open_assets(g);
      const auto files = expand_glob(predictions_glob);
      if (files.empty()) fail(ErrorKind::Io, "no prediction files match " + predictions_glob);
      const auto run = run_classify(assets, load_prediction_files(files), out_dir, g.jobs, k_neighbors);
      for (const auto& w : assets.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& m : run.models) {
        std::cout << m.model << ": " << m.evaluated << " evaluated, " << m.records.size() << " records, "
                  << m.skipped.size() << " skipped\n";
      }
    } else if (report->parsed()) {
      const auto assets = open_assets(g);
      const auto files = expand_glob(predictions_glob);
      if (files.empty()) fail(ErrorKind::Io, "no prediction files match " + predictions_glob);
      ReportOptions opts;
      opts.split_at = split_at;
      const auto run = run_report(assets, load_records_dir(records_path), load_prediction_files(files),
                                  read_models_manifest(models_path), report_out, opts);
      std::cout << run.reports.size() << " models, " << run.fits.size() << " fitted series\n";
    } else if (compare->parsed()) {
      const auto matrix = compare_categorizations(read_records_arg(records_path), read_expert_csv(expert_path));
      io::write_file(compare_out, confusion_to_csv(matrix));
      std::cout << confusion_to_csv(matrix);
      if (matrix.unmatched) std::cerr << "warning: " << matrix.unmatched << " expert entries have no automatic record\n";
    } else if (gen->parsed()) {
      if (auto m = mode_override(g)) fx.mode = *m;
      const auto world = fixture::generate(fx);
      fixture::write(world, fixture_out);
      std::cout << "wrote " << world.files.size() << " files, " << world.expected.size() << " evaluated images\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
