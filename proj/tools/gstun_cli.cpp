// Command line front end: synthetic data generation, embedding, training,
// sequential unlearning runs and bound validation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gstun/gstun.hpp"

namespace {

gstun::ExperimentConfig load_base_config(int argc, char** argv) {
  // The config file has to be known before option defaults are bound, so
  // scan for --config ahead of the real parse.
  std::string path;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") path = argv[i + 1];
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw gstun::ArgumentError("cannot open config file " + path);
  nlohmann::json j;
  in >> j;
  return gstun::config_from_json(j);
}

void add_common_options(CLI::App& app, gstun::ExperimentConfig& cfg, std::string& config_path,
                        std::string& family, std::string& loss, std::string& removal_kind) {
  app.add_option("--config", config_path, "JSON config file; flags override its fields")
      ->check(CLI::ExistingFile);
  app.add_option("--dataset", cfg.dataset_path, "dataset directory (omit for synthetic data)");
  app.add_option("--family", family, "wavelet family: monic_cubic, itersine, diffusion, geometric");
  app.add_option("--scales", cfg.scattering.family.scales, "number of wavelet scales");
  app.add_option("--moments", cfg.scattering.family.moments, "moments per tree node");
  app.add_option("--layers", cfg.scattering.layers, "scattering tree depth");
  app.add_option("--loss", loss, "loss: logistic or linear");
  app.add_option("--lambda", cfg.lambda, "ridge regularization weight");
  app.add_option("--alpha", cfg.alpha, "fraction of the privacy budget spent on noise");
  app.add_option("--epsilon", cfg.epsilon, "removal certification epsilon");
  app.add_option("--delta", cfg.delta, "removal certification delta");
  app.add_option("--train-tol", cfg.train_tol, "gradient norm tolerance for training");
  app.add_option("--seed", cfg.seeds, "experiment seed, repeatable for multi-seed runs");
  app.add_option("--train-ratio", cfg.train_ratio, "training split fraction");
  app.add_option("--validation-ratio", cfg.validation_ratio, "validation split fraction");
  app.add_option("--test-ratio", cfg.test_ratio, "test split fraction");
  app.add_option("--removal-fraction", cfg.removal_fraction,
                 "fraction of training graphs receiving a removal request");
  app.add_option("--removal-kind", removal_kind, "request kind: feature, node or graph");
  app.add_option("--protocol-seed", cfg.protocol_seed, "seed for the removal request stream");
  app.add_option("--requests", cfg.requests_path, "JSON-lines request stream to replay");
  app.add_option("--validation-requests", cfg.validation_requests,
                 "request count for validate-bounds");
  app.add_option("--output-dir", cfg.output_dir, "report output directory");
  app.add_flag("--retrain-arm,!--no-retrain-arm", cfg.retrain_arm,
               "run the full-retrain comparison arm");
  app.add_flag("--timings,!--no-timings", cfg.timings,
               "record wall times (disable for byte-identical reports)");
  app.add_flag("--diagnostics", cfg.diagnostics,
               "record exact gradient residuals after every request");
  app.add_option("--synthetic-graphs", cfg.synthetic.graphs, "synthetic graph count");
  app.add_option("--min-nodes", cfg.synthetic.min_nodes, "synthetic minimum graph size");
  app.add_option("--max-nodes", cfg.synthetic.max_nodes, "synthetic maximum graph size");
  app.add_option("--p-in", cfg.synthetic.p_in, "within-community edge probability");
  app.add_option("--p-out", cfg.synthetic.p_out, "cross-community edge probability");
  app.add_option("--p-er", cfg.synthetic.p_er, "uniform edge probability for class -1");
  app.add_option("--synthetic-seed", cfg.synthetic.seed, "synthetic data seed");
}

void finish_config(gstun::ExperimentConfig& cfg, const std::string& family,
                   const std::string& loss, const std::string& removal_kind) {
  cfg.scattering.family.kind = gstun::wavelet_kind_from_name(family);
  cfg.loss = gstun::LossModel::from_name(loss).kind;
  cfg.removal_kind = gstun::removal_kind_from_name(removal_kind);
}

int cmd_gen_synthetic(const gstun::ExperimentConfig& cfg, const std::string& out_dir) {
  const gstun::Dataset ds = gstun::generate_synthetic(cfg.synthetic);
  gstun::save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.size() << " graphs to " << out_dir << "\n";
  return 0;
}

int cmd_embed(const gstun::ExperimentConfig& cfg, const std::string& out_file) {
  const gstun::Dataset ds = gstun::load_or_generate(cfg);
  const gstun::EmbeddedDataset e = gstun::embed_dataset(ds, cfg.scattering);
  if (out_file.empty() || out_file == "-") {
    gstun::write_embeddings_csv(std::cout, e);
  } else {
    std::ofstream os(out_file);
    if (!os) throw gstun::ArgumentError("cannot open output file " + out_file);
    gstun::write_embeddings_csv(os, e);
    std::cout << "wrote " << e.z.rows() << " x " << e.z.cols() << " embeddings to " << out_file
              << "\n";
  }
  return 0;
}

int cmd_train(const gstun::ExperimentConfig& cfg, const std::string& model_out) {
  const gstun::Dataset ds = gstun::load_or_generate(cfg);
  const std::uint64_t seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  const gstun::Split split = gstun::make_split(ds.size(), cfg.train_ratio, cfg.validation_ratio,
                                               cfg.test_ratio, seed);
  std::vector<int> labels;
  for (const auto& g : ds.graphs) labels.push_back(g.label);
  const gstun::LabelMap map = gstun::LabelMap::from_labels(labels);

  const gstun::EmbeddedDataset all = gstun::embed_dataset(ds, cfg.scattering);
  Eigen::MatrixXd z_train(static_cast<Eigen::Index>(split.train.size()), all.z.cols());
  for (std::size_t i = 0; i < split.train.size(); ++i)
    z_train.row(static_cast<Eigen::Index>(i)) = all.z.row(split.train[i]);

  const int heads = map.head_count();
  const double noise_scale =
      cfg.alpha > 0.0
          ? gstun::calibrate_noise(cfg.epsilon / heads, cfg.delta / heads,
                                   cfg.alpha * cfg.epsilon / heads /
                                       gstun::gaussian_mechanism_constant(cfg.delta / heads))
          : 0.0;
  nlohmann::json out;
  out["classes"] = map.classes;
  auto& jheads = out["heads"] = nlohmann::json::array();
  std::vector<gstun::ModelState> models;
  for (int h = 0; h < heads; ++h) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(split.train.size()));
    for (std::size_t i = 0; i < split.train.size(); ++i)
      y[static_cast<Eigen::Index>(i)] =
          map.target(h, ds.graphs[static_cast<std::size_t>(split.train[i])].label);
    models.push_back(gstun::train(z_train, y, cfg.lambda, noise_scale,
                                  seed + static_cast<std::uint64_t>(h), cfg.loss_model(),
                                  cfg.train_tol));
    jheads.push_back(gstun::model_to_json(models.back()));
  }

  std::ofstream os(model_out);
  if (!os) throw gstun::ArgumentError("cannot open output file " + model_out);
  os << out.dump(2) << '\n';

  Eigen::MatrixXd z_test(static_cast<Eigen::Index>(split.test.size()), all.z.cols());
  std::vector<int> y_test;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    z_test.row(static_cast<Eigen::Index>(i)) = all.z.row(split.test[i]);
    y_test.push_back(all.labels[static_cast<std::size_t>(split.test[i])]);
  }
  std::vector<const gstun::ModelState*> hp;
  for (const auto& m : models) hp.push_back(&m);
  std::cout << "trained " << heads << (heads == 1 ? " head on " : " heads on ")
            << split.train.size() << " graphs, model written to " << model_out << "\n";
  if (const auto acc = gstun::accuracy(hp, map, z_test, y_test))
    std::cout << "test accuracy " << *acc << " on " << split.test.size() << " graphs\n";
  return 0;
}

int cmd_unlearn(const gstun::ExperimentConfig& cfg) {
  const gstun::RunReport report = gstun::run_unlearning_experiment(cfg);
  const std::string dir = cfg.output_dir.empty() ? "unlearn_out" : cfg.output_dir;
  gstun::ExperimentConfig out_cfg = cfg;
  out_cfg.output_dir = dir;
  gstun::emit_report(report, out_cfg, dir);
  for (const auto& s : report.seeds) {
    std::cout << "seed " << s.seed << ": " << s.steps << " requests, " << s.retrain_count
              << " retrains";
    if (s.final_test_acc) std::cout << ", final test accuracy " << *s.final_test_acc;
    if (s.final_retrain_acc) std::cout << " (retrain arm " << *s.final_retrain_acc << ")";
    if (cfg.timings)
      std::cout << ", wall " << s.cum_wall_ms << " ms vs " << s.cum_retrain_wall_ms
                << " ms retrain";
    std::cout << "\n";
  }
  std::cout << "report written to " << dir << "\n";
  return 0;
}

int cmd_validate_bounds(const gstun::ExperimentConfig& cfg) {
  const gstun::BoundValidationReport report = gstun::run_bound_validation(cfg);
  const std::string dir = cfg.output_dir.empty() ? "bounds_out" : cfg.output_dir;
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(std::filesystem::path(dir) / "bounds.csv");
    gstun::write_bound_csv(os, report);
  }
  std::cout << report.rows.size() << " requests, " << report.violations << " bound violations\n";
  if (!report.rows.empty())
    std::cout << "smallest margins: data " << report.min_data_margin << ", worst-case "
              << report.min_worst_margin << "\n";
  std::cout << "rows written to " << dir << "/bounds.csv\n";
  return report.violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    gstun::ExperimentConfig cfg = load_base_config(argc, argv);
    std::string family = gstun::wavelet_kind_name(cfg.scattering.family.kind);
    std::string loss = cfg.loss == gstun::LossKind::Logistic ? "logistic" : "linear";
    std::string removal_kind = gstun::removal_kind_name(cfg.removal_kind);

    CLI::App app{"graph scattering embeddings with certified unlearning"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;  // consumed in load_base_config already
    add_common_options(app, cfg, config_path, family, loss, removal_kind);

    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset directory");
    std::string gen_out = "synthetic_data";
    gen->add_option("--out", gen_out, "output directory");

    auto* emb = app.add_subcommand("embed", "embed a dataset and write the coefficients");
    std::string embed_out;
    emb->add_option("--out", embed_out, "output CSV ('-' or empty for stdout)");

    auto* trn = app.add_subcommand("train", "train a classifier on scattering embeddings");
    std::string model_out = "model.json";
    trn->add_option("--model-out", model_out, "model JSON output path");

    auto* unl =
        app.add_subcommand("unlearn", "run a sequential removal stream against the model");
    auto* val = app.add_subcommand("validate-bounds",
                                   "check certified bounds against exact residuals");

    CLI11_PARSE(app, argc, argv);
    finish_config(cfg, family, loss, removal_kind);

    if (gen->parsed()) return cmd_gen_synthetic(cfg, gen_out);
    if (emb->parsed()) return cmd_embed(cfg, embed_out);
    if (trn->parsed()) return cmd_train(cfg, model_out);
    if (unl->parsed()) return cmd_unlearn(cfg);
    if (val->parsed()) return cmd_validate_bounds(cfg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
