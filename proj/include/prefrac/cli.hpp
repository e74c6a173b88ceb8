// Copyright 2026 The Prefrac Authors.
//
// Command-line frontend: one subcommand per pipeline stage. Every stochastic
// path takes an explicit --seed, all structured artifacts are JSON, and all
// file references inside artifacts are relative, so reruns with the same
// flags produce byte-identical outputs regardless of where they are written.
//
// Exit codes: 0 success, 1 usage error, 2 data or contract error.
#ifndef PREFRAC_CLI_HPP_
#define PREFRAC_CLI_HPP_

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/dataset.hpp"
#include "prefrac/decode.hpp"
#include "prefrac/fracture.hpp"
#include "prefrac/loss.hpp"
#include "prefrac/mesh.hpp"
#include "prefrac/model.hpp"
#include "prefrac/postprocess.hpp"
#include "prefrac/tensor.hpp"
#include "prefrac/train.hpp"
#include "prefrac/voxelize.hpp"

namespace prefrac::cli {
namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline std::vector<std::string> sorted_files_with_extension(const std::string& dir,
                                                            const std::string& ext) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw DataError("cannot list directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : it)
    if (entry.is_regular_file() && entry.path().extension() == ext)
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

// Accepts either a group-labels JSON (written by `cluster`) or a training
// example JSON (ground truth written by `flip`); the latter is recognized by
// its embedded point cloud.
inline std::pair<std::vector<int>, int> read_any_labels(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.contains("points")) {
    const data::TrainingExample ex = data::read_example(path);
    return {ex.labels, ex.num_groups};
  }
  const infer::LabelsFile lf = infer::read_labels(path);
  return {lf.labeling.labels, lf.labeling.num_groups};
}

}  // namespace detail

// Parses and executes one invocation. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"prefrac: voxel prefracture and learned piece grouping"};
  app.require_subcommand(1);

  struct {
    std::string mesh, out;
    int sites = 0, resolution = 0;
    std::uint64_t seed = 0;
  } frac;
  CLI::App* c_frac =
      app.add_subcommand("fracture", "Voxelize an OBJ mesh and split it into Voronoi pieces");
  c_frac->add_option("--mesh", frac.mesh, "input OBJ mesh")->required();
  c_frac->add_option("--sites", frac.sites, "number of Voronoi sites")
      ->required()
      ->check(CLI::Range(1, 1000000));
  c_frac->add_option("--resolution", frac.resolution, "voxel cells along the longest axis")
      ->required()
      ->check(CLI::Range(4, 4096));
  c_frac->add_option("--seed", frac.seed, "random seed");
  c_frac->add_option("--out", frac.out, "output piece-set JSON")->required();
  c_frac->callback([&] {
    const geom::TriMesh mesh = geom::load_obj(frac.mesh);
    const geom::VoxelGrid grid = geom::voxelize(mesh, frac.resolution);
    const geom::PieceSet ps = geom::fracture(grid, frac.sites, frac.seed);
    detail::write_json_file(frac.out, geom::pieceset_to_json(ps));
    out << "fracture: " << ps.pieces.size() << " pieces -> " << frac.out << "\n";
  });

  struct {
    std::string family, out_dir;
    int count = 1;
    std::uint64_t seed = 0;
  } synth;
  CLI::App* c_synth =
      app.add_subcommand("synth", "Generate synthetic whole meshes with fragment decompositions");
  c_synth->add_option("--family", synth.family, "shape family")
      ->required()
      ->check(CLI::IsMember({"dumbbell", "hourglass", "lbracket", "multilobe"}));
  c_synth->add_option("--count", synth.count, "number of shapes")->check(CLI::Range(1, 100000));
  c_synth->add_option("--seed", synth.seed, "base random seed; shape i uses seed + i");
  c_synth->add_option("--out-dir", synth.out_dir, "output directory")->required();
  c_synth->callback([&] {
    namespace fs = std::filesystem;
    const data::ShapeFamily fam = data::parse_family(synth.family);
    for (int i = 0; i < synth.count; ++i) {
      const data::SynthShape shape = data::synth_shape(fam, synth.seed + static_cast<unsigned>(i));
      char idx[16];
      std::snprintf(idx, sizeof idx, "%03d", i);
      const fs::path dir = fs::path(synth.out_dir) / (synth.family + "_" + idx);
      fs::create_directories(dir / "fragments");
      geom::save_obj(shape.whole, (dir / "whole.obj").string());
      for (std::size_t f = 0; f < shape.fragments.size(); ++f) {
        char fj[16];
        std::snprintf(fj, sizeof fj, "%02zu", f);
        geom::save_obj(shape.fragments[f],
                       (dir / "fragments" / ("frag_" + std::string(fj) + ".obj")).string());
      }
      out << "synth: " << dir.string() << " (" << shape.fragments.size() << " fragments)\n";
    }
  });

  struct {
    std::string whole, fragments_dir, out;
    int sites = 0, resolution = 0;
    std::uint64_t seed = 0;
  } flip;
  CLI::App* c_flip = app.add_subcommand(
      "flip", "Fracture a whole mesh and label pieces by containing fragment");
  c_flip->add_option("--whole", flip.whole, "whole OBJ mesh")->required();
  c_flip->add_option("--fragments-dir", flip.fragments_dir,
                     "directory of fragment OBJs (sorted lexicographically)")
      ->required();
  c_flip->add_option("--sites", flip.sites, "number of Voronoi sites")
      ->required()
      ->check(CLI::Range(1, 1000000));
  c_flip->add_option("--resolution", flip.resolution, "voxel cells along the longest axis")
      ->required()
      ->check(CLI::Range(4, 4096));
  c_flip->add_option("--seed", flip.seed, "random seed");
  c_flip->add_option("--out", flip.out, "output training-example JSON")->required();
  c_flip->callback([&] {
    const geom::TriMesh whole = geom::load_obj(flip.whole);
    const std::vector<std::string> frag_files =
        detail::sorted_files_with_extension(flip.fragments_dir, ".obj");
    if (frag_files.empty()) throw DataError("flip: no .obj fragments in " + flip.fragments_dir);
    std::vector<geom::TriMesh> fragments;
    for (const std::string& f : frag_files) fragments.push_back(geom::load_obj(f));
    auto [ex, ps] = data::flip_example(whole, fragments, flip.sites, flip.resolution, flip.seed);
    // Keep artifacts free of absolute paths so identical reruns match bytewise.
    ex.source = std::filesystem::path(flip.out).stem().string();
    data::write_example(flip.out, ex);
    out << "flip: " << ex.points.size() << " pieces, " << ex.num_groups << " groups -> "
        << flip.out << "\n";
  });

  struct {
    std::string data_dir, out_checkpoint, history;
    int epochs = 1, k = 16;
    double lr = 1e-3, alpha = 0.1;
    std::uint64_t seed = 0;
  } tr;
  CLI::App* c_train =
      app.add_subcommand("train", "Train the grouping model on a directory of examples");
  c_train->add_option("--data-dir", tr.data_dir, "directory of training-example JSONs")
      ->required();
  c_train->add_option("--epochs", tr.epochs, "training epochs")->check(CLI::Range(1, 1000000));
  c_train->add_option("--lr", tr.lr, "learning rate")->check(CLI::PositiveNumber);
  c_train->add_option("--alpha", tr.alpha, "same-group regularizer weight")
      ->check(CLI::NonNegativeNumber);
  c_train->add_option("--k", tr.k, "model output columns (maximum group count)")
      ->check(CLI::Range(2, 1024));
  c_train->add_option("--seed", tr.seed, "random seed (init and shuffling)");
  c_train->add_option("--out-checkpoint", tr.out_checkpoint, "output checkpoint JSON")
      ->required();
  c_train->add_option("--history", tr.history, "optional per-epoch loss CSV");
  c_train->callback([&] {
    const std::vector<std::string> files =
        detail::sorted_files_with_extension(tr.data_dir, ".json");
    if (files.empty()) throw DataError("train: no .json examples in " + tr.data_dir);
    std::vector<data::TrainingExample> examples;
    for (const std::string& f : files) examples.push_back(data::read_example(f));
    train::TrainConfig cfg;
    cfg.epochs = tr.epochs;
    cfg.learning_rate = tr.lr;
    cfg.loss.alpha = tr.alpha;
    cfg.seed = tr.seed;
    cfg.model.k_groups = tr.k;
    cfg.model.seed = tr.seed;
    const train::TrainResult result = train::train(examples, cfg);
    model::save_checkpoint(tr.out_checkpoint, cfg.model, result.params);
    if (!tr.history.empty()) train::write_history_csv(tr.history, result.history);
    out << "train: " << examples.size() << " examples, " << tr.epochs << " epochs, mean loss "
        << result.history.front() << " -> " << result.history.back() << "; checkpoint -> "
        << tr.out_checkpoint << "\n";
  });

  struct {
    std::string pieces, checkpoint, mode = "argmax", out;
    int groups = 0;
    std::uint64_t seed = 0;
  } cl;
  CLI::App* c_cluster =
      app.add_subcommand("cluster", "Assign fracture pieces to groups with a trained model");
  c_cluster->add_option("--pieces", cl.pieces, "piece-set JSON from `fracture`")->required();
  c_cluster->add_option("--checkpoint", cl.checkpoint, "model checkpoint JSON")->required();
  c_cluster->add_option("--groups", cl.groups, "number of groups to request")
      ->required()
      ->check(CLI::Range(1, 4096));
  c_cluster->add_option("--mode", cl.mode, "decode mode")
      ->check(CLI::IsMember({"argmax", "sample"}));
  c_cluster->add_option("--seed", cl.seed, "random seed (sample mode)");
  c_cluster->add_option("--out", cl.out, "output labels JSON")->required();
  c_cluster->callback([&] {
    const auto [mcfg, params] = model::load_checkpoint(cl.checkpoint);
    const geom::PieceSet ps = geom::pieceset_from_json(detail::read_json_file(cl.pieces));
    const auto [points, xform] = data::normalize(geom::centers_point_cloud(ps));
    const double gcf = static_cast<double>(cl.groups) / static_cast<double>(mcfg.k_groups);
    const ad::Tensor logits = model::forward(mcfg, params, points, gcf);
    infer::DecodeConfig dc;
    dc.mode = cl.mode == "sample" ? infer::DecodeConfig::Mode::kSample
                                  : infer::DecodeConfig::Mode::kArgmax;
    dc.seed = cl.seed;
    dc.num_groups_requested = cl.groups;
    const infer::GroupLabeling labeling = infer::decode(logits, dc);
    infer::write_labels(cl.out, labeling, dc);
    out << "cluster: " << labeling.labels.size() << " pieces -> " << cl.groups
        << " requested groups -> " << cl.out << "\n";
  });

  struct {
    std::string pieces, labels, out_dir;
  } po;
  CLI::App* c_post = app.add_subcommand(
      "post", "Split disconnected groups and export group meshes with a manifest");
  c_post->add_option("--pieces", po.pieces, "piece-set JSON from `fracture`")->required();
  c_post->add_option("--labels", po.labels, "labels JSON from `cluster`")->required();
  c_post->add_option("--out-dir", po.out_dir, "output directory")->required();
  c_post->callback([&] {
    const geom::PieceSet ps = geom::pieceset_from_json(detail::read_json_file(po.pieces));
    const infer::LabelsFile lf = infer::read_labels(po.labels);
    if (lf.labeling.labels.size() != ps.pieces.size())
      throw ContractError("post: " + std::to_string(lf.labeling.labels.size()) +
                          " labels for " + std::to_string(ps.pieces.size()) + " pieces");
    const post::GroupSet gs = post::split_disconnected(lf.labeling, ps.adjacency);
    std::filesystem::create_directories(po.out_dir);
    post::export_group_set(gs, ps, po.out_dir, po.out_dir + "/manifest.json");
    out << "post: " << gs.groups.size() << " groups -> " << po.out_dir << "\n";
  });

  struct {
    std::string pred, gt;
  } ev;
  CLI::App* c_eval =
      app.add_subcommand("eval", "Score predicted labels against ground truth labels");
  c_eval->add_option("--pred", ev.pred, "predicted labels JSON (or example JSON)")->required();
  c_eval->add_option("--gt", ev.gt, "ground truth labels JSON (or example JSON)")->required();
  c_eval->callback([&] {
    const auto [pred_labels, pred_groups] = detail::read_any_labels(ev.pred);
    const auto [gt_labels, gt_groups] = detail::read_any_labels(ev.gt);
    if (pred_labels.size() != gt_labels.size())
      throw ContractError("eval: " + std::to_string(pred_labels.size()) + " predicted vs " +
                          std::to_string(gt_labels.size()) + " ground truth labels");
    train::EvalReport report;
    report.pairwise_accuracy = train::pairwise_accuracy(pred_labels, gt_labels);
    report.adjusted_rand_index = train::adjusted_rand_index(pred_labels, gt_labels);
    report.per_example.push_back({std::filesystem::path(ev.pred).stem().string(),
                                  report.pairwise_accuracy, report.adjusted_rand_index});
    out << train::report_to_json(report).dump(2) << "\n";
  });

  struct {
    std::uint64_t seed = 0;
  } gc;
  CLI::App* c_gradcheck = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against central differences");
  c_gradcheck->add_option("--seed", gc.seed, "random seed");
  c_gradcheck->callback([&] {
    Rng rng(gc.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<double> ldata(15);
    for (double& v : ldata) v = rng.uniform(-2.0, 2.0);
    const ad::Tensor logits({5, 3}, ldata);
    std::vector<int> loss_labels(5);
    for (int& l : loss_labels) l = static_cast<int>(rng.uniform_int(0, 2));
    const loss::LossConfig lcfg;
    const double loss_err = ad::gradcheck(
        [&](ad::Tape& tape, ad::Var x) {
          return loss::pairwise_identity_loss(tape, x, loss_labels, lcfg);
        },
        logits, 1e-5);

    model::ModelConfig mcfg;
    mcfg.k_groups = 4;
    mcfg.neighbors = 3;
    mcfg.channels = {6, 7};
    mcfg.seed = gc.seed;
    const model::Parameters params = model::init(mcfg);
    std::vector<Vec3> points(8);
    for (Vec3& p : points) p = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
    std::vector<int> model_labels(8);
    for (int& l : model_labels) l = static_cast<int>(rng.uniform_int(0, 2));
    double model_err = 0.0;
    for (const auto& [target, tensor] : params.tensors) {
      const double e = ad::gradcheck(
          [&, target = target](ad::Tape& tape, ad::Var x) {
            std::map<std::string, ad::Var> pv;
            for (const auto& [name, t] : params.tensors)
              pv.emplace(name, name == target ? x : tape.constant(t));
            const ad::Var lg = model::forward_on_tape(tape, mcfg, pv, points, 0.75);
            return loss::pairwise_identity_loss(tape, lg, model_labels, lcfg);
          },
          tensor, 1e-5);
      model_err = std::max(model_err, e);
    }
    out << "gradcheck: loss max rel err " << loss_err << " (tol 1e-4), model max rel err "
        << model_err << " (tol 1e-3)\n";
    if (!(loss_err < 1e-4) || !(model_err < 1e-3))
      throw ContractError("gradcheck: tolerance exceeded");
  });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    while (!target->get_subcommands().empty()) target = target->get_subcommands().front();
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    // Thrown from a subcommand callback during parse() completion.
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace prefrac::cli

#endif  // PREFRAC_CLI_HPP_
