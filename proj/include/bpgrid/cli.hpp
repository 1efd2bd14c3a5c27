#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bpgrid/checks.hpp"
#include "bpgrid/inference.hpp"
#include "bpgrid/io.hpp"
#include "bpgrid/learning.hpp"
#include "bpgrid/matching.hpp"
#include "bpgrid/pyramid.hpp"

namespace bpgrid {
namespace cli {

namespace detail {

struct StereoArgs {
  std::string left, right, out, params, gt, metrics_out;
  int max_disp = 0;
  int levels = 1;
  int census_window = 5;
  int refine_tau = 3;
  std::string algo = "bp";
  std::string pairwise = "jump";
  uint64_t seed = 0;
  int threads = 0;
};

struct FlowArgs {
  std::string left, right, params;
  std::vector<std::string> out, gt;
  int radius = 0;
  int levels = 1;
  int census_window = 5;
  int refine_tau = 3;
  std::string algo = "bp";
  uint64_t seed = 0;
  int threads = 0;
};

struct SegmentArgs {
  std::string probs, image, matrix, out;
  double beta = 1.0;
  uint64_t seed = 0;
  int threads = 0;
};

struct TrainArgs {
  std::string data, config, params, params_out, loss_out;
  int max_disp = 0;
  int levels = 3;
  int census_window = 5;
  bool refine = false;
  uint64_t seed = 0;
  int threads = 0;
};

inline io::ParamsFile default_params(const std::string& kind, int labels) {
  io::ParamsFile pf;
  pf.pairwise = kind;
  pf.temperature = 10.0;
  if (kind == "jump") {
    JumpParams jp;
    jp.p1_pos = jp.p1_neg = 1.0;
    jp.p2_pos = jp.p2_neg = 1.5;
    jp.p3 = 2.0;
    pf.jump_levels = {jp};
  } else {
    pf.matrix = CompatMatrix(labels);
    for (int s = 0; s < labels; ++s) {
      pf.matrix.h(s, s) = 1.0;
      pf.matrix.vert(s, s) = 1.0;
    }
  }
  return pf;
}

inline PairwiseSpec level_spec(const io::ParamsFile& pf, int level, int labels,
                               const Image* weight_img) {
  if (pf.pairwise == "jump") {
    PairwiseSpec s{pf.jump_at(level), std::nullopt};
    if (pf.weight_beta >= 0 && weight_img)
      s.jump().per_pixel_weights = weights_from_image(*weight_img, pf.weight_beta);
    return s;
  }
  if (pf.matrix.labels != labels)
    throw std::runtime_error("params: matrix has " + std::to_string(pf.matrix.labels) +
                             " labels, pipeline needs " + std::to_string(labels));
  return PairwiseSpec{pf.matrix, std::nullopt};
}

inline void write_disparity_metrics(const std::string& path, const DisparityMetrics& m) {
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw std::runtime_error("metrics: cannot write " + path);
    out = &file;
  }
  *out << "bad1,bad2,bad3,mae\n"
       << m.bad1 << "," << m.bad2 << "," << m.bad3 << "," << m.mae << "\n";
}

inline void check_pyramid_divisibility(int labels0, int levels) {
  if (levels < 1) throw std::runtime_error("levels must be >= 1");
  if (labels0 % (1 << (levels - 1)) != 0)
    throw std::runtime_error("label count " + std::to_string(labels0) +
                             " must be divisible by 2^(levels-1)");
}

// Shared multiscale driver: per-level probability volumes in, refined map or
// labels out.
inline int run_stereo(const StereoArgs& a) {
  Image left = io::read_pgm(a.left);
  Image right = io::read_pgm(a.right);
  io::ParamsFile pf =
      a.params.empty() ? default_params(a.pairwise, a.max_disp + 1) : io::load_params_json(a.params);
  if (pf.pairwise != a.pairwise)
    throw std::runtime_error("params file kind '" + pf.pairwise + "' does not match --pairwise " +
                             a.pairwise);
  InferOptions opts{.normalize = true, .threads = a.threads};
  int labels0 = a.max_disp + 1;

  Image disparity(left.height, left.width);
  if (a.algo == "wta") {
    FeatureMap f0 = census_features(left, a.census_window);
    FeatureMap f1 = census_features(right, a.census_window);
    Volume q = stereo_unaries(f0, f1, a.max_disp);
    LabelMap labels = wta(q);
    for (int i = 0; i < left.pixels(); ++i) disparity.v[i] = labels.v[i];
  } else if (a.algo == "sgm") {
    FeatureMap f0 = census_features(left, a.census_window);
    FeatureMap f1 = census_features(right, a.census_window);
    Volume q = stereo_unaries(f0, f1, a.max_disp);
    PairwiseSpec spec = level_spec(pf, 0, labels0, &left);
    SgmTape tape = sgm(apply_temperature(q, Temperature{pf.temperature}), spec, opts);
    BeliefVolume B = read_beliefs(tape.log_beliefs);
    disparity = refine_basic(B, a.refine_tau).y;
  } else if (a.algo == "bp") {
    check_pyramid_divisibility(labels0, a.levels);
    std::vector<Image> lefts = build_levels(left, a.levels);
    std::vector<Image> rights = build_levels(right, a.levels);
    std::vector<Volume> q;
    std::vector<PairwiseSpec> specs;
    for (int l = a.levels - 1; l >= 0; --l) {
      FeatureMap f0 = census_features(lefts[l], a.census_window);
      FeatureMap f1 = census_features(rights[l], a.census_window);
      q.push_back(stereo_unaries(f0, f1, (labels0 >> l) - 1));
      specs.push_back(level_spec(pf, l, labels0 >> l, &lefts[l]));
    }
    std::vector<const PairwiseSpec*> spec_ptrs;
    for (const auto& s : specs) spec_ptrs.push_back(&s);
    HierTape tape = run_hierarchy(q, spec_ptrs, Temperature{pf.temperature}, opts);
    disparity = refine_basic(tape.bp.back().beliefs, a.refine_tau).y;
  } else {
    throw std::runtime_error("unknown --algo " + a.algo);
  }

  io::write_pfm(a.out, disparity);
  if (!a.gt.empty()) {
    Image gt = io::read_pfm(a.gt);
    write_disparity_metrics(a.metrics_out, disparity_metrics(disparity, gt));
  }
  return 0;
}

inline int run_flow(const FlowArgs& a) {
  Image first = io::read_pgm(a.left);
  Image second = io::read_pgm(a.right);
  io::ParamsFile pf =
      a.params.empty() ? default_params("jump", 2 * a.radius + 1) : io::load_params_json(a.params);
  InferOptions opts{.normalize = true, .threads = a.threads};
  if (a.radius >= first.height || a.radius >= first.width)
    throw std::runtime_error("--radius larger than the image");
  if (a.levels > 1 && a.radius % (1 << (a.levels - 1)) != 0)
    throw std::runtime_error("--radius must be divisible by 2^(levels-1) for multiscale flow");

  Image u[2];
  if (a.algo == "wta") {
    FeatureMap f0 = census_features(first, a.census_window);
    FeatureMap f1 = census_features(second, a.census_window);
    auto [q1, q2] = flow_unaries(f0, f1, a.radius);
    for (int c = 0; c < 2; ++c) {
      LabelMap labels = wta(c == 0 ? q1 : q2);
      u[c] = Image(first.height, first.width);
      for (int i = 0; i < first.pixels(); ++i) u[c].v[i] = labels.v[i] - a.radius;
    }
  } else if (a.algo == "bp" || a.algo == "sgm") {
    std::vector<Image> firsts = build_levels(first, a.levels);
    std::vector<Image> seconds = build_levels(second, a.levels);
    std::vector<Volume> q1l, q2l;
    std::vector<PairwiseSpec> specs;
    for (int l = a.levels - 1; l >= 0; --l) {
      FeatureMap f0 = census_features(firsts[l], a.census_window);
      FeatureMap f1 = census_features(seconds[l], a.census_window);
      auto [q1, q2] = flow_unaries(f0, f1, a.radius >> l);
      q1l.push_back(std::move(q1));
      q2l.push_back(std::move(q2));
      specs.push_back(level_spec(pf, l, 2 * (a.radius >> l) + 1, &firsts[l]));
    }
    std::vector<const PairwiseSpec*> spec_ptrs;
    for (const auto& s : specs) spec_ptrs.push_back(&s);
    for (int c = 0; c < 2; ++c) {
      const std::vector<Volume>& q = c == 0 ? q1l : q2l;
      BeliefVolume B;
      if (a.algo == "bp") {
        HierTape tape = run_hierarchy(q, spec_ptrs, Temperature{pf.temperature}, opts);
        B = tape.bp.back().beliefs;
      } else {
        SgmTape tape =
            sgm(apply_temperature(q.back(), Temperature{pf.temperature}), specs.back(), opts);
        B = read_beliefs(tape.log_beliefs);
      }
      Image y = refine_basic(B, a.refine_tau).y;
      u[c] = Image(first.height, first.width);
      for (int i = 0; i < first.pixels(); ++i) u[c].v[i] = y.v[i] - a.radius;
    }
  } else {
    throw std::runtime_error("unknown --algo " + a.algo);
  }

  io::write_pfm(a.out[0], u[0]);
  io::write_pfm(a.out[1], u[1]);
  if (!a.gt.empty()) {
    Image g1 = io::read_pfm(a.gt[0]);
    Image g2 = io::read_pfm(a.gt[1]);
    double epe = endpoint_error(u[0], u[1], g1, g2);
    std::cout << "epe\n" << epe << "\n";
  }
  return 0;
}

inline int run_segment(const SegmentArgs& a) {
  Volume q = io::load_probability_volume(a.probs);
  io::ParamsFile pf = io::load_params_json(a.matrix);
  if (pf.pairwise != "matrix")
    throw std::runtime_error("segment needs a matrix parameter file");
  if (pf.matrix.labels != q.shape.labels)
    throw std::runtime_error("matrix has " + std::to_string(pf.matrix.labels) +
                             " labels but the volume has " + std::to_string(q.shape.labels));
  PairwiseSpec spec{pf.matrix, std::nullopt};
  if (!a.image.empty()) {
    Image img = io::read_pgm(a.image);
    if (img.height != q.shape.height || img.width != q.shape.width)
      throw std::runtime_error("--image dimensions do not match the volume");
    spec.edge_weights = weights_from_image(img, a.beta);
  }
  InferOptions opts{.normalize = true, .threads = a.threads};
  SweepTape tape = sweep_bp_forward(apply_temperature(q, Temperature{pf.temperature}), spec, opts);
  io::write_label_pgm(a.out, wta(tape.beliefs));
  return 0;
}

inline TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: invalid JSON: " + std::string(e.what()));
  }
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.huber_delta = j.value("huber_delta", cfg.huber_delta);
  cfg.refine_tau = j.value("refine_tau", cfg.refine_tau);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

inline int run_train(const TrainArgs& a) {
  namespace fs = std::filesystem;
  std::vector<StereoSample> data;
  std::vector<fs::path> stems;
  for (const auto& entry : fs::directory_iterator(a.data)) {
    std::string name = entry.path().filename().string();
    const std::string suffix = "_left.pgm";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      stems.push_back(entry.path().parent_path() /
                      name.substr(0, name.size() - suffix.size()));
  }
  std::sort(stems.begin(), stems.end());
  for (const auto& stem : stems) {
    StereoSample s;
    s.left = io::read_pgm(stem.string() + "_left.pgm");
    s.right = io::read_pgm(stem.string() + "_right.pgm");
    s.gt_disparity = io::read_pfm(stem.string() + "_gt.pfm");
    data.push_back(std::move(s));
  }
  if (data.empty())
    throw std::runtime_error("train: no *_left.pgm samples found in " + a.data);

  TrainConfig cfg = load_train_config(a.config);
  io::ParamsFile pf = a.params.empty() ? default_params("jump", a.max_disp + 1)
                                       : io::load_params_json(a.params);
  if (pf.pairwise != "jump") throw std::runtime_error("train supports jump parameters only");

  StereoPipeline pipe;
  pipe.levels = a.levels;
  pipe.max_disp = a.max_disp;
  pipe.census_window = a.census_window;
  pipe.weight_beta = pf.weight_beta;
  pipe.temperature.t = pf.temperature;
  pipe.refine = a.refine;
  for (int l = 0; l < a.levels; ++l) pipe.jump.push_back(pf.jump_at(l));
  check_pyramid_divisibility(a.max_disp + 1, a.levels);

  InferOptions opts{.normalize = true, .threads = a.threads};
  TrainTrace trace = train_toy(pipe, data, cfg, opts);

  io::ParamsFile out = pf;
  out.temperature = pipe.temperature.t;
  out.jump_levels = pipe.jump;
  io::save_params_json(a.params_out, out);
  if (!a.loss_out.empty()) {
    std::ofstream f(a.loss_out);
    if (!f) throw std::runtime_error("train: cannot write " + a.loss_out);
    f << "step,loss\n";
    f.precision(17);
    for (size_t i = 0; i < trace.loss.size(); ++i) f << i << "," << trace.loss[i] << "\n";
  }
  return 0;
}

inline int run_check(const std::string& suite, uint64_t seed) {
  std::vector<checks::SuiteResult> results;
  auto want = [&](const std::string& name) { return suite == "all" || suite == name; };
  if (want("chain")) results.push_back(checks::chain_exactness(60, seed + 1));
  if (want("tree")) results.push_back(checks::tree_equivalence(20, seed + 2));
  if (want("gradcheck")) results.push_back(checks::gradcheck_suite(8, seed + 3));
  if (want("tbca")) results.push_back(checks::tbca_monotone(10, 10, seed + 4));
  if (want("smax")) results.push_back(checks::smax_sandwich(20000, seed + 5));
  if (want("normalization"))
    results.push_back(checks::normalization_determinism(20, seed + 6));
  if (want("sgm-chain")) results.push_back(checks::sgm_chain_identity(60, seed + 7));
  if (results.empty())
    throw std::runtime_error(
        "unknown suite '" + suite +
        "' (chain, tree, gradcheck, tbca, smax, normalization, sgm-chain, all)");
  bool all_pass = true;
  for (const auto& r : results) {
    if (r.pass) {
      std::printf("%-26s PASS  (%.2fs)\n", r.name.c_str(), r.seconds);
    } else {
      std::printf("%-26s FAIL  %s\n", r.name.c_str(), r.detail.c_str());
      all_pass = false;
    }
  }
  return all_pass ? 0 : 1;
}

inline int run_bench(const std::vector<int>& labels, int size, const std::string& pairwise,
                     const std::string& out, uint64_t seed) {
  checks::BenchResult res =
      checks::bench_message_pass(pairwise == "jump", labels, size, seed);
  for (const auto& p : res.points)
    std::printf("K=%-4d %.4f ms/pass\n", p.labels, p.seconds * 1e3);
  std::printf("log-log slope: %.3f\n", res.slope);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("bench: cannot write " + out);
    f << "labels,seconds\n";
    f.precision(17);
    for (const auto& p : res.points) f << p.labels << "," << p.seconds << "\n";
    f << "slope," << res.slope << "\n";
  }
  return 0;
}

}  // namespace detail

// Entry point shared by the binary and the CLI tests. Returns the process
// exit code: 0 success, 1 check failure, 2 usage or input error.
inline int run(std::vector<std::string> args) {
  CLI::App app{"max-product belief propagation on pixel grids"};
  app.require_subcommand(1);

  detail::StereoArgs st;
  CLI::App* stereo = app.add_subcommand("stereo", "disparity from a rectified pair");
  stereo->add_option("--left", st.left, "left image (PGM)")->required();
  stereo->add_option("--right", st.right, "right image (PGM)")->required();
  stereo->add_option("--max-disp", st.max_disp, "largest disparity")->required()
      ->check(CLI::PositiveNumber);
  stereo->add_option("--out", st.out, "output disparity (PFM)")->required();
  stereo->add_option("--levels", st.levels, "pyramid levels", true);
  stereo->add_option("--algo", st.algo, "bp | sgm | wta", true)
      ->check(CLI::IsMember({"bp", "sgm", "wta"}));
  stereo->add_option("--pairwise", st.pairwise, "jump | matrix", true)
      ->check(CLI::IsMember({"jump", "matrix"}));
  stereo->add_option("--params", st.params, "parameter JSON");
  stereo->add_option("--gt", st.gt, "ground-truth disparity (PFM)");
  stereo->add_option("--metrics-out", st.metrics_out, "metrics CSV path");
  stereo->add_option("--refine-tau", st.refine_tau, "refinement window half-width", true);
  stereo->add_option("--census-window", st.census_window, "census window size", true);
  stereo->add_option("--seed", st.seed, "random seed", true);
  stereo->add_option("--threads", st.threads, "worker threads (0 = hardware)", true);

  detail::FlowArgs fl;
  CLI::App* flow = app.add_subcommand("flow", "optical flow from two frames");
  flow->add_option("--left", fl.left, "first frame (PGM)")->required();
  flow->add_option("--right", fl.right, "second frame (PGM)")->required();
  flow->add_option("--radius", fl.radius, "search window radius")->required()
      ->check(CLI::PositiveNumber);
  flow->add_option("--out", fl.out, "two output PFMs: u1 u2")->expected(2)->required();
  flow->add_option("--gt", fl.gt, "two ground-truth PFMs: u1 u2")->expected(2);
  flow->add_option("--levels", fl.levels, "pyramid levels", true);
  flow->add_option("--algo", fl.algo, "bp | sgm | wta", true)
      ->check(CLI::IsMember({"bp", "sgm", "wta"}));
  flow->add_option("--params", fl.params, "parameter JSON");
  flow->add_option("--refine-tau", fl.refine_tau, "refinement window half-width", true);
  flow->add_option("--census-window", fl.census_window, "census window size", true);
  flow->add_option("--seed", fl.seed, "random seed", true);
  flow->add_option("--threads", fl.threads, "worker threads", true);

  detail::SegmentArgs sg;
  CLI::App* segment = app.add_subcommand("segment", "label map from class probabilities");
  segment->add_option("--probs", sg.probs, "probability volume (CSV)")->required();
  segment->add_option("--matrix", sg.matrix, "compatibility matrix JSON")->required();
  segment->add_option("--out", sg.out, "output label map (PGM)")->required();
  segment->add_option("--image", sg.image, "image for edge-aware weights (PGM)");
  segment->add_option("--beta", sg.beta, "edge weight falloff", true);
  segment->add_option("--seed", sg.seed, "random seed", true);
  segment->add_option("--threads", sg.threads, "worker threads", true);

  detail::TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "fit temperature and jump penalties");
  train->add_option("--data", tr.data, "directory of *_left.pgm/*_right.pgm/*_gt.pfm")
      ->required();
  train->add_option("--params-out", tr.params_out, "trained parameter JSON")->required();
  train->add_option("--max-disp", tr.max_disp, "largest disparity")->required()
      ->check(CLI::PositiveNumber);
  train->add_option("--config", tr.config, "TrainConfig JSON");
  train->add_option("--params", tr.params, "initial parameter JSON");
  train->add_option("--loss-out", tr.loss_out, "loss curve CSV");
  train->add_option("--levels", tr.levels, "pyramid levels", true);
  train->add_option("--census-window", tr.census_window, "census window size", true);
  train->add_flag("--refine", tr.refine, "add the Huber term on refined output");
  train->add_option("--seed", tr.seed, "random seed", true);
  train->add_option("--threads", tr.threads, "worker threads", true);

  std::string suite = "all";
  uint64_t check_seed = 20240601;
  CLI::App* check = app.add_subcommand("check", "run a property suite");
  check->add_option("suite", suite, "chain|tree|gradcheck|tbca|smax|normalization|sgm-chain|all",
                    true);
  check->add_option("--seed", check_seed, "suite seed", true);

  std::vector<int> bench_labels{16, 32, 64, 128};
  int bench_size = 64;
  std::string bench_pairwise = "jump";
  std::string bench_out;
  uint64_t bench_seed = 7;
  CLI::App* bench = app.add_subcommand("bench", "message-pass scaling in the label count");
  bench->add_option("--labels", bench_labels, "label counts to time", true);
  bench->add_option("--size", bench_size, "grid side length", true);
  bench->add_option("--pairwise", bench_pairwise, "jump | matrix", true)
      ->check(CLI::IsMember({"jump", "matrix"}));
  bench->add_option("--out", bench_out, "CSV output path");
  bench->add_option("--seed", bench_seed, "instance seed", true);

  std::vector<const char*> argv;
  argv.push_back("bpgrid");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse((int)argv.size(), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (stereo->parsed()) return detail::run_stereo(st);
    if (flow->parsed()) return detail::run_flow(fl);
    if (segment->parsed()) return detail::run_segment(sg);
    if (train->parsed()) return detail::run_train(tr);
    if (check->parsed()) return detail::run_check(suite, check_seed);
    if (bench->parsed())
      return detail::run_bench(bench_labels, bench_size, bench_pairwise, bench_out, bench_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace cli
}  // namespace bpgrid
