#include "vlo/config.hpp"
#include "vlo/dataio.hpp"
#include "vlo/gradcheck.hpp"
#include "vlo/image_io.hpp"
#include "vlo/log.hpp"
#include "vlo/loss_metrics.hpp"
#include "vlo/pipeline.hpp"
#include "vlo/synth.hpp"
#include "vlo/viz.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>

namespace {

using namespace vlo;

PipelineConfig load_config_or(const std::string& path, std::optional<uint64_t> seed_override) {
  PipelineConfig pc = path.empty() ? PipelineConfig::micro() : PipelineConfig::load_file(path);
  if (seed_override) pc.seed = *seed_override;
  return pc;
}

FrameInput frame_input(const KittiSequence& seq, int i, const PipelineConfig& pc) {
  return to_frame_input(seq.scan(i), seq.image(i), seq.camera(), pc);
}

int cmd_run(const std::string& config_path, std::optional<uint64_t> seed,
            const std::string& data_root, const std::string& sequence,
            const std::string& weights, const std::string& out_traj) {
  const PipelineConfig pc = load_config_or(config_path, seed);
  const ModelConfig model = make_model_config(pc);
  ParamStore params = make_param_store(model);
  params.load(weights);

  KittiSequence kitti(data_root, sequence);
  if (kitti.frame_count() < 2) {
    std::cerr << "run: sequence has fewer than 2 frames\n";
    return 1;
  }
  std::vector<PoseSE3> cam_motions;
  double total_ms = 0.0;
  FrameInput prev = frame_input(kitti, 0, pc);
  // One frame of read-ahead: the next pair's input loads while the current
  // pair is being estimated.
  auto prefetch = [&kitti, &pc](int i) {
    return std::async(std::launch::async, [&kitti, &pc, i] { return frame_input(kitti, i, pc); });
  };
  std::future<FrameInput> pending = prefetch(1);
  for (int i = 1; i < kitti.frame_count(); ++i) {
    FrameInput next = pending.get();
    if (i + 1 < kitti.frame_count()) pending = prefetch(i + 1);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<PoseSE3> poses = estimate_pair(prev, next, params, model, nullptr);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total_ms += ms;
    log().info("run: pair {}->{} {:.1f} ms", i - 1, i, ms);
    cam_motions.push_back(warp_to_cam_motion(poses.front(), kitti.camera().extrinsic));
    prev = std::move(next);
  }
  log().info("run: mean {:.1f} ms/pair over {} pairs",
             total_ms / static_cast<double>(cam_motions.size()), cam_motions.size());
  save_poses(out_traj, accumulate_trajectory(cam_motions));
  return 0;
}

int cmd_eval(const std::string& gt_path, const std::string& est_path,
             const std::string& plot_path) {
  const std::vector<PoseSE3> gt = load_gt_poses(gt_path);
  const std::vector<PoseSE3> est = load_gt_poses(est_path);
  const TrajectoryEval ev = kitti_eval(gt, est);
  std::cout << format_eval_report(ev);
  if (!plot_path.empty()) save_ppm(plot_path, render_trajectory_plot(gt, est));
  return 0;
}

int cmd_synth(const std::string& config_path, std::optional<uint64_t> seed,
              const std::string& out_root, const std::string& sequence, int frames, int points,
              double rot_deg, double trans_m) {
  const PipelineConfig pc = load_config_or(config_path, seed);
  PoseMagnitude motion{rot_deg * M_PI / 180.0, trans_m};
  write_synth_sequence(out_root, sequence, pc.seed, frames, points, motion, pc);
  std::cout << "synth: wrote " << frames << " frames to " << out_root << " (sequence "
            << sequence << ")\n";
  return 0;
}

int cmd_gradcheck(std::optional<uint64_t> seed, bool corrupt) {
  const uint64_t s = seed.value_or(2);
  const auto reports = run_gradient_checks(s, corrupt);
  std::cout << format_gradcheck_report(reports);
  return gradchecks_pass(reports) ? 0 : 1;
}

int cmd_cluster_viz(const std::string& config_path, std::optional<uint64_t> seed,
                    const std::string& data_root, const std::string& sequence, int frame,
                    const std::string& weights, int level, const std::string& out_image) {
  const PipelineConfig pc = load_config_or(config_path, seed);
  const ModelConfig model = make_model_config(pc);
  ParamStore params = make_param_store(model);
  params.load(weights);

  KittiSequence kitti(data_root, sequence);
  const FrameInput in = frame_input(kitti, frame, pc);
  const FrameCache fc = process_frame(in, params, model, true);
  const int stride = pc.stride_at(level);
  const Grid overlay =
      render_cluster_overlay(in.image, fc.local_caches[level], pc.pad_height / stride,
                             pc.pad_width / stride, stride);
  save_ppm(out_image, overlay);
  std::cout << "cluster-viz: wrote " << out_image << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visual-LiDAR odometry pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<uint64_t> seed;
  int threads = 1;
  app.add_option("--config", config_path, "pipeline config JSON (defaults to the micro profile)");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--threads", threads, "worker threads for parallel kernels");

  auto* run = app.add_subcommand("run", "estimate a trajectory over a sequence");
  std::string data_root, sequence = "00", weights, out_traj = "trajectory.txt";
  run->add_option("--data", data_root, "dataset root")->required();
  run->add_option("--sequence", sequence, "sequence id");
  run->add_option("--weights", weights, "weight file base path")->required();
  run->add_option("--out", out_traj, "output trajectory file");

  auto* eval = app.add_subcommand("eval", "evaluate a trajectory against ground truth");
  std::string gt_path, est_path, plot_path;
  eval->add_option("--gt", gt_path, "ground-truth pose file")->required();
  eval->add_option("--est", est_path, "estimated pose file")->required();
  eval->add_option("--plot", plot_path, "optional trajectory plot (PPM)");

  auto* synth = app.add_subcommand("synth", "write a synthetic sequence in KITTI layout");
  std::string synth_root, synth_seq = "90";
  int synth_frames = 2, synth_points = 512;
  double synth_rot_deg = 2.0, synth_trans = 0.3;
  synth->add_option("--out", synth_root, "output dataset root")->required();
  synth->add_option("--sequence", synth_seq, "sequence id");
  synth->add_option("--frames", synth_frames, "frame count");
  synth->add_option("--points", synth_points, "points per frame");
  synth->add_option("--rot-deg", synth_rot_deg, "per-frame rotation, degrees");
  synth->add_option("--trans", synth_trans, "per-frame translation, meters");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of all adjoints");
  bool corrupt = false;
  gradcheck->add_flag("--corrupt-adjoint", corrupt,
                      "bias one adjoint per op (negative control)");

  auto* viz = app.add_subcommand("cluster-viz", "render the cluster assignment overlay");
  std::string viz_root, viz_seq = "90", viz_weights, viz_out = "clusters.ppm";
  int viz_frame = 0, viz_level = 0;
  viz->add_option("--data", viz_root, "dataset root")->required();
  viz->add_option("--sequence", viz_seq, "sequence id");
  viz->add_option("--frame", viz_frame, "frame index");
  viz->add_option("--weights", viz_weights, "weight file base path")->required();
  viz->add_option("--level", viz_level, "pyramid level")->check(CLI::Range(0, 3));
  viz->add_option("--out", viz_out, "output overlay image (PPM)");

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);

  try {
    if (run->parsed())
      return cmd_run(config_path, seed, data_root, sequence, weights, out_traj);
    if (eval->parsed()) return cmd_eval(gt_path, est_path, plot_path);
    if (synth->parsed())
      return cmd_synth(config_path, seed, synth_root, synth_seq, synth_frames, synth_points,
                       synth_rot_deg, synth_trans);
    if (gradcheck->parsed()) return cmd_gradcheck(seed, corrupt);
    if (viz->parsed())
      return cmd_cluster_viz(config_path, seed, viz_root, viz_seq, viz_frame, viz_weights,
                             viz_level, viz_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
