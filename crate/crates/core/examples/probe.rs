//! Scratch probe for convergence tuning (not part of the deliverable tests).

use roscam_core::eval::{ate, rpe, AlignMode, TrajectoryEstimate};
use roscam_core::filters::{extract_supervision, FilterConfig};
use roscam_core::geometry::FrameDims;
use roscam_core::optim::{optimize_two_stage, OptimizerConfig, ParameterState};
use roscam_core::synth::{generate_scene, render_frames, CameraPath, SceneConfig, SyntheticTracker};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let span: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let radius: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let s1: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let s2: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(50);
    let focal: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(300.0);

    let n_static: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(300);
    let extent: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let config = SceneConfig {
        num_frames: 50,
        n_static,
        n_moving: 0,
        camera_path: CameraPath::Orbit { radius, span },
        pixel_noise_sigma: 0.0,
        dims: FrameDims { width: 640, height: 480 },
        focal_gt: focal,
        point_extent: extent,
        seed: 42,
        ..SceneConfig::default()
    };
    let t0 = std::time::Instant::now();
    let scene = generate_scene(&config).unwrap();
    let frames = render_frames(&scene);
    let tracker = SyntheticTracker::new(&scene, 0.0, 42);
    let fc = FilterConfig { patch_size: 12, tau_var: 0.1, budget: 100 };
    let sup = match extract_supervision(&frames, &tracker, &fc) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("extract failed: {e}");
            std::process::exit(1);
        }
    };
    eprintln!(
        "extracted H={} in {:.2}s",
        sup.num_trajectories(),
        t0.elapsed().as_secs_f64()
    );

    let init = ParameterState::initialize(&sup);
    let oc = OptimizerConfig { stage1_iters: s1, stage2_iters: s2, ..OptimizerConfig::default() };
    let t1 = std::time::Instant::now();
    let result = optimize_two_stage(&init, &sup, &oc).unwrap();
    eprintln!("optimized in {:.2}s", t1.elapsed().as_secs_f64());

    let report = result.final_report();
    let mean_acp = report.acp.iter().sum::<f64>() / report.acp.len() as f64;
    eprintln!(
        "loss: first={:.6} final={:.6} mean_acp={:.3e}",
        result.trace[0].report.total, report.total, mean_acp
    );
    let mut acp = report.acp.clone();
    acp.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!(
        "acp percentiles: p10={:.3e} p50={:.3e} p90={:.3e} max={:.3e}",
        acp[acp.len() / 10],
        acp[acp.len() / 2],
        acp[9 * acp.len() / 10],
        acp[acp.len() - 1]
    );
    for row in result.trace.iter().step_by(25) {
        eprintln!("  iter {:4} stage {} total {:.6}", row.iter, row.stage, row.report.total);
    }
    // MSE comparison run with the same budget.
    let mse = OptimizerConfig {
        loss: roscam_core::optim::LossKind::MeanSquared,
        ..oc.clone()
    };
    let r2 = roscam_core::optim::optimize_single_stage(&init, &sup, &mse, s1 + s2).unwrap();
    let est2 = TrajectoryEstimate::from_world_to_camera(
        &r2.state.poses,
        Some(r2.state.focal.value()),
    )
    .unwrap();
    let ate2 = ate(&est2, &gt_traj(&scene), AlignMode::Sim3).unwrap();
    eprintln!(
        "MSE ablation: final_data={:.6e} ATE={:.6} f={:.2}",
        r2.final_report().cauchy,
        ate2,
        r2.state.focal.value()
    );

    fn gt_traj(scene: &roscam_core::synth::SyntheticScene) -> TrajectoryEstimate {
        TrajectoryEstimate::from_world_to_camera(&scene.gt_poses, Some(scene.gt_focal)).unwrap()
    }
    let est = TrajectoryEstimate::from_world_to_camera(
        &result.state.poses,
        Some(result.state.focal.value()),
    )
    .unwrap();
    let gt = gt_traj(&scene);
    let ate_v = ate(&est, &gt, AlignMode::Sim3).unwrap();
    let (rpe_t, rpe_r) = rpe(&est, &gt, 1).unwrap();
    let focal_err = (result.state.focal.value() - scene.gt_focal).abs() / scene.gt_focal;
    eprintln!(
        "ATE={ate_v:.6} RPE_t={rpe_t:.6} RPE_r={rpe_r:.6} deg focal_err={:.3}%  f={:.2} (gt {})",
        100.0 * focal_err,
        result.state.focal.value(),
        scene.gt_focal
    );
}
