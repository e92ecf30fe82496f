//! End-to-end acceptance checks, one test per criterion. Every test prints a
//! single `criterion N ...: PASS|FAIL` line to stderr (uncaptured) before
//! asserting. Tests hold a global lock so timings never share the CPU.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use motiondepth::camera::{Intrinsics, RigidTransform};
use motiondepth::data::{generate_random, read_pfm, write_pfm, SequenceSample};
use motiondepth::eval::evaluate;
use motiondepth::gradcheck::run_all;
use motiondepth::layers::{cost_volume, offset_channel, warp, warp_backward};
use motiondepth::loss::{frame_loss, LossWeights};
use motiondepth::metrics::{eigen_metrics, MetricReport};
use motiondepth::model::Model;
use motiondepth::network::{patch_descriptors, triangulate_analytic, NetworkConfig, TriangulationParams};
use motiondepth::train::{loss_csv, parse_loss_csv, train, LossRecord, TrainConfig};
use motiondepth::Tensor;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAYER_GRAD_TOL: f64 = 1e-4;
const NETWORK_GRAD_TOL: f64 = 1e-3;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const RECONSTRUCTION_MAE: f64 = 1e-2;
const RECONSTRUCTION_BUDGET: Duration = Duration::from_secs(10);
const OCCLUSION_AGREEMENT: f64 = 0.01;
const ARGMAX_FRACTION: f64 = 0.99;
const ORACLE_TOL: f64 = 1e-12;
const TRIANGULATION_REL_ERR: f64 = 0.05;
const TRIANGULATION_FRACTION: f64 = 0.95;
const TOY_ITERS: usize = 2000;
const TOY_LOSS_RATIO: f64 = 0.5;
const TOY_SMOOTHING: usize = 50;
const TOY_BASELINE_GAIN: f64 = 0.30;
const TOY_BUDGET: Duration = Duration::from_secs(30 * 60);

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    let line = format!(
        "criterion {n} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    assert!(ok, "{line}");
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(h, w, c, data).unwrap()
}

#[test]
fn criterion_1_gradient_suite() {
    let _g = serial();
    let start = Instant::now();
    let reports = run_all().unwrap();
    let elapsed = start.elapsed();
    let mut ok = elapsed < GRADCHECK_BUDGET && reports.len() == 5;
    let mut parts = Vec::new();
    for r in &reports {
        let tol = if r.suite == "network" { NETWORK_GRAD_TOL } else { LAYER_GRAD_TOL };
        ok &= r.checked > 0 && r.max_rel_error < tol;
        parts.push(format!("{} {:.2e}/{tol:.0e}", r.suite, r.max_rel_error));
    }
    verdict(1, "gradient suite", ok, format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()));
}

#[test]
fn criterion_2_warp_depth_gradient_is_stopped() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = Intrinsics::centered(12.0, 16, 16).unwrap();
    let source = random_tensor(&mut rng, 16, 16, 3, -1.0, 1.0);
    let depth = random_tensor(&mut rng, 16, 16, 1, 2.0, 6.0);
    let motion = RigidTransform::from_axis_angle(Vector3::new(0.02, -0.03, 0.01), Vector3::new(0.4, -0.2, 0.3));
    let (out, plan) = warp(&source, &depth, &motion, &k, false).unwrap();
    let upstream = random_tensor(&mut rng, 16, 16, 3, -1.0, 1.0);
    let grads = warp_backward(&plan, &upstream).unwrap();
    let reported_zero = grads.depth.data().iter().all(|&g| g == 0.0);

    let mut bumped = depth.clone();
    bumped.data_mut().iter_mut().for_each(|d| *d *= 1.01);
    let (moved, _) = warp(&source, &bumped, &motion, &k, false).unwrap();
    let change = moved.warped.max_abs_diff(&out.warped);
    verdict(
        2,
        "warp depth gradient stop",
        reported_zero && change > 0.0,
        format!("reported depth gradient all zero: {reported_zero}; output change under perturbation {change:.3e}"),
    );
}

/// Mean absolute error of frame `t` rebuilt from frame `t-1`, over interior
/// pixels whose sample is valid and not occluded.
fn reconstruction_mae(sample: &SequenceSample, t: usize, border: usize) -> f64 {
    let k = &sample.intrinsics;
    let cur = &sample.frames[t];
    let prev = &sample.frames[t - 1];
    let (rgb, _) = warp(&prev.rgb, &cur.depth, &cur.motion, k, false).unwrap();
    let (dep, _) = warp(&prev.depth, &cur.depth, &cur.motion, k, true).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in border..k.height - border {
        for x in border..k.width - border {
            if rgb.validity.at(y, x, 0) == 0.0 {
                continue;
            }
            let gt = cur.depth.at(y, x, 0) as f64;
            if ((dep.warped.at(y, x, 0) as f64 - gt) / gt).abs() > OCCLUSION_AGREEMENT {
                continue;
            }
            for c in 0..3 {
                sum += (rgb.warped.at(y, x, c) - cur.rgb.at(y, x, c)).abs() as f64;
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn criterion_3_geometric_oracle() {
    let _g = serial();
    let start = Instant::now();
    let k = Intrinsics::centered(32.0, 64, 64).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let sample = generate_random(1000 + seed, k, 2).unwrap();
        worst = worst.max(reconstruction_mae(&sample, 1, 2));
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "geometric oracle",
        worst < RECONSTRUCTION_MAE && elapsed < RECONSTRUCTION_BUDGET,
        format!("worst interior MAE {worst:.4} over 20 scenes; {:.2}s", elapsed.as_secs_f64()),
    );
}

fn naive_cost_volume(f1: &Tensor<f64>, f2: &Tensor<f64>, r: isize) -> Vec<f64> {
    let (h, w, l) = f1.shape();
    let side = (2 * r + 1) as usize;
    let mut out = vec![0.0; h * w * side * side];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for dj in -r..=r {
                for di in -r..=r {
                    let (yy, xx) = (y + dj, x + di);
                    let ch = ((dj + r) as usize) * side + (di + r) as usize;
                    let mut acc = 0.0;
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        for c in 0..l {
                            acc += f1.at(y as usize, x as usize, c) * f2.at(yy as usize, xx as usize, c);
                        }
                        acc /= l as f64;
                    }
                    out[(y as usize * w + x as usize) * side * side + ch] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn criterion_4_cost_volume() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact = true;
    for r in [1usize, 2, 4] {
        for _ in 0..5 {
            let f1 = random_tensor(&mut rng, 8, 8, 4, -2.0, 2.0);
            let f2 = random_tensor(&mut rng, 8, 8, 4, -2.0, 2.0);
            let got = cost_volume(&f1, &f2, r).unwrap();
            let want = naive_cost_volume(&f1, &f2, r as isize);
            exact &= got.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }

    // static camera: the previous frame is the current one, the motion is
    // the identity and the depth is exact
    let k = Intrinsics::centered(32.0, 64, 64).unwrap();
    let sample = generate_random(4, k, 1).unwrap();
    let radius = NetworkConfig::default().cost_radius;
    let features = patch_descriptors(&sample.frames[0].rgb, 2);
    let (warped, _) = warp(&features, &sample.frames[0].depth, &RigidTransform::identity(), &k, false).unwrap();
    let cv = cost_volume(&features, &warped.warped, radius).unwrap();
    let centre = offset_channel(radius, 0, 0);
    let (mut hits, mut total) = (0usize, 0usize);
    for y in radius..k.height - radius {
        for x in radius..k.width - radius {
            let px = cv.pixel(y, x);
            let best = (0..px.len()).fold(0, |b, c| if px[c] > px[b] { c } else { b });
            total += 1;
            hits += (px[best] == px[centre]) as usize;
        }
    }
    let frac = hits as f64 / total as f64;
    verdict(
        4,
        "cost volume",
        exact && frac > ARGMAX_FRACTION,
        format!("bit-exact vs naive: {exact}; centre argmax on {hits}/{total} interior pixels"),
    );
}

fn naive_metrics(est: &[f64], gt: &[f64]) -> [f64; 7] {
    let n = gt.len() as f64;
    let mut m = [0.0; 7];
    for (&e, &g) in est.iter().zip(gt) {
        m[0] += (e - g).abs() / g;
        m[1] += (e - g) * (e - g) / g;
        m[2] += (e - g) * (e - g);
        m[3] += (e.ln() - g.ln()) * (e.ln() - g.ln());
        let ratio = if e > g { e / g } else { g / e };
        for (i, thr) in [1.25, 1.5625, 1.953125].iter().enumerate() {
            if ratio < *thr {
                m[4 + i] += 1.0;
            }
        }
    }
    [m[0] / n, m[1] / n, (m[2] / n).sqrt(), (m[3] / n).sqrt(), m[4] / n, m[5] / n, m[6] / n]
}

/// Half-pixel bilinear downsampling, written out per output pixel.
fn naive_resize(src: &Tensor<f64>, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w, _) = src.shape();
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = (((o as f64) + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, if i1 == i0 { 0.0 } else { s - i0 as f64 })
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let top = (1.0 - fx) * src.at(y0, x0, 0) + fx * src.at(y0, x1, 0);
            let bot = (1.0 - fx) * src.at(y1, x0, 0) + fx * src.at(y1, x1, 0);
            out.push((1.0 - fy) * top + fy * bot);
        }
    }
    out
}

fn naive_frame_loss(levels: &[Tensor<f64>], gt: &Tensor<f64>) -> f64 {
    let mut total = 0.0;
    for (idx, est) in levels.iter().enumerate() {
        let (h, w, _) = est.shape();
        let target = naive_resize(gt, h, w);
        let sum: f64 = est.data().iter().zip(&target).map(|(e, t)| (e.ln() - t.ln()).abs()).sum();
        total += 2f64.powi(idx as i32 + 2) * sum / (h * w) as f64;
    }
    0.64 * total
}

#[test]
fn criterion_5_metric_and_loss_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gt = random_tensor(&mut rng, 8, 8, 1, 0.5, 80.0);
        let est = random_tensor(&mut rng, 8, 8, 1, 0.5, 80.0);
        let got = eigen_metrics(&est, &gt, None).unwrap().as_array();
        let want = naive_metrics(est.data(), gt.data());
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let coarse = random_tensor(&mut rng, 4, 4, 1, 0.5, 80.0);
        let levels = [est, coarse];
        let loss = frame_loss(&levels, &gt, &LossWeights::default()).unwrap();
        worst = worst.max((loss - naive_frame_loss(&levels, &gt)).abs());
    }
    let hand = eigen_metrics(&Tensor::<f64>::full(1, 1, 1, 5.0), &Tensor::full(1, 1, 1, 4.0), None).unwrap();
    let hand_ok = (hand.abs_rel - 0.25).abs() < ORACLE_TOL && (hand.rmse_log - 1.25f64.ln()).abs() < ORACLE_TOL;
    verdict(
        5,
        "metric and loss oracles",
        worst < ORACLE_TOL && hand_ok,
        format!(
            "max deviation {worst:.2e} over 100 instances; gt 4 est 5: AbsRel {}, RMSElog {}",
            hand.abs_rel, hand.rmse_log
        ),
    );
}

fn plane_texture(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (3.9 * x + 1.2 * y).sin() + 0.15 * (2.1 * x - 3.3 * y).cos() + 0.1 * (3.45 * x + 0.3).sin()
}

/// Fronto-parallel textured plane at `depth`, camera shifted by `cam_x`.
fn render_plane(k: &Intrinsics, depth: f64, cam_x: f64) -> Tensor<f64> {
    Tensor::from_fn(k.height, k.width, 1, |y, x, _| {
        let wx = cam_x + (x as f64 - k.cx) / k.fx * depth;
        let wy = (y as f64 - k.cy) / k.fy * depth;
        plane_texture(wx, wy)
    })
}

#[test]
fn criterion_6_analytic_triangulation() {
    let _g = serial();
    let k = Intrinsics::centered(32.0, 64, 64).unwrap();
    let depth = 4.0;
    let mut details = Vec::new();
    let mut ok = true;
    for parallax_px in [2.0, 3.5, 5.0] {
        let baseline = parallax_px * depth / k.fx;
        let motion = RigidTransform::from_translation(Vector3::new(baseline, 0.0, 0.0));
        let prev = patch_descriptors(&render_plane(&k, depth, 0.0), 4);
        let cur = patch_descriptors(&render_plane(&k, depth, baseline), 4);
        let hyp = Tensor::full(64, 64, 1, depth * 0.85);
        let (fw, _) = warp(&prev, &hyp, &motion, &k, false).unwrap();
        let est = triangulate_analytic(&cur, &fw.warped, &hyp, &motion, &k, &TriangulationParams::default()).unwrap();
        let margin = 8;
        let (mut good, mut total) = (0usize, 0usize);
        for y in margin..64 - margin {
            for x in margin..64 - margin - parallax_px.ceil() as usize {
                total += 1;
                good += ((est.at(y, x, 0) - depth).abs() / depth < TRIANGULATION_REL_ERR) as usize;
            }
        }
        ok &= good as f64 >= TRIANGULATION_FRACTION * total as f64;
        details.push(format!("{parallax_px} px: {good}/{total}"));
    }
    verdict(6, "analytic triangulation", ok, details.join(", "));
}

struct ToyRun {
    curve: Vec<LossRecord>,
    model: Model,
    test: Vec<SequenceSample>,
    elapsed: Duration,
}

fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let k = Intrinsics::centered(32.0, 64, 64).unwrap();
        let train_set: Vec<_> = (0..200).map(|s| generate_random(s, k, 4).unwrap()).collect();
        let test: Vec<_> = (10_000..10_050).map(|s| generate_random(s, k, 4).unwrap()).collect();
        let cfg = TrainConfig {
            total_iters: TOY_ITERS,
            seed: 7,
            ..Default::default()
        };
        let start = Instant::now();
        let result = train(&cfg, &train_set, None).unwrap();
        ToyRun {
            elapsed: start.elapsed(),
            curve: result.curve,
            model: Model::Network(result.network),
            test,
        }
    })
}

#[test]
fn criterion_7_toy_training() {
    let _g = serial();
    let run = toy_run();
    let at10 = run.curve[10].loss;
    let tail = &run.curve[run.curve.len() - TOY_SMOOTHING..];
    let smoothed = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
    let loss_ok = smoothed <= TOY_LOSS_RATIO * at10;

    let net = evaluate(&run.model, &run.test, 4).unwrap().rmse_log;
    let base = evaluate(&Model::Constant { depth: 50.0 }, &run.test, 4).unwrap().rmse_log;
    let gain = 1.0 - net / base;
    let gain_ok = gain >= TOY_BASELINE_GAIN;
    let time_ok = run.elapsed < TOY_BUDGET;
    verdict(
        7,
        "toy training",
        loss_ok && gain_ok && time_ok,
        format!(
            "loss at iter 10 {at10:.4}, mean of last {TOY_SMOOTHING} {smoothed:.4}; test RMSElog {net:.4} vs constant {base:.4} ({:.1}% better); {:.1} min on {} threads",
            100.0 * gain,
            run.elapsed.as_secs_f64() / 60.0,
            rayon::current_num_threads()
        ),
    );
}

#[test]
fn criterion_8_recurrence_direction() {
    let _g = serial();
    let run = toy_run();
    let by_len: Vec<f64> = (1..=4).map(|n| evaluate(&run.model, &run.test, n).unwrap().rmse_log).collect();
    let ok = by_len[1..].iter().all(|&v| v <= by_len[0]);
    let shown: Vec<String> = by_len.iter().enumerate().map(|(i, v)| format!("N={} {v:.4}", i + 1)).collect();
    verdict(8, "recurrence direction", ok, shown.join(", "));
}

fn small_training(threads: usize) -> (Vec<LossRecord>, Vec<u8>, MetricReport) {
    let k = Intrinsics::centered(16.0, 32, 32).unwrap();
    let data: Vec<_> = (0..4).map(|s| generate_random(s, k, 4).unwrap()).collect();
    let mut cfg = TrainConfig {
        total_iters: 6,
        base_lr: 1e-3,
        seed: 9,
        ..Default::default()
    };
    cfg.network.encoder_channels = vec![4, 8];
    cfg.network.estimator_channels = vec![8, 8, 1];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let result = train(&cfg, &data, None).unwrap();
        let model = Model::Network(result.network);
        let mut ckpt = Vec::new();
        motiondepth::tensor::write_checkpoint(&mut ckpt, &model.to_tensors()).unwrap();
        let report = evaluate(&model, &data, 3).unwrap();
        (result.curve, ckpt, report)
    })
}

#[test]
fn criterion_9_determinism_and_formats() {
    let _g = serial();
    let (curve_a, ckpt_a, eval_a) = small_training(1);
    let (curve_b, ckpt_b, eval_b) = small_training(4);
    let bits = |c: &[LossRecord]| c.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    let rerun_ok = bits(&curve_a) == bits(&curve_b)
        && ckpt_a == ckpt_b
        && eval_a.as_array().map(f64::to_bits) == eval_b.as_array().map(f64::to_bits);

    let tensors = motiondepth::tensor::read_checkpoint(ckpt_a.as_slice()).unwrap();
    let mut again = Vec::new();
    motiondepth::tensor::write_checkpoint(&mut again, &Model::from_tensors(&tensors).unwrap().to_tensors()).unwrap();
    let ckpt_ok = again == ckpt_a;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let depth: Tensor<f32> = random_tensor(&mut rng, 13, 7, 1, 0.1, 200.0).cast();
    let mut pfm = Vec::new();
    write_pfm(&mut pfm, &depth).unwrap();
    let back = read_pfm(pfm.as_slice()).unwrap();
    let mut pfm2 = Vec::new();
    write_pfm(&mut pfm2, &back).unwrap();
    let pfm_ok = pfm == pfm2 && back.data().iter().zip(depth.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    let csv = loss_csv(&curve_a);
    let csv_ok = loss_csv(&parse_loss_csv(&csv).unwrap()) == csv
        && MetricReport::parse_csv_row(&eval_a.csv_row()).unwrap().csv_row() == eval_a.csv_row();

    verdict(
        9,
        "determinism and formats",
        rerun_ok && ckpt_ok && pfm_ok && csv_ok,
        format!("reruns (1 vs 4 threads) identical: {rerun_ok}; checkpoint {ckpt_ok}, PFM {pfm_ok}, CSV {csv_ok} byte-exact"),
    );
}
