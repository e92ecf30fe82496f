//! Central finite-difference checks of every hand-written backward pass, in
//! 64-bit arithmetic.
//!
//! Layer suites contract the output with a fixed random tensor `r` so the
//! scalar objective is `sum(r * y)`. The network suite differentiates the
//! full sequence loss with the warp sampling depths held at their recorded
//! values, which is exactly the objective the analytic gradients describe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Intrinsics, RigidTransform};
use crate::data::generate_random;
use crate::error::{Error, Result};
use crate::layers::{cost_volume, cost_volume_backward, warp, warp_backward};
use crate::loss::LossWeights;
use crate::network::{Frame, Network, NetworkConfig};
use crate::tensor::{conv3x3, conv3x3_backward, leaky_relu, leaky_relu_backward, ParamTensor, Tensor};

pub const SUITES: [&str; 5] = ["conv3x3", "leaky_relu", "cost_volume", "warp", "network"];

/// Tolerance on the maximum relative error of the layer suites.
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end network suite.
pub const NETWORK_TOLERANCE: f64 = 1e-3;

const STEP: f64 = 1e-6;
/// Gradients below this magnitude are compared in absolute terms.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub suite: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

fn contract(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Compare `analytic` with central differences of `f` over every entry of
/// `x`.
fn check_all(x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(x);
        x[i] = orig - STEP;
        let down = f(x);
        x[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    (worst, x.len())
}

fn conv_suite() -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for stride in [1, 2] {
        let (h, w, cin, cout) = (5, 6, 3, 4);
        let input = random_tensor(&mut rng, h, w, cin);
        let weights = ParamTensor::new("w", vec![3, 3, cin, cout], random_tensor(&mut rng, 1, 1, 9 * cin * cout).into_vec(), true);
        let bias = ParamTensor::new("b", vec![cout], random_tensor(&mut rng, 1, 1, cout).into_vec(), false);
        let y = conv3x3(&input, &weights, &bias, stride)?;
        let r = random_tensor(&mut rng, y.height(), y.width(), cout);
        let g = conv3x3_backward(&input, &weights, stride, &r, true)?;
        let gi = g.input.expect("input gradient requested");

        let mut x = input.data().to_vec();
        let (e, n) = check_all(&mut x, gi.data(), |x| {
            let t = Tensor::from_vec(h, w, cin, x.to_vec()).expect("shape");
            contract(&r, &conv3x3(&t, &weights, &bias, stride).expect("conv"))
        });
        worst = worst.max(e);
        checked += n;
        let mut x = weights.values().to_vec();
        let (e, n) = check_all(&mut x, &g.weights, |x| {
            let wt = ParamTensor::new("w", weights.dims.clone(), x.to_vec(), true);
            contract(&r, &conv3x3(&input, &wt, &bias, stride).expect("conv"))
        });
        worst = worst.max(e);
        checked += n;
        let mut x = bias.values().to_vec();
        let (e, n) = check_all(&mut x, &g.bias, |x| {
            let b = ParamTensor::new("b", vec![cout], x.to_vec(), false);
            contract(&r, &conv3x3(&input, &weights, &b, stride).expect("conv"))
        });
        worst = worst.max(e);
        checked += n;
    }
    Ok(GradcheckReport {
        suite: "conv3x3",
        max_rel_error: worst,
        checked,
        tolerance: LAYER_TOLERANCE,
    })
}

fn leaky_suite() -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep samples away from the kink at zero
    let input = Tensor::from_fn(4, 5, 3, |_, _, _| {
        let v: f64 = rng.random_range(0.01..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let r = random_tensor(&mut rng, 4, 5, 3);
    let g = leaky_relu_backward(&input, &r, 0.1);
    let mut x = input.data().to_vec();
    let (worst, checked) = check_all(&mut x, g.data(), |x| {
        contract(&r, &leaky_relu(&Tensor::from_vec(4, 5, 3, x.to_vec()).expect("shape"), 0.1))
    });
    Ok(GradcheckReport {
        suite: "leaky_relu",
        max_rel_error: worst,
        checked,
        tolerance: LAYER_TOLERANCE,
    })
}

fn cost_volume_suite() -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, c, radius) = (5, 6, 4, 2);
    let f1 = random_tensor(&mut rng, h, w, c);
    let f2 = random_tensor(&mut rng, h, w, c);
    let y = cost_volume(&f1, &f2, radius)?;
    let r = random_tensor(&mut rng, h, w, y.channels());
    let (g1, g2) = cost_volume_backward(&f1, &f2, radius, &r)?;
    let mut x = f1.data().to_vec();
    let (e1, n1) = check_all(&mut x, g1.data(), |x| {
        let t = Tensor::from_vec(h, w, c, x.to_vec()).expect("shape");
        contract(&r, &cost_volume(&t, &f2, radius).expect("cv"))
    });
    let mut x = f2.data().to_vec();
    let (e2, n2) = check_all(&mut x, g2.data(), |x| {
        let t = Tensor::from_vec(h, w, c, x.to_vec()).expect("shape");
        contract(&r, &cost_volume(&f1, &t, radius).expect("cv"))
    });
    Ok(GradcheckReport {
        suite: "cost_volume",
        max_rel_error: e1.max(e2),
        checked: n1 + n2,
        tolerance: LAYER_TOLERANCE,
    })
}

fn warp_suite() -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w, c) = (8, 9, 3);
    let k = Intrinsics::centered(8.0, w, h)?;
    let source = random_tensor(&mut rng, h, w, c);
    let depth = Tensor::from_fn(h, w, 1, |_, _, _| rng.random_range(3.0..6.0));
    let motion = RigidTransform::from_axis_angle(nalgebra::Vector3::new(0.02, -0.03, 0.01), nalgebra::Vector3::new(0.3, -0.2, 0.1));
    let (_, plan) = warp(&source, &depth, &motion, &k, false)?;
    let r = random_tensor(&mut rng, h, w, c);
    let g = warp_backward(&plan, &r)?;
    let mut x = source.data().to_vec();
    let (worst, checked) = check_all(&mut x, g.source.data(), |x| {
        let t = Tensor::from_vec(h, w, c, x.to_vec()).expect("shape");
        contract(&r, &warp(&t, &depth, &motion, &k, false).expect("warp").0.warped)
    });
    Ok(GradcheckReport {
        suite: "warp",
        max_rel_error: worst,
        checked,
        tolerance: LAYER_TOLERANCE,
    })
}

/// Entries checked per parameter tensor in the network suite.
const NETWORK_SAMPLES: usize = 3;

fn network_suite() -> Result<GradcheckReport> {
    let k = Intrinsics::centered(24.0, 32, 32)?;
    let sample = generate_random(5, k, 3)?;
    let images: Vec<Tensor<f64>> = sample.frames.iter().map(|f| f.rgb.cast()).collect();
    let gt: Vec<Tensor<f64>> = sample.frames.iter().map(|f| f.depth.cast()).collect();
    let frames: Vec<Frame<'_, f64>> = images
        .iter()
        .zip(&sample.frames)
        .map(|(image, f)| Frame { image, motion: &f.motion })
        .collect();

    let mut net = Network::<f64>::new(NetworkConfig::with_levels(2), 3)?;
    // start inside the depth range so the clamp passes gradients
    for l in 1..=2 {
        let b = net
            .param_index(&format!("estimator.{l}.6.bias"))
            .ok_or_else(|| Error::Config("missing estimator bias".into()))?;
        net.params[b].values_mut()[0] = 10f64.ln();
    }
    let weights = LossWeights::default();
    let (_, trace) = net.sequence_loss(&frames, &gt, &k, &weights, None)?;
    let coord = trace.coord_depths();
    let grads = net.backward(&trace, &gt, &weights)?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for pi in 0..net.params.len() {
        let g = grads.params[pi].data();
        // the largest gradient plus random entries
        let largest = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap_or(0);
        let mut picks = vec![largest];
        while picks.len() < NETWORK_SAMPLES.min(g.len()) {
            picks.push(rng.random_range(0..g.len()));
        }
        for ei in picks {
            let orig = net.params[pi].values()[ei];
            net.params[pi].values_mut()[ei] = orig + STEP;
            let up = net.sequence_loss(&frames, &gt, &k, &weights, Some(&coord))?.0.total;
            net.params[pi].values_mut()[ei] = orig - STEP;
            let down = net.sequence_loss(&frames, &gt, &k, &weights, Some(&coord))?.0.total;
            net.params[pi].values_mut()[ei] = orig;
            worst = worst.max(relative_error(g[ei], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        suite: "network",
        max_rel_error: worst,
        checked,
        tolerance: NETWORK_TOLERANCE,
    })
}

pub fn run_suite(name: &str) -> Result<GradcheckReport> {
    match name {
        "conv3x3" => conv_suite(),
        "leaky_relu" => leaky_suite(),
        "cost_volume" => cost_volume_suite(),
        "warp" => warp_suite(),
        "network" => network_suite(),
        other => Err(Error::Config(format!(
            "unknown gradcheck suite {other:?}; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

pub fn run_all() -> Result<Vec<GradcheckReport>> {
    SUITES.iter().map(|s| run_suite(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_suites_pass() {
        for s in ["conv3x3", "leaky_relu", "cost_volume", "warp"] {
            let r = run_suite(s).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("softmax").is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-9, 2e-9) < 1e-2);
    }
}
