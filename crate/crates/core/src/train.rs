//! Truncated back-propagation through time over short clips, with Adam and a
//! step-halving learning rate.
//!
//! Each iteration draws `batch_sequences` clips (shuffled epochs, no
//! replacement within an epoch), picks a `seq_len` window in each, and runs
//! forward and backward per clip in parallel. Per-clip gradients are summed
//! in clip order, so the result does not depend on the thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::loss::{LevelNormalization, LevelWeighting, LossWeights};
use crate::model::Model;
use crate::network::config::{parse, parse_key_values};
use crate::network::{Gradients, Network, NetworkConfig};
use crate::tensor::{Adam, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_sequences: usize,
    pub seq_len: usize,
    pub total_iters: usize,
    pub base_lr: f64,
    /// Iterations between two halvings of the learning rate; `None` uses 30%
    /// of `total_iters`.
    pub lr_halving_period: Option<usize>,
    pub seed: u64,
    /// Write `checkpoint_<iter>.ckpt` this often; 0 disables.
    pub checkpoint_every: usize,
    /// Print the loss to stderr this often; 0 disables.
    pub log_every: usize,
    pub loss: LossWeights,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_sequences: 3,
            seq_len: 4,
            total_iters: 2000,
            base_lr: 1e-4,
            lr_halving_period: None,
            seed: 0,
            checkpoint_every: 0,
            log_every: 0,
            loss: LossWeights::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn halving_period(&self) -> usize {
        self.lr_halving_period
            .unwrap_or_else(|| ((self.total_iters as f64 * 0.3).round() as usize).max(1))
    }

    /// `base_lr * 2^-floor(iter / period)`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        let halvings = (iter / self.halving_period()) as i32;
        self.base_lr * 0.5f64.powi(halvings)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_sequences == 0 || self.seq_len == 0 || self.total_iters == 0 {
            return bad("batch_sequences, seq_len and total_iters must be positive".into());
        }
        if !(self.base_lr > 0.0) || self.lr_halving_period == Some(0) {
            return bad(format!(
                "base_lr {} and lr_halving_period {:?} must be positive",
                self.base_lr, self.lr_halving_period
            ));
        }
        if !(self.loss.alpha >= 0.0 && self.loss.gamma >= 0.0) {
            return bad(format!("loss weights alpha={} gamma={}", self.loss.alpha, self.loss.gamma));
        }
        Ok(())
    }

    /// Apply one `key=value` setting; network keys are forwarded.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_sequences" => self.batch_sequences = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "total_iters" => self.total_iters = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "lr_halving_period" => {
                self.lr_halving_period = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "alpha" => self.loss.alpha = parse(key, value)?,
            "gamma" => self.loss.gamma = parse(key, value)?,
            "loss_normalization" => {
                self.loss.normalization = match value.trim() {
                    "per_level" => LevelNormalization::PerLevel,
                    "image" => LevelNormalization::ImageSize,
                    v => return Err(Error::Config(format!("loss_normalization={v}: expected per_level or image"))),
                }
            }
            "loss_weighting" => {
                self.loss.weighting = match value.trim() {
                    "finest_first" => LevelWeighting::FinestFirst,
                    "coarsest_first" => LevelWeighting::CoarsestFirst,
                    v => {
                        return Err(Error::Config(format!(
                            "loss_weighting={v}: expected finest_first or coarsest_first"
                        )))
                    }
                }
            }
            _ => {
                if !self.network.set(key, value)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Defaults overridden by a flat `key=value` text (`#` starts a comment).
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("batch_sequences".to_string(), self.batch_sequences.to_string()),
            ("seq_len".into(), self.seq_len.to_string()),
            ("total_iters".into(), self.total_iters.to_string()),
            ("base_lr".into(), self.base_lr.to_string()),
            (
                "lr_halving_period".into(),
                self.lr_halving_period.map_or("auto".into(), |p| p.to_string()),
            ),
            ("seed".into(), self.seed.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("log_every".into(), self.log_every.to_string()),
            ("alpha".into(), self.loss.alpha.to_string()),
            ("gamma".into(), self.loss.gamma.to_string()),
            (
                "loss_normalization".into(),
                match self.loss.normalization {
                    LevelNormalization::PerLevel => "per_level",
                    LevelNormalization::ImageSize => "image",
                }
                .into(),
            ),
            (
                "loss_weighting".into(),
                match self.loss.weighting {
                    LevelWeighting::FinestFirst => "finest_first",
                    LevelWeighting::CoarsestFirst => "coarsest_first",
                }
                .into(),
            ),
        ];
        out.extend(self.network.to_key_values());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    /// Mean total loss of the batch before the update.
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_csv(path: &Path, curve: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_csv(curve))?;
    Ok(())
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("iter,loss,lr\n");
    for r in curve {
        writeln!(s, "{},{},{}", r.iter, r.loss, r.lr).expect("write to string");
    }
    s
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let bad = |line: usize, d: String| Error::format("loss curve", format!("line {line}: {d}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(n + 1, format!("{} fields", f.len())));
            }
            Ok(LossRecord {
                iter: f[0].trim().parse().map_err(|e| bad(n + 1, format!("{e}")))?,
                loss: f[1].trim().parse().map_err(|e| bad(n + 1, format!("{e}")))?,
                lr: f[2].trim().parse().map_err(|e| bad(n + 1, format!("{e}")))?,
            })
        })
        .collect()
}

/// Clip order drawn in shuffled epochs.
struct EpochSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    next: usize,
}

impl EpochSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        EpochSampler {
            rng,
            order: (0..n).collect(),
            next: n,
        }
    }

    fn draw(&mut self) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub network: Network<f32>,
    pub curve: Vec<LossRecord>,
}

fn dump_batch(out: Option<&Path>, iter: usize, lr: f64, batch: &[(usize, usize)], dataset: &[SequenceSample], losses: &[f64]) -> PathBuf {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    let path = dir.join(format!("nonfinite_iter{iter}.txt"));
    let mut s = format!("iter={iter}\nlr={lr}\n");
    for (&(clip, start), loss) in batch.iter().zip(losses) {
        let _ = writeln!(s, "sequence={} start={start} loss={loss}", dataset[clip].id);
    }
    let _ = std::fs::create_dir_all(&dir);
    let _ = std::fs::write(&path, s);
    path
}

/// Train a fresh network on `dataset`. With `out`, writes periodic
/// checkpoints there (the caller writes the final one).
pub fn train(cfg: &TrainConfig, dataset: &[SequenceSample], out: Option<&Path>) -> Result<TrainResult> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for s in dataset {
        if s.len() < cfg.seq_len {
            return Err(Error::Config(format!(
                "sequence {} has {} frames, seq_len is {}",
                s.id,
                s.len(),
                cfg.seq_len
            )));
        }
        cfg.network.check_image(s.intrinsics.height, s.intrinsics.width)?;
    }
    let mut net = Network::<f32>::new(cfg.network.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7EA1_0000);
    let mut sampler = EpochSampler::new(dataset.len(), ChaCha8Rng::seed_from_u64(rng.random()));
    let adam = Adam::default();
    let mut state = AdamState::default();
    let mut curve = Vec::with_capacity(cfg.total_iters);

    for iter in 0..cfg.total_iters {
        let lr = cfg.learning_rate(iter);
        let batch: Vec<(usize, usize)> = (0..cfg.batch_sequences)
            .map(|_| {
                let clip = sampler.draw();
                let start = rng.random_range(0..=dataset[clip].len() - cfg.seq_len);
                (clip, start)
            })
            .collect();
        let results: Vec<Result<_>> = batch
            .par_iter()
            .map(|&(clip, start)| {
                let s = &dataset[clip];
                let frames = s.network_frames(start..start + cfg.seq_len);
                let gt: Vec<_> = s.frames[start..start + cfg.seq_len].iter().map(|f| f.depth.clone()).collect();
                net.loss_and_gradients(&frames, &gt, &s.intrinsics, &cfg.loss)
            })
            .collect();
        let mut losses = Vec::with_capacity(batch.len());
        let mut grads = Gradients::zeros_like(&net);
        for r in results {
            let (loss, g) = r?;
            losses.push(loss.total);
            grads.add_assign(&g);
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() || !grads.all_finite() {
            let dump = dump_batch(out, iter, lr, &batch, dataset, &losses);
            return Err(Error::NonFiniteLoss { iter, dump });
        }
        grads.scale(1.0 / batch.len() as f32);
        grads.store(&mut net);
        adam.step(&mut net.params, lr, &mut state);
        curve.push(LossRecord { iter, loss, lr });
        if cfg.log_every > 0 && (iter % cfg.log_every == 0 || iter + 1 == cfg.total_iters) {
            eprintln!("iter {iter:>6}  loss {loss:.5}  lr {lr:.3e}");
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.total_iters {
                Model::Network(net.clone()).save(&dir.join(format!("checkpoint_{:06}.ckpt", iter + 1)))?;
            }
        }
    }
    Ok(TrainResult { network: net, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig {
            lr_halving_period: Some(60_000),
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate(0), 1e-4);
        assert_eq!(cfg.learning_rate(59_999), 1e-4);
        assert_eq!(cfg.learning_rate(60_000), 5e-5);
        assert_eq!(cfg.learning_rate(130_000), 2.5e-5);
        let auto = TrainConfig {
            total_iters: 1000,
            ..Default::default()
        };
        assert_eq!(auto.halving_period(), 300);
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.seq_len = 3;
        cfg.lr_halving_period = Some(77);
        cfg.loss.normalization = LevelNormalization::ImageSize;
        cfg.network.num_levels = 3;
        let text: String = cfg.to_key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        assert_eq!(TrainConfig::from_key_values(&text).unwrap(), cfg);
        assert!(TrainConfig::from_key_values("bogus=1").is_err());
        assert!(TrainConfig::from_key_values("seq_len=0").is_err());
    }

    #[test]
    fn epochs_visit_every_clip_once() {
        let mut s = EpochSampler::new(5, ChaCha8Rng::seed_from_u64(1));
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|_| s.draw()).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn loss_csv_round_trip() {
        let curve = vec![
            LossRecord { iter: 0, loss: 1.25, lr: 1e-4 },
            LossRecord { iter: 1, loss: 0.1 + 0.2, lr: 5e-5 },
        ];
        let text = loss_csv(&curve);
        assert!(text.starts_with("iter,loss,lr\n"));
        assert_eq!(parse_loss_csv(&text).unwrap(), curve);
    }
}
