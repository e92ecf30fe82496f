//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a command fails (bad data, failed
//! checks), 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::camera::Intrinsics;
use crate::data::{generate_described, load_dataset, save_sequence, write_pfm_file, SequenceSample};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::gradcheck::{run_all, run_suite, GradcheckReport};
use crate::metrics::{MetricReport, CSV_HEADER};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::{train, write_loss_csv, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "motiondepth", version, about = "Depth from camera motion with a recurrent pyramid network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic sequences into a dataset directory.
    Synth {
        /// Scene description file (key=value), or `random`.
        #[arg(long, default_value = "random")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Image width and height.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Focal length in pixels (default: half the size).
        #[arg(long)]
        focal: Option<f64>,
    },
    /// Train a network and write `model.ckpt` and `loss.csv`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training configuration (key=value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on the final frame of every sequence.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Frames fed per sequence; a comma-separated list evaluates each.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seq_len: Vec<usize>,
    },
    /// Write the depth estimate of every frame as PFM.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a colorized 8-bit PNG per frame.
        #[arg(long)]
        color: bool,
    },
    /// Finite-difference checks of the backward passes.
    Gradcheck {
        /// One suite: conv3x3, leaky_relu, cost_volume, warp or network.
        #[arg(long)]
        module: Option<String>,
    },
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_all(root: &Path) -> Result<Vec<SequenceSample>> {
    let data: Vec<SequenceSample> = load_dataset(root)?.collect::<Result<_>>()?;
    if data.is_empty() {
        return Err(Error::Config(format!("no sequences under {}", root.display())));
    }
    Ok(data)
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Synth {
            spec,
            out,
            count,
            seed,
            frames,
            size,
            focal,
        } => {
            let text = if spec == "random" {
                String::new()
            } else {
                std::fs::read_to_string(&spec).map_err(|_| Error::MissingFile(PathBuf::from(&spec)))?
            };
            let k = Intrinsics::centered(focal.unwrap_or(size as f64 / 2.0), size, size)?;
            std::fs::create_dir_all(&out)?;
            for i in 0..count as u64 {
                let sample = generate_described(&text, seed + i, k, frames)?;
                let dir = save_sequence(&out, &sample)?;
                println!("{}", dir.display());
            }
            Ok(true)
        }
        Command::Train {
            data,
            config,
            out,
            overrides,
        } => {
            let mut text = match config {
                Some(p) => std::fs::read_to_string(&p).map_err(|_| Error::MissingFile(p.clone()))?,
                None => String::new(),
            };
            for o in &overrides {
                text.push('\n');
                text.push_str(o);
            }
            let cfg = TrainConfig::from_key_values(&text)?;
            let dataset = load_all(&data)?;
            std::fs::create_dir_all(&out)?;
            let resolved: String = cfg.to_key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            std::fs::write(out.join("config.txt"), resolved)?;
            let result = train(&cfg, &dataset, Some(&out))?;
            Model::Network(result.network).save(&out.join("model.ckpt"))?;
            write_loss_csv(&out.join("loss.csv"), &result.curve)?;
            if let Some(last) = result.curve.last() {
                println!("final loss {} after {} iterations", last.loss, result.curve.len());
            }
            Ok(true)
        }
        Command::Eval { ckpt, data, seq_len } => {
            let model = Model::load(&ckpt)?;
            let dataset = load_all(&data)?;
            let mut rows = Vec::with_capacity(seq_len.len());
            println!("seq_len,{CSV_HEADER}");
            for &n in &seq_len {
                let r = evaluate(&model, &dataset, n)?;
                println!("{n},{}", r.csv_row());
                rows.push((format!("{} N={n}", model.kind()), r));
            }
            println!();
            let named: Vec<(&str, MetricReport)> = rows.iter().map(|(s, r)| (s.as_str(), *r)).collect();
            print!("{}", MetricReport::table(&named));
            Ok(true)
        }
        Command::Infer { ckpt, data, out, color } => {
            let model = Model::load(&ckpt)?;
            for sample in load_dataset(&data)? {
                let sample = sample?;
                let dir = out.join(&sample.id);
                std::fs::create_dir_all(dir.join("depth"))?;
                if color {
                    std::fs::create_dir_all(dir.join("color"))?;
                }
                for (t, d) in model.predict(&sample)?.iter().enumerate() {
                    write_pfm_file(&dir.join("depth").join(format!("{t:06}.pfm")), d)?;
                    if color {
                        colorize(d).save(dir.join("color").join(format!("{t:06}.png")))?;
                    }
                }
                println!("{}", dir.display());
            }
            Ok(true)
        }
        Command::Gradcheck { module } => {
            let reports: Vec<GradcheckReport> = match module {
                Some(m) => vec![run_suite(&m)?],
                None => run_all()?,
            };
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                println!(
                    "{:<12} max_rel_error {:.3e}  tolerance {:.0e}  checked {:>5}  {}",
                    r.suite,
                    r.max_rel_error,
                    r.tolerance,
                    r.checked,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
            }
            Ok(ok)
        }
    }
}

/// Log-depth mapped onto a blue (near) to red (far) ramp, scaled to the
/// frame's own depth range.
pub fn colorize(depth: &Tensor<f32>) -> image::RgbImage {
    const STOPS: [[f32; 3]; 5] = [
        [0.19, 0.07, 0.23],
        [0.16, 0.47, 0.93],
        [0.16, 0.85, 0.55],
        [0.95, 0.80, 0.13],
        [0.80, 0.10, 0.05],
    ];
    let logs: Vec<f32> = depth.data().iter().map(|d| d.max(1e-6).ln()).collect();
    let lo = logs.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = logs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    let mut img = image::RgbImage::new(depth.width() as u32, depth.height() as u32);
    for (px, &l) in img.pixels_mut().zip(&logs) {
        let t = ((l - lo) / span).clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
        let i = (t.floor() as usize).min(STOPS.len() - 2);
        let f = t - i as f32;
        let c = |ch: usize| ((STOPS[i][ch] * (1.0 - f) + STOPS[i + 1][ch] * f) * 255.0).round() as u8;
        *px = image::Rgb([c(0), c(1), c(2)]);
    }
    img
}
