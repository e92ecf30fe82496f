use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::pfm::{read_pfm_file, write_pfm_file};
use super::SequenceSample;
use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const POSES_HEADER: &str = "frame_index,px,py,pz,qw,qx,qy,qz";

fn not_found(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    }
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut s = String::from(POSES_HEADER);
    s.push('\n');
    for (i, p) in poses.iter().enumerate() {
        let q = p.orientation.quaternion();
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{}",
            p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k
        )
        .expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Poses in file order. Quaternions that are not unit length within 1e-9 are
/// normalised; unit ones are kept bit-exact.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(not_found(path))?;
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("frame_index")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(Error::format("poses.csv", format!("line {}: {} fields", n + 1, fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|e| Error::format("poses.csv", format!("line {}: {e}", n + 1)))?;
        if index != poses.len() {
            return Err(Error::format(
                "poses.csv",
                format!("line {}: frame index {index}, expected {}", n + 1, poses.len()),
            ));
        }
        let mut v = [0.0f64; 7];
        for (dst, src) in v.iter_mut().zip(&fields[1..]) {
            *dst = src
                .parse()
                .map_err(|e| Error::format("poses.csv", format!("line {}: {e}", n + 1)))?;
        }
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let norm = q.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::format("poses.csv", format!("line {}: zero quaternion", n + 1)));
        }
        let orientation = if (norm - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        poses.push(Pose {
            position: Vector3::new(v[0], v[1], v[2]),
            orientation,
        });
    }
    Ok(poses)
}

fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Tensor::from_vec(
        h as usize,
        w as usize,
        3,
        img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    )
}

fn write_rgb(path: &Path, rgb: &Tensor<f32>) -> Result<()> {
    let (h, w, c) = rgb.shape();
    if c != 3 {
        return Err(Error::shape(format!("RGB image with {c} channels")));
    }
    let raw: Vec<u8> = rgb.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Load one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceSample> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let intrinsics = Intrinsics::read(&dir.join("camera.txt"))?;
    let poses = read_poses(&dir.join("poses.csv"))?;
    let rgb_dir = dir.join("rgb");
    let images = std::fs::read_dir(&rgb_dir)
        .map_err(not_found(&rgb_dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    if images != poses.len() {
        return Err(Error::PoseCountMismatch {
            path: dir.to_path_buf(),
            poses: poses.len(),
            images,
        });
    }
    let mut rgb = Vec::with_capacity(images);
    let mut depth = Vec::with_capacity(images);
    for t in 0..images {
        rgb.push(read_rgb(&rgb_dir.join(frame_name(t, "png")))?);
        let path = dir.join("depth").join(frame_name(t, "pfm"));
        let d = read_pfm_file(&path)?;
        if let Some(bad) = d.data().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::CorruptDepth(path, format!("value {bad}")));
        }
        depth.push(d);
    }
    SequenceSample::from_poses(id, intrinsics, rgb, depth, poses)
}

/// Sequence directories under `root` (those holding a `camera.txt`), sorted
/// by name.
pub fn dataset_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(not_found(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("camera.txt").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Lazily load every sequence under `root`.
pub fn load_dataset(root: &Path) -> Result<impl Iterator<Item = Result<SequenceSample>>> {
    Ok(dataset_sequences(root)?.into_iter().map(|d| load_sequence(&d)))
}

/// Write `sample` to `root/<sample.id>/`.
pub fn save_sequence(root: &Path, sample: &SequenceSample) -> Result<PathBuf> {
    sample.validate()?;
    let dir = root.join(&sample.id);
    std::fs::create_dir_all(dir.join("rgb"))?;
    std::fs::create_dir_all(dir.join("depth"))?;
    sample.intrinsics.write(&dir.join("camera.txt"))?;
    write_poses(&dir.join("poses.csv"), &sample.poses)?;
    for (t, f) in sample.frames.iter().enumerate() {
        write_rgb(&dir.join("rgb").join(frame_name(t, "png")), &f.rgb)?;
        write_pfm_file(&dir.join("depth").join(frame_name(t, "pfm")), &f.depth)?;
    }
    Ok(dir)
}
