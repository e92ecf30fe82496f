//! Pinhole camera model, rigid transforms and pixel reprojection.
//!
//! Conventions:
//! - camera frame: x right, y down, z forward;
//! - integer pixel coordinates address pixel centres;
//! - [`RigidTransform`] maps points as `x -> R x + t`. A per-step *motion*
//!   maps points expressed in the current camera frame (time `t`) into the
//!   previous camera frame (time `t - 1`).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane are rejected.
pub const MIN_Z: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub s: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, s: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            s,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, no skew, principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            0.0,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.s, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.s, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics of a feature map downsampled `2^level` times by stride-2
    /// convolutions: output pixel `k` is centred on input pixel `2k`, so
    /// focal lengths and the principal point halve at every level.
    pub fn at_level(&self, level: usize) -> Intrinsics {
        let f = (1u64 << level) as f64;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            s: self.s / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width.div_ceil(1 << level),
            height: self.height.div_ceil(1 << level),
        }
    }

    /// Intrinsics after resampling the image to `width x height` with the
    /// half-pixel convention used by the resize kernels.
    pub fn resized(&self, width: usize, height: usize) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            s: self.s * sx,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.i >= 0.0 && p.j >= 0.0 && p.i <= (self.width - 1) as f64 && p.j <= (self.height - 1) as f64
    }

    pub(crate) fn require_square_unskewed(&self) -> Result<()> {
        if self.s != 0.0 || (self.fx - self.fy).abs() / self.fx >= 1e-6 {
            return Err(Error::UnsupportedIntrinsics(format!(
                "fx={}, fy={}, s={}",
                self.fx, self.fy, self.s
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        text.parse()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format!("{self}\n"))?;
        Ok(())
    }
}

/// `fx fy s cx cy width height`
impl fmt::Display for Intrinsics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.fx, self.fy, self.s, self.cx, self.cy, self.width, self.height
        )
    }
}

impl FromStr for Intrinsics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::format(
                "camera.txt",
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let real = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::format("camera.txt", format!("field {i}: {e}")))
        };
        let int = |i: usize| {
            fields[i]
                .parse::<usize>()
                .map_err(|e| Error::format("camera.txt", format!("field {i}: {e}")))
        };
        Intrinsics::new(real(0)?, real(1)?, real(2)?, real(3)?, real(4)?, int(5)?, int(6)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    /// Horizontal (column) coordinate.
    pub i: f64,
    /// Vertical (row) coordinate.
    pub j: f64,
}

impl PixelCoord {
    pub fn new(i: f64, j: f64) -> Self {
        PixelCoord { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform::new(Matrix3::identity(), t)
    }

    /// The transform `x -> R (x + offset)`, i.e. translate first, then rotate.
    pub fn rotate_after_offset(rotation: Matrix3<f64>, offset: Vector3<f64>) -> Self {
        RigidTransform::new(rotation, rotation * offset)
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_scaled_axis(axis_angle);
        RigidTransform::new(*r.matrix(), translation)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// `R p + t`, written out term by term so that the identity transform
    /// reproduces its input bit for bit.
    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let r = &self.rotation;
        let t = &self.translation;
        Vector3::new(
            r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t.x,
            r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t.y,
            r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t.z,
        )
    }

    /// Rotation as an axis-angle vector (radians).
    pub fn axis_angle(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    /// `||R^T R - I||_inf`
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Project the rotation back onto SO(3).
    pub fn reorthonormalized(&self) -> Self {
        let r = Rotation3::from_matrix(&self.rotation);
        RigidTransform::new(*r.matrix(), self.translation)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform::new(a.rotation * b.rotation, a.rotation * b.translation + a.translation)
}

pub fn invert(a: &RigidTransform) -> RigidTransform {
    let rt = a.rotation.transpose();
    RigidTransform::new(rt, -(rt * a.translation))
}

/// Camera pose in the world: optical centre position and the rotation from
/// camera axes to world axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Camera-to-world transform.
    pub fn camera_to_world(&self) -> RigidTransform {
        RigidTransform::new(*self.orientation.to_rotation_matrix().matrix(), self.position)
    }
}

/// Motion that maps points from the `current` camera frame into the
/// `previous` one.
pub fn motion_between(previous: &Pose, current: &Pose) -> RigidTransform {
    compose(&invert(&previous.camera_to_world()), &current.camera_to_world())
}

pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<(PixelCoord, f64)> {
    let z = point.z;
    if !(z > MIN_Z) {
        return Err(Error::NonPositiveDepth(z));
    }
    let i = (k.fx * point.x + k.s * point.y) / z + k.cx;
    let j = k.fy * point.y / z + k.cy;
    Ok((PixelCoord { i, j }, z))
}

pub fn backproject(p: PixelCoord, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > MIN_Z) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let v = (p.j - k.cy) / k.fy;
    let u = ((p.i - k.cx) - k.s * v) / k.fx;
    Ok(Vector3::new(u * depth, v * depth, depth))
}

/// Where the 3D point seen at `p_t` with depth `d_t` in the current frame
/// projects in the previous frame, and its depth there.
///
/// Requires square, unskewed pixels. The projection is evaluated as a
/// displacement from `p_t` so that the identity motion returns `(p_t, d_t)`
/// exactly.
pub fn reproject_coords(
    p_t: PixelCoord,
    d_t: f64,
    motion: &RigidTransform,
    k: &Intrinsics,
) -> Result<(PixelCoord, f64)> {
    k.require_square_unskewed()?;
    if !(d_t > MIN_Z) {
        return Err(Error::NonPositiveDepth(d_t));
    }
    let u = (p_t.i - k.cx) / k.fx;
    let v = (p_t.j - k.cy) / k.fy;
    let point = Vector3::new(u * d_t, v * d_t, d_t);
    let moved = motion.apply(&point);
    if !(moved.z > MIN_Z) {
        return Err(Error::BehindCamera(moved.z));
    }
    let di = k.fx * (moved.x - u * moved.z) / moved.z;
    let dj = k.fy * (moved.y - v * moved.z) / moved.z;
    Ok((PixelCoord::new(p_t.i + di, p_t.j + dj), moved.z))
}
