//! Ray-cast synthetic scenes with exact depth and poses.
//!
//! The camera starts at the world origin looking along +z. Colors come from
//! a smooth 3D procedural texture evaluated at the hit point, so a surface
//! point has the same color from every view; they are quantised to 8 bits
//! like a PNG would store them.

use std::collections::HashMap;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SequenceSample;
use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::network::config::parse_key_values;
use crate::network::NetworkConfig;
use crate::tensor::Tensor;

/// Time between two frames (s).
pub const FRAME_INTERVAL: f64 = 0.16;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Fronto-parallel plane `z = distance`.
    Plane { distance: f64 },
    /// Wall `z = distance + amplitude * h(x, y)` with a smooth `h` in `[-1, 1]`.
    HeightField { distance: f64, amplitude: f64 },
    /// Spheres floating in front of a background plane.
    Spheres { background: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// Constant velocity along `direction` with a fixed orientation.
    Straight { direction: Vector3<f64> },
    /// Forward motion while turning about the vertical axis.
    Arc { yaw_rate: f64 },
    /// Smooth random 6-DoF motion: a Catmull-Rom spline through random
    /// position and attitude offsets, on top of a forward drift.
    Spline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub trajectory: Trajectory,
    pub texture_seed: u64,
    /// Meters per second.
    pub speed: f64,
    pub frames: usize,
    pub intrinsics: Intrinsics,
}

impl SceneSpec {
    /// A random scene of a random kind.
    pub fn random(seed: u64, intrinsics: Intrinsics, frames: usize) -> SceneSpec {
        SceneSpec::from_key_values("", seed, intrinsics, frames).expect("empty description is valid")
    }

    /// Parse a `key=value` scene description. Missing keys and the value
    /// `random` are drawn from `seed`.
    ///
    /// Keys: `geometry` (plane, heightfield, spheres), `distance`,
    /// `amplitude`, `count`, `trajectory` (straight, arc, spline),
    /// `direction` (`x,y,z`), `yaw_rate`, `speed`, `texture_seed`, `frames`,
    /// `width`, `height`, `focal`.
    pub fn from_key_values(text: &str, seed: u64, intrinsics: Intrinsics, frames: usize) -> Result<SceneSpec> {
        let kv: HashMap<String, String> = parse_key_values(text)?.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0000);
        let get = |key: &str| kv.get(key).filter(|v| v.as_str() != "random").cloned();
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V>
        where
            V::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| Error::Config(format!("{key}={v}: {e}")))
        }
        let real = |key: &str, lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> Result<f64> {
            match get(key) {
                Some(v) => num(key, &v),
                None => Ok(rng.random_range(lo..hi)),
            }
        };

        let mut intrinsics = intrinsics;
        if ["width", "height", "focal"].iter().any(|key| kv.contains_key(*key)) {
            let w = kv.get("width").map_or(Ok(intrinsics.width), |v| num("width", v))?;
            let h = kv.get("height").map_or(Ok(intrinsics.height), |v| num("height", v))?;
            let f = match kv.get("focal") {
                Some(v) => num("focal", v)?,
                None => intrinsics.fx * w as f64 / intrinsics.width as f64,
            };
            intrinsics = Intrinsics::centered(f, w, h)?;
        }
        let frames = match kv.get("frames") {
            Some(v) => num("frames", v)?,
            None => frames,
        };

        let geometry_kind = kv.get("geometry").cloned().unwrap_or_else(|| "random".into());
        let geometry_kind = if geometry_kind == "random" {
            ["plane", "heightfield", "spheres"][rng.random_range(0..3)].to_string()
        } else {
            geometry_kind
        };
        let distance = real("distance", 6.0, 30.0, &mut rng)?;
        let geometry = match geometry_kind.as_str() {
            "plane" => Geometry::Plane { distance },
            "heightfield" => Geometry::HeightField {
                distance,
                amplitude: real("amplitude", 0.1 * distance, 0.3 * distance, &mut rng)?,
            },
            "spheres" => Geometry::Spheres {
                background: distance,
                count: match kv.get("count") {
                    Some(v) => num("count", v)?,
                    None => rng.random_range(1..5),
                },
            },
            other => return Err(Error::Config(format!("unknown geometry {other:?}"))),
        };

        let trajectory_kind = kv.get("trajectory").cloned().unwrap_or_else(|| "random".into());
        let trajectory_kind = if trajectory_kind == "random" {
            ["straight", "arc", "spline"][rng.random_range(0..3)].to_string()
        } else {
            trajectory_kind
        };
        let trajectory = match trajectory_kind.as_str() {
            "straight" => Trajectory::Straight {
                direction: match kv.get("direction") {
                    Some(v) => {
                        let c: Vec<f64> = v.split(',').map(|x| num("direction", x.trim())).collect::<Result<_>>()?;
                        if c.len() != 3 {
                            return Err(Error::Config(format!("direction={v}: need three components")));
                        }
                        Vector3::new(c[0], c[1], c[2])
                    }
                    None => Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.2..1.0),
                    ),
                },
            },
            "arc" => Trajectory::Arc {
                yaw_rate: real("yaw_rate", -0.3, 0.3, &mut rng)?,
            },
            "spline" => Trajectory::Spline,
            other => return Err(Error::Config(format!("unknown trajectory {other:?}"))),
        };
        let speed = real("speed", 6.0, 25.0, &mut rng)?;
        let texture_seed = match kv.get("texture_seed") {
            Some(v) if v != "random" => num("texture_seed", v)?,
            _ => rng.random(),
        };
        Ok(SceneSpec {
            geometry,
            trajectory,
            texture_seed,
            speed,
            frames,
            intrinsics,
        })
    }
}

/// Smooth color field over world space.
struct Texture {
    /// Per channel: (frequency vector, phase, amplitude).
    waves: [Vec<(Vector3<f64>, f64, f64)>; 3],
}

impl Texture {
    /// Wavelengths scale with `distance` so the pattern has the same pixel
    /// frequency whatever the scene depth.
    fn new(seed: u64, distance: f64) -> Texture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channel = || {
            (0..4)
                .map(|_| {
                    let dir = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                    .try_normalize(1e-6)
                    .unwrap_or(Vector3::x());
                    let omega = rng.random_range(4.0..12.0) / distance;
                    (dir * omega, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.06..0.11))
                })
                .collect()
        };
        Texture {
            waves: [channel(), channel(), channel()],
        }
    }

    fn color(&self, p: &Vector3<f64>) -> [f32; 3] {
        self.waves.each_ref().map(|waves| {
            let v = 0.5 + waves.iter().map(|(w, phase, a)| a * (w.dot(p) + phase).sin()).sum::<f64>();
            ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
        })
    }
}

struct HeightMap {
    waves: Vec<(f64, f64, f64)>,
}

impl HeightMap {
    fn new(rng: &mut ChaCha8Rng) -> HeightMap {
        HeightMap {
            waves: (0..3)
                .map(|_| {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let w = rng.random_range(0.15..0.5);
                    (w * a.cos(), w * a.sin(), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect(),
        }
    }

    /// In `[-1, 1]`.
    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves.iter().map(|(wx, wy, p)| (wx * x + wy * y + p).sin()).sum::<f64>() / self.waves.len() as f64
    }
}

enum Scene {
    Plane(f64),
    Field { distance: f64, amplitude: f64, map: HeightMap },
    Spheres { background: f64, spheres: Vec<(Vector3<f64>, f64)> },
}

impl Scene {
    /// Ray parameter `s` of the first hit of `o + s d` with `s > 0`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let plane = |z: f64| (d.z > 1e-9).then(|| (z - o.z) / d.z).filter(|&s| s > 0.0);
        match self {
            Scene::Plane(z) => plane(*z),
            Scene::Field { distance, amplitude, map } => {
                if d.z <= 1e-9 {
                    return None;
                }
                let g = |s: f64| {
                    let p = o + d * s;
                    p.z - distance - amplitude * map.at(p.x, p.y)
                };
                let mut lo = ((distance - amplitude - o.z) / d.z).max(0.0);
                let hi_end = (distance + amplitude - o.z) / d.z;
                if hi_end <= 0.0 || g(lo) > 0.0 {
                    return None;
                }
                // march finely enough not to step over a bump, then bisect
                let step = (0.05 * amplitude.max(0.1)) / d.norm();
                let mut hi = lo;
                loop {
                    hi += step;
                    if g(hi) >= 0.0 {
                        break;
                    }
                    if hi > hi_end + step {
                        return None;
                    }
                    lo = hi;
                }
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
            Scene::Spheres { background, spheres } => {
                let mut best = plane(*background);
                for (c, r) in spheres {
                    let oc = o - c;
                    let a = d.dot(d);
                    let b = 2.0 * d.dot(&oc);
                    let cc = oc.dot(&oc) - r * r;
                    let disc = b * b - 4.0 * a * cc;
                    if disc < 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    let s = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)].into_iter().find(|&s| s > 0.0);
                    if let Some(s) = s {
                        if best.is_none_or(|b| s < b) {
                            best = Some(s);
                        }
                    }
                }
                best
            }
        }
    }

    fn reference_distance(&self) -> f64 {
        match self {
            Scene::Plane(z) => *z,
            Scene::Field { distance, .. } => *distance,
            Scene::Spheres { background, .. } => *background,
        }
    }

    /// Closest z any surface point can have.
    fn nearest_z(&self) -> f64 {
        match self {
            Scene::Plane(z) => *z,
            Scene::Field { distance, amplitude, .. } => distance - amplitude,
            Scene::Spheres { background, spheres } => spheres
                .iter()
                .map(|(c, r)| c.z - r)
                .fold(*background, f64::min),
        }
    }
}

/// Catmull-Rom interpolation through `points` spaced one second apart.
fn catmull_rom(points: &[Vector3<f64>], t: f64) -> Vector3<f64> {
    let i = (t.floor() as usize).min(points.len() - 2);
    let u = t - i as f64;
    let p = |k: isize| points[(i as isize + k).clamp(0, points.len() as isize - 1) as usize];
    let (p0, p1, p2, p3) = (p(-1), p(0), p(1), p(2));
    let u2 = u * u;
    let u3 = u2 * u;
    0.5 * ((2.0 * p1) + (p2 - p0) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u3)
}

fn trajectory_poses(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Pose>> {
    let n = spec.frames;
    let duration = n as f64 * FRAME_INTERVAL;
    let v = spec.speed;
    let poses = match &spec.trajectory {
        Trajectory::Straight { direction } => {
            let dir = if v == 0.0 {
                Vector3::zeros()
            } else {
                direction
                    .try_normalize(1e-12)
                    .ok_or_else(|| Error::DegenerateSpec("zero direction".into()))?
            };
            (0..n)
                .map(|k| Pose {
                    position: dir * (v * k as f64 * FRAME_INTERVAL),
                    orientation: UnitQuaternion::identity(),
                })
                .collect()
        }
        Trajectory::Arc { yaw_rate } => (0..n)
            .map(|k| {
                let t = k as f64 * FRAME_INTERVAL;
                let theta = yaw_rate * t;
                let position = if yaw_rate.abs() < 1e-12 {
                    Vector3::new(0.0, 0.0, v * t)
                } else {
                    let r = v / yaw_rate;
                    Vector3::new(r * (1.0 - theta.cos()), 0.0, r * theta.sin())
                };
                Pose {
                    position,
                    orientation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), theta),
                }
            })
            .collect(),
        Trajectory::Spline => {
            let knots = duration.ceil() as usize + 2;
            let drift = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2), rng.random_range(0.3..1.0))
                .normalize()
                * v;
            let offsets: Vec<Vector3<f64>> = (0..knots)
                .map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)) * v)
                .collect();
            let attitudes: Vec<Vector3<f64>> = (0..knots)
                .map(|_| Vector3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.08..0.08), rng.random_range(-0.05..0.05)))
                .collect();
            let base = catmull_rom(&offsets, 0.0);
            let att0 = catmull_rom(&attitudes, 0.0);
            (0..n)
                .map(|k| {
                    let t = k as f64 * FRAME_INTERVAL;
                    let aa = catmull_rom(&attitudes, t) - att0;
                    Pose {
                        position: drift * t + catmull_rom(&offsets, t) - base,
                        orientation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_scaled_axis(aa)),
                    }
                })
                .collect()
        }
    };
    Ok(poses)
}

fn build_scene(geometry: &Geometry, k: &Intrinsics, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::DegenerateSpec(format!("{name} = {v}")))
        }
    };
    Ok(match *geometry {
        Geometry::Plane { distance } => Scene::Plane(positive("distance", distance)?),
        Geometry::HeightField { distance, amplitude } => {
            positive("distance", distance)?;
            if !(amplitude >= 0.0 && amplitude < distance) {
                return Err(Error::DegenerateSpec(format!("amplitude {amplitude} for distance {distance}")));
            }
            Scene::Field {
                distance,
                amplitude,
                map: HeightMap::new(rng),
            }
        }
        Geometry::Spheres { background, count } => {
            positive("background", background)?;
            let half_w = 0.5 * k.width as f64 / k.fx;
            let half_h = 0.5 * k.height as f64 / k.fy;
            let spheres = (0..count)
                .map(|_| {
                    let z = rng.random_range(0.35..0.75) * background;
                    let c = Vector3::new(
                        rng.random_range(-0.7..0.7) * half_w * z,
                        rng.random_range(-0.7..0.7) * half_h * z,
                        z,
                    );
                    (c, rng.random_range(0.08..0.18) * z)
                })
                .collect();
            Scene::Spheres { background, spheres }
        }
    })
}

/// Render `spec`. The same `(spec, seed)` always yields the same sample.
pub fn generate_synthetic(spec: &SceneSpec, seed: u64) -> Result<SequenceSample> {
    if spec.frames == 0 {
        return Err(Error::DegenerateSpec("zero frames".into()));
    }
    if !(spec.speed >= 0.0 && spec.speed.is_finite()) {
        return Err(Error::DegenerateSpec(format!("speed {}", spec.speed)));
    }
    let k = spec.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = build_scene(&spec.geometry, &k, &mut rng)?;
    let poses = trajectory_poses(spec, &mut rng)?;
    let texture = Texture::new(spec.texture_seed, scene.reference_distance());
    let range = NetworkConfig::default().depth_range;
    let nearest = scene.nearest_z();

    let mut rgb = Vec::with_capacity(spec.frames);
    let mut depth = Vec::with_capacity(spec.frames);
    for (t, pose) in poses.iter().enumerate() {
        if pose.position.z >= nearest - range.min {
            return Err(Error::DegenerateSpec(format!(
                "frame {t}: camera at z = {:.3} reaches the scene (nearest z = {nearest:.3})",
                pose.position.z
            )));
        }
        let rot = pose.orientation.to_rotation_matrix();
        let mut image = Tensor::zeros(k.height, k.width, 3);
        let mut dmap = Tensor::zeros(k.height, k.width, 1);
        for y in 0..k.height {
            for x in 0..k.width {
                let v = (y as f64 - k.cy) / k.fy;
                let u = ((x as f64 - k.cx) - k.s * v) / k.fx;
                let d = rot * Vector3::new(u, v, 1.0);
                let s = scene.intersect(&pose.position, &d).ok_or_else(|| {
                    Error::DegenerateSpec(format!("frame {t}: pixel ({x}, {y}) sees no surface"))
                })?;
                if !(s > range.min && s < range.max) {
                    return Err(Error::DegenerateSpec(format!(
                        "frame {t}: pixel ({x}, {y}) at depth {s:.3} m, outside [{}, {}]",
                        range.min, range.max
                    )));
                }
                let hit = pose.position + d * s;
                image.pixel_mut(y, x).copy_from_slice(&texture.color(&hit));
                dmap.set(y, x, 0, s as f32);
            }
        }
        rgb.push(image);
        depth.push(dmap);
    }
    SequenceSample::from_poses(format!("synth_{seed:06}"), k, rgb, depth, poses)
}

/// A random scene for `seed`, redrawn (deterministically) until it renders
/// without leaving the scene. The sample id is `synth_<seed>`.
pub fn generate_random(seed: u64, intrinsics: Intrinsics, frames: usize) -> Result<SequenceSample> {
    generate_described("", seed, intrinsics, frames)
}

/// Like [`generate_random`] with the keys of `description` fixed (see
/// [`SceneSpec::from_key_values`]). A fully specified scene that leaves the
/// valid depth range fails with `DegenerateSpec`.
pub fn generate_described(description: &str, seed: u64, intrinsics: Intrinsics, frames: usize) -> Result<SequenceSample> {
    let mut last = None;
    for attempt in 0..32u64 {
        let sub = seed.wrapping_mul(0x9E37_79B9).wrapping_add(attempt << 40);
        let spec = SceneSpec::from_key_values(description, sub, intrinsics, frames)?;
        match generate_synthetic(&spec, sub) {
            Ok(mut s) => {
                s.id = format!("synth_{seed:06}");
                return Ok(s);
            }
            Err(e @ Error::DegenerateSpec(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics::centered(32.0, 32, 32).unwrap()
    }

    fn plane_spec(distance: f64, speed: f64, direction: Vector3<f64>) -> SceneSpec {
        SceneSpec {
            geometry: Geometry::Plane { distance },
            trajectory: Trajectory::Straight { direction },
            texture_seed: 7,
            speed,
            frames: 2,
            intrinsics: k(),
        }
    }

    #[test]
    fn static_plane_has_constant_depth() {
        let s = generate_synthetic(&plane_spec(10.0, 0.0, Vector3::x()), 1).unwrap();
        for f in &s.frames {
            assert!(f.depth.data().iter().all(|&d| d == 10.0));
        }
        assert_eq!(s.frames[0].rgb, s.frames[1].rgb);
    }

    #[test]
    fn lateral_motion_shifts_the_image() {
        // f * delta / d = 32 * (speed * 0.16) / 8 = 2 px
        let speed = 2.0 / 32.0 * 8.0 / FRAME_INTERVAL;
        let s = generate_synthetic(&plane_spec(8.0, speed, Vector3::x()), 1).unwrap();
        let (a, b) = (&s.frames[0].rgb, &s.frames[1].rgb);
        let score = |shift: usize| {
            let mut err = 0.0;
            for y in 0..32 {
                for x in 0..30 - shift {
                    for c in 0..3 {
                        err += (b.at(y, x, c) - a.at(y, x + shift, c)).abs() as f64;
                    }
                }
            }
            err
        };
        let best = (0..5).min_by(|&p, &q| score(p).total_cmp(&score(q))).unwrap();
        assert_eq!(best, 2);
    }

    #[test]
    fn deterministic() {
        let spec = SceneSpec::random(3, k(), 3);
        assert_eq!(spec, SceneSpec::random(3, k(), 3));
        let a = generate_synthetic(&spec, 9).unwrap();
        let b = generate_synthetic(&spec, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_scenes_render() {
        for seed in 0..12 {
            let s = generate_random(seed, k(), 4).unwrap();
            assert_eq!(s.len(), 4);
            assert!(s.frames.iter().all(|f| f.depth.data().iter().all(|&d| d > 0.1 && d < 200.0)));
        }
    }

    #[test]
    fn degenerate_specs() {
        assert!(matches!(
            generate_synthetic(&plane_spec(1.0, 20.0, Vector3::z()), 0),
            Err(Error::DegenerateSpec(_))
        ));
        let mut spec = plane_spec(5.0, 0.0, Vector3::x());
        spec.frames = 0;
        assert!(generate_synthetic(&spec, 0).is_err());
        spec.frames = 1;
        spec.trajectory = Trajectory::Arc { yaw_rate: 20.0 };
        spec.speed = 1.0;
        spec.frames = 4;
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn parses_descriptions() {
        let spec = SceneSpec::from_key_values("geometry=plane\ndistance=12\ntrajectory=straight\ndirection=1,0,0\nspeed=1.5\n", 0, k(), 4).unwrap();
        assert_eq!(spec.geometry, Geometry::Plane { distance: 12.0 });
        assert_eq!(spec.speed, 1.5);
        assert!(SceneSpec::from_key_values("geometry=cube", 0, k(), 4).is_err());
        let spec = SceneSpec::from_key_values("width=64\nheight=48\nfocal=40", 0, k(), 4).unwrap();
        assert_eq!((spec.intrinsics.width, spec.intrinsics.height, spec.intrinsics.fx), (64, 48, 40.0));
    }
}
