use crate::error::{Error, Result};
use crate::tensor::DepthRange;

/// Filters of the seven depth-estimator convolutions, identical at every level.
pub const ESTIMATOR_CHANNELS: [usize; 7] = [128, 128, 128, 96, 64, 32, 1];

/// Channels of the stand-in feature encoder, one entry per pyramid level.
pub const ENCODER_CHANNELS: [usize; 6] = [16, 32, 64, 96, 128, 192];

/// Extra estimator input channels besides the encoder features and the cost
/// volume: warped previous depth, upsampled depth, two grid coordinates and
/// six motion values.
pub const AUX_CHANNELS: usize = 1 + 1 + 2 + 6;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub num_levels: usize,
    pub encoder_channels: Vec<usize>,
    pub estimator_channels: Vec<usize>,
    pub cost_radius: usize,
    /// Prior depth (meters) for the coarsest level and the first frame.
    pub d_init: f64,
    pub leaky_slope: f64,
    pub depth_range: DepthRange,
    /// Re-express the warped previous depth as z-depth in the current camera.
    /// Off copies the old z-values unchanged.
    pub transform_depth: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_levels: 2,
            encoder_channels: ENCODER_CHANNELS.to_vec(),
            estimator_channels: ESTIMATOR_CHANNELS.to_vec(),
            cost_radius: 4,
            d_init: 50.0,
            leaky_slope: 0.1,
            depth_range: DepthRange::default(),
            transform_depth: true,
        }
    }
}

impl NetworkConfig {
    pub fn with_levels(num_levels: usize) -> Self {
        NetworkConfig {
            num_levels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_levels == 0 || self.num_levels > self.encoder_channels.len() {
            return bad(format!(
                "num_levels {} needs 1..={} encoder channel entries",
                self.num_levels,
                self.encoder_channels.len()
            ));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return bad("encoder channels must be positive".into());
        }
        if self.estimator_channels.last() != Some(&1) || self.estimator_channels.iter().any(|&c| c == 0) {
            return bad(format!(
                "estimator channels {:?} must be positive and end in 1",
                self.estimator_channels
            ));
        }
        let r = &self.depth_range;
        if !(r.min > 0.0 && r.max > r.min) {
            return bad(format!("depth range [{}, {}]", r.min, r.max));
        }
        if !(self.d_init > 0.0) {
            return bad(format!("d_init {}", self.d_init));
        }
        if !(self.leaky_slope >= 0.0) {
            return bad(format!("leaky_slope {}", self.leaky_slope));
        }
        Ok(())
    }

    /// Number of cost-volume channels, `(2r + 1)^2`.
    pub fn cost_channels(&self) -> usize {
        (2 * self.cost_radius + 1).pow(2)
    }

    /// Channel count of the estimator input at level index `level` (0 = finest).
    pub fn estimator_input_channels(&self, level: usize) -> usize {
        self.encoder_channels[level] + self.cost_channels() + AUX_CHANNELS
    }

    /// Images must be divisible by this on both axes.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_levels
    }

    /// Spatial size of level index `level` (0 = finest, half the input size).
    pub fn level_size(&self, level: usize, height: usize, width: usize) -> (usize, usize) {
        (height >> (level + 1), width >> (level + 1))
    }

    pub fn check_image(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::shape(format!(
                "{height}x{width} image is not divisible by 2^{} = {m}",
                self.num_levels
            )));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("num_levels".into(), self.num_levels.to_string()),
            ("encoder_channels".into(), list(&self.encoder_channels)),
            ("estimator_channels".into(), list(&self.estimator_channels)),
            ("cost_radius".into(), self.cost_radius.to_string()),
            ("d_init".into(), self.d_init.to_string()),
            ("leaky_slope".into(), self.leaky_slope.to_string()),
            ("d_min".into(), self.depth_range.min.to_string()),
            ("d_max".into(), self.depth_range.max.to_string()),
            ("transform_depth".into(), self.transform_depth.to_string()),
        ]
    }

    /// Apply one `key=value` setting. Returns `false` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "num_levels" => self.num_levels = parse(key, value)?,
            "encoder_channels" => self.encoder_channels = parse_list(key, value)?,
            "estimator_channels" => self.estimator_channels = parse_list(key, value)?,
            "cost_radius" => self.cost_radius = parse(key, value)?,
            "d_init" => self.d_init = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "d_min" => self.depth_range.min = parse(key, value)?,
            "d_max" => self.depth_range.max = parse(key, value)?,
            "transform_depth" => self.transform_depth = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

/// Lines of `key=value`; blank lines and `#` comments are skipped.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_input_width() {
        let cfg = NetworkConfig::with_levels(3);
        assert_eq!(cfg.estimator_input_channels(0), 16 + 81 + 10);
        assert_eq!(cfg.estimator_input_channels(2), 64 + 81 + 10);
    }

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig::with_levels(0).validate().is_err());
        assert!(NetworkConfig::with_levels(7).validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.estimator_channels = vec![8, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = NetworkConfig::with_levels(4);
        cfg.d_init = 12.5;
        cfg.cost_radius = 3;
        cfg.transform_depth = false;
        let mut back = NetworkConfig::default();
        for (k, v) in cfg.to_key_values() {
            assert!(back.set(&k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("batch_sequences", "3").unwrap());
    }

    #[test]
    fn image_divisibility() {
        let cfg = NetworkConfig::with_levels(6);
        assert!(cfg.check_image(384, 384).is_ok());
        assert_eq!(cfg.level_size(5, 384, 384), (6, 6));
        assert!(cfg.check_image(100, 384).is_err());
    }
}
