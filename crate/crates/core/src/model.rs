//! Checkpointed depth models.
//!
//! Besides the trained network, two reference "models" share the checkpoint
//! format so every command can evaluate them: the oracle returns the ground
//! truth, the constant model predicts `d_init` everywhere.
//!
//! The first tensor of a checkpoint carries the configuration as text in its
//! name (`#config model=network;num_levels=2;...`) with an empty shape.

use std::path::Path;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::{read_checkpoint, write_checkpoint, NamedTensor, Tensor};

const CONFIG_PREFIX: &str = "#config ";

#[derive(Debug, Clone)]
pub enum Model {
    Network(Network<f32>),
    /// Returns the ground-truth depth.
    Oracle,
    /// Predicts `depth` at every pixel.
    Constant { depth: f64 },
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Network(_) => "network",
            Model::Oracle => "oracle",
            Model::Constant { .. } => "constant",
        }
    }

    fn header(&self) -> NamedTensor {
        let mut fields = vec![format!("model={}", self.kind())];
        match self {
            Model::Network(net) => fields.extend(net.config.to_key_values().into_iter().map(|(k, v)| format!("{k}={v}"))),
            Model::Constant { depth } => fields.push(format!("d_init={depth}")),
            Model::Oracle => {}
        }
        NamedTensor {
            name: format!("{CONFIG_PREFIX}{}", fields.join(";")),
            dims: vec![0],
            data: Vec::new(),
        }
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![self.header()];
        if let Model::Network(net) = self {
            out.extend(net.to_named_tensors());
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Model> {
        let header = tensors
            .first()
            .and_then(|t| t.name.strip_prefix(CONFIG_PREFIX))
            .ok_or_else(|| Error::format("checkpoint", "missing configuration header"))?;
        let mut kind = None;
        let mut config = NetworkConfig::default();
        for field in header.split(';').filter(|f| !f.is_empty()) {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::format("checkpoint", format!("header field {field:?}")))?;
            if k == "model" {
                kind = Some(v.to_string());
            } else if !config.set(k, v)? {
                return Err(Error::format("checkpoint", format!("unknown header key {k:?}")));
            }
        }
        match kind.as_deref() {
            Some("network") => {
                config.validate()?;
                Ok(Model::Network(Network::from_named_tensors(config, &tensors[1..])?))
            }
            Some("oracle") => Ok(Model::Oracle),
            Some("constant") => Ok(Model::Constant { depth: config.d_init }),
            other => Err(Error::format("checkpoint", format!("model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.to_tensors())?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Model::from_tensors(&read_checkpoint(bytes.as_slice())?)
    }

    /// One full-resolution depth map per frame, computed online.
    pub fn predict(&self, sample: &SequenceSample) -> Result<Vec<Tensor<f32>>> {
        match self {
            Model::Network(net) => net.infer_sequence(&sample.network_frames(0..sample.len()), &sample.intrinsics),
            Model::Oracle => Ok(sample.frames.iter().map(|f| f.depth.clone()).collect()),
            Model::Constant { depth } => {
                let (h, w) = (sample.intrinsics.height, sample.intrinsics.width);
                Ok(vec![Tensor::full(h, w, 1, *depth as f32); sample.len()])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let net = Network::<f32>::new(NetworkConfig::with_levels(1), 4).unwrap();
        for model in [Model::Network(net), Model::Oracle, Model::Constant { depth: 12.5 }] {
            let tensors = model.to_tensors();
            let back = Model::from_tensors(&tensors).unwrap();
            assert_eq!(back.to_tensors(), tensors);
        }
    }

    #[test]
    fn rejects_headerless_files() {
        let net = Network::<f32>::new(NetworkConfig::with_levels(1), 4).unwrap();
        assert!(Model::from_tensors(&net.to_named_tensors()).is_err());
        assert!(Model::from_tensors(&[]).is_err());
    }
}
