//! Network checkpoints: a versioned JSON file with layer shapes, row-major
//! parameter arrays, the clip bound, and the training seed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::net::{Activation, Layer, SmallDenseNetwork};

pub const CHECKPOINT_FORMAT: &str = "NOTPE-CKPT-1";

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    in_dim: usize,
    out_dim: usize,
    activation: String,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    clip_bound: Option<f64>,
    seed: u64,
    layers: Vec<CheckpointLayer>,
}

/// Write a network (and the seed that trained it) to a checkpoint file.
pub fn save_network(net: &SmallDenseNetwork, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        clip_bound: net.clip_bound(),
        seed,
        layers: net
            .layers()
            .iter()
            .map(|l| CheckpointLayer {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation().name().to_string(),
                weights: l.weights().to_vec(),
                bias: l.bias().to_vec(),
            })
            .collect(),
    };
    let out = File::create(path).map_err(|source| Error::Io {
        action: "create",
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::to_writer(BufWriter::new(out), &file)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))
}

/// Load a checkpoint, validating the format header and layer chaining.
pub fn load_network(path: impl AsRef<Path>) -> Result<(SmallDenseNetwork, u64)> {
    let path = path.as_ref();
    let input = File::open(path).map_err(|source| Error::Io {
        action: "open",
        path: path.to_path_buf(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(input))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "format {:?}, expected {CHECKPOINT_FORMAT:?}",
            file.format
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for l in file.layers {
        layers.push(Layer::new(
            l.in_dim,
            l.out_dim,
            l.weights,
            l.bias,
            Activation::from_name(&l.activation)?,
        )?);
    }
    let net = SmallDenseNetwork::from_layers(layers, file.clip_bound)?;
    if let Some(c) = net.clip_bound() {
        if net.max_abs_param() > c {
            return Err(Error::Checkpoint(format!(
                "parameters exceed the stored clip bound {c}"
            )));
        }
    }
    Ok((net, file.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn roundtrip_preserves_everything() {
        let mut rng = Rng::new(77);
        let net = SmallDenseNetwork::random(
            &[4, 8, 2],
            &[Activation::Relu, Activation::Identity],
            Some(0.2),
            &mut rng,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("aot-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.json");
        save_network(&net, 42, &path).unwrap();
        let (back, seed) = load_network(&path).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(back.clip_bound(), Some(0.2));
        assert_eq!(back.layers().len(), net.layers().len());
        for (a, b) in back.layers().iter().zip(net.layers()) {
            assert_eq!(a.weights(), b.weights());
            assert_eq!(a.bias(), b.bias());
            assert_eq!(a.activation(), b.activation());
        }
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn params_beyond_stored_clip_bound_rejected() {
        let dir = std::env::temp_dir().join(format!("aot-ckpt-clip-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("clip.json");
        std::fs::write(
            &path,
            r#"{"format":"NOTPE-CKPT-1","clip_bound":0.1,"seed":0,
                "layers":[{"in_dim":1,"out_dim":1,"activation":"identity",
                           "weights":[0.5],"bias":[0.0]}]}"#,
        )
        .unwrap();
        assert!(matches!(load_network(&path), Err(Error::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = std::env::temp_dir().join(format!("aot-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(
            &path,
            r#"{"format":"NOTPE-CKPT-9","clip_bound":null,"seed":0,"layers":[]}"#,
        )
        .unwrap();
        assert!(matches!(load_network(&path), Err(Error::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
