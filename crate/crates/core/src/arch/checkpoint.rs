//! Binary checkpoints: `MVFC`, u32 LE version, u32 LE header length, JSON
//! header, then little-endian f32 payloads in directory order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{gaussian_tensor, Network, NetworkSpec};
use crate::error::ArchError;
use crate::optim::TrainState;
use crate::params::ParamStore;
use crate::tensor::{Real, Shape, Tensor};

const MAGIC: &[u8; 4] = b"MVFC";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    /// Offset in f32 elements from the start of the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    digest: String,
    spec: NetworkSpec,
    iteration: u64,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

/// Contents of a checkpoint file. Values are stored in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamStore<f32>,
    pub iteration: u64,
    pub velocity: Option<ParamStore<f32>>,
}

/// Draws a fresh classifier head when loading onto a different spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadReinit {
    pub std: f64,
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchError + '_ {
    move |source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint<R: Real>(net: &Network<R>, state: Option<&TrainState<R>>, path: &Path) -> Result<(), ArchError> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, t: &Tensor<R>| {
        entries.push(TensorEntry {
            name,
            shape: t.shape().as_array(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    };
    for (name, t) in net.params.iter() {
        push(name.to_string(), t);
    }
    if let Some(state) = state {
        for (name, t) in state.velocity.iter() {
            push(format!("{VELOCITY_PREFIX}{name}"), t);
        }
    }
    let header = Header {
        digest: net.spec.digest(),
        spec: net.spec.clone(),
        iteration: state.map_or(0, |s| s.iteration),
        tensors: entries,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ArchError::Corrupt(e.to_string()))?;
    let mut bytes = Vec::with_capacity(12 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ArchError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_checkpoint(&bytes)
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub(crate) fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ArchError> {
    let corrupt = |m: &str| ArchError::Corrupt(m.to_string());
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(bytes, 4).ok_or_else(|| corrupt("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(ArchError::Corrupt(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = read_u32(bytes, 8).ok_or_else(|| corrupt("truncated header length"))? as usize;
    let header_bytes = bytes.get(12..12 + header_len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| ArchError::Corrupt(format!("header: {e}")))?;
    if header.spec.digest() != header.digest {
        return Err(corrupt("spec digest does not match stored spec"));
    }
    let payload = &bytes[12 + header_len..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch or truncated payload"));
    }
    let floats = payload.len() / 4;
    let mut params = ParamStore::new();
    let mut velocity = ParamStore::new();
    let mut expected_offset = 0;
    for entry in header.tensors {
        let [n, c, h, w] = entry.shape;
        let shape = Shape::new(n, c, h, w);
        if entry.offset != expected_offset || entry.offset + shape.len() > floats {
            return Err(ArchError::Corrupt(format!("tensor {} out of payload bounds", entry.name)));
        }
        let data: Vec<f32> = payload[entry.offset * 4..(entry.offset + shape.len()) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        expected_offset += shape.len();
        let t = Tensor::from_vec(shape, data)?;
        match entry.name.strip_prefix(VELOCITY_PREFIX) {
            Some(name) => velocity.insert(name, t),
            None => {
                if params.contains(&entry.name) {
                    return Err(ArchError::Corrupt(format!("duplicate tensor {}", entry.name)));
                }
                params.insert(entry.name, t)
            }
        }
    }
    if expected_offset != floats || !payload.len().is_multiple_of(4) {
        return Err(corrupt("payload length does not match tensor directory"));
    }
    // Validates that every spec parameter is present exactly once with its shape.
    let net = Network::from_parts(header.spec, params)?;
    Ok(Checkpoint {
        spec: net.spec,
        params: net.params,
        iteration: header.iteration,
        velocity: (!velocity.is_empty()).then_some(velocity),
    })
}

impl Checkpoint {
    pub fn digest(&self) -> String {
        self.spec.digest()
    }

    /// The stored network in precision `R`.
    pub fn network<R: Real>(&self) -> Network<R> {
        Network {
            spec: self.spec.clone(),
            params: self.params.convert(),
        }
    }

    /// Training state with the stored iteration counter and velocities (zeros when absent).
    pub fn train_state<R: Real>(&self) -> TrainState<R> {
        let mut state = TrainState::new(&self.params.convert());
        state.iteration = self.iteration;
        if let Some(v) = &self.velocity {
            for (name, t) in v.iter() {
                state.velocity.insert(name, t.convert());
            }
        }
        state
    }

    /// Loads the weights onto `expected`. A digest mismatch is an error unless
    /// `reinit` is given: then every parameter whose name and shape match is
    /// copied, the classifier head is drawn from `N(0, std^2)` with zero bias,
    /// and everything else is freshly initialized.
    pub fn into_network<R: Real>(&self, expected: &NetworkSpec, reinit: Option<HeadReinit>) -> Result<Network<R>, ArchError> {
        let found = self.spec.digest();
        let wanted = expected.digest();
        if found == wanted {
            return Ok(self.network());
        }
        let Some(reinit) = reinit else {
            return Err(ArchError::DigestMismatch {
                expected: wanted,
                found,
            });
        };
        let mut net = Network::<R>::init(expected.clone(), reinit.seed)?;
        let head = expected.head_params();
        let mut rng = ChaCha8Rng::seed_from_u64(reinit.seed);
        let names: Vec<(String, Shape)> = net.params.iter().map(|(n, t)| (n.to_string(), t.shape())).collect();
        for (name, shape) in names {
            let fresh = if head.contains(&name) {
                if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    gaussian_tensor(&mut rng, shape, reinit.std)
                }
            } else {
                match self.params.get(&name) {
                    Some(t) if t.shape() == shape => t.convert(),
                    _ => continue,
                }
            };
            net.params.insert(name, fresh);
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_mini_cnn, build_mini_cnn_with, build_mini_fcn, CnnConfig, FcnVariant};

    fn sample_net() -> Network<f32> {
        Network::init(build_mini_fcn(FcnVariant::Fcn16s, 5), 13).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mvfc");
        let net = sample_net();
        let mut state = TrainState::new(&net.params);
        state.iteration = 42;
        for (_, v) in state.velocity.iter_mut() {
            v.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 1e-3);
        }
        save_checkpoint(&net, Some(&state), &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.network::<f32>(), net);
        assert_eq!(ck.iteration, 42);
        let restored = ck.train_state::<f32>();
        assert_eq!(restored.velocity, state.velocity);
        assert_eq!(restored.iteration, 42);
    }

    #[test]
    fn corrupted_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mvfc");
        save_checkpoint(&sample_net(), None, &path).unwrap();
        let good = fs::read(&path).unwrap();
        assert!(parse_checkpoint(&good).is_ok());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let mut flipped_payload = good.clone();
        *flipped_payload.last_mut().unwrap() ^= 0x40;
        let header_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(good[12..12 + header_len].to_vec()).unwrap();
        let tampered = header.replacen("\"n_cl\":5", "\"n_cl\":4", 1);
        assert_ne!(tampered, header);
        let mut bad_digest = good[..12].to_vec();
        bad_digest.extend_from_slice(tampered.as_bytes());
        bad_digest.extend_from_slice(&good[12 + header_len..]);

        for (what, bytes) in [
            ("magic", bad_magic),
            ("version", bad_version),
            ("payload", flipped_payload),
            ("digest", bad_digest),
            ("truncated", good[..good.len() - 7].to_vec()),
            ("truncated header", good[..20].to_vec()),
            ("empty", Vec::new()),
        ] {
            assert!(matches!(parse_checkpoint(&bytes), Err(ArchError::Corrupt(_))), "{what}");
        }
    }

    #[test]
    fn truncated_file_yields_no_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mvfc");
        save_checkpoint(&sample_net(), None, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_checkpoint(Path::new("/nonexistent/net.mvfc")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/net.mvfc"));
    }

    #[test]
    fn mismatched_digest_requires_head_reinit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mvfc");
        let source = Network::<f32>::init(build_mini_cnn(32, 3).unwrap(), 1).unwrap();
        save_checkpoint(&source, None, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let target = build_mini_cnn(32, 4).unwrap();
        assert!(matches!(
            ck.into_network::<f32>(&target, None),
            Err(ArchError::DigestMismatch { .. })
        ));
        let net = ck.into_network::<f32>(&target, Some(HeadReinit { std: 0.01, seed: 3 })).unwrap();
        assert_eq!(net.params.get("conv1.weight"), source.params.get("conv1.weight"));
        assert_eq!(net.params.get("fc1.weight"), source.params.get("fc1.weight"));
        assert_eq!(net.params.get("fc2.weight").unwrap().shape(), Shape::new(4, 64, 1, 1));
    }

    #[test]
    fn reinitialized_head_has_requested_statistics() {
        let cfg = CnnConfig {
            hidden: 2500,
            ..CnnConfig::default()
        };
        let source = Network::<f64>::init(build_mini_cnn_with(32, 3, &cfg).unwrap(), 1).unwrap();
        let ck = Checkpoint {
            spec: source.spec.clone(),
            params: source.params.convert(),
            iteration: 0,
            velocity: None,
        };
        let target = build_mini_cnn_with(32, 4, &cfg).unwrap();
        let net = ck.into_network::<f64>(&target, Some(HeadReinit { std: 0.01, seed: 17 })).unwrap();
        let head = net.params.get("fc2.weight").unwrap().data();
        assert_eq!(head.len(), 10_000);
        let mean = head.iter().sum::<f64>() / head.len() as f64;
        let std = (head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / head.len() as f64).sqrt();
        assert!(mean.abs() <= 0.001, "mean {mean}");
        assert!((std - 0.01).abs() <= 0.002, "std {std}");
        assert!(net.params.get("fc2.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }
}
