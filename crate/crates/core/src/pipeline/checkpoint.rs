use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::dblrnet::{build_dblrnet, DblrnetModel};
use crate::diffcore::{AdamState, ParamStore, Shape, Tensor};
use crate::error::{Error, Result};
use crate::gppnet::{build_gppnet, GppnetModel};
use crate::losses::Discriminator;

pub const MAGIC: &[u8; 8] = b"GLPGECK1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Init,
    Gpp,
    Joint,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    /// Byte offset into the payload.
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    phase: Phase,
    step: u64,
    config_hash: String,
    config: Config,
    adam_steps: [u64; 3],
    tensors: Vec<TensorEntry>,
}

/// Models, optimizer moments and training position.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Optimizer steps taken across all phases.
    pub step: u64,
    pub config: Config,
    pub gppnet: GppnetModel,
    pub dblrnet: DblrnetModel,
    pub disc: Discriminator,
    pub opt_gpp: AdamState,
    pub opt_dbl: AdamState,
    pub opt_disc: AdamState,
}

const GROUPS: [&str; 3] = ["gppnet", "dblrnet", "disc"];

impl Checkpoint {
    /// Freshly initialized models for `config`.
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let gppnet = build_gppnet(&config.gppnet)?;
        let dblrnet = build_dblrnet(&config.dblrnet)?;
        let disc = Discriminator::new(&config.disc)?;
        let adam = config.train.adam;
        Ok(Checkpoint {
            phase: Phase::Init,
            step: 0,
            opt_gpp: AdamState::new(&gppnet.store, adam),
            opt_dbl: AdamState::new(&dblrnet.store, adam),
            opt_disc: AdamState::new(&disc.store, adam),
            config: config.clone(),
            gppnet,
            dblrnet,
            disc,
        })
    }

    fn stores(&self) -> [(&ParamStore, &AdamState); 3] {
        [
            (&self.gppnet.store, &self.opt_gpp),
            (&self.dblrnet.store, &self.opt_dbl),
            (&self.disc.store, &self.opt_disc),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, shape: Shape, data: &[f32]| {
            tensors.push(TensorEntry {
                name,
                shape: shape.dims(),
                offset: payload.len() as u64,
                len: data.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (group, (store, opt)) in GROUPS.iter().zip(self.stores()) {
            for (id, (name, t)) in store.iter().enumerate() {
                push(format!("{group}/{name}"), t.shape(), t.data());
                push(format!("{group}/adam_m/{name}"), t.shape(), &opt.m[id]);
                push(format!("{group}/adam_v/{name}"), t.shape(), &opt.v[id]);
            }
        }
        let manifest = Manifest {
            version: VERSION,
            phase: self.phase,
            step: self.step,
            config_hash: self.config.model_hash(),
            config: self.config.clone(),
            adam_steps: [self.opt_gpp.t, self.opt_dbl.t, self.opt_disc.t],
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Version("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20 + mlen)
            .ok_or_else(|| Error::Version("checkpoint manifest truncated".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Version(format!("checkpoint manifest: {e}")))?;
        if manifest.config_hash != manifest.config.model_hash() {
            return Err(Error::Version(
                "checkpoint config hash does not match its config".into(),
            ));
        }
        let payload = &bytes[20 + mlen..];
        let mut ck = Checkpoint::new(&manifest.config)?;
        ck.phase = manifest.phase;
        ck.step = manifest.step;
        [ck.opt_gpp.t, ck.opt_dbl.t, ck.opt_disc.t] = manifest.adam_steps;

        let mut expected = 0usize;
        let mut end = 0u64;
        for e in &manifest.tensors {
            let data = read_f32(payload, e)?;
            end = end.max(e.offset + 4 * e.len);
            let (group, rest) = e
                .name
                .split_once('/')
                .ok_or_else(|| Error::Version(format!("tensor {} has no group", e.name)))?;
            let (store, opt) = match group {
                "gppnet" => (&mut ck.gppnet.store, &mut ck.opt_gpp),
                "dblrnet" => (&mut ck.dblrnet.store, &mut ck.opt_dbl),
                "disc" => (&mut ck.disc.store, &mut ck.opt_disc),
                _ => return Err(Error::Version(format!("unknown tensor group {group}"))),
            };
            let (slot, name) = match rest.split_once('/') {
                Some(("adam_m", n)) => (1, n),
                Some(("adam_v", n)) => (2, n),
                _ => (0, rest),
            };
            let id = store
                .id(name)
                .ok_or_else(|| Error::Version(format!("checkpoint tensor {name} unknown to this layout")))?;
            let shape = Shape::from_dims(e.shape);
            if store.get(id).shape() != shape || shape.numel() != data.len() {
                return Err(Error::Version(format!(
                    "tensor {name}: shape {shape:?} does not match layout"
                )));
            }
            match slot {
                0 => *store.get_mut(id) = Tensor::new(shape, data)?,
                1 => opt.m[id] = data,
                _ => opt.v[id] = data,
            }
            expected += 1;
        }
        let layout: usize = ck.stores().iter().map(|(s, _)| 3 * s.len()).sum();
        if expected != layout || end as usize != payload.len() {
            return Err(Error::Version(format!(
                "checkpoint holds {expected} tensors and {} payload bytes; layout needs {layout} tensors and {end} bytes",
                payload.len()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless this checkpoint's architectures match `config`.
    pub fn ensure_compatible(&self, config: &Config) -> Result<()> {
        if self.config.model_hash() != config.model_hash() {
            return Err(Error::Version(
                "checkpoint architecture does not match the configuration".into(),
            ));
        }
        Ok(())
    }
}

fn read_f32(payload: &[u8], e: &TensorEntry) -> Result<Vec<f32>> {
    let start = e.offset as usize;
    let bytes = payload
        .get(start..start + 4 * e.len as usize)
        .ok_or_else(|| Error::Version(format!("tensor {} runs past the payload", e.name)))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dblrnet::DblrnetConfig;
    use crate::gppnet::GppnetConfig;

    fn micro() -> Config {
        Config {
            gppnet: GppnetConfig::micro(),
            dblrnet: DblrnetConfig::micro(),
            ..Config::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut ck = Checkpoint::new(&micro()).unwrap();
        ck.step = 17;
        ck.phase = Phase::Joint;
        ck.opt_dbl.m[0][0] = 0.25;
        ck.opt_dbl.t = 3;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step, 17);
        assert_eq!(back.opt_dbl.m[0][0], 0.25);
    }

    #[test]
    fn corrupt_files_are_version_errors() {
        let bytes = Checkpoint::new(&micro()).unwrap().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nonsense"), Err(Error::Version(_))));
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Version(_))));
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(Checkpoint::from_bytes(short), Err(Error::Version(_))));
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let ck = Checkpoint::new(&micro()).unwrap();
        assert!(ck.ensure_compatible(&Config::default()).is_err());
        assert!(ck.ensure_compatible(&micro()).is_ok());
    }
}
