//! Checkpoints: `manifest.json` describing the parameter layout plus
//! `params.f64`, the parameters as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::Policy;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::{GaussianPolicy, TabularPolicy};

pub const FORMAT: &str = "cvpo-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    /// Layer widths for networks, `[S, A]` for tables.
    pub shape: Vec<usize>,
    pub bias: bool,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: String,
    pub config: TrainConfig,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub blocks: Vec<Block>,
}

fn net_block(name: &str, net: &Mlp) -> Block {
    Block {
        name: name.into(),
        shape: net.sizes().to_vec(),
        bias: net.has_bias(),
        len: net.n_params(),
    }
}

pub fn save_checkpoint(dir: &Path, cfg: &TrainConfig, policy: &Policy) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut data: Vec<f64> = Vec::new();
    let manifest = match policy {
        Policy::Gaussian(p) => {
            let nets = [
                ("mean", &p.mean_net),
                ("var", &p.var_net),
                ("mean_target", &p.mean_target),
                ("var_target", &p.var_target),
            ];
            for (_, n) in &nets {
                data.extend_from_slice(n.params());
            }
            Manifest {
                format: FORMAT.into(),
                kind: "gaussian".into(),
                config: cfg.clone(),
                low: p.low.clone(),
                high: p.high.clone(),
                blocks: nets.iter().map(|(k, n)| net_block(k, n)).collect(),
            }
        }
        Policy::Tabular(p) => {
            data = p.table();
            Manifest {
                format: FORMAT.into(),
                kind: "tabular".into(),
                config: cfg.clone(),
                low: Vec::new(),
                high: Vec::new(),
                blocks: vec![Block {
                    name: "probs".into(),
                    shape: vec![p.n_states, p.n_actions],
                    bias: false,
                    len: data.len(),
                }],
            }
        }
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(dir.join("params.f64"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, Policy)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Schema(format!("unknown checkpoint format '{}'", manifest.format)));
    }
    let bytes = fs::read(dir.join("params.f64"))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Schema("parameter file length is not a multiple of 8".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let total: usize = manifest.blocks.iter().map(|b| b.len).sum();
    if total != data.len() {
        return Err(Error::Schema(format!("manifest lists {total} parameters, file has {}", data.len())));
    }
    let mut off = 0;
    let mut take = |b: &Block| -> Result<Mlp> {
        let mut n = Mlp::zeros(&b.shape, b.bias)?;
        if n.n_params() != b.len {
            return Err(Error::Schema(format!("block {} has inconsistent length", b.name)));
        }
        n.params_mut().copy_from_slice(&data[off..off + b.len]);
        off += b.len;
        Ok(n)
    };
    let policy = match manifest.kind.as_str() {
        "gaussian" if manifest.blocks.len() == 4 => {
            let b = &manifest.blocks;
            Policy::Gaussian(GaussianPolicy {
                mean_net: take(&b[0])?,
                var_net: take(&b[1])?,
                mean_target: take(&b[2])?,
                var_target: take(&b[3])?,
                low: manifest.low.clone(),
                high: manifest.high.clone(),
            })
        }
        "tabular" if manifest.blocks.len() == 1 && manifest.blocks[0].shape.len() == 2 => {
            let a = manifest.blocks[0].shape[1];
            Policy::Tabular(TabularPolicy::from_probs(a, &data)?)
        }
        other => return Err(Error::Schema(format!("unsupported checkpoint kind '{other}'"))),
    };
    Ok((manifest.config, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Policy::Gaussian(GaussianPolicy::new(4, vec![-1.0; 2], vec![1.0; 2], &[8, 8], 0.3, &mut rng).unwrap());
        save_checkpoint(dir.path(), &cfg, &g).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), (cfg.clone(), g));
        let t = Policy::Tabular(TabularPolicy::from_probs(2, &[0.25, 0.75, 1.0, 0.0]).unwrap());
        save_checkpoint(dir.path(), &cfg, &t).unwrap();
        let (_, back) = load_checkpoint(dir.path()).unwrap();
        let (Policy::Tabular(a), Policy::Tabular(b)) = (&back, &t) else { panic!() };
        assert_eq!(a.table(), b.table());
    }
}
