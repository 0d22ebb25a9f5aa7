//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QFREECKP"  u32 version
//! u32 meta_len  meta (UTF-8 `key=value` lines)
//! u64 count
//! count × { u32 path_len, path, u32 ndim, ndim × u64 dim, numel × f64 }
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so reading and writing again is
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use qfree_core::env::EnvKind;
use qfree_core::factor::{FactorizationModel, ModelConfig, Variant};
use qfree_core::nn::ParamSet;
use qfree_core::Tensor;

const MAGIC: &[u8; 8] = b"QFREECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: EnvKind,
    pub model: FactorizationModel,
    pub seed: u64,
}

impl Checkpoint {
    fn meta(&self) -> String {
        let c = &self.model.config;
        let mut m = BTreeMap::new();
        m.insert("env", self.env.name().to_string());
        m.insert("variant", self.model.variant.name().to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("n_agents", c.n_agents.to_string());
        m.insert("n_actions", c.n_actions.to_string());
        m.insert("obs_dim", c.obs_dim.to_string());
        m.insert("agent_hidden", c.agent_hidden.to_string());
        m.insert("rnn_hidden", c.rnn_hidden.to_string());
        m.insert("mixer_hidden", c.mixer_hidden.to_string());
        m.insert("transform_hidden", c.transform_hidden.to_string());
        m.insert("hyper_embed", c.hyper_embed.to_string());
        m.insert("share_params", c.share_params.to_string());
        m.insert("unconstrained_omega", c.unconstrained_omega.to_string());
        m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let meta = self.meta();
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.model.params.len() as u64).to_le_bytes())?;
        for (path, t) in self.model.params.iter() {
            w.write_all(&(path.len() as u32).to_le_bytes())?;
            w.write_all(path.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_bytes(mut r: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        ensure!(&magic == MAGIC, "not a checkpoint file");
        let version = read_u32(&mut r)?;
        ensure!(
            version == VERSION,
            "unsupported checkpoint version {version}"
        );
        let meta_len = read_u32(&mut r)? as usize;
        let meta = String::from_utf8(take(&mut r, meta_len)?.to_vec())?;
        let meta: BTreeMap<&str, &str> = meta
            .lines()
            .map(|l| {
                l.split_once('=')
                    .ok_or_else(|| anyhow!("bad metadata line {l:?}"))
            })
            .collect::<Result<_>>()?;
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| anyhow!("metadata is missing {k}"))
        };
        let num = |k: &str| -> Result<usize> { Ok(get(k)?.parse()?) };
        let flag = |k: &str| -> Result<bool> { Ok(get(k)?.parse()?) };
        let config = ModelConfig {
            n_agents: num("n_agents")?,
            n_actions: num("n_actions")?,
            obs_dim: num("obs_dim")?,
            agent_hidden: num("agent_hidden")?,
            rnn_hidden: num("rnn_hidden")?,
            mixer_hidden: num("mixer_hidden")?,
            transform_hidden: num("transform_hidden")?,
            hyper_embed: num("hyper_embed")?,
            share_params: flag("share_params")?,
            unconstrained_omega: flag("unconstrained_omega")?,
        };
        let variant: Variant = get("variant")?.parse()?;
        let env: EnvKind = get("env")?.parse()?;
        let seed = get("seed")?.parse()?;

        let count = read_u64(&mut r)?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let path = std::str::from_utf8(take(&mut r, len)?)?.to_string();
            let ndim = read_u32(&mut r)? as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| Ok(f64::from_le_bytes(take(&mut r, 8)?.try_into()?)))
                .collect::<Result<Vec<f64>>>()?;
            params.insert(path, Tensor::new(&shape, data)?);
        }
        ensure!(r.is_empty(), "{} trailing bytes", r.len());
        let expected = FactorizationModel::zeroed(variant, config);
        if !expected.params.same_structure(&params) {
            bail!("parameters do not match a {variant} model of the recorded size");
        }
        Ok(Self {
            env,
            model: FactorizationModel {
                variant,
                config,
                params,
            },
            seed,
        })
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    ensure!(r.len() >= n, "truncated checkpoint");
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into()?))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into()?))
}
