//! Checkpoint layout: `<run>/<role>/epoch_<n>/` holding `params.bin`
//! (little-endian f32, concatenated), `params.json` (index), `graph.json`
//! and `network.json` (what is needed to rebuild the network).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bundle::{AssembleOptions, ModelBundle, ModelKind, Role};
use super::discriminator::Discriminator;
use super::generator::Generator;
use super::graph::ArchitectureGraph;
use super::spec::GeneratorSpec;
use crate::error::{Error, IoContext, Result};
use crate::nn::{Init, Param};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamIndex {
    sha256: String,
    params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "network", rename_all = "snake_case")]
pub enum NetworkSpec {
    Generator { spec: GeneratorSpec },
    Discriminator { resolution: usize, base_channels: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleMeta {
    pub kind: ModelKind,
    pub id: String,
    pub spec: GeneratorSpec,
    pub options: AssembleOptions,
}

pub fn epoch_dir(run: &Path, role_dir: &str, epoch: usize) -> PathBuf {
    run.join(role_dir).join(format!("epoch_{epoch}"))
}

fn write_params(dir: &Path, params: &[&Param]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for p in params {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: blob.len() / 4,
            len: p.len(),
        });
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = ParamIndex {
        sha256: hex::encode(Sha256::digest(&blob)),
        params: entries,
    };
    let bin = dir.join("params.bin");
    fs::write(&bin, &blob).at(&bin)?;
    let idx = dir.join("params.json");
    fs::write(&idx, serde_json::to_vec_pretty(&index)?).at(&idx)
}

fn read_params(dir: &Path, params: &mut [&mut Param]) -> Result<()> {
    let err = |m: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        message: m,
    };
    let idx_path = dir.join("params.json");
    let index: ParamIndex = serde_json::from_slice(&fs::read(&idx_path).at(&idx_path)?)?;
    let bin = dir.join("params.bin");
    let blob = fs::read(&bin).at(&bin)?;
    if hex::encode(Sha256::digest(&blob)) != index.sha256 {
        return Err(err("params.bin does not match its recorded hash".into()));
    }
    if index.params.len() != params.len() {
        return Err(err(format!(
            "expected {} tensors, checkpoint has {}",
            params.len(),
            index.params.len()
        )));
    }
    for (p, e) in params.iter_mut().zip(&index.params) {
        if p.name != e.name || p.shape != e.shape {
            return Err(err(format!(
                "tensor {} {:?} does not match checkpoint entry {} {:?}",
                p.name, p.shape, e.name, e.shape
            )));
        }
        let bytes = blob
            .get(e.offset * 4..(e.offset + e.len) * 4)
            .ok_or_else(|| err(format!("tensor {} out of range", e.name)))?;
        for (v, b) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
}

pub fn save_generator(g: &Generator, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    write_params(dir, &g.params())?;
    g.graph().save(&dir.join("graph.json"))?;
    write_json(
        &dir.join("network.json"),
        &NetworkSpec::Generator { spec: g.spec().clone() },
    )
}

pub fn load_generator(dir: &Path) -> Result<Generator> {
    let spec = match read_json(&dir.join("network.json"))? {
        NetworkSpec::Generator { spec } => spec,
        NetworkSpec::Discriminator { .. } => {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: "checkpoint holds a discriminator, not a generator".into(),
            })
        }
    };
    let mut g = Generator::new(&spec, Init::Normal, &mut Init::rng(0))?;
    let graph = ArchitectureGraph::load(&dir.join("graph.json"))?;
    if &graph != g.graph() {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            message: "graph.json does not match the rebuilt network".into(),
        });
    }
    read_params(dir, &mut g.params_mut())?;
    Ok(g)
}

pub fn save_discriminator(d: &Discriminator, base_channels: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    write_params(dir, &d.params())?;
    d.graph().save(&dir.join("graph.json"))?;
    write_json(
        &dir.join("network.json"),
        &NetworkSpec::Discriminator {
            resolution: d.resolution(),
            base_channels,
        },
    )
}

pub fn load_discriminator(dir: &Path) -> Result<Discriminator> {
    let (resolution, base) = match read_json(&dir.join("network.json"))? {
        NetworkSpec::Discriminator { resolution, base_channels } => (resolution, base_channels),
        NetworkSpec::Generator { .. } => {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: "checkpoint holds a generator, not a discriminator".into(),
            })
        }
    };
    let mut d = Discriminator::new(resolution, base, Init::Normal, &mut Init::rng(0))?;
    read_params(dir, &mut d.params_mut())?;
    Ok(d)
}

/// Writes every network of the bundle under `run/<role>/epoch_<epoch>/`.
pub fn save_bundle(bundle: &ModelBundle, run: &Path, epoch: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(run).at(run)?;
    write_json(
        &run.join("bundle.json"),
        &BundleMeta {
            kind: bundle.kind,
            id: bundle.id.clone(),
            spec: bundle.spec.clone(),
            options: bundle.options.clone(),
        },
    )?;
    let mut dirs = Vec::new();
    for (role, g) in &bundle.generators {
        let dir = epoch_dir(run, role.generator_dir(), epoch);
        save_generator(g, &dir)?;
        dirs.push(dir);
    }
    for (role, d) in &bundle.discriminators {
        let dir = epoch_dir(run, role.discriminator_dir(), epoch);
        save_discriminator(d, bundle.options.disc_base_channels, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Highest `epoch_<n>` present for a role directory.
pub fn latest_epoch(run: &Path, role_dir: &str) -> Result<usize> {
    let dir = run.join(role_dir);
    let mut best = None;
    for entry in fs::read_dir(&dir).at(&dir)? {
        let entry = entry.at(&dir)?;
        if let Some(n) = entry
            .file_name()
            .to_str()
            .and_then(|s| s.strip_prefix("epoch_"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            best = best.max(Some(n));
        }
    }
    best.ok_or_else(|| Error::Checkpoint {
        path: dir,
        message: "no epoch_<n> directories".into(),
    })
}

pub fn load_bundle(run: &Path, epoch: Option<usize>) -> Result<ModelBundle> {
    let meta: BundleMeta = read_json(&run.join("bundle.json"))?;
    let roles: &[Role] = match meta.kind {
        ModelKind::Pix2pix => &[Role::Shared],
        ModelKind::Pairwise => &[Role::Left, Role::Right],
    };
    let mut generators = Vec::new();
    let mut discriminators = Vec::new();
    for &role in roles {
        let e = match epoch {
            Some(e) => e,
            None => latest_epoch(run, role.generator_dir())?,
        };
        generators.push((role, load_generator(&epoch_dir(run, role.generator_dir(), e))?));
        discriminators.push((role, load_discriminator(&epoch_dir(run, role.discriminator_dir(), e))?));
    }
    Ok(ModelBundle {
        kind: meta.kind,
        id: meta.id,
        spec: meta.spec,
        options: meta.options,
        generators,
        discriminators,
    })
}
