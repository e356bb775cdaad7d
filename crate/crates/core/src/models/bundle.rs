use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::discriminator::Discriminator;
use super::generator::Generator;
use super::spec::GeneratorSpec;
use crate::dataset::Pose;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::Init;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One generator shared by both side poses, one discriminator.
    Pix2pix,
    /// Independent left/right generators and discriminators.
    Pairwise,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pix2pix" => Ok(Self::Pix2pix),
            "pairwise" => Ok(Self::Pairwise),
            other => Err(Error::Invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pix2pix => "pix2pix",
            Self::Pairwise => "pairwise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Shared,
    Left,
    Right,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Shared => "shared",
            Role::Left => "left",
            Role::Right => "right",
        }
    }

    pub fn generator_dir(self) -> &'static str {
        match self {
            Role::Shared => "generator",
            Role::Left => "generator_left",
            Role::Right => "generator_right",
        }
    }

    pub fn discriminator_dir(self) -> &'static str {
        match self {
            Role::Shared => "discriminator",
            Role::Left => "discriminator_left",
            Role::Right => "discriminator_right",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Role::Shared => 1,
            Role::Left => 2,
            Role::Right => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub disc_base_channels: usize,
    #[serde(default)]
    pub init: Init,
    pub seed: u64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            disc_base_channels: 64,
            init: Init::Normal,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub id: String,
    pub spec: GeneratorSpec,
    pub options: AssembleOptions,
    pub generators: Vec<(Role, Generator)>,
    pub discriminators: Vec<(Role, Discriminator)>,
}

pub fn assemble(kind: ModelKind, spec: &GeneratorSpec, options: &AssembleOptions) -> Result<ModelBundle> {
    spec.validate()?;
    let roles: &[Role] = match kind {
        ModelKind::Pix2pix => &[Role::Shared],
        ModelKind::Pairwise => &[Role::Left, Role::Right],
    };
    let mut generators = Vec::new();
    let mut discriminators = Vec::new();
    for &role in roles {
        let mut g_rng = Init::rng(mix_seed(options.seed, role.tag() * 2));
        generators.push((role, Generator::new(spec, options.init, &mut g_rng)?));
        let mut d_rng = Init::rng(mix_seed(options.seed, role.tag() * 2 + 1));
        discriminators.push((
            role,
            Discriminator::new(spec.input_resolution, options.disc_base_channels, options.init, &mut d_rng)?,
        ));
    }
    Ok(ModelBundle {
        kind,
        id: format!("{kind}-d{}-r{}-s{}", spec.depth, spec.input_resolution, options.seed),
        spec: spec.clone(),
        options: options.clone(),
        generators,
        discriminators,
    })
}

impl ModelBundle {
    pub fn generator(&self, role: Role) -> Option<&Generator> {
        self.generators.iter().find(|(r, _)| *r == role).map(|(_, g)| g)
    }

    pub fn generator_mut(&mut self, role: Role) -> Option<&mut Generator> {
        self.generators.iter_mut().find(|(r, _)| *r == role).map(|(_, g)| g)
    }

    pub fn discriminator_mut(&mut self, role: Role) -> Option<&mut Discriminator> {
        self.discriminators
            .iter_mut()
            .find(|(r, _)| *r == role)
            .map(|(_, d)| d)
    }

    /// Generator responsible for a side pose.
    pub fn role_for_pose(&self, pose: Pose) -> Role {
        match (self.kind, pose) {
            (ModelKind::Pix2pix, _) => Role::Shared,
            (ModelKind::Pairwise, Pose::Right) => Role::Right,
            (ModelKind::Pairwise, _) => Role::Left,
        }
    }

    /// Generators that pose-less probes (noise, gray) are sent to.
    pub fn poseless_roles(&self) -> Vec<Role> {
        self.generators.iter().map(|(r, _)| *r).collect()
    }
}
