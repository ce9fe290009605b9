//! Layered TOML configuration with named profiles.
//!
//! A config file holds a `[profiles.<name>]` table per profile. Each profile
//! may name a parent with `inherits`; tables merge key by key, children win.
//! The built-in profiles are always available and user files may extend or
//! override them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::adversarial::DiscConfig;
use crate::dataset::{PoseMode, Resolution};
use crate::error::{Error, Result};
use crate::geometry::WarpNetConfig;
use crate::nn::AdamConfig;
use crate::parsing::ParseNetConfig;
use crate::synthesis::TryOnConfig;

pub const BUILTIN_PROFILES: &str = r#"
[profiles.base]
seed = 0
pose = "keypoints"
resolution = { height = 256, width = 192 }
warp = { width = 64, regressor_width = 512, depth = 4, hd_extra_downsample = false, normalize_correlation = true }
parse = { width = 64, hd_extra_block = false }
tryon = { width = 64, hd_extra_block = false }
disc = { width = 64 }

[profiles.base.schedule]
warp_iters = 100000
parse_iters = 50000
tryon_iters = 150000
batch = 32
lr = 1e-4
beta1 = 0.9
beta2 = 0.999
lambda_const = 0.01
lambda_adv = 0.1
log_every = 100

[profiles.hd512]
inherits = "base"
resolution = { height = 512, width = 384 }
warp = { hd_extra_downsample = true }
parse = { hd_extra_block = true }
tryon = { hd_extra_block = true }
schedule = { batch = 16 }

[profiles.hd1024]
inherits = "hd512"
resolution = { height = 1024, width = 768 }

[profiles.desk]
inherits = "base"
resolution = { height = 64, width = 48 }
warp = { width = 8, regressor_width = 128, depth = 2 }
parse = { width = 8 }
tryon = { width = 16 }
disc = { width = 8 }

[profiles.desk.schedule]
warp_iters = 500
parse_iters = 500
tryon_iters = 500
batch = 4
lr = 2e-3
log_every = 50
"#;

const MAX_INHERIT_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub warp_iters: u64,
    pub parse_iters: u64,
    pub tryon_iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_const: f64,
    pub lambda_adv: f64,
    pub log_every: u64,
}

impl TrainSchedule {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

/// A fully resolved profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub profile: String,
    pub seed: u64,
    pub pose: PoseMode,
    pub resolution: Resolution,
    pub warp: WarpNetConfig,
    pub parse: ParseNetConfig,
    pub tryon: TryOnConfig,
    pub disc: DiscConfig,
    pub schedule: TrainSchedule,
}

/// Recursively merges `over` into `base`; tables merge, everything else is replaced.
pub fn deep_merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => deep_merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn profiles_of(doc: &Table, origin: &str) -> Result<Table> {
    match doc.get("profiles") {
        None => Ok(Table::new()),
        Some(Value::Table(t)) => Ok(t.clone()),
        Some(_) => Err(Error::Config(format!("{origin}: `profiles` must be a table"))),
    }
}

/// Profile tables from the built-ins overlaid with `user` (a TOML document).
pub fn profile_tables(user: Option<&str>) -> Result<Table> {
    let mut profiles = profiles_of(&parse_table(BUILTIN_PROFILES, "built-in profiles")?, "built-in profiles")?;
    if let Some(text) = user {
        let doc = parse_table(text, "config file")?;
        if let Some(k) = doc.keys().find(|k| *k != "profiles" && *k != "profile") {
            return Err(Error::Config(format!("config file: unknown top-level key `{k}`")));
        }
        deep_merge(&mut profiles, &profiles_of(&doc, "config file")?);
    }
    Ok(profiles)
}

/// Name of the default profile requested by a user document, if any.
pub fn default_profile(user: &str) -> Result<Option<String>> {
    let doc = parse_table(user, "config file")?;
    match doc.get("profile") {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::Config("`profile` must be a string".into())),
    }
}

fn flatten(profiles: &Table, name: &str) -> Result<Table> {
    let mut chain = Vec::new();
    let mut cur = name.to_string();
    loop {
        if chain.contains(&cur) {
            chain.push(cur);
            return Err(Error::Config(format!("profile inheritance cycle: {}", chain.join(" -> "))));
        }
        if chain.len() >= MAX_INHERIT_DEPTH {
            return Err(Error::Config(format!("profile `{name}` inherits too deeply")));
        }
        let table = match profiles.get(&cur) {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(Error::Config(format!("profile `{cur}` must be a table"))),
            None => return Err(Error::Config(format!("unknown profile `{cur}`"))),
        };
        chain.push(cur.clone());
        match table.get("inherits") {
            None => break,
            Some(Value::String(parent)) => cur = parent.clone(),
            Some(_) => return Err(Error::Config(format!("profile `{cur}`: `inherits` must be a string"))),
        }
    }
    let mut merged = Table::new();
    for n in chain.iter().rev() {
        if let Some(Value::Table(t)) = profiles.get(n) {
            deep_merge(&mut merged, t);
        }
    }
    merged.remove("inherits");
    Ok(merged)
}

impl Config {
    /// Resolves `profile` against the built-ins plus an optional user document.
    pub fn resolve(user: Option<&str>, profile: &str) -> Result<Config> {
        let profiles = profile_tables(user)?;
        let mut table = flatten(&profiles, profile)?;
        table.insert("profile".into(), Value::String(profile.to_string()));
        let mut cfg: Config =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(format!("profile `{profile}`: {e}")))?;
        cfg.sync_channels();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin(profile: &str) -> Result<Config> {
        Self::resolve(None, profile)
    }

    /// Reads `path`; the profile defaults to the file's `profile` key, then `base`.
    pub fn from_file(path: &Path, profile: Option<&str>) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = match profile {
            Some(p) => p.to_string(),
            None => default_profile(&text)?.unwrap_or_else(|| "base".into()),
        };
        Self::resolve(Some(&text), &name)
    }

    /// Pose-dependent channel counts follow `pose`.
    fn sync_channels(&mut self) {
        let p = self.pose.channels();
        self.parse.pose_channels = p;
        self.tryon.pose_channels = p;
        self.warp.person_channels = p + 3;
    }

    /// Whether the resolution calls for the HD architecture variants.
    pub fn is_hd(&self) -> bool {
        self.resolution.height > Resolution::BASE.height
    }

    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        let r = self.resolution;
        let levels = self.parse.levels().max(self.tryon.levels());
        let f = 1usize << levels;
        if r.height % f != 0 || r.width % f != 0 {
            return Err(Error::Config(format!("resolution {r} must be divisible by {f} for {levels} U-Net levels")));
        }
        let flags = [self.warp.hd_extra_downsample, self.parse.hd_extra_block, self.tryon.hd_extra_block];
        if flags.iter().any(|&f| f != self.is_hd()) {
            return Err(Error::Config(format!(
                "resolution {r} needs hd flags all {} (warp.hd_extra_downsample={}, parse.hd_extra_block={}, tryon.hd_extra_block={})",
                self.is_hd(),
                flags[0],
                flags[1],
                flags[2]
            )));
        }
        let widths = [self.warp.width, self.warp.regressor_width, self.parse.width, self.tryon.width, self.disc.width];
        if widths.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(1..=6).contains(&self.warp.depth) {
            return Err(Error::Config("warp.depth must be between 1 and 6".into()));
        }
        if self.warp.regressor_width < 8 {
            return Err(Error::Config("warp.regressor_width must be at least 8".into()));
        }
        let s = &self.schedule;
        if s.batch == 0 || s.log_every == 0 {
            return Err(Error::Config("schedule.batch and schedule.log_every must be positive".into()));
        }
        if !(s.lr > 0.0) || !(0.0..1.0).contains(&s.beta1) || !(0.0..1.0).contains(&s.beta2) {
            return Err(Error::Config("schedule needs lr > 0 and betas in [0, 1)".into()));
        }
        if s.lambda_const < 0.0 || s.lambda_adv < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
