//! Named profiles, kept in a TOML file in a per-user directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use provflow::caching::CachingConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROFILE: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub store: PathBuf,
    #[serde(default = "default_rest_port")]
    pub rest_port: u16,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub caching: CachingConfig,
}

fn default_rest_port() -> u16 {
    provflow_rest::DEFAULT_PORT
}

fn default_workers() -> usize {
    4
}

impl Profile {
    pub fn new(store: PathBuf) -> Self {
        Profile { store, rest_port: default_rest_port(), workers: default_workers(), caching: CachingConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub default_profile: Option<String>,
    #[serde(default)]
    pub profiles: BTreeMap<String, Profile>,
}

/// `$PROVFLOW_CONFIG_DIR`, else `~/.config/provflow`.
pub fn config_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("PROVFLOW_CONFIG_DIR") {
        return PathBuf::from(d);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    home.join(".config").join("provflow")
}

impl ConfigFile {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("config.toml")
    }

    pub fn load(dir: &Path) -> Result<ConfigFile, String> {
        let path = Self::path(dir);
        match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ConfigFile::default()),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let text = toml::to_string_pretty(self).map_err(|e| e.to_string())?;
        std::fs::write(Self::path(dir), text).map_err(|e| format!("{}: {e}", dir.display()))
    }

    /// The named profile, or the default one. The `default` profile is
    /// created on first use with its store inside the config directory.
    pub fn resolve(&mut self, dir: &Path, name: Option<&str>) -> Result<(String, Profile), String> {
        let name = name.map(str::to_string).or_else(|| self.default_profile.clone()).unwrap_or_else(|| DEFAULT_PROFILE.into());
        if let Some(p) = self.profiles.get(&name) {
            return Ok((name, p.clone()));
        }
        if name != DEFAULT_PROFILE {
            return Err(format!("no profile `{name}`; create it with `provflow profile setup {name} --store PATH`"));
        }
        let p = Profile::new(dir.join("profiles").join(DEFAULT_PROFILE));
        self.profiles.insert(name.clone(), p.clone());
        self.save(dir)?;
        Ok((name, p))
    }
}
