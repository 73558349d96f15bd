//! Settings resolution: flags, then environment, then the config file, then
//! built-in defaults. clap handles the first two.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use claimchat_core::nlu::Language;
use serde::Deserialize;

pub const DEFAULT_CONFIG: &str = "claimchat.toml";

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub language: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
    pub claims_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub listen: Option<String>,
    pub reload_ms: Option<u64>,
}

impl FileConfig {
    /// An explicit path must exist; the default one is optional.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let (path, required) = match path {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from(DEFAULT_CONFIG), false),
        };
        let src = match std::fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(format!("{}: {e}", path.display())),
        };
        // toml errors span several lines
        toml::from_str(&src).map_err(|e: toml::de::Error| {
            format!("{}: {}", path.display(), e.message().replace('\n', " "))
        })
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub language: Option<Language>,
    pub data_dir: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
    pub claims_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub listen: Option<SocketAddr>,
    pub reload_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub language: Language,
    /// None means the built-in data files.
    pub data_dir: Option<PathBuf>,
    pub state_dir: PathBuf,
    pub claims_dir: PathBuf,
    pub seed: u64,
    pub listen: SocketAddr,
    pub reload: Duration,
}

impl Settings {
    pub fn resolve(cli: Overrides, file: FileConfig) -> Result<Self, String> {
        let language = match (cli.language, file.language) {
            (Some(l), _) => l,
            (None, Some(s)) => s.parse().map_err(|e| format!("config language: {e}"))?,
            (None, None) => Language::En,
        };
        let listen = match (cli.listen, file.listen) {
            (Some(a), _) => a,
            (None, Some(s)) => s.parse().map_err(|e| format!("config listen {s:?}: {e}"))?,
            (None, None) => SocketAddr::from(([127, 0, 0, 1], 8080)),
        };
        let reload_ms = cli.reload_ms.or(file.reload_ms).unwrap_or(1000);
        if reload_ms == 0 {
            return Err("reload interval must be positive".into());
        }
        Ok(Self {
            language,
            data_dir: cli.data_dir.or(file.data_dir),
            state_dir: cli.state_dir.or(file.state_dir).unwrap_or_else(|| ".claimchat/state".into()),
            claims_dir: cli.claims_dir.or(file.claims_dir).unwrap_or_else(|| ".claimchat/claims".into()),
            seed: cli.seed.or(file.seed).unwrap_or(7),
            listen,
            reload: Duration::from_millis(reload_ms),
        })
    }

    pub fn templates_path(&self) -> Option<PathBuf> {
        self.data_dir
            .as_ref()
            .map(|d| d.join(format!("templates_{}.toml", self.language)))
    }
}
