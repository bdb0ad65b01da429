use std::path::Path;

use hinge::evalbench::SyntheticSpec;
use hinge::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};

/// The TOML run configuration: a `[train]` and a `[synth]` section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let detail = e.message().to_string();
            let key = unknown_field(&detail).unwrap_or_else(|| "config".to_string());
            Error::Config { key, detail }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::Io { path, source: e })
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[train]\nfoo = 1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "foo"), "{err}");
        let err = RunConfig::parse("foo = 1\n").unwrap_err();
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::parse("[train]\nseed = 9\n[synth]\nnum_a = 12\n").unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.patience, TrainConfig::default().patience);
        assert_eq!(c.synth.num_a, 12);
    }
}
