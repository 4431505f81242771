//! Flat dotted-key JSON config files, merged beneath command-line flags,
//! and the effective-config echo written into every run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use voxseg::error::{Error, Result};

/// A config file: one flat JSON object mapping dotted flag paths such as
/// "train.lr0" to scalars. Command-line flags always win over file values.
#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    map: BTreeMap<String, Value>,
}

impl FlatConfig {
    pub fn from_slice(bytes: &[u8]) -> Result<FlatConfig> {
        let root: Value = serde_json::from_slice(bytes)
            .map_err(|e| Error::InvalidArg(format!("config file is not valid JSON: {e}")))?;
        let Value::Object(entries) = root else {
            return Err(Error::InvalidArg("config root must be a JSON object".into()));
        };
        let mut map = BTreeMap::new();
        for (key, value) in entries {
            match value {
                Value::Object(_) | Value::Array(_) => {
                    return Err(Error::InvalidArg(format!(
                        "config key {key:?} must be a scalar; use flat dotted keys"
                    )));
                }
                Value::Null => {}
                scalar => {
                    map.insert(key, scalar);
                }
            }
        }
        Ok(FlatConfig { map })
    }

    pub fn load(path: &Path) -> Result<FlatConfig> {
        if !path.is_file() {
            return Err(Error::InvalidArg(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        Self::from_slice(&std::fs::read(path)?)
    }

    fn type_error(key: &str, want: &str, got: &Value) -> Error {
        Error::InvalidArg(format!("config key {key:?} expects {want}, got {got}"))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => match n.as_f64() {
                Some(v) => Ok(Some(v)),
                None => Err(Self::type_error(key, "a number", &Value::Number(n.clone()))),
            },
            Some(v) => Err(Self::type_error(key, "a number", v)),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => match n.as_u64() {
                Some(v) => Ok(Some(v as usize)),
                None => Err(Self::type_error(key, "a non-negative integer", &Value::Number(n.clone()))),
            },
            Some(v) => Err(Self::type_error(key, "a non-negative integer", v)),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        Ok(self.get_usize(key)?.map(|v| v as u64))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(v) => Err(Self::type_error(key, "a boolean", v)),
        }
    }

    pub fn get_str(&self, key: &str) -> Result<Option<String>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(Self::type_error(key, "a string", v)),
        }
    }
}

/// The fully materialized settings of one run, echoed as config.json so the
/// run can be replayed exactly.
#[derive(Clone, Debug, Default)]
pub struct EffectiveConfig {
    map: BTreeMap<String, Value>,
}

impl EffectiveConfig {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.map).expect("scalar map");
        text.push('\n');
        text
    }

    /// Write config.json into the run's output directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("config.json");
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

/// Global flags shared by every subcommand.
#[derive(clap::Args, Clone, Debug)]
pub struct GlobalOpts {
    /// RNG seed (config key "seed").
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Replayable mode: artifacts are byte-identical for a fixed seed and
    /// config (config key "deterministic").
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Upper bound on worker parallelism; this build executes serially
    /// (config key "threads").
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat dotted-key JSON config file; flags win over file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Resolved global settings plus the loaded config file.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: u64,
    pub deterministic: bool,
    pub threads: usize,
    pub file: FlatConfig,
}

impl Globals {
    pub fn resolve(opts: &GlobalOpts) -> Result<Globals> {
        let file = match &opts.config {
            Some(path) => FlatConfig::load(path)?,
            None => FlatConfig::default(),
        };
        let seed = match opts.seed {
            Some(s) => s,
            None => file.get_u64("seed")?.unwrap_or(0),
        };
        let deterministic = opts.deterministic || file.get_bool("deterministic")?.unwrap_or(false);
        let threads = match opts.threads {
            Some(t) => t,
            None => file.get_usize("threads")?.unwrap_or(1),
        };
        if threads == 0 {
            return Err(Error::InvalidArg("threads must be at least 1".into()));
        }
        Ok(Globals { seed, deterministic, threads, file })
    }

    /// Record the global settings in an effective-config echo.
    pub fn echo(&self, cfg: &mut EffectiveConfig) {
        cfg.set("seed", self.seed);
        cfg.set("deterministic", self.deterministic);
        cfg.set("threads", self.threads as u64);
    }
}

/// Flag value if given, else the config-file value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_reads_scalars_by_type() {
        let cfg = FlatConfig::from_slice(
            br#"{"train.lr0": 3e-4, "train.max_epochs": 10, "train.hss": "off",
                 "deterministic": true, "skip": null}"#,
        )
        .unwrap();
        assert_eq!(cfg.get_f64("train.lr0").unwrap(), Some(3e-4));
        assert_eq!(cfg.get_usize("train.max_epochs").unwrap(), Some(10));
        assert_eq!(cfg.get_str("train.hss").unwrap(), Some("off".into()));
        assert_eq!(cfg.get_bool("deterministic").unwrap(), Some(true));
        assert_eq!(cfg.get_f64("absent").unwrap(), None);
        assert_eq!(cfg.get_f64("skip").unwrap(), None);
    }

    #[test]
    fn nested_objects_are_rejected() {
        let err = FlatConfig::from_slice(br#"{"train": {"lr0": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("flat dotted keys"), "{err}");
        assert!(FlatConfig::from_slice(b"[1,2]").is_err());
        assert!(FlatConfig::from_slice(b"not json").is_err());
    }

    #[test]
    fn type_mismatches_name_the_key() {
        let cfg = FlatConfig::from_slice(br#"{"train.lr0": "fast"}"#).unwrap();
        let err = cfg.get_f64("train.lr0").unwrap_err();
        assert!(err.to_string().contains("train.lr0"), "{err}");
    }

    #[test]
    fn flags_win_over_file_values() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<i32>(None, None, 3), 3);
    }

    #[test]
    fn effective_config_echo_is_sorted_json() {
        let mut cfg = EffectiveConfig::default();
        cfg.set("b.key", 2u64);
        cfg.set("a.key", "x");
        let json = cfg.to_json();
        assert!(json.find("a.key").unwrap() < json.find("b.key").unwrap());
        let parsed = FlatConfig::from_slice(json.as_bytes()).unwrap();
        assert_eq!(parsed.get_str("a.key").unwrap(), Some("x".into()));
    }
}
