//! Per-run state: configuration lookup, input hashing, artifact writing and
//! the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Keys that do not influence results and stay out of the config hash.
const UNHASHED: [&str; 2] = ["threads", "output_dir"];

/// Flat `key = value` settings from a config file.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut values);
        Ok(Settings {
            values,
            source: Some(path.to_path_buf()),
        })
    }

    /// Value for `key`, looked up as given, then with dashes as underscores.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .or_else(|| self.values.get(&key.replace('-', "_")))
            .map(String::as_str)
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        toml::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        toml::Value::Array(items) => {
            let joined: Vec<String> = items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            out.insert(prefix.to_string(), joined.join(","));
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct InputRecord {
    role: String,
    path: PathBuf,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn hash_path(path: &Path) -> Result<(u64, String), CliError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::Io(path.to_path_buf(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut hasher = Sha256::new();
        let mut total = 0;
        for p in entries {
            let bytes = fs::read(&p).map_err(|e| CliError::Io(p.clone(), e))?;
            total += bytes.len() as u64;
            hasher.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            hasher.update([0]);
            hasher.update(Sha256::digest(&bytes));
        }
        return Ok((total, format!("{:x}", hasher.finalize())));
    }
    let bytes = fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    Ok((bytes.len() as u64, sha256_hex(&bytes)))
}

/// One subcommand invocation writing to `<output>/artifacts/<subcommand>/`.
pub struct Run {
    subcommand: &'static str,
    dir: PathBuf,
    settings: Settings,
    params: BTreeMap<String, Value>,
    inputs: Vec<InputRecord>,
    outputs: Vec<OutputRecord>,
    config_hash: Option<String>,
    pub seed: u64,
}

impl Run {
    pub fn new(subcommand: &'static str, output_dir: &Path, settings: Settings, seed: u64) -> Result<Self, CliError> {
        let dir = output_dir.join("artifacts").join(subcommand);
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
        let mut params = BTreeMap::new();
        params.insert("seed".to_string(), json!(seed));
        Ok(Run {
            subcommand,
            dir,
            settings,
            params,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_hash: None,
            seed,
        })
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        debug_assert!(self.config_hash.is_none(), "parameter {key} resolved after the first artifact");
        self.params.insert(key.replace('-', "_"), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Config value for `key`, preferring a `[<subcommand>]` table entry.
    fn setting(&self, key: &str) -> Option<&str> {
        self.settings
            .get(&format!("{}.{key}", self.subcommand))
            .or_else(|| self.settings.get(key))
    }

    fn from_settings<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.setting(key) {
            None => Ok(None),
            Some(raw) => raw
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        }
    }

    /// Flag, else config file, else `default`.
    pub fn param<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.from_settings(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn opt_param<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_settings(key)?,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// A string parameter restricted to `choices`.
    pub fn choice(&mut self, key: &str, flag: Option<String>, default: &str, choices: &[&str]) -> Result<String, CliError> {
        let v = self.param(key, flag, default.to_string())?;
        if choices.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(CliError::Usage(format!("{key}: expected one of {choices:?}, got {v:?}")))
        }
    }

    /// Optional input path from flag or config; must exist. Its content hash
    /// enters the manifest and the config hash.
    pub fn input(&mut self, role: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let path = match flag {
            Some(p) => Some(p),
            None => self.setting(role).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(None);
        };
        if !path.exists() {
            return Err(CliError::Io(
                path.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
        let (bytes, sha256) = hash_path(&path)?;
        self.inputs.push(InputRecord {
            role: role.replace('-', "_"),
            path: path.clone(),
            bytes,
            sha256,
        });
        Ok(Some(path))
    }

    pub fn require_input(&mut self, role: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.input(role, flag)?
            .ok_or_else(|| CliError::Usage(format!("{}: missing required input --{role}", self.subcommand)))
    }

    /// SHA-256 over the subcommand, resolved parameters and input contents.
    pub fn config_hash(&mut self) -> String {
        if let Some(h) = &self.config_hash {
            return h.clone();
        }
        let params: BTreeMap<&String, &Value> = self
            .params
            .iter()
            .filter(|(k, _)| !UNHASHED.contains(&k.as_str()))
            .collect();
        let inputs: Vec<(&str, &str)> = self.inputs.iter().map(|i| (i.role.as_str(), i.sha256.as_str())).collect();
        let canonical = json!({
            "subcommand": self.subcommand,
            "params": params,
            "inputs": inputs,
        });
        let h = sha256_hex(canonical.to_string().as_bytes());
        self.config_hash = Some(h.clone());
        h
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.config_hash();
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(path.clone(), e))?;
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Runs a CSV writer into memory and stores the result as `name`.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> fabrictext::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// JSON artifact `{config_hash, seed, version, data}`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<(), CliError> {
        let value = json!({
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "data": data,
        });
        let mut text = serde_json::to_string_pretty(&value).expect("artifact serializes");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest.json`; the timestamp appears only here.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let config_hash = self.config_hash();
        let generated = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config_hash": config_hash,
            "config_file": self.settings.source,
            "params": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "generated_unix": generated,
        });
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
        Ok(self.dir)
    }
}
