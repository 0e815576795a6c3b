//! Option resolution: command-line flags override a `key=value` config file, which
//! overrides built-in defaults. Every resolved value is recorded so that commands
//! can write the effective configuration next to their outputs.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const RESOLVED_CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {} is not key=value: `{raw}`", i + 1);
        };
        let key = key.trim();
        if key.is_empty() {
            bail!("config line {} has an empty key", i + 1);
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config file {}", p.display()))?;
                parse_config(&text).with_context(|| format!("parsing config file {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, resolved: BTreeMap::new() })
    }

    fn file_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.get(key) {
            Some(v) => v.parse().map(Some).map_err(|e| anyhow::anyhow!("config key `{key}`: cannot parse `{v}`: {e}")),
            None => Ok(None),
        }
    }

    /// Flag, then config file, then `default`.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`Settings::value`] without a default; absence is recorded as `none`.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        match &v {
            Some(x) => self.record(key, x),
            None => self.record(key, "none"),
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => {
                bail!("missing required option `{key}` (pass --{} or set it in the config file)", key.replace('_', "-"))
            }
        }
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let flag = flag.map(|p| p.display().to_string());
        Ok(PathBuf::from(self.required::<String>(key, flag)?))
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let flag = flag.map(|p| p.display().to_string());
        Ok(self.optional::<String>(key, flag)?.map(PathBuf::from))
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Drops `key` from the recorded configuration.
    pub fn forget(&mut self, key: &str) {
        self.resolved.remove(key);
    }

    pub fn resolved_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes the resolved configuration to `dir/config.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.resolved_text()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Comma-separated QP list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QpList(pub Vec<u8>);

impl Default for QpList {
    fn default() -> Self {
        Self(vec![22, 27, 32, 37])
    }
}

impl FromStr for QpList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let qps = s
            .split(',')
            .map(|p| p.trim().parse::<u8>().map_err(|e| format!("bad qp `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if qps.is_empty() {
            return Err("empty qp list".into());
        }
        Ok(Self(qps))
    }
}

impl Display for QpList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u8::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

pub fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("input directory {} does not exist", path.display());
    }
    Ok(())
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

pub fn prepare_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let map = parse_config("# comment\nqp = 32\n\nmodel=deep blocks=2 1-in # trailing\n").unwrap();
        assert_eq!(map["qp"], "32");
        assert_eq!(map["model"], "deep blocks=2 1-in");
        assert!(parse_config("novalue\n").is_err());
        assert!(parse_config("=3\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut s = Settings { file: parse_config("epochs=5\nlr=0.01\n").unwrap(), resolved: BTreeMap::new() };
        assert_eq!(s.value("epochs", Some(7usize), 1).unwrap(), 7);
        assert_eq!(s.value("lr", None, 0.5f32).unwrap(), 0.01);
        assert_eq!(s.value("batch", None, 16usize).unwrap(), 16);
        assert_eq!(s.optional::<u64>("seed", None).unwrap(), None);
        assert!(s.required::<String>("input", None).is_err());
        assert_eq!(s.resolved_text(), "batch=16\nepochs=7\ninput=none\nlr=0.01\nseed=none\n");
    }

    #[test]
    fn bad_file_value() {
        let mut s = Settings { file: parse_config("epochs=many\n").unwrap(), resolved: BTreeMap::new() };
        assert!(s.value("epochs", None, 1usize).is_err());
    }

    #[test]
    fn qp_lists() {
        assert_eq!("22, 37".parse::<QpList>().unwrap().0, vec![22, 37]);
        assert!("22,x".parse::<QpList>().is_err());
        assert_eq!(QpList::default().to_string(), "22,27,32,37");
    }
}
