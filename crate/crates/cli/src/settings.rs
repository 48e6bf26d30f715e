//! Resolution of flag > config file > default, and the key=value echo.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Bad invocation: unknown key, malformed value, missing required setting.
#[derive(Debug)]
pub struct UsageError(pub String);

impl Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Settings being resolved for one command, recorded in resolution order.
pub struct Resolver {
    file: BTreeMap<String, String>,
    allowed: &'static [&'static str],
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &str, config: Option<&Path>, allowed: &'static [&'static str]) -> anyhow::Result<Self> {
        let file = match config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(c) = file.get("command") {
            if c != command {
                return Err(usage(format!("config is for '{c}', not '{command}'")));
            }
        }
        for key in file.keys() {
            if key != "command" && !allowed.contains(&key.as_str()) {
                return Err(usage(format!("unknown config key '{key}' for {command}")));
            }
        }
        Ok(Resolver { file, allowed, resolved: vec![("command".into(), command.into())] })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        debug_assert!(self.allowed.contains(&key), "{key} not declared");
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| usage(format!("config {key}={v}: {e}"))))
            .transpose()
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.push((key.to_string(), value));
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?.ok_or_else(|| usage(format!("missing required setting --{}", key.replace('_', "-"))))
    }

    pub fn echo(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
