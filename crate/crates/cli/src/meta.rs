//! `run.meta`: the resolved inputs of one command, enough to rerun it.
//!
//! ```text
//! command = train
//! version = 0.1.0
//! out = /abs/ckpt
//! ...
//!
//! [model]          (only for commands driven by a run config)
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rcdm_core::config::RunConfig;

use crate::CliError;

pub const FILE_NAME: &str = "run.meta";

#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub args: Vec<(String, String)>,
    pub config: Option<RunConfig>,
}

impl RunMeta {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            args: Vec::new(),
            config: None,
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.push((key.into(), value.to_string()));
        self
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        self.config = Some(cfg.clone());
        self
    }

    pub fn get(&self, key: &str) -> Result<&str, CliError> {
        self.args
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::Usage(format!("run.meta has no '{key}' entry")))
    }

    pub fn parse_arg<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| CliError::Usage(format!("run.meta: bad value '{v}' for '{key}'")))
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# rcdm run manifest\n");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        for (k, v) in &self.args {
            let _ = writeln!(s, "{k} = {v}");
        }
        if let Some(cfg) = &self.config {
            s.push('\n');
            s.push_str(&cfg.render());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let split = text.lines().position(|l| l.trim_start().starts_with('['));
        let lines: Vec<&str> = text.lines().collect();
        let (head, tail) = match split {
            Some(i) => (&lines[..i], Some(lines[i..].join("\n"))),
            None => (&lines[..], None),
        };
        let mut meta = RunMeta::new("");
        meta.version.clear();
        for line in head {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("run.meta: expected 'key = value', got '{line}'"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "command" => meta.command = v.into(),
                "version" => meta.version = v.into(),
                _ => meta.args.push((k.into(), v.into())),
            }
        }
        if meta.command.is_empty() {
            return Err(CliError::Usage("run.meta has no command".into()));
        }
        meta.config = tail.map(|t| RunConfig::parse(&t)).transpose()?;
        Ok(meta)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join(FILE_NAME), self.render())
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::preset("unit").unwrap();
        let m = RunMeta::new("train")
            .arg("out", "/tmp/x")
            .arg("data", "/a,/b")
            .with_config(&cfg);
        assert_eq!(RunMeta::parse(&m.render()).unwrap(), m);
        let plain = RunMeta::new("synth").arg("frames", 5);
        assert_eq!(RunMeta::parse(&plain.render()).unwrap(), plain);
        assert_eq!(plain.parse_arg::<usize>("frames").unwrap(), 5);
        assert!(plain.get("seed").is_err());
    }
}
