//! Flat `key=value` run configuration and the manifest written next to every
//! run's outputs.
//!
//! Blank lines and lines starting with `#` are ignored. Keys written by the
//! manifest for provenance only (`command`, `out`, `timestamp`) are accepted
//! and ignored, so a manifest can be fed back as a config to replay its run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub folds: usize,
    /// Domain name; resolved to an index once the data is loaded.
    pub uda_target: Option<String>,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: None,
            folds: 1,
            uda_target: None,
            threads: 1,
        }
    }
}

const PROVENANCE_KEYS: [&str; 3] = ["command", "out", "timestamp"];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "alpha" => t.hyper.alpha = parse_num(key, value)?,
            "gamma" => t.hyper.gamma = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "batch" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "ablation" => t.ablation = value.parse()?,
            "binarize" => t.binarize = parse_bool(key, value)?,
            "vocab_size" => t.arch.vocab_size = parse_num(key, value)?,
            "extractor_hidden" => {
                t.arch.extractor_hidden = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "shared_dim" => t.arch.shared_dim = parse_num(key, value)?,
            "domain_dim" => t.arch.domain_dim = parse_num(key, value)?,
            "c1_hidden" => t.arch.c1_hidden = parse_num(key, value)?,
            "c2_hidden" => t.arch.c2_hidden = parse_num(key, value)?,
            "disc_hidden" => t.arch.disc_hidden = parse_num(key, value)?,
            "init_gain" => t.arch.init_gain = parse_num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "folds" => self.folds = parse_num(key, value)?,
            "uda_target" => self.uda_target = (!value.is_empty()).then(|| value.to_string()),
            "threads" => self.threads = parse_num(key, value)?,
            k if PROVENANCE_KEYS.contains(&k) => {}
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(1..=5).contains(&self.folds) {
            return Err(Error::Config(format!(
                "folds must be in 1..=5, got {}",
                self.folds
            )));
        }
        if self.uda_target.is_some() && self.folds > 1 {
            return Err(Error::Config(
                "an adaptation target cannot be combined with folds > 1".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        if let Some(d) = &self.data {
            let _ = writeln!(out, "data={}", d.display());
        }
        let _ = writeln!(out, "{}", train_keys(t));
        let _ = writeln!(out, "folds={}", self.folds);
        if let Some(u) = &self.uda_target {
            let _ = writeln!(out, "uda_target={u}");
        }
        let _ = writeln!(out, "threads={}", self.threads);
        out
    }
}

fn train_keys(t: &TrainConfig) -> String {
    let a = &t.arch;
    format!(
        "seed={}\nalpha={}\ngamma={}\nlr={}\nbatch={}\nepochs={}\nablation={}\nbinarize={}\n\
         vocab_size={}\nextractor_hidden={}\nshared_dim={}\ndomain_dim={}\nc1_hidden={}\nc2_hidden={}\ndisc_hidden={}\ninit_gain={}",
        t.seed,
        t.hyper.alpha,
        t.hyper.gamma,
        t.lr,
        t.batch_size,
        t.epochs,
        t.ablation.as_str(),
        t.binarize,
        a.vocab_size,
        join(&a.extractor_hidden),
        a.shared_dim,
        a.domain_dim,
        a.c1_hidden,
        a.c2_hidden,
        a.disc_hidden,
        a.init_gain
    )
}

/// Stable 64-bit FNV-1a hash, in hex, of every training setting except the seed.
pub fn fingerprint(t: &TrainConfig) -> String {
    let text = train_keys(t);
    let body = text
        .lines()
        .filter(|l| !l.starts_with("seed="))
        .collect::<Vec<_>>()
        .join("\n");
    let body = match t.uda_target {
        Some(m) => format!("{body}\nuda_target={m}"),
        None => body,
    };
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in body.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Resolved configuration plus provenance, written as `run_manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub out: PathBuf,
    pub timestamp: u64,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path, config: RunConfig) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            timestamp,
            config,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "# dacl run manifest\ncommand={}\nout={}\ntimestamp={}\n{}",
            self.command,
            self.out.display(),
            self.timestamp,
            self.config.to_text()
        )
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("run_manifest.txt");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Ablation;

    #[test]
    fn defaults_match_stated_values() {
        let c = RunConfig::default();
        assert_eq!(c.train.hyper.alpha, 0.1);
        assert_eq!(c.train.hyper.gamma, 0.1);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.arch.shared_dim, 128);
        assert_eq!(c.train.arch.domain_dim, 64);
        assert_eq!(c.train.ablation, Ablation::None);
    }

    #[test]
    fn round_trip_through_manifest() {
        let mut c = RunConfig::default();
        c.set("alpha", "0.5").unwrap();
        c.set("extractor_hidden", "64, 32").unwrap();
        c.set("ablation", "no-c2").unwrap();
        c.set("data", "x/manifest.tsv").unwrap();
        let m = RunManifest::new("train", Path::new("out"), c.clone());
        let back = RunConfig::parse(&m.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("bogus=1").is_err());
        assert!(RunConfig::parse("alpha=abc").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn uda_with_folds_rejected() {
        let mut c = RunConfig::default();
        c.set("uda_target", "books").unwrap();
        c.set("folds", "5").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fingerprint_ignores_seed_only() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            seed: 9,
            ..a.clone()
        };
        assert_eq!(fingerprint(&a), fingerprint(&b));
        let mut c = a.clone();
        c.hyper.alpha = 1.0;
        assert_ne!(fingerprint(&a), fingerprint(&c));
        let d = TrainConfig {
            uda_target: Some(1),
            ..a.clone()
        };
        assert_ne!(fingerprint(&a), fingerprint(&d));
    }
}
