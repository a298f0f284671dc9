//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, unknown or repeated keys are
//! errors, and omitted keys take their defaults. The source text is kept so
//! logs and checkpoints can echo it unchanged.

use std::path::{Path, PathBuf};

use crate::dualnet::FusionMode;
use crate::error::{config_err, Error, Result};
use crate::traineval::TrainConfig;

pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "n",
    "d",
    "c",
    "base_channels",
    "image_size",
    "epochs",
    "batch",
    "lr",
    "train_count",
    "test_count",
    "x_fraction",
    "eval_every",
    "data_dir",
    "out_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Read samples from here instead of generating them.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Text the config was parsed from.
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            source: String::new(),
        }
    }
}

fn number<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| config_err!("`{key}` expects a number, got `{value}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            source: text.to_string(),
            ..Default::default()
        };
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| config_err!("line {}: expected `key = value`", lineno + 1))?;
            let key = KEYS
                .iter()
                .copied()
                .find(|&k| k == key)
                .ok_or_else(|| config_err!("line {}: unknown key `{key}`", lineno + 1))?;
            if seen.contains(&key) {
                return Err(config_err!("line {}: `{key}` given twice", lineno + 1));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "mode" => t.mode = value.parse()?,
            "seed" => t.seed = number(key, value)?,
            "n" => t.net.scales = number(key, value)?,
            "d" => t.net.d = number(key, value)?,
            "c" => t.net.c = number(key, value)?,
            "base_channels" => t.net.base_channels = number(key, value)?,
            "image_size" => t.net.image_size = number(key, value)?,
            "epochs" => t.epochs = number(key, value)?,
            "batch" => t.batch = number(key, value)?,
            "lr" => t.adam.lr = number(key, value)?,
            "train_count" => t.train_count = number(key, value)?,
            "test_count" => t.test_count = number(key, value)?,
            "x_fraction" => t.x_fraction = number(key, value)?,
            "eval_every" => t.eval_every = number(key, value)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn mode(&self) -> FusionMode {
        self.train.mode
    }

    /// Every key with its effective value, one per line.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut s = format!(
            "mode = {}\nseed = {}\nn = {}\nd = {}\nc = {}\nbase_channels = {}\nimage_size = {}\n\
             epochs = {}\nbatch = {}\nlr = {}\ntrain_count = {}\ntest_count = {}\n\
             x_fraction = {}\neval_every = {}\n",
            t.mode,
            t.seed,
            t.net.scales,
            t.net.d,
            t.net.c,
            t.net.base_channels,
            t.net.image_size,
            t.epochs,
            t.batch,
            t.adam.lr,
            t.train_count,
            t.test_count,
            t.x_fraction,
            t.eval_every,
        );
        if let Some(dir) = &self.data_dir {
            s.push_str(&format!("data_dir = {}\n", dir.display()));
        }
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s
    }
}
