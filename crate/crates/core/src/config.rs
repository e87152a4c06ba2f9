//! Experiment configuration in flat `key = value` form.
//!
//! ```text
//! # comments run to end of line
//! code.generators = 7, 5
//! code.memory = 2
//! net.depth = 2
//! ```
//!
//! Keys are dotted, each may appear once, and unknown keys are rejected so
//! that typos surface instead of silently falling back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coding::CodeSpec;
use crate::error::ConfigError;
use crate::gridmap::{grid_spec_for, GridSpec};
use crate::losses::LossKind;
use crate::nn::UNetConfig;

type CResult<T> = std::result::Result<T, ConfigError>;

/// Parsed lines, in file order, awaiting consumption by key.
#[derive(Debug, Clone)]
pub struct Fields {
    entries: Vec<(String, String, usize)>,
}

impl Fields {
    pub fn parse(text: &str) -> CResult<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at_line(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(ConfigError::at_line(line_no, format!("invalid key `{key}`")));
            }
            if let Some((_, _, first)) = entries.iter().find(|(k, _, _)| k == key) {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: Some(key.to_string()),
                    message: format!("duplicate key (first set at line {first})"),
                });
            }
            entries.push((key.to_string(), value.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        let pos = self.entries.iter().position(|(k, _, _)| k == key)?;
        let (_, v, line) = self.entries.remove(pos);
        Some((v, line))
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> CResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, line)) => unquote(&v).parse::<T>().map(Some).map_err(|e| ConfigError {
                line: Some(line),
                key: Some(key.to_string()),
                message: format!("cannot parse `{v}`: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> CResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| ConfigError::missing(key))
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> CResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma list, optionally bracketed and quoted: `7,5` or `["7", "5"]`.
    pub fn take_list(&mut self, key: &str) -> CResult<Option<Vec<String>>> {
        Ok(self.take_raw(key).map(|(v, _)| split_list(&v)))
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> CResult<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, _, line)) => {
                Err(ConfigError { line: Some(line), key: Some(key), message: "unknown config key".into() })
            }
        }
    }
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn split_list(v: &str) -> Vec<String> {
    let v = v.trim();
    let inner = v.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(v);
    inner.split(',').map(|s| unquote(s).to_string()).filter(|s| !s.is_empty()).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub code: CodeSpec,
    pub block_length: usize,
    pub net: UNetConfig,
    pub loss: LossKind,
    pub batch_size: usize,
    pub num_samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk scale: 8x8 grids, batch 100, 20k samples, 30 epochs.
    pub fn desk(code: CodeSpec) -> Self {
        Self {
            code,
            block_length: 49,
            net: UNetConfig::new(2, 8),
            loss: LossKind::Bce,
            batch_size: 100,
            num_samples: 20_000,
            epochs: 30,
            lr: 1e-3,
            snr_min_db: 0.0,
            snr_max_db: 8.0,
            seed: 0,
        }
    }

    /// Batch 500, 150k samples, 500 epochs.
    pub fn full_scale(code: CodeSpec) -> Self {
        Self { batch_size: 500, num_samples: 150_000, epochs: 500, ..Self::desk(code) }
    }

    pub fn grid(&self) -> crate::Result<GridSpec> {
        grid_spec_for(self.block_length, self.code.memory() as usize, self.net.depth)
    }

    pub fn validate(&self) -> CResult<()> {
        let bad = |key: &str, msg: String| Err(ConfigError::for_key(key, msg));
        if self.block_length == 0 {
            return bad("block_length", "must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.num_samples {
            return bad("batch_size", format!("must be in 1..={} (num_samples)", self.num_samples));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", format!("must be a positive number, got {}", self.lr));
        }
        if !(self.snr_min_db.is_finite() && self.snr_max_db.is_finite() && self.snr_min_db <= self.snr_max_db) {
            return bad("snr_min_db", format!("need snr_min_db <= snr_max_db, got {} > {}", self.snr_min_db, self.snr_max_db));
        }
        if let Err(e) = self.net.validate() {
            return bad("net", e.to_string());
        }
        Ok(())
    }

    pub fn write_keys(&self, out: &mut String) {
        let [g0, g1] = self.code.octal();
        let _ = writeln!(out, "code.generators = {g0}, {g1}");
        let _ = writeln!(out, "code.memory = {}", self.code.memory());
        let _ = writeln!(out, "block_length = {}", self.block_length);
        let _ = writeln!(out, "net.depth = {}", self.net.depth);
        let _ = writeln!(out, "net.base_channels = {}", self.net.base_channels);
        let _ = writeln!(out, "loss = {}", self.loss);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "num_samples = {}", self.num_samples);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "snr_min_db = {}", self.snr_min_db);
        let _ = writeln!(out, "snr_max_db = {}", self.snr_max_db);
        let _ = writeln!(out, "seed = {}", self.seed);
    }

    /// Consumes the training keys. Code, block length, network shape and
    /// loss are required; the rest default to [`TrainConfig::desk`].
    pub fn from_fields(f: &mut Fields) -> CResult<Self> {
        let gens = f.take_list("code.generators")?.ok_or_else(|| ConfigError::missing("code.generators"))?;
        let memory: u32 = f.require("code.memory")?;
        let code = CodeSpec::from_octal(&gens, memory)
            .map_err(|e| ConfigError::for_key("code.generators", e.to_string()))?;
        let d = Self::desk(code);
        let cfg = Self {
            code,
            block_length: f.require("block_length")?,
            net: UNetConfig::new(f.require("net.depth")?, f.require("net.base_channels")?),
            loss: f.require("loss")?,
            batch_size: f.take_or("batch_size", d.batch_size)?,
            num_samples: f.take_or("num_samples", d.num_samples)?,
            epochs: f.take_or("epochs", d.epochs)?,
            lr: f.take_or("lr", d.lr)?,
            snr_min_db: f.take_or("snr_min_db", d.snr_min_db)?,
            snr_max_db: f.take_or("snr_max_db", d.snr_max_db)?,
            seed: f.take_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub snr_list_db: Vec<f64>,
    /// Lower bound on simulated bits per point; at least `10^4`.
    pub min_bits: u64,
    /// Keep simulating past `min_bits` until this many errors were seen...
    pub min_errors: u64,
    /// ...or this many bits were simulated.
    pub max_bits: u64,
}

pub const MIN_SWEEP_BITS: u64 = 10_000;

impl Default for SweepConfig {
    fn default() -> Self {
        Self { snr_list_db: vec![0.0, 2.0, 4.0, 6.0], min_bits: 100_000, min_errors: 100, max_bits: 2_000_000 }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> CResult<()> {
        if self.snr_list_db.is_empty() || self.snr_list_db.iter().any(|s| !s.is_finite()) {
            return Err(ConfigError::for_key("sweep.snr_list_db", "need at least one finite SNR"));
        }
        if self.min_bits < MIN_SWEEP_BITS {
            return Err(ConfigError::for_key("sweep.min_bits", format!("must be >= {MIN_SWEEP_BITS}")));
        }
        if self.max_bits < self.min_bits {
            return Err(ConfigError::for_key("sweep.max_bits", "must be >= sweep.min_bits"));
        }
        Ok(())
    }
}

/// Artifact locations, relative to the output directory unless absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub sweep_csv: PathBuf,
    pub sweep_svg: PathBuf,
    pub report: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            checkpoint: "model.ckpt".into(),
            train_log: "train_log.csv".into(),
            sweep_csv: "sweep.csv".into(),
            sweep_svg: "sweep.svg".into(),
            report: "report.txt".into(),
        }
    }
}

impl OutputPaths {
    pub fn resolve(&self, dir: &Path) -> Self {
        let j = |p: &PathBuf| dir.join(p);
        Self {
            checkpoint: j(&self.checkpoint),
            train_log: j(&self.train_log),
            sweep_csv: j(&self.sweep_csv),
            sweep_svg: j(&self.sweep_svg),
            report: j(&self.report),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CResult<Self> {
        let mut f = Fields::parse(text)?;
        let train = TrainConfig::from_fields(&mut f)?;
        let d = SweepConfig::default();
        let snr_list_db = match f.take_list("sweep.snr_list_db")? {
            None => d.snr_list_db,
            Some(items) => items
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ConfigError::for_key("sweep.snr_list_db", e.to_string()))?,
        };
        let sweep = SweepConfig {
            snr_list_db,
            min_bits: f.take_or("sweep.min_bits", d.min_bits)?,
            min_errors: f.take_or("sweep.min_errors", d.min_errors)?,
            max_bits: f.take_or("sweep.max_bits", d.max_bits)?,
        };
        sweep.validate()?;
        let o = OutputPaths::default();
        let output = OutputPaths {
            checkpoint: f.take_or("output.checkpoint", o.checkpoint)?,
            train_log: f.take_or("output.train_log", o.train_log)?,
            sweep_csv: f.take_or("output.sweep_csv", o.sweep_csv)?,
            sweep_svg: f.take_or("output.sweep_svg", o.sweep_svg)?,
            report: f.take_or("output.report", o.report)?,
        };
        f.finish()?;
        Ok(Self { train, sweep, output })
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.train.write_keys(&mut out);
        let s = &self.sweep;
        let _ = writeln!(out, "sweep.snr_list_db = {}", join(&s.snr_list_db));
        let _ = writeln!(out, "sweep.min_bits = {}", s.min_bits);
        let _ = writeln!(out, "sweep.min_errors = {}", s.min_errors);
        let _ = writeln!(out, "sweep.max_bits = {}", s.max_bits);
        let o = &self.output;
        for (k, p) in [
            ("checkpoint", &o.checkpoint),
            ("train_log", &o.train_log),
            ("sweep_csv", &o.sweep_csv),
            ("sweep_svg", &o.sweep_svg),
            ("report", &o.report),
        ] {
            let _ = writeln!(out, "output.{k} = {}", p.display());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "\
# toy run
code.generators = [\"7\", \"5\"]
code.memory = 2
block_length = 49
net.depth = 2
net.base_channels = 8
loss = bce   # trailing comment
epochs = 3
sweep.snr_list_db = 0, 2, 4
";

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(TOY).unwrap();
        assert_eq!(cfg.train.code.label(), "(7,5)");
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.sweep.snr_list_db, vec![0.0, 2.0, 4.0]);
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), cfg.to_text());
    }

    #[test]
    fn generator_list_forms() {
        for g in ["7,5", "7, 5", "[7,5]", "[\"7\",\"5\"]"] {
            let text = TOY.replace("[\"7\", \"5\"]", g);
            assert_eq!(ExperimentConfig::parse(&text).unwrap().train.code.generators(), [7, 5], "{g}");
        }
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let e = ExperimentConfig::parse(&format!("{TOY}net.dpeth = 3\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(10), Some("net.dpeth")));
        let e = ExperimentConfig::parse(&TOY.replace("code.memory = 2\n", "")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("code.memory"));
        assert!(e.to_string().contains("missing config key"));
        let e = ExperimentConfig::parse(&format!("{TOY}just words\n")).unwrap_err();
        assert_eq!(e.line, Some(10));
        let e = ExperimentConfig::parse(&format!("{TOY}epochs = 4\n")).unwrap_err();
        assert!(e.message.contains("duplicate"));
        let e = ExperimentConfig::parse(&TOY.replace("loss = bce", "loss = psnr")).unwrap_err();
        assert!(e.to_string().contains("use mse"), "{e}");
        let e = ExperimentConfig::parse(&TOY.replace("epochs = 3", "epochs = three")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(8), Some("epochs")));
    }

    #[test]
    fn validation() {
        let bad = format!("{TOY}batch_size = 50000\n");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().key.as_deref(), Some("batch_size"));
        let bad = format!("{TOY}snr_min_db = 9\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = format!("{TOY}sweep.min_bits = 100\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = TOY.replace("code.memory = 2", "code.memory = 1");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().key.as_deref(), Some("code.generators"));
    }

    #[test]
    fn presets() {
        let code = crate::coding::standard_code(2).unwrap();
        let p = TrainConfig::full_scale(code);
        assert_eq!((p.batch_size, p.num_samples, p.epochs, p.lr), (500, 150_000, 500, 1e-3));
        assert_eq!((p.snr_min_db, p.snr_max_db), (0.0, 8.0));
        let d = TrainConfig::desk(code);
        assert_eq!((d.batch_size, d.num_samples, d.epochs), (100, 20_000, 30));
        assert_eq!(d.grid().unwrap().side(), 8);
    }
}
