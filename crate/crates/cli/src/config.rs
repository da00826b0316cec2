//! Flat key=value run configuration with override merging.
//!
//! A config file holds lines like `network.m=10`; `--override` flags use
//! the same syntax and win over the file. Every run writes the fully
//! resolved set back out through [`RunConfig::echo`], so an output
//! directory always names the exact inputs that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use uwmmse_core::channel::{FadingSpec, NetworkConfig, SpatialDist};
use uwmmse_core::train::{Optimizer, TrainConfig};
use uwmmse_core::unfolded::HyperParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("could not read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
}

/// Experiment knobs shared by the eval subcommands.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    /// Test-set size for compare and timing.
    pub samples: usize,
    /// Samples per point in the sweeps.
    pub sweep_samples: usize,
    /// Network sizes for the generalization sweep.
    pub sizes: Vec<usize>,
    /// Placement spreads for the spatial sweep.
    pub stddevs: Vec<f64>,
    /// Distortion rates for the robustness sweep.
    pub rates: Vec<f64>,
    /// Distortion perturbation stddev.
    pub sigma_r: f64,
    /// Histogram bin count for compare.
    pub bins: usize,
    /// Trial count for the equivariance check.
    pub trials: usize,
    /// Solver iteration counts scored in the convergence study.
    pub wmmse_iters: Vec<usize>,
    /// Weight-norm threshold for the F1 prediction.
    pub w_threshold: f64,
    /// Power threshold for the F1 truth; defaults to sqrt(pmax)/2.
    pub p_threshold: f64,
    /// Fading used at eval time; defaults to the network fading, override
    /// for cross-fading tests.
    pub fading: FadingSpec,
}

/// Everything a run needs, resolved from defaults, file, and overrides.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub fading: FadingSpec,
    pub spatial: SpatialDist,
    pub hyper: HyperParams,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults, then the file, then overrides in order, then the seed
    /// flag. Unknown keys and malformed values are errors.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &[String],
        seed_flag: Option<u64>,
    ) -> Result<RunConfig, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.display().to_string(),
                source,
            })?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                pairs.push(split_pair(line).ok_or_else(|| ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                })?);
            }
        }
        for (i, raw) in overrides.iter().enumerate() {
            pairs.push(split_pair(raw).ok_or_else(|| ConfigError::BadLine {
                line: i + 1,
                text: format!("--override {raw}"),
            })?);
        }

        let mut cfg = RunConfig::default();
        let mut p_threshold_set = false;
        let mut eval_fading_set = false;
        for (key, value) in &pairs {
            cfg.apply(key, value, &mut p_threshold_set, &mut eval_fading_set)?;
        }
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        if !p_threshold_set {
            cfg.eval.p_threshold = cfg.network.pmax.sqrt() / 2.0;
        }
        if !eval_fading_set {
            cfg.eval.fading = cfg.fading;
        }
        cfg.network.alpha = vec![1.0; cfg.network.m];
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        value: &str,
        p_threshold_set: &mut bool,
        eval_fading_set: &mut bool,
    ) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            key: key.to_string(),
            reason,
        };
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|e| bad(format!("{e} (got {value:?})")))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64),
            "network.m" => self.network.m = parse!(usize),
            "network.t" => self.network.t = parse!(usize),
            "network.r" => self.network.r = parse!(usize),
            "network.d" => self.network.d = parse!(usize),
            "network.sigma" => self.network.sigma = parse!(f64),
            "network.pmax" => self.network.pmax = parse!(f64),
            "network.fading" => self.fading = parse_fading(value).map_err(bad)?,
            "network.spatial" => self.spatial = parse_spatial(value).map_err(bad)?,
            "train.k_train" => self.train.k_train = parse!(usize),
            "train.k_infer" => self.train.k_infer = parse!(usize),
            "train.batch_size" => self.train.batch_size = parse!(usize),
            "train.max_steps" => self.train.max_steps = parse!(usize),
            "train.learning_rate" => self.train.learning_rate = parse!(f64),
            "train.optimizer" => self.train.optimizer = parse!(Optimizer),
            "train.eval_every" => self.train.eval_every = parse!(usize),
            "train.patience" => self.train.patience = parse!(usize),
            "train.val_size" => self.train.val_size = parse!(usize),
            "train.f" => self.hyper.f = parse!(usize),
            "train.g" => self.hyper.g = parse!(usize),
            "eval.samples" => self.eval.samples = parse!(usize),
            "eval.sweep_samples" => self.eval.sweep_samples = parse!(usize),
            "eval.sizes" => self.eval.sizes = parse_list(value).map_err(bad)?,
            "eval.stddevs" => self.eval.stddevs = parse_list(value).map_err(bad)?,
            "eval.rates" => self.eval.rates = parse_list(value).map_err(bad)?,
            "eval.sigma_r" => self.eval.sigma_r = parse!(f64),
            "eval.bins" => self.eval.bins = parse!(usize),
            "eval.trials" => self.eval.trials = parse!(usize),
            "eval.wmmse_iters" => self.eval.wmmse_iters = parse_list(value).map_err(bad)?,
            "eval.w_threshold" => self.eval.w_threshold = parse!(f64),
            "eval.p_threshold" => {
                self.eval.p_threshold = parse!(f64);
                *p_threshold_set = true;
            }
            "eval.fading" => {
                self.eval.fading = parse_fading(value).map_err(bad)?;
                *eval_fading_set = true;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// The resolved configuration in the same flat format it was read
    /// from, keys sorted, ready to be written next to the outputs.
    pub fn echo(&self) -> String {
        let mut map = BTreeMap::new();
        let n = &self.network;
        let t = &self.train;
        let e = &self.eval;
        map.insert("seed", self.seed.to_string());
        map.insert("network.m", n.m.to_string());
        map.insert("network.t", n.t.to_string());
        map.insert("network.r", n.r.to_string());
        map.insert("network.d", n.d.to_string());
        map.insert("network.sigma", n.sigma.to_string());
        map.insert("network.pmax", n.pmax.to_string());
        map.insert("network.fading", fading_string(self.fading));
        map.insert("network.spatial", spatial_string(self.spatial));
        map.insert("train.k_train", t.k_train.to_string());
        map.insert("train.k_infer", t.k_infer.to_string());
        map.insert("train.batch_size", t.batch_size.to_string());
        map.insert("train.max_steps", t.max_steps.to_string());
        map.insert("train.learning_rate", t.learning_rate.to_string());
        map.insert("train.optimizer", t.optimizer.to_string());
        map.insert("train.eval_every", t.eval_every.to_string());
        map.insert("train.patience", t.patience.to_string());
        map.insert("train.val_size", t.val_size.to_string());
        map.insert("train.f", self.hyper.f.to_string());
        map.insert("train.g", self.hyper.g.to_string());
        map.insert("eval.samples", e.samples.to_string());
        map.insert("eval.sweep_samples", e.sweep_samples.to_string());
        map.insert("eval.sizes", join_list(&e.sizes));
        map.insert("eval.stddevs", join_list(&e.stddevs));
        map.insert("eval.rates", join_list(&e.rates));
        map.insert("eval.sigma_r", e.sigma_r.to_string());
        map.insert("eval.bins", e.bins.to_string());
        map.insert("eval.trials", e.trials.to_string());
        map.insert("eval.wmmse_iters", join_list(&e.wmmse_iters));
        map.insert("eval.w_threshold", e.w_threshold.to_string());
        map.insert("eval.p_threshold", e.p_threshold.to_string());
        map.insert("eval.fading", fading_string(e.fading));
        let mut out = String::new();
        for (key, value) in map {
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let network = NetworkConfig::default();
        let p_threshold = network.pmax.sqrt() / 2.0;
        RunConfig {
            network,
            fading: FadingSpec::Rayleigh,
            spatial: SpatialDist::Uniform,
            hyper: HyperParams::default(),
            train: TrainConfig::default(),
            eval: EvalSettings {
                samples: 500,
                sweep_samples: 100,
                sizes: vec![10, 15, 20, 25],
                stddevs: vec![5.0, 10.0, 20.0, 40.0],
                rates: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                sigma_r: 0.001,
                bins: 30,
                trials: 100,
                wmmse_iters: vec![1, 2, 3, 50, 100],
                w_threshold: 1.0,
                p_threshold,
                fading: FadingSpec::Rayleigh,
            },
            seed: 0,
        }
    }
}

fn split_pair(text: &str) -> Option<(String, String)> {
    let (key, value) = text.split_once('=')?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() {
        return None;
    }
    Some((key.to_string(), value.to_string()))
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|e| format!("{e} (got {tok:?})"))
        })
        .collect()
}

fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// `rayleigh` or `rician:<k>`.
pub fn parse_fading(value: &str) -> Result<FadingSpec, String> {
    if value == "rayleigh" {
        return Ok(FadingSpec::Rayleigh);
    }
    if let Some(k) = value.strip_prefix("rician:") {
        let k: f64 = k
            .parse()
            .map_err(|e| format!("bad rician factor: {e} (got {k:?})"))?;
        return Ok(FadingSpec::Rician { k });
    }
    Err(format!(
        "unknown fading {value:?} (rayleigh, rician:<k>)"
    ))
}

fn fading_string(fading: FadingSpec) -> String {
    match fading {
        FadingSpec::Rayleigh => "rayleigh".to_string(),
        FadingSpec::Rician { k } => format!("rician:{k}"),
    }
}

/// `uniform` or `gaussian:<stddev>`.
pub fn parse_spatial(value: &str) -> Result<SpatialDist, String> {
    if value == "uniform" {
        return Ok(SpatialDist::Uniform);
    }
    if let Some(sd) = value.strip_prefix("gaussian:") {
        let stddev: f64 = sd
            .parse()
            .map_err(|e| format!("bad placement spread: {e} (got {sd:?})"))?;
        return Ok(SpatialDist::Gaussian { stddev });
    }
    Err(format!(
        "unknown placement {value:?} (uniform, gaussian:<stddev>)"
    ))
}

fn spatial_string(spatial: SpatialDist) -> String {
    match spatial {
        SpatialDist::Uniform => "uniform".to_string(),
        SpatialDist::Gaussian { stddev } => format!("gaussian:{stddev}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_file_then_overrides() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "# comment\n\nnetwork.m=6\ntrain.max_steps=10\nseed=3\n",
        )
        .expect("write");
        let cfg = RunConfig::resolve(
            Some(&path),
            &["train.max_steps=20".to_string()],
            Some(9),
        )
        .expect("resolve");
        assert_eq!(cfg.network.m, 6);
        assert_eq!(cfg.network.alpha.len(), 6);
        assert_eq!(cfg.train.max_steps, 20); // override beats file
        assert_eq!(cfg.seed, 9); // flag beats file
        assert_eq!(cfg.train.batch_size, 16); // untouched default
    }

    #[test]
    fn echo_round_trips_through_resolve() {
        let cfg = RunConfig::resolve(None, &["network.fading=rician:7".to_string()], None)
            .expect("resolve");
        let echo = cfg.echo();
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("echo.cfg");
        fs::write(&path, &echo).expect("write");
        let again = RunConfig::resolve(Some(&path), &[], None).expect("resolve echo");
        assert_eq!(again.echo(), echo);
        assert!(matches!(again.fading, FadingSpec::Rician { k } if k == 7.0));
        assert!(matches!(again.eval.fading, FadingSpec::Rician { k } if k == 7.0));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::resolve(None, &["network.q=1".to_string()], None),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::resolve(None, &["network.m=ten".to_string()], None),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::resolve(None, &["no-equals-sign".to_string()], None),
            Err(ConfigError::BadLine { .. })
        ));
        assert!(matches!(
            RunConfig::resolve(None, &["network.fading=nakagami".to_string()], None),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn threshold_default_tracks_power_budget() {
        let cfg = RunConfig::resolve(None, &["network.pmax=4".to_string()], None)
            .expect("resolve");
        assert_eq!(cfg.eval.p_threshold, 1.0);
        let cfg = RunConfig::resolve(
            None,
            &[
                "network.pmax=4".to_string(),
                "eval.p_threshold=0.125".to_string(),
            ],
            None,
        )
        .expect("resolve");
        assert_eq!(cfg.eval.p_threshold, 0.125);
    }

    #[test]
    fn lists_and_spatial_parse() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "eval.sizes=4,8".to_string(),
                "eval.rates=0,0.5".to_string(),
                "network.spatial=gaussian:25".to_string(),
            ],
            None,
        )
        .expect("resolve");
        assert_eq!(cfg.eval.sizes, vec![4, 8]);
        assert_eq!(cfg.eval.rates, vec![0.0, 0.5]);
        assert!(matches!(
            cfg.spatial,
            SpatialDist::Gaussian { stddev } if stddev == 25.0
        ));
    }
}
