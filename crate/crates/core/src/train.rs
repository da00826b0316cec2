//! Gradient-descent fitting of the unrolled network.
//!
//! [`train`] runs minibatch first-order updates on the negated batch sum
//! rate, scores a held-out validation set between bursts of steps, and
//! returns the parameters with the best validation score. Checkpoints
//! round-trip through a line-oriented text format with an integrity hash.

use std::path::Path;
use std::{fmt, fs};

use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autodiff::{record_forward, AutodiffError, GradientSet};
use crate::channel::{ChannelSampler, CsiTensor, NetworkConfig};
use crate::linalg::CMatrix;
use crate::seed;
use crate::unfolded::{forward, HyperParams, ModelParams, SumRateLoss};
use crate::wmmse::{self, WmmseError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("validation scoring failed: {0}")]
    Validation(#[from] WmmseError),
    #[error("step {step}: every sample in the batch hit a singular solve")]
    AllSamplesDropped { step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("unsupported checkpoint version line {found:?}")]
    Version { found: String },
    #[error("checkpoint hash does not match its payload")]
    Checksum,
    #[error("checkpoint block {block} is {found_rows}x{found_cols}, expected {want_rows}x{want_cols}")]
    Shape {
        block: String,
        want_rows: usize,
        want_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
}

/// First-order update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Per-component moments over the stacked real and imaginary parts:
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias-corrected.
    #[default]
    Adam,
    /// Block-wise variant: one second-moment scalar per parameter block,
    /// beta1 = 0.95, beta2 = 0.98, no bias correction. The block moment
    /// starts at the first gradient's squared norm.
    NovoGrad,
}

/// Knobs for one run. Defaults are the desk-scale setup: batches of 16
/// for at most 2000 steps, validating every 100.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Unrolled depth used for both the loss and the validation score.
    pub k_train: usize,
    /// Depth the trained model is meant to run at. Recorded in
    /// checkpoints; the loop itself never uses it.
    pub k_infer: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Steps between validation passes.
    pub eval_every: usize,
    /// Consecutive non-improving validation passes before stopping.
    pub patience: usize,
    /// Held-out samples, drawn once before the first step.
    pub val_size: usize,
    /// Drives parameter init. Channel draws come from the sampler's seed.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_train: 1,
            k_infer: 3,
            batch_size: 16,
            max_steps: 2000,
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            eval_every: 100,
            patience: 10,
            val_size: 128,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.into()));
        if self.k_train == 0 || self.k_infer == 0 {
            return bad("depths must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.val_size == 0 {
            return bad("validation set must be nonempty");
        }
        Ok(())
    }
}

/// Per-step and per-evaluation records of one run.
#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    /// Mean batch loss after each completed step; entry s is step s + 1.
    pub train_loss: Vec<f64>,
    /// (step, validation mean sum rate), starting with the untouched
    /// parameters at step 0.
    pub validations: Vec<(usize, f64)>,
    /// Step whose parameters the run returned.
    pub best_step: usize,
    /// True when a non-finite loss, gradient, or update halted the run.
    pub diverged: bool,
}

impl TrainHistory {
    /// Validation score of the returned parameters.
    pub fn best_validation(&self) -> Option<f64> {
        self.validations
            .iter()
            .find(|(s, _)| *s == self.best_step)
            .map(|(_, v)| *v)
    }
}

/// Best-scoring parameters plus the full run record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Fits the parameter blocks by stochastic gradient steps on the negated
/// batch mean sum rate at depth `k_train`.
///
/// Channel draws come from `sampler` by index: the validation set holds
/// indices `0..val_size` and step s consumes `batch_size` indices starting
/// at `val_size + (s-1)*batch_size`, so a rerun with the same sampler and
/// config sees identical data. A sample whose forward pass hits a singular
/// solve is dropped from its batch with a warning; a batch losing every
/// sample is an error. A non-finite loss, gradient, or parameter halts the
/// run, which then reports `diverged` and still returns the best
/// parameters seen. The returned parameters are the ones with the highest
/// validation mean sum rate, which the initial draw can win.
pub fn train(
    sampler: &ChannelSampler,
    hyper: HyperParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let network = &sampler.config;
    network
        .validate()
        .map_err(|e| TrainError::BadConfig(e.to_string()))?;

    let init = ModelParams::init(network, hyper, seed::derive(config.rng_seed, "init"));
    let val_set = sampler.sample_many(0, config.val_size);

    let mut history = TrainHistory::default();
    let baseline = validation_score(&val_set, &init, network, config.k_train)?;
    history.validations.push((0, baseline));
    let mut best = init.clone();
    let mut best_val = baseline;
    let mut stale_evals = 0usize;

    let mut blocks = init.to_blocks();
    let mut opt = OptState::new(config.optimizer, &blocks);

    for step in 1..=config.max_steps {
        let start = config.val_size as u64 + (step as u64 - 1) * config.batch_size as u64;
        let batch = sampler.sample_many(start, config.batch_size);
        let per_sample: Vec<Result<Option<(f64, GradientSet)>, TrainError>> = batch
            .par_iter()
            .map(|csi| sample_loss_grad(csi, &blocks, network, hyper, config.k_train))
            .collect();

        let mut kept = 0usize;
        let mut loss_sum = 0.0;
        let mut grad: Option<GradientSet> = None;
        for (b, result) in per_sample.into_iter().enumerate() {
            match result? {
                Some((loss, g)) => {
                    kept += 1;
                    loss_sum += loss;
                    match &mut grad {
                        None => grad = Some(g),
                        Some(acc) => acc.add_assign(&g),
                    }
                }
                None => log::warn!(
                    "step {step}: dropped sample {} (singular solve)",
                    start + b as u64
                ),
            }
        }
        let Some(mut grad) = grad else {
            return Err(TrainError::AllSamplesDropped { step });
        };
        let mean_loss = loss_sum / kept as f64;
        grad.scale_assign(1.0 / kept as f64);

        history.train_loss.push(mean_loss);
        if !mean_loss.is_finite() || !grad.is_finite() {
            history.diverged = true;
            break;
        }
        opt.apply(config.learning_rate, &grad, &mut blocks);
        if blocks.iter().any(|b| !b.is_finite()) {
            history.diverged = true;
            break;
        }

        if step % config.eval_every == 0 {
            let current = ModelParams::from_blocks(hyper, &blocks)?;
            let val = validation_score(&val_set, &current, network, config.k_train)?;
            history.validations.push((step, val));
            if val > best_val {
                best_val = val;
                best = current;
                history.best_step = step;
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals >= config.patience {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        history,
    })
}

/// Loss and parameter gradient for one sample, or `None` when a singular
/// solve makes the sample unusable.
fn sample_loss_grad(
    csi: &CsiTensor,
    blocks: &[CMatrix],
    network: &NetworkConfig,
    hyper: HyperParams,
    layers: usize,
) -> Result<Option<(f64, GradientSet)>, TrainError> {
    let program = SumRateLoss {
        csi,
        config: network,
        hyper,
        layers,
    };
    let (tape, out) = match record_forward(&program, &[], blocks) {
        Ok(rec) => rec,
        Err(e) if e.is_singularity() => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let loss = tape.value(out).as_scalar().re;
    let grad = tape.backward(out, 1.0)?;
    Ok(Some((loss, grad)))
}

/// Mean sum rate of `params` at depth `layers` over a fixed sample set.
/// Samples whose forward pass hits a singular solve are skipped with a
/// warning; losing every sample is an error.
fn validation_score(
    samples: &[CsiTensor],
    params: &ModelParams,
    network: &NetworkConfig,
    layers: usize,
) -> Result<f64, TrainError> {
    let rates: Vec<Result<Option<f64>, TrainError>> = samples
        .par_iter()
        .map(|csi| match forward(csi, params, network, layers) {
            Ok((v, _)) => Ok(Some(wmmse::sum_rate(
                csi,
                &v,
                network.sigma,
                &network.alpha,
            )?)),
            Err(e) if e.is_singularity() => Ok(None),
            Err(e) => Err(TrainError::Autodiff(e)),
        })
        .collect();
    let mut total = 0.0;
    let mut kept = 0usize;
    for (i, rate) in rates.into_iter().enumerate() {
        match rate? {
            Some(r) => {
                total += r;
                kept += 1;
            }
            None => log::warn!("validation: dropped sample {i} (singular solve)"),
        }
    }
    if kept == 0 {
        return Err(TrainError::BadConfig(
            "every validation sample hit a singular solve".into(),
        ));
    }
    Ok(total / kept as f64)
}

/// Moment buffers for the chosen update rule.
enum OptState {
    Adam {
        m: Vec<CMatrix>,
        v: Vec<CMatrix>,
        t: i32,
    },
    NovoGrad {
        m: Vec<CMatrix>,
        v: Vec<f64>,
    },
}

impl OptState {
    fn new(rule: Optimizer, template: &[CMatrix]) -> OptState {
        let zeros: Vec<CMatrix> = template
            .iter()
            .map(|b| CMatrix::zeros(b.rows(), b.cols()))
            .collect();
        match rule {
            Optimizer::Adam => OptState::Adam {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
            Optimizer::NovoGrad => OptState::NovoGrad {
                m: zeros,
                v: Vec::new(),
            },
        }
    }

    /// One descent step in place. Real and imaginary parts move
    /// independently; a gradient entry stores dL/dRe + i dL/dIm.
    fn apply(&mut self, lr: f64, grad: &GradientSet, blocks: &mut [CMatrix]) {
        match self {
            OptState::Adam { m, v, t } => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                *t += 1;
                let mc = 1.0 - b1.powi(*t);
                let vc = 1.0 - b2.powi(*t);
                for (k, g) in grad.blocks().iter().enumerate() {
                    let mk = m[k].data_mut();
                    let vk = v[k].data_mut();
                    let pk = blocks[k].data_mut();
                    for i in 0..g.data().len() {
                        let gz = g.data()[i];
                        mk[i].re = b1 * mk[i].re + (1.0 - b1) * gz.re;
                        mk[i].im = b1 * mk[i].im + (1.0 - b1) * gz.im;
                        vk[i].re = b2 * vk[i].re + (1.0 - b2) * gz.re * gz.re;
                        vk[i].im = b2 * vk[i].im + (1.0 - b2) * gz.im * gz.im;
                        pk[i].re -= lr * (mk[i].re / mc) / ((vk[i].re / vc).sqrt() + eps);
                        pk[i].im -= lr * (mk[i].im / mc) / ((vk[i].im / vc).sqrt() + eps);
                    }
                }
            }
            OptState::NovoGrad { m, v } => {
                let (b1, b2, eps) = (0.95, 0.98, 1e-8);
                let first = v.is_empty();
                for (k, g) in grad.blocks().iter().enumerate() {
                    let norm_sqr = g.frob_norm_sqr();
                    if first {
                        v.push(norm_sqr);
                    } else {
                        v[k] = b2 * v[k] + (1.0 - b2) * norm_sqr;
                    }
                    let scale = 1.0 / (v[k].sqrt() + eps);
                    let mk = m[k].data_mut();
                    let pk = blocks[k].data_mut();
                    for i in 0..g.data().len() {
                        let gz = g.data()[i];
                        mk[i].re = b1 * mk[i].re + scale * gz.re;
                        mk[i].im = b1 * mk[i].im + scale * gz.im;
                        pk[i].re -= lr * mk[i].re;
                        pk[i].im -= lr * mk[i].im;
                    }
                }
            }
        }
    }
}

/// Renders the run record as `step,train_loss,val_sum_rate` rows. The
/// step-0 baseline row has no loss; steps without an evaluation leave the
/// third field empty.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("step,train_loss,val_sum_rate\n");
    let mut vals = history.validations.iter().peekable();
    for step in 0..=history.train_loss.len() {
        let val = match vals.peek() {
            Some(&&(s, v)) if s == step => {
                vals.next();
                Some(v)
            }
            _ => None,
        };
        let loss = step.checked_sub(1).map(|i| history.train_loss[i]);
        if loss.is_none() && val.is_none() {
            continue;
        }
        let loss = loss.map(|l| l.to_string()).unwrap_or_default();
        let val = val.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{step},{loss},{val}\n"));
    }
    out
}

/// On-disk model: the parameter blocks plus enough context to rebuild and
/// sanity-check them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    /// Depth the blocks were trained at. Deeper inference reuses the same
    /// blocks, so this is a record, not a constraint.
    pub k_train: usize,
    pub params: ModelParams,
}

const CHECKPOINT_VERSION: &str = "uwmmse-checkpoint v1";

/// Serializes a checkpoint. Values print with 17 significant digits, which
/// parse back to the identical doubles; the final line is a SHA-256 digest
/// of everything above it.
pub fn checkpoint_string(ckpt: &Checkpoint) -> String {
    let n = &ckpt.network;
    let h = ckpt.params.hyper;
    let mut text = String::new();
    text.push_str(CHECKPOINT_VERSION);
    text.push('\n');
    text.push_str(&format!(
        "network m {} t {} r {} d {} sigma {:.16e} pmax {:.16e}\n",
        n.m, n.t, n.r, n.d, n.sigma, n.pmax
    ));
    text.push_str("alpha");
    for a in &n.alpha {
        text.push_str(&format!(" {a:.16e}"));
    }
    text.push('\n');
    text.push_str(&format!(
        "hyper f {} g {} feature_width {} mlp_params {} k_train {}\n",
        h.f,
        h.g,
        h.feature_width(n),
        h.mlp_param_count(n.d),
        ckpt.k_train
    ));
    for (name, block) in ModelParams::BLOCK_NAMES.iter().zip(ckpt.params.to_blocks()) {
        text.push_str(&format!(
            "block {name} {} {}\n",
            block.rows(),
            block.cols()
        ));
        for z in block.data() {
            text.push_str(&format!("{:.16e} {:.16e}\n", z.re, z.im));
        }
    }
    let digest = sha256_hex(text.as_bytes());
    text.push_str(&format!("hash {digest}\n"));
    text
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint, TrainError> {
    let mut lines: Vec<&str> = text.lines().collect();
    match lines.first().copied() {
        Some(first) if first == CHECKPOINT_VERSION => {}
        other => {
            return Err(TrainError::Version {
                found: other.unwrap_or("").to_string(),
            })
        }
    }
    let hash_line = lines.pop().ok_or(TrainError::Checksum)?;
    let payload_len = text
        .len()
        .checked_sub(hash_line.len() + 1)
        .filter(|_| text.ends_with('\n'))
        .ok_or(TrainError::Checksum)?;
    let recorded = hash_line
        .strip_prefix("hash ")
        .ok_or(TrainError::Checksum)?;
    if sha256_hex(text[..payload_len].as_bytes()) != recorded {
        return Err(TrainError::Checksum);
    }

    let mut cur = Cursor::new(&lines);
    cur.next()?; // version, already checked

    let net = cur.tagged(
        "network",
        &["m", "t", "r", "d", "sigma", "pmax"],
    )?;
    let m: usize = cur.parse(net[0], "node count")?;
    let t: usize = cur.parse(net[1], "transmit antennas")?;
    let r: usize = cur.parse(net[2], "receive antennas")?;
    let d: usize = cur.parse(net[3], "streams")?;
    let sigma: f64 = cur.parse(net[4], "noise level")?;
    let pmax: f64 = cur.parse(net[5], "power budget")?;

    let alpha_line = cur.next()?;
    let mut alpha_toks = alpha_line.split_whitespace();
    if alpha_toks.next() != Some("alpha") {
        return Err(cur.fail("expected `alpha` line"));
    }
    let mut alpha = Vec::with_capacity(m);
    for tok in alpha_toks {
        alpha.push(cur.parse::<f64>(tok, "rate weight")?);
    }
    if alpha.len() != m {
        return Err(cur.fail(format!("expected {m} rate weights, found {}", alpha.len())));
    }

    let hy = cur.tagged(
        "hyper",
        &["f", "g", "feature_width", "mlp_params", "k_train"],
    )?;
    let f: usize = cur.parse(hy[0], "feature width")?;
    let g: usize = cur.parse(hy[1], "hidden width")?;
    let fw: usize = cur.parse(hy[2], "node feature width")?;
    let p: usize = cur.parse(hy[3], "mlp entry count")?;
    let k_train: usize = cur.parse(hy[4], "training depth")?;

    let mut network = NetworkConfig::new(m, t, r, d, sigma, pmax);
    network.alpha = alpha;
    network
        .validate()
        .map_err(|e| cur.fail(format!("bad network echo: {e}")))?;
    let hyper = HyperParams { f, g };
    if fw != hyper.feature_width(&network) || p != hyper.mlp_param_count(d) {
        return Err(cur.fail("hyper widths disagree with the network dimensions"));
    }

    let fp = hyper.feature_width(&network);
    let expected = [(f, fp), (f, fp), (p, f), (p, f), (r, t), (1, 1)];
    let mut blocks = Vec::with_capacity(ModelParams::BLOCK_NAMES.len());
    for (name, want) in ModelParams::BLOCK_NAMES.iter().zip(expected) {
        let toks: Vec<&str> = cur.next()?.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "block" || toks[1] != *name {
            return Err(cur.fail(format!("expected `block {name} <rows> <cols>`")));
        }
        let rows: usize = cur.parse(toks[2], "rows")?;
        let cols: usize = cur.parse(toks[3], "cols")?;
        if (rows, cols) != want {
            return Err(TrainError::Shape {
                block: (*name).to_string(),
                want_rows: want.0,
                want_cols: want.1,
                found_rows: rows,
                found_cols: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut parts = cur.next()?.split_whitespace();
            let re: f64 = cur.parse(parts.next().unwrap_or(""), "real part")?;
            let im: f64 = cur.parse(parts.next().unwrap_or(""), "imaginary part")?;
            if parts.next().is_some() {
                return Err(cur.fail("expected exactly two values per entry"));
            }
            data.push(Complex64::new(re, im));
        }
        blocks.push(CMatrix::from_vec(rows, cols, data));
    }
    if cur.next().is_ok() {
        return Err(cur.fail("unexpected trailing content"));
    }

    let params = ModelParams::from_blocks(hyper, &blocks)?;
    Ok(Checkpoint {
        network,
        k_train,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    Ok(fs::write(path, checkpoint_string(ckpt))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(digest.len() * 2);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Line walker over the payload (the hash line is already stripped).
struct Cursor<'a> {
    lines: &'a [&'a str],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(lines: &'a [&'a str]) -> Self {
        Cursor { lines, at: 0 }
    }

    fn next(&mut self) -> Result<&'a str, TrainError> {
        let line = self.lines.get(self.at).copied();
        self.at += 1;
        line.ok_or_else(|| self.fail("unexpected end of checkpoint"))
    }

    /// Error at the line most recently read.
    fn fail(&self, reason: impl Into<String>) -> TrainError {
        TrainError::Format {
            line: self.at,
            reason: reason.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, tok: &str, what: &str) -> Result<T, TrainError> {
        tok.parse()
            .map_err(|_| self.fail(format!("could not parse {what} from {tok:?}")))
    }

    /// Reads a `tag key value key value ...` line and returns the values.
    fn tagged(&mut self, tag: &str, keys: &[&str]) -> Result<Vec<&'a str>, TrainError> {
        let toks: Vec<&str> = self.next()?.split_whitespace().collect();
        if toks.first() != Some(&tag) || toks.len() != 1 + 2 * keys.len() {
            return Err(self.fail(format!("expected `{tag}` line with {} fields", keys.len())));
        }
        let mut out = Vec::with_capacity(keys.len());
        for (i, key) in keys.iter().enumerate() {
            if toks[1 + 2 * i] != *key {
                return Err(self.fail(format!(
                    "expected field `{key}`, found `{}`",
                    toks[1 + 2 * i]
                )));
            }
            out.push(toks[2 + 2 * i]);
        }
        Ok(out)
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Adam => write!(f, "adam"),
            Optimizer::NovoGrad => write!(f, "novograd"),
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "novograd" => Ok(Optimizer::NovoGrad),
            other => Err(format!("unknown optimizer {other:?} (adam, novograd)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{FadingSpec, SpatialDist};
    use crate::wmmse::VUpdateConvention;

    fn tiny_network() -> NetworkConfig {
        let mut config = NetworkConfig::new(3, 2, 2, 1, 1e-2, 1.0);
        config.alpha = vec![1.0; 3];
        config
    }

    fn tiny_sampler(seed: u64) -> ChannelSampler {
        ChannelSampler::new(
            tiny_network(),
            SpatialDist::Uniform,
            FadingSpec::Rayleigh,
            seed,
        )
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            k_train: 1,
            k_infer: 2,
            batch_size: 2,
            max_steps: 4,
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            eval_every: 2,
            patience: 10,
            val_size: 3,
            rng_seed: 7,
        }
    }

    fn max_block_diff(a: &ModelParams, b: &ModelParams) -> f64 {
        a.to_blocks()
            .iter()
            .zip(b.to_blocks())
            .map(|(x, y)| x.max_abs_diff(&y))
            .fold(0.0, f64::max)
    }

    /// With zeroed corrections the scored network is the pinned-multiplier
    /// truncated solver, so the validation mean must match rates computed
    /// directly from that solver's beamformers.
    #[test]
    fn validation_score_matches_pinned_solver_oracle() {
        let network = tiny_network();
        let sampler = tiny_sampler(11);
        let samples = sampler.sample_many(0, 4);
        let params = ModelParams::zero_theta(
            &network,
            HyperParams { f: 4, g: 2 },
            Complex64::new(0.1, 0.0),
        );
        let layers = 2;
        let scored = validation_score(&samples, &params, &network, layers).expect("score");
        let mut oracle = 0.0;
        for csi in &samples {
            let states = wmmse::run_pinned_mu(
                csi,
                &network,
                layers,
                0.1,
                VUpdateConvention::ReceiverChannels,
            )
            .expect("pinned run");
            let v = &states.last().expect("nonempty").v;
            oracle += wmmse::sum_rate(csi, v, network.sigma, &network.alpha).expect("rate");
        }
        oracle /= samples.len() as f64;
        assert!(
            (scored - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
            "validation {scored} vs oracle {oracle}"
        );
    }

    #[test]
    fn same_seed_reruns_are_identical() {
        let sampler = tiny_sampler(3);
        let config = tiny_config();
        let hyper = HyperParams { f: 4, g: 2 };
        let a = train(&sampler, hyper, &config).expect("first run");
        let b = train(&sampler, hyper, &config).expect("second run");
        assert_eq!(a.history.train_loss, b.history.train_loss);
        assert_eq!(a.history.validations, b.history.validations);
        assert_eq!(a.history.best_step, b.history.best_step);
        assert_eq!(max_block_diff(&a.params, &b.params), 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let sampler = tiny_sampler(5);
        let mut config = tiny_config();
        config.learning_rate = 0.0;
        let hyper = HyperParams { f: 4, g: 2 };
        let outcome = train(&sampler, hyper, &config).expect("train");
        let init = ModelParams::init(
            &sampler.config,
            hyper,
            seed::derive(config.rng_seed, "init"),
        );
        assert_eq!(max_block_diff(&outcome.params, &init), 0.0);
        assert_eq!(outcome.history.best_step, 0);
        // Every evaluation sees the same parameters, so every score ties
        // the baseline and patience eventually stops the run.
        let vals: Vec<f64> = outcome.history.validations.iter().map(|v| v.1).collect();
        assert!(vals.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn max_steps_zero_returns_init_and_baseline() {
        let sampler = tiny_sampler(9);
        let mut config = tiny_config();
        config.max_steps = 0;
        let hyper = HyperParams { f: 4, g: 2 };
        let outcome = train(&sampler, hyper, &config).expect("train");
        let init = ModelParams::init(
            &sampler.config,
            hyper,
            seed::derive(config.rng_seed, "init"),
        );
        assert_eq!(max_block_diff(&outcome.params, &init), 0.0);
        assert!(outcome.history.train_loss.is_empty());
        assert_eq!(outcome.history.validations.len(), 1);
        assert_eq!(outcome.history.validations[0].0, 0);
        assert!(!outcome.history.diverged);
    }

    #[test]
    fn returned_params_score_the_best_recorded_validation() {
        let sampler = tiny_sampler(13);
        let mut config = tiny_config();
        config.max_steps = 6;
        config.eval_every = 1;
        config.patience = 2;
        let hyper = HyperParams { f: 4, g: 2 };
        let outcome = train(&sampler, hyper, &config).expect("train");
        let recorded_max = outcome
            .history
            .validations
            .iter()
            .map(|v| v.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let best = outcome.history.best_validation().expect("best recorded");
        assert_eq!(best, recorded_max);
        // Rescoring the returned parameters reproduces the recorded value.
        let val_set = sampler.sample_many(0, config.val_size);
        let rescored =
            validation_score(&val_set, &outcome.params, &sampler.config, config.k_train)
                .expect("rescore");
        assert_eq!(rescored, best);
    }

    #[test]
    fn patience_stops_the_run_early() {
        let sampler = tiny_sampler(5);
        let mut config = tiny_config();
        config.learning_rate = 0.0; // no improvement is possible
        config.max_steps = 50;
        config.eval_every = 1;
        config.patience = 3;
        let hyper = HyperParams { f: 4, g: 2 };
        let outcome = train(&sampler, hyper, &config).expect("train");
        assert_eq!(outcome.history.train_loss.len(), 3);
        assert!(!outcome.history.diverged);
    }

    /// Both rules move exactly the components with nonzero gradients, and
    /// an Adam step has the classic unit shape lr * sign(g) at step one.
    #[test]
    fn optimizer_rules_update_the_touched_components() {
        let names = vec!["a".to_string(), "b".to_string()];
        let grad = GradientSet::new(
            names,
            vec![
                CMatrix::scalar(Complex64::new(0.5, -2.0)),
                CMatrix::zeros(1, 2),
            ],
        );
        for rule in [Optimizer::Adam, Optimizer::NovoGrad] {
            let mut blocks = vec![
                CMatrix::scalar(Complex64::new(1.0, 1.0)),
                CMatrix::from_rows(
                    1,
                    2,
                    &[Complex64::new(3.0, 0.0), Complex64::new(0.0, -4.0)],
                ),
            ];
            let before = blocks.clone();
            let mut opt = OptState::new(rule, &blocks);
            opt.apply(0.01, &grad, &mut blocks);
            let moved = blocks[0].max_abs_diff(&before[0]);
            assert!(moved > 0.0, "{rule}: live block did not move");
            assert_eq!(
                blocks[1].max_abs_diff(&before[1]),
                0.0,
                "{rule}: zero-gradient block moved"
            );
        }
        // Bias-corrected Adam at t = 1: each component steps lr * sign(g)
        // up to the eps softening.
        let mut blocks = vec![
            CMatrix::scalar(Complex64::new(0.0, 0.0)),
            CMatrix::zeros(1, 2),
        ];
        let mut opt = OptState::new(Optimizer::Adam, &blocks);
        opt.apply(0.01, &grad, &mut blocks);
        let z = blocks[0].as_scalar();
        assert!((z.re + 0.01).abs() < 1e-6, "re step {}", z.re);
        assert!((z.im - 0.01).abs() < 1e-6, "im step {}", z.im);
    }

    #[test]
    fn singular_sample_is_dropped_not_fatal() {
        let network = tiny_network();
        // A zero channel with a zero multiplier makes the beamformer gram
        // exactly singular, which must surface as a dropped sample.
        let csi = CsiTensor::zeros(network.m, network.r, network.t);
        let hyper = HyperParams { f: 4, g: 2 };
        let params = ModelParams::zero_theta(&network, hyper, Complex64::new(0.0, 0.0));
        let got = sample_loss_grad(&csi, &params.to_blocks(), &network, hyper, 1).expect("drop");
        assert!(got.is_none());
        // The same channel with a positive multiplier is solvable.
        let params = ModelParams::zero_theta(&network, hyper, Complex64::new(0.1, 0.0));
        let got = sample_loss_grad(&csi, &params.to_blocks(), &network, hyper, 1).expect("solve");
        assert!(got.is_some());
    }

    #[test]
    fn history_csv_rows_line_up() {
        let history = TrainHistory {
            train_loss: vec![-1.5, -2.0, -2.25],
            validations: vec![(0, 4.0), (2, 5.5)],
            best_step: 2,
            diverged: false,
        };
        let csv = history_csv(&history);
        let expect = "step,train_loss,val_sum_rate\n\
                      0,,4\n\
                      1,-1.5,\n\
                      2,-2,5.5\n\
                      3,-2.25,\n";
        assert_eq!(csv, expect);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let network = tiny_network();
        let hyper = HyperParams { f: 4, g: 2 };
        let params = ModelParams::init(&network, hyper, 42);
        let ckpt = Checkpoint {
            network: network.clone(),
            k_train: 1,
            params,
        };
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).expect("save");
        let loaded = load_checkpoint(&path).expect("load");
        assert_eq!(loaded.k_train, 1);
        assert_eq!(loaded.network.m, network.m);
        assert_eq!(loaded.network.sigma, network.sigma);
        assert_eq!(loaded.network.alpha, network.alpha);
        assert_eq!(max_block_diff(&loaded.params, &ckpt.params), 0.0);
        assert_eq!(loaded.params.hyper, hyper);
    }

    #[test]
    fn checkpoint_rejects_tampering_and_wrong_version() {
        let network = tiny_network();
        let hyper = HyperParams { f: 4, g: 2 };
        let ckpt = Checkpoint {
            network: network.clone(),
            k_train: 1,
            params: ModelParams::init(&network, hyper, 42),
        };
        let text = checkpoint_string(&ckpt);

        // Flip one digit inside a value line.
        let tampered = text.replacen("e-1", "e-2", 1);
        assert_ne!(tampered, text);
        assert!(matches!(
            parse_checkpoint(&tampered),
            Err(TrainError::Checksum)
        ));

        let wrong = text.replacen("v1", "v9", 1);
        assert!(matches!(
            parse_checkpoint(&wrong),
            Err(TrainError::Version { .. })
        ));

        // Truncated payload loses the hash line.
        let cut = &text[..text.len() / 2];
        assert!(parse_checkpoint(cut).is_err());
    }

    /// The network echo decides the expected shapes, so a checkpoint whose
    /// blocks were built for different antenna counts is rejected by shape
    /// even though its hash is intact.
    #[test]
    fn checkpoint_rejects_mismatched_shapes() {
        let hyper = HyperParams { f: 4, g: 2 };
        let built_for = NetworkConfig::new(3, 3, 2, 1, 1e-2, 1.0);
        let claimed = tiny_network(); // t = 2, not 3
        let ckpt = Checkpoint {
            network: claimed,
            k_train: 1,
            params: ModelParams::init(&built_for, hyper, 42),
        };
        let text = checkpoint_string(&ckpt);
        match parse_checkpoint(&text) {
            Err(TrainError::Shape { block, .. }) => assert_eq!(block, "theta11"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    /// Parameters are depth-independent, so a depth-1 checkpoint must load
    /// and run at depth 3.
    #[test]
    fn shallow_checkpoint_runs_deeper() {
        let network = tiny_network();
        let hyper = HyperParams { f: 4, g: 2 };
        let ckpt = Checkpoint {
            network: network.clone(),
            k_train: 1,
            params: ModelParams::init(&network, hyper, 42),
        };
        let loaded = parse_checkpoint(&checkpoint_string(&ckpt)).expect("load");
        let csi = tiny_sampler(1).sample(0);
        let (v, trace) = forward(&csi, &loaded.params, &network, 3).expect("forward");
        assert_eq!(v.len(), network.m);
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut config = tiny_config();
        config.batch_size = 0;
        assert!(matches!(
            config.validate(),
            Err(TrainError::BadConfig(_))
        ));
        let mut config = tiny_config();
        config.learning_rate = f64::NAN;
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.eval_every = 0;
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.val_size = 0;
        assert!(config.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn optimizer_names_round_trip() {
        for rule in [Optimizer::Adam, Optimizer::NovoGrad] {
            let shown = rule.to_string();
            let parsed: Optimizer = shown.parse().expect("parse");
            assert_eq!(parsed, rule);
        }
        assert!("sgd".parse::<Optimizer>().is_err());
    }
}
