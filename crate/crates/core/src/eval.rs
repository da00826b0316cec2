//! Experiment drivers comparing the unrolled network against the solver.
//!
//! Every driver produces per-sample [`ResultRow`]s; aggregation, CSV, and
//! JSON emission live here too so the harness and the command line share
//! one schema. Sum rates are normalized against the full solver run on the
//! identical channel sample, never a fresh draw.

use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use crate::autodiff::AutodiffError;
use crate::channel::{distort_csi, ChannelError, ChannelSampler, CsiTensor, FadingSpec, NetworkConfig};
use crate::seed;
use crate::unfolded::{forward, permute_beamformers, ModelParams};
use crate::wmmse::{self, BeamformerSet, SolverOptions, WmmseError};

/// Full-solver iteration budget used for every normalization denominator.
pub const WMMSE_ITERS: usize = 100;
/// Truncated-solver sweep count used by the baselines.
pub const TR_WMMSE_ITERS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("timing needs at least two samples; the first is a warm-up")]
    TooFewSamples,
    #[error("{0} must be nonempty")]
    EmptySweep(&'static str),
    #[error("the convergence study needs single-stream nodes, got d = {0}")]
    MultiStream(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Wmmse(#[from] WmmseError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// One per-sample measurement.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub experiment: String,
    pub sample: u64,
    pub algorithm: String,
    pub m: usize,
    pub fading: String,
    /// Sweep coordinate: network size, placement stddev, or distortion
    /// rate. Zero for experiments without one.
    pub parameter: f64,
    pub sum_rate: f64,
    /// This row's rate over the full solver's rate on the same sample.
    pub normalized_sum_rate: f64,
    /// Seconds spent producing the beamformers (rate evaluation excluded).
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
}

/// Human-readable tag for the fading spec, used in result rows.
pub fn fading_label(fading: FadingSpec) -> String {
    match fading {
        FadingSpec::Rayleigh => "rayleigh".to_string(),
        FadingSpec::Rician { k } => format!("rician-k{k}"),
    }
}

fn positive_secs(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64().max(1e-9)
}

/// Beamformers, their clean-channel sum rate, and the solve time for the
/// classical solver capped at `iters` sweeps.
fn classical(
    csi: &CsiTensor,
    network: &NetworkConfig,
    iters: usize,
) -> Result<(BeamformerSet, f64, f64), EvalError> {
    let opts = SolverOptions {
        max_iters: iters,
        ..SolverOptions::default()
    };
    let t0 = Instant::now();
    let run = wmmse::run_wmmse(csi, network, &opts)?;
    let secs = positive_secs(t0);
    let rate = wmmse::sum_rate(csi, &run.v, network.sigma, &network.alpha)?;
    Ok((run.v, rate, secs))
}

/// Beamformers, sum rate, and forward time for the unrolled network.
fn unfolded(
    csi: &CsiTensor,
    params: &ModelParams,
    network: &NetworkConfig,
    layers: usize,
) -> Result<(BeamformerSet, f64, f64), EvalError> {
    let t0 = Instant::now();
    let (v, _) = forward(csi, params, network, layers)?;
    let secs = positive_secs(t0);
    let rate = wmmse::sum_rate(csi, &v, network.sigma, &network.alpha)?;
    Ok((v, rate, secs))
}

/// Per-sample sum rate and wall time for the full solver, the truncated
/// solver, and the unrolled network. A sample whose full-solver run fails
/// is skipped entirely (it has no denominator); a failure of one of the
/// other algorithms drops just that row. Both are logged.
pub fn compare_algorithms(
    testset: &[CsiTensor],
    network: &NetworkConfig,
    params: &ModelParams,
    k_infer: usize,
    fading: &str,
) -> Result<ExperimentResult, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let experiment = "compare";
    let per_sample: Vec<Vec<ResultRow>> = testset
        .par_iter()
        .enumerate()
        .map(|(i, csi)| {
            let row = |algorithm: String, rate: f64, denom: f64, secs: f64| ResultRow {
                experiment: experiment.to_string(),
                sample: i as u64,
                algorithm,
                m: csi.m,
                fading: fading.to_string(),
                parameter: 0.0,
                sum_rate: rate,
                normalized_sum_rate: rate / denom,
                wall_time: secs,
            };
            let (_, full_rate, full_secs) = match classical(csi, network, WMMSE_ITERS) {
                Ok(out) => out,
                Err(e) => {
                    log::warn!("compare sample {i}: full solver failed, skipping: {e}");
                    return Vec::new();
                }
            };
            let mut rows = vec![row(
                format!("wmmse{WMMSE_ITERS}"),
                full_rate,
                full_rate,
                full_secs,
            )];
            match classical(csi, network, TR_WMMSE_ITERS) {
                Ok((_, rate, secs)) => {
                    rows.push(row(format!("trwmmse{TR_WMMSE_ITERS}"), rate, full_rate, secs))
                }
                Err(e) => log::warn!("compare sample {i}: truncated solver failed: {e}"),
            }
            match unfolded(csi, params, network, k_infer) {
                Ok((_, rate, secs)) => {
                    rows.push(row(format!("uwmmse{k_infer}"), rate, full_rate, secs))
                }
                Err(e) => log::warn!("compare sample {i}: unrolled forward failed: {e}"),
            }
            rows
        })
        .collect();
    Ok(ExperimentResult {
        experiment: experiment.to_string(),
        rows: per_sample.into_iter().flatten().collect(),
    })
}

/// One histogram bar: rows of `algorithm` whose sum rate lies in
/// `[lo, hi)`, closed at the top for the final bin.
#[derive(Clone, Debug)]
pub struct HistogramBin {
    pub algorithm: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over the pooled sum-rate range, one series per
/// algorithm, in each case covering every row of the result.
pub fn histogram(result: &ExperimentResult, bins: usize) -> Vec<HistogramBin> {
    assert!(bins > 0, "histogram needs at least one bin");
    let rates: Vec<f64> = result.rows.iter().map(|r| r.sum_rate).collect();
    if rates.is_empty() {
        return Vec::new();
    }
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut algorithms: Vec<String> = Vec::new();
    for row in &result.rows {
        if !algorithms.contains(&row.algorithm) {
            algorithms.push(row.algorithm.clone());
        }
    }
    let mut out = Vec::with_capacity(algorithms.len() * bins);
    for algorithm in algorithms {
        for b in 0..bins {
            let bin_lo = lo + b as f64 * width;
            let count = result
                .rows
                .iter()
                .filter(|r| r.algorithm == algorithm)
                .filter(|r| {
                    let k = (((r.sum_rate - lo) / width) as usize).min(bins - 1);
                    k == b
                })
                .count();
            out.push(HistogramBin {
                algorithm: algorithm.clone(),
                lo: bin_lo,
                hi: bin_lo + width,
                count,
            });
        }
    }
    out
}

/// Runs one trained parameter set across network sizes without retraining.
/// Every size draws `samples_per_size` fresh channels from `sampler`
/// re-shaped to that size; rows hold the truncated solver and the unrolled
/// network, each normalized by the full solver on the same sample.
pub fn generalization_sweep(
    params: &ModelParams,
    sizes: &[usize],
    sampler: &ChannelSampler,
    samples_per_size: usize,
    k_infer: usize,
) -> Result<ExperimentResult, EvalError> {
    if sizes.is_empty() {
        return Err(EvalError::EmptySweep("size list"));
    }
    if samples_per_size == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    let experiment = "generalize";
    let fading = fading_label(sampler.fading);
    let mut rows = Vec::new();
    for &m in sizes {
        let sized = sampler.with_m(m);
        let network = sized.config.clone();
        let testset = sized.sample_many(0, samples_per_size);
        let per_sample: Vec<Result<Vec<ResultRow>, EvalError>> = testset
            .par_iter()
            .enumerate()
            .map(|(i, csi)| {
                let (_, full_rate, _) = classical(csi, &network, WMMSE_ITERS)?;
                let (_, tr_rate, tr_secs) = classical(csi, &network, TR_WMMSE_ITERS)?;
                let (_, uw_rate, uw_secs) = unfolded(csi, params, &network, k_infer)?;
                let row = |algorithm: String, rate: f64, secs: f64| ResultRow {
                    experiment: experiment.to_string(),
                    sample: i as u64,
                    algorithm,
                    m,
                    fading: fading.clone(),
                    parameter: m as f64,
                    sum_rate: rate,
                    normalized_sum_rate: rate / full_rate,
                    wall_time: secs,
                };
                Ok(vec![
                    row(format!("trwmmse{TR_WMMSE_ITERS}"), tr_rate, tr_secs),
                    row(format!("uwmmse{k_infer}"), uw_rate, uw_secs),
                ])
            })
            .collect();
        for r in per_sample {
            rows.extend(r?);
        }
    }
    Ok(ExperimentResult {
        experiment: experiment.to_string(),
        rows,
    })
}

/// Scores parameters trained on uniform placement against Gaussian node
/// placement of varying spread. One unrolled-network row per sample,
/// normalized by the full solver on the same sample.
pub fn spatial_generalization(
    params: &ModelParams,
    stddevs: &[f64],
    sampler: &ChannelSampler,
    samples_per_point: usize,
    k_infer: usize,
) -> Result<ExperimentResult, EvalError> {
    if stddevs.is_empty() {
        return Err(EvalError::EmptySweep("stddev list"));
    }
    if samples_per_point == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    let experiment = "spatial";
    let fading = fading_label(sampler.fading);
    let network = sampler.config.clone();
    let mut rows = Vec::new();
    for &stddev in stddevs {
        let placed = sampler.with_spatial(crate::channel::SpatialDist::Gaussian { stddev });
        let testset = placed.sample_many(0, samples_per_point);
        let per_sample: Vec<Result<ResultRow, EvalError>> = testset
            .par_iter()
            .enumerate()
            .map(|(i, csi)| {
                let (_, full_rate, _) = classical(csi, &network, WMMSE_ITERS)?;
                let (_, uw_rate, uw_secs) = unfolded(csi, params, &network, k_infer)?;
                Ok(ResultRow {
                    experiment: experiment.to_string(),
                    sample: i as u64,
                    algorithm: format!("uwmmse{k_infer}"),
                    m: csi.m,
                    fading: fading.clone(),
                    parameter: stddev,
                    sum_rate: uw_rate,
                    normalized_sum_rate: uw_rate / full_rate,
                    wall_time: uw_secs,
                })
            })
            .collect();
        for r in per_sample {
            rows.push(r?);
        }
    }
    Ok(ExperimentResult {
        experiment: experiment.to_string(),
        rows,
    })
}

/// `2 tp / (2 tp + fp + fn)`, which equals `2PR / (P + R)`, and zero when
/// there are no true positives (that covers the `P + R = 0` corner).
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "f1: length mismatch");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnn = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    }
}

/// Mean F1 of thresholded weights against thresholded final powers.
#[derive(Clone, Debug)]
pub struct F1Curves {
    pub w_threshold: f64,
    pub p_threshold: f64,
    /// (layer, mean F1) for the unrolled network, layers counted from 1.
    pub uwmmse: Vec<(usize, f64)>,
    /// (iteration count, mean F1) for the classical solver.
    pub wmmse: Vec<(usize, f64)>,
}

/// Treats `|W_i|_F > w_threshold` at each depth as a prediction of the
/// finally-active nodes `|V_i|_F > p_threshold` and scores it with F1.
/// The truth vector for each algorithm comes from its own deepest run:
/// layer `layers` for the network, the largest entry of `wmmse_iters` for
/// the solver. Single-stream only.
pub fn convergence_f1(
    params: &ModelParams,
    testset: &[CsiTensor],
    network: &NetworkConfig,
    layers: usize,
    wmmse_iters: &[usize],
    w_threshold: f64,
    p_threshold: f64,
) -> Result<F1Curves, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if network.d != 1 {
        return Err(EvalError::MultiStream(network.d));
    }
    if wmmse_iters.is_empty() || wmmse_iters.contains(&0) || layers == 0 {
        return Err(EvalError::EmptySweep("iteration list"));
    }
    let deepest = *wmmse_iters.iter().max().expect("nonempty");
    // Every sweep state is needed, so the early exit must stay off.
    let opts = SolverOptions {
        max_iters: deepest,
        early_exit: false,
        ..SolverOptions::default()
    };

    let per_sample: Vec<Result<(Vec<f64>, Vec<f64>), EvalError>> = testset
        .par_iter()
        .map(|csi| {
            let (v_final, trace) = forward(csi, params, network, layers)?;
            let truth = binarize(&v_final, p_threshold);
            let uw: Vec<f64> = trace
                .iter()
                .map(|layer| f1_score(&binarize(&layer.w, w_threshold), &truth))
                .collect();

            let states = wmmse::run_wmmse_states(csi, network, &opts)?;
            let truth = binarize(&states.last().expect("at least one sweep").v, p_threshold);
            let cw: Vec<f64> = wmmse_iters
                .iter()
                .map(|&n| f1_score(&binarize(&states[n - 1].w_hat, w_threshold), &truth))
                .collect();
            Ok((uw, cw))
        })
        .collect();

    let mut uw_sum = vec![0.0; layers];
    let mut cw_sum = vec![0.0; wmmse_iters.len()];
    for r in per_sample {
        let (uw, cw) = r?;
        for (acc, x) in uw_sum.iter_mut().zip(uw) {
            *acc += x;
        }
        for (acc, x) in cw_sum.iter_mut().zip(cw) {
            *acc += x;
        }
    }
    let n = testset.len() as f64;
    Ok(F1Curves {
        w_threshold,
        p_threshold,
        uwmmse: uw_sum.iter().enumerate().map(|(k, s)| (k + 1, s / n)).collect(),
        wmmse: wmmse_iters.iter().copied().zip(cw_sum.iter().map(|s| s / n)).collect(),
    })
}

fn binarize(mats: &[crate::linalg::CMatrix], threshold: f64) -> Vec<bool> {
    mats.iter().map(|m| m.frob_norm() > threshold).collect()
}

/// Feeds distorted channel estimates to both algorithms and scores the
/// resulting beamformers on the undistorted channel, normalized by the
/// full solver run on the undistorted channel.
pub fn robustness_sweep(
    params: &ModelParams,
    rates: &[f64],
    sigma_r: f64,
    testset: &[CsiTensor],
    network: &NetworkConfig,
    k_infer: usize,
    fading: &str,
    seed_value: u64,
) -> Result<ExperimentResult, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if rates.is_empty() {
        return Err(EvalError::EmptySweep("distortion rate list"));
    }
    let experiment = "robustness";
    let per_sample: Vec<Result<Vec<ResultRow>, EvalError>> = testset
        .par_iter()
        .enumerate()
        .map(|(i, csi)| {
            let (_, clean_rate, _) = classical(csi, network, WMMSE_ITERS)?;
            let mut rows = Vec::with_capacity(2 * rates.len());
            for (ri, &rate) in rates.iter().enumerate() {
                let noisy = distort_csi(
                    csi,
                    rate,
                    sigma_r,
                    seed::derive_indexed(
                        seed_value,
                        "distortion",
                        (ri * testset.len() + i) as u64,
                    ),
                )?;
                let row = |algorithm: String, v: &BeamformerSet, secs: f64| {
                    // The estimate decides the beamformers, the true
                    // channel decides the achieved rate.
                    let achieved = wmmse::sum_rate(csi, v, network.sigma, &network.alpha)?;
                    Ok::<ResultRow, EvalError>(ResultRow {
                        experiment: experiment.to_string(),
                        sample: i as u64,
                        algorithm,
                        m: csi.m,
                        fading: fading.to_string(),
                        parameter: rate,
                        sum_rate: achieved,
                        normalized_sum_rate: achieved / clean_rate,
                        wall_time: secs,
                    })
                };
                let (v, _, secs) = classical(&noisy, network, WMMSE_ITERS)?;
                rows.push(row(format!("wmmse{WMMSE_ITERS}"), &v, secs)?);
                let (v, _, secs) = unfolded(&noisy, params, network, k_infer)?;
                rows.push(row(format!("uwmmse{k_infer}"), &v, secs)?);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_sample {
        rows.extend(r?);
    }
    Ok(ExperimentResult {
        experiment: experiment.to_string(),
        rows,
    })
}

/// Mean per-sample wall times, measured sequentially.
#[derive(Clone, Copy, Debug)]
pub struct TimingSummary {
    /// Samples actually measured (the warm-up sample is excluded).
    pub samples: usize,
    pub wmmse_secs: f64,
    pub tr_wmmse_secs: f64,
    pub uwmmse_secs: f64,
}

/// Times the three algorithms sample by sample on one thread. The first
/// sample warms caches and is excluded from the means.
pub fn timing_benchmark(
    testset: &[CsiTensor],
    network: &NetworkConfig,
    params: &ModelParams,
    k_infer: usize,
) -> Result<TimingSummary, EvalError> {
    if testset.len() < 2 {
        return Err(EvalError::TooFewSamples);
    }
    let mut full = 0.0;
    let mut truncated = 0.0;
    let mut net = 0.0;
    for (i, csi) in testset.iter().enumerate() {
        let (_, _, t_full) = classical(csi, network, WMMSE_ITERS)?;
        let (_, _, t_tr) = classical(csi, network, TR_WMMSE_ITERS)?;
        let (_, _, t_net) = unfolded(csi, params, network, k_infer)?;
        if i > 0 {
            full += t_full;
            truncated += t_tr;
            net += t_net;
        }
    }
    let n = (testset.len() - 1) as f64;
    Ok(TimingSummary {
        samples: testset.len() - 1,
        wmmse_secs: full / n,
        tr_wmmse_secs: truncated / n,
        uwmmse_secs: net / n,
    })
}

/// Max over trials of the relative mismatch between forwarding a permuted
/// network and permuting the forward outputs. Zero up to roundoff when the
/// network treats nodes symmetrically.
pub fn equivariance_test(
    params: &ModelParams,
    sampler: &ChannelSampler,
    trials: usize,
    layers: usize,
    seed_value: u64,
) -> Result<f64, EvalError> {
    if trials == 0 {
        return Err(EvalError::EmptySweep("trial count"));
    }
    use rand::Rng;
    let mut rng = seed::rng(seed_value, "equivariance-perm");
    let network = &sampler.config;
    let mut worst = 0.0f64;
    for trial in 0..trials as u64 {
        let csi = sampler.sample(trial);
        let mut perm: Vec<usize> = (0..csi.m).collect();
        for i in (1..csi.m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (v, _) = forward(&csi, params, network, layers)?;
        let (v_perm, _) = forward(&csi.permute(&perm), params, network, layers)?;
        let expect = permute_beamformers(&v, &perm);
        let base: f64 = v.iter().map(|x| x.frob_norm_sqr()).sum::<f64>();
        let diff: f64 = v_perm
            .iter()
            .zip(&expect)
            .map(|(a, b)| a.sub(b).expect("matching shapes").frob_norm_sqr())
            .sum::<f64>();
        worst = worst.max((diff / base).sqrt());
    }
    Ok(worst)
}

/// Group statistics for one (algorithm, parameter) slice of a result.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub algorithm: String,
    pub parameter: f64,
    pub samples: usize,
    pub mean_sum_rate: f64,
    pub se_sum_rate: f64,
    pub mean_normalized: f64,
    pub se_normalized: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Means and standard errors per (algorithm, parameter) group, in first
/// appearance order.
pub fn aggregate(result: &ExperimentResult) -> Vec<Aggregate> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for row in &result.rows {
        let key = (row.algorithm.clone(), row.parameter);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(algorithm, parameter)| {
            let group: Vec<&ResultRow> = result
                .rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.parameter == parameter)
                .collect();
            let rates: Vec<f64> = group.iter().map(|r| r.sum_rate).collect();
            let normalized: Vec<f64> = group.iter().map(|r| r.normalized_sum_rate).collect();
            let (mean_sum_rate, se_sum_rate) = mean_se(&rates);
            let (mean_normalized, se_normalized) = mean_se(&normalized);
            Aggregate {
                algorithm,
                parameter,
                samples: group.len(),
                mean_sum_rate,
                se_sum_rate,
                mean_normalized,
                se_normalized,
            }
        })
        .collect()
}

/// Renders every row under the fixed header. Floats print in shortest
/// round-trip form.
pub fn result_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(
        "experiment,sample,algorithm,m,fading,parameter,sum_rate,normalized_sum_rate,wall_time\n",
    );
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.sample,
            r.algorithm,
            r.m,
            r.fading,
            r.parameter,
            r.sum_rate,
            r.normalized_sum_rate,
            r.wall_time
        ));
    }
    out
}

pub fn network_json(n: &NetworkConfig) -> serde_json::Value {
    json!({
        "m": n.m,
        "t": n.t,
        "r": n.r,
        "d": n.d,
        "sigma": n.sigma,
        "pmax": n.pmax,
    })
}

/// Experiment summary: the identifier, a caller-provided config echo, and
/// the grouped aggregates. Keys serialize sorted, so output is stable.
pub fn summary_json(result: &ExperimentResult, config_echo: serde_json::Value) -> String {
    let aggregates: Vec<serde_json::Value> = aggregate(result)
        .into_iter()
        .map(|a| {
            json!({
                "algorithm": a.algorithm,
                "parameter": a.parameter,
                "samples": a.samples,
                "mean_sum_rate": a.mean_sum_rate,
                "se_sum_rate": a.se_sum_rate,
                "mean_normalized": a.mean_normalized,
                "se_normalized": a.se_normalized,
            })
        })
        .collect();
    let doc = json!({
        "experiment": result.experiment,
        "config": config_echo,
        "aggregates": aggregates,
    });
    serde_json::to_string_pretty(&doc).expect("json serialization")
}
