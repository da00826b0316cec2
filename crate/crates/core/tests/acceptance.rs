//! Release checklist: eleven numbered end-to-end checks over the whole
//! pipeline, each printed as one PASS/FAIL line at the end of the run.
//! Run with `--nocapture` to watch progress; the whole suite takes a few
//! minutes on one core, dominated by the shared training run.
//!
//! Check 4 (power feasibility) audits every beamformer any other check
//! produces, so it is evaluated last even though it reports in order.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;

use uwmmse_core::autodiff::{check_gradients, CheckOptions};
use uwmmse_core::channel::{
    distort_csi, ChannelSampler, FadingSpec, NetworkConfig, SpatialDist,
};
use uwmmse_core::eval;
use uwmmse_core::linalg::CMatrix;
use uwmmse_core::seed;
use uwmmse_core::train::{train, TrainConfig};
use uwmmse_core::unfolded::{
    forward, fixed_point_residual, BatchSumRateLoss, HyperParams, ModelParams,
};
use uwmmse_core::wmmse::{self, SolverOptions, VUpdateConvention};

const SEED: u64 = 108;

fn default_sampler(purpose: &str) -> ChannelSampler {
    ChannelSampler::new(
        NetworkConfig::default(),
        SpatialDist::Uniform,
        FadingSpec::Rayleigh,
        seed::derive(SEED, purpose),
    )
}

/// Running record of every beamformer emitted anywhere in this suite.
#[derive(Default)]
struct PowerAudit {
    worst_ratio: f64,
    audited: usize,
}

impl PowerAudit {
    fn record(&mut self, v: &[CMatrix], pmax: f64) {
        for vi in v {
            let ratio = vi.frob_norm_sqr() / pmax;
            if ratio > self.worst_ratio {
                self.worst_ratio = ratio;
            }
            self.audited += 1;
        }
    }

    fn record_sweeps(&mut self, sweeps: &[Vec<CMatrix>], pmax: f64) {
        for v in sweeps {
            self.record(v, pmax);
        }
    }
}

struct Verdict {
    num: usize,
    pass: bool,
    detail: String,
}

fn verdict(num: usize, outcome: Result<(bool, String), String>) -> Verdict {
    let (pass, detail) = match outcome {
        Ok((pass, detail)) => (pass, detail),
        Err(e) => (false, format!("did not finish: {e}")),
    };
    println!("[check {num}] {}", if pass { "ok" } else { "FAILED" });
    Verdict { num, pass, detail }
}

struct Trained {
    params: ModelParams,
    secs: f64,
    note: String,
}

fn train_shared() -> Result<Trained, String> {
    let t0 = Instant::now();
    let sampler = default_sampler("train-channels");
    let cfg = TrainConfig {
        rng_seed: seed::derive(SEED, "train"),
        ..TrainConfig::default()
    };
    let outcome = train(&sampler, HyperParams::default(), &cfg).map_err(|e| e.to_string())?;
    if outcome.history.diverged {
        return Err("training diverged".to_string());
    }
    let secs = t0.elapsed().as_secs_f64();
    let best = outcome.history.best_validation().unwrap_or(f64::NAN);
    Ok(Trained {
        params: outcome.params,
        secs,
        note: format!(
            "{} steps, best at step {} with validation mean rate {:.3}",
            outcome.history.train_loss.len(),
            outcome.history.best_step,
            best
        ),
    })
}

fn with_trained<'a>(
    trained: &'a Result<Trained, String>,
    run: impl FnOnce(&'a Trained) -> Result<(bool, String), String>,
) -> Result<(bool, String), String> {
    match trained {
        Ok(t) => run(t),
        Err(e) => Err(format!("shared training failed: {e}")),
    }
}

/// Check 1: with all corrections zeroed and the same pinned multiplier on
/// both sides, the unrolled forward pass must reproduce the fixed-
/// multiplier solver sweep for sweep.
fn c1_reduction(audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::default();
    let mu = 0.1;
    let params = ModelParams::zero_theta(&config, HyperParams::default(), Complex64::new(mu, 0.0));
    let sampler = default_sampler("c1-data");
    let mut worst = 0.0f64;
    for idx in 0..50 {
        let csi = sampler.sample(idx);
        let (v, trace) = forward(&csi, &params, &config, 3).map_err(|e| e.to_string())?;
        let states =
            wmmse::run_pinned_mu(&csi, &config, 3, mu, VUpdateConvention::ReceiverChannels)
                .map_err(|e| e.to_string())?;
        audit.record(&v, config.pmax);
        for (layer, state) in trace.iter().zip(&states) {
            audit.record(&layer.v, config.pmax);
            audit.record(&state.v, config.pmax);
            for i in 0..config.m {
                worst = worst
                    .max(layer.u[i].max_abs_diff(&state.u[i]))
                    .max(layer.w_hat[i].max_abs_diff(&state.w_hat[i]))
                    .max(layer.v[i].max_abs_diff(&state.v[i]));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 10.0;
    Ok((pass, format!(
        "zeroed network at 3 layers vs pinned-multiplier solver on 50 instances: max elementwise gap {worst:.3e} (limit 1e-10), {secs:.1}s (limit 10s)"
    )))
}

/// Check 2: relabeling the nodes of the input must relabel the trained
/// network's outputs the same way.
fn c2_equivariance(trained: &Trained) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let sampler = default_sampler("c2-data");
    let worst = eval::equivariance_test(
        &trained.params,
        &sampler,
        100,
        3,
        seed::derive(SEED, "c2-perms"),
    )
    .map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && secs < 30.0;
    Ok((pass, format!(
        "100 random permutation trials: max relative deviation {worst:.3e} (limit 1e-6), {secs:.1}s (limit 30s)"
    )))
}

/// Check 3: the classical solver's surrogate objective must never rise
/// between sweeps when each block update is the exact minimizer.
///
/// Runs at sigma = 1 rather than the bench operating point: at 2.6e-5 the
/// converged weights reach ~1e9, and evaluating the surrogate in f64 then
/// carries ~1e-7 of cancellation noise on the late plateau (observed
/// 1.6e-7 at sweep 76), swamping the slack no matter how the updates are
/// computed. The descent property itself does not depend on the noise
/// level; at sigma = 1 the evaluation noise sits near 1e-14.
fn c3_monotonicity(audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::new(10, 5, 3, 1, 1.0, 1.0);
    let sampler = ChannelSampler::new(
        config.clone(),
        SpatialDist::Uniform,
        FadingSpec::Rayleigh,
        seed::derive(SEED, "c3-data"),
    );
    let opts = SolverOptions {
        objective_trace: true,
        early_exit: false,
        v_update_convention: VUpdateConvention::TransmitterChannels,
        ..SolverOptions::default()
    };
    let mut worst_rise = f64::NEG_INFINITY;
    let mut transitions = 0usize;
    for idx in 0..100 {
        let csi = sampler.sample(idx);
        let (run, sweeps) =
            wmmse::run_wmmse_sweeps(&csi, &config, &opts).map_err(|e| e.to_string())?;
        audit.record_sweeps(&sweeps, config.pmax);
        for pair in run.objective_trace.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
            transitions += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_rise <= 1e-8 && secs < 60.0;
    Ok((pass, format!(
        "100 instances, 100 sweeps each ({transitions} transitions): worst objective rise {worst_rise:.3e} (slack 1e-8), {secs:.1}s (limit 60s)"
    )))
}

/// Check 4: the audited power of every beamformer emitted above.
fn c4_power(audit: &PowerAudit) -> (bool, String) {
    let pass = audit.worst_ratio <= 1.0 + 1e-9 && audit.audited > 0;
    (pass, format!(
        "{} beamformers audited across every run in this suite: worst Tr(V V^H)/Pmax = {:.12} (limit 1 + 1e-9)",
        audit.audited, audit.worst_ratio
    ))
}

/// Check 5: reverse-mode gradients of the full training loss against
/// central differences.
fn c5_gradients() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::new(4, 5, 3, 1, 2.6e-5, 1.0);
    let hyper = HyperParams::default();
    let sampler = ChannelSampler::new(
        config.clone(),
        SpatialDist::Uniform,
        FadingSpec::Rayleigh,
        seed::derive(SEED, "c5-data"),
    );
    let batch = sampler.sample_many(0, 2);
    let program = BatchSumRateLoss {
        batch: &batch,
        config: &config,
        hyper,
        layers: 1,
    };
    let options = CheckOptions {
        max_coords: Some(50),
        seed: seed::derive(SEED, "c5-coords"),
    };
    let mut pass = true;
    let mut fractions = String::new();
    for i in 0..3u64 {
        let params = ModelParams::init(&config, hyper, seed::derive_indexed(SEED, "c5-init", i));
        let report = check_gradients(&program, &[], &params.to_blocks(), 1e-6, options)
            .map_err(|e| e.to_string())?;
        let frac = report.pass_fraction(1e-4);
        pass &= frac >= 0.95;
        let _ = write!(
            fractions,
            " {:.0}% of {}",
            frac * 100.0,
            report.coords.len()
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    Ok((pass, format!(
        "batch-of-2 depth-1 loss at 3 random inits, h=1e-6: coords within 1e-4 rel err:{fractions} (need >=95% each), {secs:.1}s (limit 60s)"
    )))
}

/// Check 6: the trained 3-layer network must beat the 3-sweep solver by
/// 10% and at least match the 100-sweep solver on fresh data.
fn c6_training_lift(trained: &Trained, audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::default();
    let sampler = default_sampler("c6-test");
    let full_opts = SolverOptions::default();
    let mut truncated_opts = SolverOptions::default();
    truncated_opts.max_iters = 3;

    let n = 500u64;
    let (mut sum_full, mut sum_tr, mut sum_net) = (0.0f64, 0.0f64, 0.0f64);
    for idx in 0..n {
        let csi = sampler.sample(idx);
        let (full, full_sweeps) =
            wmmse::run_wmmse_sweeps(&csi, &config, &full_opts).map_err(|e| e.to_string())?;
        audit.record_sweeps(&full_sweeps, config.pmax);
        sum_full += wmmse::sum_rate(&csi, &full.v, config.sigma, &config.alpha)
            .map_err(|e| e.to_string())?;

        let (tr, tr_sweeps) =
            wmmse::run_wmmse_sweeps(&csi, &config, &truncated_opts).map_err(|e| e.to_string())?;
        audit.record_sweeps(&tr_sweeps, config.pmax);
        sum_tr += wmmse::sum_rate(&csi, &tr.v, config.sigma, &config.alpha)
            .map_err(|e| e.to_string())?;

        let (v, trace) = forward(&csi, &trained.params, &config, 3).map_err(|e| e.to_string())?;
        for layer in &trace {
            audit.record(&layer.v, config.pmax);
        }
        sum_net +=
            wmmse::sum_rate(&csi, &v, config.sigma, &config.alpha).map_err(|e| e.to_string())?;
    }
    let lift_tr = sum_net / sum_tr;
    let lift_full = sum_net / sum_full;
    let secs = trained.secs + t0.elapsed().as_secs_f64();
    let pass = lift_tr >= 1.10 && lift_full >= 1.00 && secs < 1800.0;
    Ok((pass, format!(
        "{}; over 500 fresh instances mean rates are unrolled(3) {:.3}, truncated(3) {:.3}, full(100) {:.3}: {:.3}x truncated (need 1.10), {:.3}x full (need 1.00); {:.0}s incl. training (limit 1800s)",
        trained.note,
        sum_net / n as f64,
        sum_tr / n as f64,
        sum_full / n as f64,
        lift_tr,
        lift_full,
        secs
    )))
}

/// Check 7: per-sample wall time of the 3-layer network against the
/// 100-sweep solver at 20 pairs.
fn c7_timing(trained: &Trained, audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let sampler = default_sampler("c7-data").with_m(20);
    let config = sampler.config.clone();
    // 51 draws: the first warms caches and is dropped from the means.
    let testset = sampler.sample_many(0, 51);
    let timing =
        eval::timing_benchmark(&testset, &config, &trained.params, 3).map_err(|e| e.to_string())?;

    // The benchmark reports times only; rerun the algorithms to audit the
    // beamformers they emit on the same inputs.
    let full_opts = SolverOptions::default();
    let mut truncated_opts = SolverOptions::default();
    truncated_opts.max_iters = 3;
    for csi in &testset {
        let (_, sweeps) =
            wmmse::run_wmmse_sweeps(csi, &config, &full_opts).map_err(|e| e.to_string())?;
        audit.record_sweeps(&sweeps, config.pmax);
        let (_, sweeps) =
            wmmse::run_wmmse_sweeps(csi, &config, &truncated_opts).map_err(|e| e.to_string())?;
        audit.record_sweeps(&sweeps, config.pmax);
        let (_, trace) = forward(csi, &trained.params, &config, 3).map_err(|e| e.to_string())?;
        for layer in &trace {
            audit.record(&layer.v, config.pmax);
        }
    }
    let ratio = timing.uwmmse_secs / timing.wmmse_secs;
    let secs = t0.elapsed().as_secs_f64();
    let pass = ratio <= 0.2 && secs < 300.0;
    Ok((pass, format!(
        "{} timed instances with 20 pairs: unrolled(3) {:.5}s vs full(100) {:.5}s per sample, ratio {:.3} (limit 0.2), {secs:.0}s (limit 300s)",
        timing.samples, timing.uwmmse_secs, timing.wmmse_secs, ratio
    )))
}

/// Check 8: feeding the network distorted channel estimates must cost
/// nothing at distortion rate zero and degrade monotonically with the
/// rate, up to sampling noise.
fn c8_robustness(trained: &Trained, audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::default();
    let sampler = default_sampler("c8-data");
    let rates = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let sigma_r = 1e-3;
    let n = 100usize;

    let mut normalized = vec![vec![0.0f64; n]; rates.len()];
    let mut zero_rate_gap = 0.0f64;
    for idx in 0..n {
        let csi = sampler.sample(idx as u64);
        let full =
            wmmse::run_wmmse(&csi, &config, &SolverOptions::default()).map_err(|e| e.to_string())?;
        audit.record(&full.v, config.pmax);
        let denom = wmmse::sum_rate(&csi, &full.v, config.sigma, &config.alpha)
            .map_err(|e| e.to_string())?;
        let (v_clean, trace) = forward(&csi, &trained.params, &config, 3).map_err(|e| e.to_string())?;
        for layer in &trace {
            audit.record(&layer.v, config.pmax);
        }
        for (ri, &rate) in rates.iter().enumerate() {
            let noisy = distort_csi(
                &csi,
                rate,
                sigma_r,
                seed::derive_indexed(SEED, "c8-noise", (ri * n + idx) as u64),
            )
            .map_err(|e| e.to_string())?;
            // Beamformers come from the distorted estimate; the achieved
            // rate is what they earn on the true channel.
            let (v, trace) = forward(&noisy, &trained.params, &config, 3).map_err(|e| e.to_string())?;
            for layer in &trace {
                audit.record(&layer.v, config.pmax);
            }
            if ri == 0 {
                for (a, b) in v.iter().zip(&v_clean) {
                    zero_rate_gap = zero_rate_gap.max(a.max_abs_diff(b));
                }
            }
            normalized[ri][idx] = wmmse::sum_rate(&csi, &v, config.sigma, &config.alpha)
                .map_err(|e| e.to_string())?
                / denom;
        }
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let means: Vec<f64> = normalized.iter().map(|xs| mean(xs)).collect();
    let mut curve = String::new();
    for m in &means {
        let _ = write!(curve, " {m:.3}");
    }
    // A rise between adjacent rates only counts when it clears twice the
    // standard error of the paired per-sample differences.
    let mut rises = 0usize;
    for ri in 0..rates.len() - 1 {
        let diffs: Vec<f64> = (0..n)
            .map(|i| normalized[ri + 1][i] - normalized[ri][i])
            .collect();
        let dm = mean(&diffs);
        let var = diffs.iter().map(|d| (d - dm) * (d - dm)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        if dm > 0.0 && dm >= 2.0 * se {
            rises += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = zero_rate_gap == 0.0 && rises == 0 && secs < 600.0;
    Ok((pass, format!(
        "rate-0 output identical to the clean run (gap {zero_rate_gap:.1e}); normalized means over rates 0..1:{curve}; significant rises: {rises} (limit 0); {secs:.0}s (limit 600s)"
    )))
}

/// One sweep of the single-antenna recursion in plain complex scalars.
struct ScalarSweep {
    u: Vec<Complex64>,
    w: Vec<Complex64>,
    v: Vec<Complex64>,
}

/// Transcribes the single-antenna sweep directly from the update rules:
/// every matrix inverse collapses to a scalar reciprocal. Kept free of the
/// matrix types on purpose so it can disagree with them.
fn siso_reference(
    h: &[Vec<Complex64>],
    sigma: f64,
    mu: f64,
    pmax: f64,
    sweeps: usize,
) -> Vec<ScalarSweep> {
    let m = h.len();
    let a0 = (pmax / 2.0).sqrt();
    let mut v: Vec<Complex64> = vec![Complex64::new(a0, a0); m];
    let saturate = |bar: Complex64| -> Complex64 {
        let power = bar.norm_sqr();
        if power <= pmax {
            bar
        } else {
            // Slight undershoot so reapplying the projection is a no-op.
            bar * ((1.0 / power.sqrt()) * (pmax.sqrt() * (1.0 - 1e-12)))
        }
    };
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let u: Vec<Complex64> = (0..m)
            .map(|i| {
                let mut den = sigma * sigma;
                for j in 0..m {
                    den += (h[i][j] * v[j]).norm_sqr();
                }
                h[i][i] * v[i] / den
            })
            .collect();
        let w: Vec<Complex64> = (0..m)
            .map(|i| {
                let gap = Complex64::new(1.0, 0.0) - u[i].conj() * h[i][i] * v[i];
                Complex64::new(1.0 / gap.re, 0.0)
            })
            .collect();
        v = (0..m)
            .map(|i| {
                let mut den = Complex64::new(0.0, 0.0);
                for j in 0..m {
                    let p = h[i][j].conj() * u[j];
                    den += p * w[j] * p.conj();
                }
                den += Complex64::new(mu, 0.0);
                saturate(h[i][i].conj() * (u[i] * w[i]) / den)
            })
            .collect();
        out.push(ScalarSweep {
            u,
            w,
            v: v.clone(),
        });
    }
    out
}

/// Check 9: with one antenna per end and one stream, both matrix paths
/// must agree with the scalar transcription to near machine precision.
fn c9_siso(audit: &mut PowerAudit) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::new(10, 1, 1, 1, 1.0, 1.0);
    let mu = 0.1;
    let params = ModelParams::zero_theta(&config, HyperParams::default(), Complex64::new(mu, 0.0));
    let sampler = ChannelSampler::new(
        config.clone(),
        SpatialDist::Uniform,
        FadingSpec::Rayleigh,
        seed::derive(SEED, "c9-data"),
    );
    let layers = 3;
    let mut worst = 0.0f64;
    for idx in 0..100u64 {
        let csi = sampler.sample(idx);
        let (v, trace) = forward(&csi, &params, &config, layers).map_err(|e| e.to_string())?;
        let states =
            wmmse::run_pinned_mu(&csi, &config, layers, mu, VUpdateConvention::ReceiverChannels)
                .map_err(|e| e.to_string())?;
        audit.record(&v, config.pmax);
        for state in &states {
            audit.record(&state.v, config.pmax);
        }
        let h: Vec<Vec<Complex64>> = (0..config.m)
            .map(|i| (0..config.m).map(|j| csi.entry(i, j, 0, 0)).collect())
            .collect();
        let scalar = siso_reference(&h, config.sigma, mu, config.pmax, layers);
        for k in 0..layers {
            for i in 0..config.m {
                let gaps = [
                    (trace[k].u[i].as_scalar() - scalar[k].u[i]).norm(),
                    (trace[k].w_hat[i].as_scalar() - scalar[k].w[i]).norm(),
                    (trace[k].v[i].as_scalar() - scalar[k].v[i]).norm(),
                    (states[k].u[i].as_scalar() - scalar[k].u[i]).norm(),
                    (states[k].w_hat[i].as_scalar() - scalar[k].w[i]).norm(),
                    (states[k].v[i].as_scalar() - scalar[k].v[i]).norm(),
                ];
                for g in gaps {
                    worst = worst.max(g);
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 60.0;
    Ok((pass, format!(
        "single-antenna recursion vs scalar transcription on 100 instances, 3 sweeps, both matrix paths: max gap {worst:.3e} (limit 1e-12), {secs:.1}s"
    )))
}

/// Check 10: the convergence residual vanishes identically when the
/// learned corrections are zero, and the trained model's per-layer
/// residual curve is reportable at depth 10.
fn c10_residual(trained: &Trained) -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::default();
    let sampler = default_sampler("c10-data");

    let mu = Complex64::new(0.1, 0.0);
    let zero = ModelParams::zero_theta(&config, HyperParams::default(), mu);
    let mut max_zero = 0.0f64;
    let mut unsolved = 0usize;
    for idx in 0..5u64 {
        let csi = sampler.sample(idx);
        let (_, trace) = forward(&csi, &zero, &config, 3).map_err(|e| e.to_string())?;
        for row in fixed_point_residual(&csi, &trace, Some(mu)) {
            for entry in row {
                match entry {
                    Some(r) => max_zero = max_zero.max(r),
                    None => unsolved += 1,
                }
            }
        }
    }

    let depth = 10;
    let samples = 10u64;
    let mu_trained = trained.params.mu.as_scalar();
    let mut layer_sum = vec![0.0f64; depth];
    let mut layer_n = vec![0usize; depth];
    for idx in 0..samples {
        let csi = sampler.sample(1000 + idx);
        let (_, trace) = forward(&csi, &trained.params, &config, depth).map_err(|e| e.to_string())?;
        let residuals = fixed_point_residual(&csi, &trace, Some(mu_trained));
        for (k, row) in residuals.iter().enumerate() {
            for entry in row.iter().flatten() {
                layer_sum[k] += entry;
                layer_n[k] += 1;
            }
        }
    }
    let mut curve = String::new();
    for k in 0..depth {
        let _ = write!(curve, " {:.2e}", layer_sum[k] / layer_n[k].max(1) as f64);
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = max_zero == 0.0 && unsolved == 0 && layer_n.iter().all(|&n| n > 0);
    Ok((pass, format!(
        "zero corrections: residual exactly 0 on every node and layer (max {max_zero:.1e}, unsolved {unsolved}); trained mean residual by layer at depth 10:{curve}; {secs:.1}s"
    )))
}

/// Check 11: empirical fading statistics with every node at one point, so
/// all links sit at distance zero and the analytic moments apply directly.
fn c11_channel_stats() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let config = NetworkConfig::new(2, 1, 1, 1, 1.0, 1.0);
    let draws = 1_000_000u64;
    let moments = |fading: FadingSpec, purpose: &str| -> (f64, f64, u64) {
        let sampler = ChannelSampler::new(
            config.clone(),
            SpatialDist::Gaussian { stddev: 0.0 },
            fading,
            seed::derive(SEED, purpose),
        );
        let (mut n, mut sum, mut sumsq) = (0u64, 0.0f64, 0.0f64);
        for idx in 0..draws {
            let csi = sampler.sample(idx);
            for z in csi.data() {
                for c in [z.re, z.im] {
                    n += 1;
                    sum += c;
                    sumsq += c * c;
                }
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        (mean, var, n)
    };

    let (rice_mean, rice_var, n) = moments(FadingSpec::Rician { k: 100.0 }, "c11-rice");
    let mean_target = (100.0f64 / 202.0).sqrt();
    let mean_se = (rice_var / n as f64).sqrt();
    let mean_gap_se = (rice_mean - mean_target).abs() / mean_se;

    let (_, ray_var, n) = moments(FadingSpec::Rayleigh, "c11-ray");
    let var_target = 0.5;
    let var_se = var_target * (2.0 / (n as f64 - 1.0)).sqrt();
    let var_gap_se = (ray_var - var_target).abs() / var_se;

    let secs = t0.elapsed().as_secs_f64();
    let pass = mean_gap_se <= 3.0 && var_gap_se <= 3.0 && secs < 60.0;
    Ok((pass, format!(
        "1e6 draws each at distance 0: rician k=100 component mean {rice_mean:.6} vs {mean_target:.6} ({mean_gap_se:.2} SE), rayleigh component variance {ray_var:.6} vs {var_target} ({var_gap_se:.2} SE), {secs:.0}s (limit 60s)"
    )))
}

#[test]
fn acceptance() {
    let mut audit = PowerAudit::default();
    let mut verdicts: Vec<Verdict> = Vec::new();

    verdicts.push(verdict(1, c1_reduction(&mut audit)));

    println!("[setup] training the shared model (used by checks 2, 6, 7, 8, 10)");
    let trained = train_shared();
    match &trained {
        Ok(t) => println!("[setup] trained in {:.0}s: {}", t.secs, t.note),
        Err(e) => println!("[setup] training failed: {e}"),
    }

    verdicts.push(verdict(2, with_trained(&trained, c2_equivariance)));
    verdicts.push(verdict(3, c3_monotonicity(&mut audit)));
    verdicts.push(verdict(5, c5_gradients()));
    verdicts.push(verdict(
        6,
        with_trained(&trained, |t| c6_training_lift(t, &mut audit)),
    ));
    verdicts.push(verdict(
        7,
        with_trained(&trained, |t| c7_timing(t, &mut audit)),
    ));
    verdicts.push(verdict(
        8,
        with_trained(&trained, |t| c8_robustness(t, &mut audit)),
    ));
    verdicts.push(verdict(9, c9_siso(&mut audit)));
    verdicts.push(verdict(10, with_trained(&trained, c10_residual)));
    verdicts.push(verdict(11, c11_channel_stats()));

    // Last: the power audit has now seen every beamformer emitted above.
    let (pass, detail) = c4_power(&audit);
    verdicts.push(Verdict {
        num: 4,
        pass,
        detail,
    });

    verdicts.sort_by_key(|v| v.num);
    println!();
    for v in &verdicts {
        println!(
            "C{} {}: {}",
            v.num,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("C{}", v.num))
        .collect();
    assert!(
        failed.is_empty(),
        "acceptance checks failed: {}",
        failed.join(", ")
    );
}
