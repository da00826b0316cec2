//! Finite-difference validation of taped gradients.
//!
//! Central differences are taken on individual real and imaginary
//! coordinates of the parameter blocks, matching the gradient convention
//! `grad = dL/dRe + i dL/dIm` coordinate for coordinate.

use super::{evaluate, record_forward, AutodiffError, Program};
use crate::linalg::CMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Re,
    Im,
}

/// One checked coordinate.
#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub block: String,
    /// Row-major entry index within the block.
    pub index: usize,
    pub component: Component,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

impl GradCheckReport {
    /// Fraction of checked coordinates with relative error at most `tol`.
    pub fn pass_fraction(&self, tol: f64) -> f64 {
        if self.coords.is_empty() {
            return 1.0;
        }
        let ok = self.coords.iter().filter(|c| c.rel_err <= tol).count();
        ok as f64 / self.coords.len() as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Check at most this many coordinates, sampled without replacement.
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            max_coords: None,
            seed: 0,
        }
    }
}

/// Compares taped gradients against central differences with step `h`
/// (must lie in `[1e-8, 1e-4]`).
///
/// The relative error uses an absolute floor at the smallest gradient a
/// central difference can resolve here. Each loss evaluation passes
/// through conditioned solves and carries absolute noise around
/// `1e-13 * (1 + |loss|)`; dividing by `2h` and demanding `1e-4` relative
/// resolution puts the measurable-magnitude cutoff near
/// `1e-3 * (1 + |loss|)`. Coordinates below the floor (dead ReLU branches,
/// saturated nodes whose radial sensitivity the power projection removes)
/// are judged against the floor instead of their own size.
pub fn check_gradients<P: Program>(
    program: &P,
    inputs: &[CMatrix],
    params: &[CMatrix],
    h: f64,
    options: CheckOptions,
) -> Result<GradCheckReport, AutodiffError> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(AutodiffError::BadStep { h });
    }

    let (tape, out) = record_forward(program, inputs, params)?;
    let loss = tape.value(out).as_scalar().re;
    let grads = tape.backward(out, 1.0)?;

    // All (block, entry, component) coordinates.
    let mut coords: Vec<(usize, usize, Component)> = Vec::new();
    for (bi, block) in params.iter().enumerate() {
        for idx in 0..block.rows() * block.cols() {
            coords.push((bi, idx, Component::Re));
            coords.push((bi, idx, Component::Im));
        }
    }
    if let Some(n) = options.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        coords.shuffle(&mut rng);
        coords.truncate(n);
    }

    let atol = 1e-3 * (1.0 + loss.abs());
    let names = program.param_names();
    let mut checks = Vec::with_capacity(coords.len());
    for (bi, idx, comp) in coords {
        let delta = match comp {
            Component::Re => Complex64::new(h, 0.0),
            Component::Im => Complex64::new(0.0, h),
        };
        let eval_at = |shift: Complex64| -> Result<f64, AutodiffError> {
            let mut p = params.to_vec();
            p[bi].data_mut()[idx] += shift;
            Ok(evaluate(program, inputs, &p)?.as_scalar().re)
        };
        let plus = eval_at(delta)?;
        let minus = eval_at(-delta)?;
        let numeric = (plus - minus) / (2.0 * h);
        let g = grads.blocks()[bi].data()[idx];
        let analytic = match comp {
            Component::Re => g.re,
            Component::Im => g.im,
        };
        let rel_err = (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + atol);
        checks.push(CoordCheck {
            block: names[bi].clone(),
            index: idx,
            component: comp,
            analytic,
            numeric,
            rel_err,
        });
    }

    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let mean_rel_err = if checks.is_empty() {
        0.0
    } else {
        checks.iter().map(|c| c.rel_err).sum::<f64>() / checks.len() as f64
    };
    Ok(GradCheckReport {
        loss,
        coords: checks,
        max_rel_err,
        mean_rel_err,
    })
}
