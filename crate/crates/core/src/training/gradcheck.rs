//! Central-difference audit of analytic gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Coordinates sampled per parameter (all of them when fewer exist).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-4,
            floor: 1e-6,
            samples: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub argmax: usize,
    pub checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{}\t{}\tmax_rel_err {:.3e}\tat {}\t({} coords)",
                if e.pass { "ok" } else { "FAIL" },
                e.name,
                e.max_rel_err,
                e.argmax,
                e.checked
            )?;
        }
        Ok(())
    }
}

/// Evaluates `loss` once and returns the analytic parameter gradients.
pub fn analytic_grads<T, F>(store: &ParamStore<T>, loss: &F) -> Result<ParamGrads<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let root = loss(&mut tape)?;
    Ok(tape.backward(root)?.into_param_grads())
}

fn eval_loss<T, F>(store: &ParamStore<T>, loss: &F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let root = loss(&mut tape)?;
    Ok(tape.value(root).data()[0].as_f64())
}

/// Checks the tape's gradients of the scalar `loss` against central
/// differences for every parameter in `store`.
///
/// Meant for `f64`; single precision cannot reach the default tolerance.
pub fn finite_diff_check<T, F>(store: &ParamStore<T>, loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var> + Sync,
{
    let analytic = analytic_grads(store, &loss)?;
    check_against(store, &loss, &analytic, opts)
}

/// Like [`finite_diff_check`] but with caller-supplied analytic gradients.
pub fn check_against<T, F>(
    store: &ParamStore<T>,
    loss: &F,
    analytic: &ParamGrads<T>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var> + Sync,
{
    for id in store.ids() {
        if let Some(g) = analytic.get(id) {
            if !g.all_finite() {
                return Err(Error::GradCheck(format!(
                    "non-finite analytic gradient for {}",
                    store.name(id)
                )));
            }
        }
    }
    let ids: Vec<ParamId> = store.ids().collect();
    let entries = ids
        .par_iter()
        .map(|&id| check_param(store, loss, analytic, id, &opts))
        .collect::<Result<Vec<_>>>()?;
    let pass = entries.iter().all(|e| e.pass);
    Ok(GradCheckReport {
        entries,
        tol: opts.tol,
        pass,
    })
}

fn check_param<T, F>(
    store: &ParamStore<T>,
    loss: &F,
    analytic: &ParamGrads<T>,
    id: ParamId,
    opts: &GradCheckOptions,
) -> Result<GradCheckEntry>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var> + Sync,
{
    let n = store.value(id).len();
    let coords: Vec<usize> = if n <= opts.samples {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (id.index() as u64).wrapping_mul(0x9E37_79B9));
        let mut c = sample(&mut rng, n, opts.samples).into_vec();
        c.sort_unstable();
        c
    };
    let mut local = store.clone();
    let mut worst = (0.0f64, coords.first().copied().unwrap_or(0));
    for &c in &coords {
        let orig = local.value(id).data()[c];
        local.value_mut(id).data_mut()[c] = T::of(orig.as_f64() + opts.eps);
        let plus = eval_loss(&local, loss)?;
        local.value_mut(id).data_mut()[c] = T::of(orig.as_f64() - opts.eps);
        let minus = eval_loss(&local, loss)?;
        local.value_mut(id).data_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[c].as_f64());
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if !rel.is_finite() {
            return Err(Error::GradCheck(format!(
                "non-finite difference for {}",
                store.name(id)
            )));
        }
        if rel > worst.0 {
            worst = (rel, c);
        }
    }
    Ok(GradCheckEntry {
        name: store.name(id).to_string(),
        max_rel_err: worst.0,
        argmax: worst.1,
        checked: coords.len(),
        pass: worst.0 <= opts.tol,
    })
}
