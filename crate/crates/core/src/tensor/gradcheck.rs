//! Finite-difference validation of reverse-mode gradients.

use super::{ParamStore, Tape, Var};
use crate::error::{arg_err, GemError, Result};

/// Knobs for [`grad_check_report`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_elements_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_elements_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter name, worst relative error, elements checked)
    pub per_param: Vec<(String, f64, usize)>,
    pub elements_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients over every element of every parameter.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let opts = GradCheckOptions {
        h,
        max_elements_per_param: None,
    };
    Ok(grad_check_report(loss_fn, params, opts)?.max_rel_error)
}

/// Like [`grad_check`], with per-parameter detail and optional subsampling.
pub fn grad_check_report<F>(mut loss_fn: F, params: &ParamStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.h) {
        return Err(arg_err!("finite-difference step {} outside [1e-6, 1e-4]", opts.h));
    }
    let mut tape = Tape::new();
    let loss = loss_fn(params, &mut tape)?;
    let grads = tape.backward(loss)?;

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(store, &mut t)?;
        let v = t.item(l);
        if !v.is_finite() {
            return Err(GemError::NonFinite(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        elements_checked: 0,
    };
    for id in params.ids() {
        let analytic = grads.param_grad(&tape, params, id);
        let n = analytic.len();
        let picks: Vec<usize> = match opts.max_elements_per_param {
            Some(limit) if limit < n => (0..limit).map(|i| i * n / limit).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &picks {
            let orig = work.get(id).values()[i];
            work.get_mut(id).values_mut()[i] = orig + opts.h;
            let plus = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig - opts.h;
            let minus = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.elements_checked += picks.len();
        report
            .per_param
            .push((params.name(id).to_string(), worst, picks.len()));
    }
    Ok(report)
}
