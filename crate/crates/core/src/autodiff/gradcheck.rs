//! Central finite differences against the reverse-mode gradient.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Graph, ParamId, ParamStore, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many evenly spaced coordinates of each parameter.
    pub max_coords_per_param: Option<usize>,
    /// Restrict the check to these parameters (all when `None`).
    pub params: Option<Vec<ParamId>>,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: None,
            params: None,
            abs_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, abs_floor)`.
    pub max_rel_err: f64,
    pub worst: Option<Coordinate>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    Ok(g.scalar(out))
}

fn coordinates(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let m = m.max(1);
            (0..m).map(|k| k * len / m).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compare the reverse-mode gradient of the scalar built by `f` against
/// central differences, over the parameters of `store`.
pub fn grad_check<F>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut graph = Graph::new(store);
    let out = f(&mut graph)?;
    let base = graph.scalar(out);
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check: objective at the base point".to_string()));
    }
    let analytic = graph.backward(out)?.param_grads(&graph);
    drop(graph);

    let ids: Vec<ParamId> = match &opts.params {
        Some(p) => p.clone(),
        None => store.ids().collect(),
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in ids {
        let len = store.value(id).len();
        for idx in coordinates(len, opts.max_coords_per_param) {
            let orig = store.value(id).as_slice()[idx];
            probe.value_mut(id).as_mut_slice()[idx] = orig + opts.eps;
            let plus = evaluate(&probe, &f)?;
            probe.value_mut(id).as_mut_slice()[idx] = orig - opts.eps;
            let minus = evaluate(&probe, &f)?;
            probe.value_mut(id).as_mut_slice()[idx] = orig;

            let a = analytic.get(id).as_slice()[idx];
            let n = (plus - minus) / (2.0 * opts.eps);
            if !plus.is_finite() || !minus.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("grad_check at {}[{idx}]", store.name(id))));
            }
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.abs_floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some(Coordinate {
                    param: store.name(id).to_string(),
                    index: idx,
                });
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
