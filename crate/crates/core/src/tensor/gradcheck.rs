use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose ±h probe straddled a kink (ReLU or max-pool switch)
    /// and were re-measured with a smaller step.
    pub kinks: usize,
}

/// Floor on the relative-error denominator; central-difference roundoff
/// is around 1e-11 at h = 1e-5, so gradients below this are compared
/// absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative error `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of every coordinate of every parameter.
///
/// Per-coordinate error is [`rel_error`]. A probe whose second difference
/// shows a slope jump inside `[x - h, x + h]` is repeated at `h / 10` and
/// then `h / 100`, since the function is not differentiable across it.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |j| (p, j)))
        .collect();
    grad_check_coords(f, params, h, &coords)
}

/// Like [`grad_check`], restricted to the listed `(parameter, coordinate)` pairs.
pub fn grad_check_coords<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&tape, &vars)?;
        if !out.item().is_finite() {
            return Err(Error::NonFinite("grad_check: output at the base point".into()));
        }
        let grads = tape.backward(out)?;
        vars.iter()
            .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; v.numel()]))
            .collect()
    };

    let eval = |shifted: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = shifted.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let f0 = eval(&work)?;
    for &(p, j) in coords {
        let base = params[p].data()[j];
        let mut step = h;
        let mut numeric;
        let mut retries = 0;
        loop {
            work[p].data_mut()[j] = base + step;
            let plus = eval(&work)?;
            work[p].data_mut()[j] = base - step;
            let minus = eval(&work)?;
            work[p].data_mut()[j] = base;
            numeric = (plus - minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: parameter {p} coordinate {j}"
                )));
            }
            // smooth: ≈ step·f''; kink: ≈ slope jump
            let jump = (plus + minus - 2.0 * f0).abs() / step;
            if jump <= 1e-3 * numeric.abs().max(1e-4) || retries == 2 {
                break;
            }
            retries += 1;
            step /= 10.0;
        }
        if retries > 0 {
            report.kinks += 1;
        }
        let a = analytic[p][j];
        let rel = rel_error(a, numeric);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst = (p, j);
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
