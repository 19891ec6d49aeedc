//! Central finite-difference verification of analytic gradients.

use super::{DType, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Denominator floor in the relative error `|a - n| / max(|a|, |n|, floor)`.
/// Keeps near-zero gradients from turning round-off into huge ratios.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Offender {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Largest offenders, worst first (at most five).
    pub worst: Vec<Offender>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

fn eval<F>(f: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(DType::F64);
    let loss = f(params, &mut g)?;
    let t = g.value(loss);
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Compares the analytic gradient of `f` against `(f(p+d) - f(p-d)) / 2d` for
/// every scalar of every parameter in `params`.
///
/// `f` builds the loss into the graph it is handed and must be a pure function
/// of the parameters: it is evaluated twice at the unperturbed point and any
/// difference (for instance from an unfrozen RNG) is rejected.
pub fn finite_diff_check<F>(mut f: F, params: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidStep(step));
    }
    let mut g = Graph::new(DType::F64);
    let loss = f(params, &mut g)?;
    let base = g.value(loss).item();
    let mut analytic = g.backward(loss)?;
    analytic.fill_unreached(params);

    let again = eval(&mut f, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst: Vec<Offender> = Vec::new();
    let mut checked = 0;
    for name in &names {
        let grad = analytic.get(name).expect("filled above").data().to_vec();
        for (index, &a) in grad.iter().enumerate() {
            let original = probe.get(name).expect("same names").data()[index];
            probe.get_mut(name).unwrap().data_mut()[index] = original + step;
            let plus = eval(&mut f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[index] = original - step;
            let minus = eval(&mut f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            let rel_error = (a - numeric).abs() / denom;
            checked += 1;
            if worst.len() < 5 || rel_error > worst.last().map_or(0.0, |o| o.rel_error) {
                worst.push(Offender {
                    name: name.clone(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
                worst.sort_by(|x, y| y.rel_error.total_cmp(&x.rel_error));
                worst.truncate(5);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.first().map_or(0.0, |o| o.rel_error),
        checked,
        worst,
    })
}
