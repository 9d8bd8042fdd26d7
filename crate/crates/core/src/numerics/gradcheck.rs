use alloc::string::String;

use super::adam::ParamSet;
use super::real::Real;
use crate::error::{mismatch, Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares `analytic` against central differences `(L(θ+h) − L(θ−h)) / 2h`
/// taken coordinate by coordinate.
pub fn finite_diff_check<T, P, F>(mut loss_fn: F, params: &P, analytic: &P, h: f64) -> Result<GradCheckReport>
where
    T: Real,
    P: ParamSet<T> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let shapes: alloc::vec::Vec<(String, alloc::vec::Vec<usize>)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let analytic_tensors = analytic.tensors();
    if analytic_tensors.len() != shapes.len() {
        return Err(mismatch("analytic gradients", &[shapes.len()], &[analytic_tensors.len()]));
    }
    for ((name, shape), (_, a)) in shapes.iter().zip(&analytic_tensors) {
        if a.shape() != shape.as_slice() {
            return Err(mismatch(name, shape, a.shape()));
        }
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for (k, (name, _)) in shapes.iter().enumerate() {
        let len = analytic_tensors[k].1.len();
        for idx in 0..len {
            let original = probe.tensors()[k].1.data()[idx];
            let mut eval = |probe: &mut P, value: T| -> Result<f64> {
                probe.tensors_mut()[k].1.data_mut()[idx] = value;
                let l = loss_fn(probe)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteProbe {
                        param: name.clone(),
                        index: idx,
                    });
                }
                Ok(l)
            };
            let plus = eval(&mut probe, T::from_f64(original.to_f64() + h))?;
            let minus = eval(&mut probe, T::from_f64(original.to_f64() - h))?;
            probe.tensors_mut()[k].1.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic_tensors[k].1.data()[idx].to_f64();
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if report.worst_param.is_empty() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
