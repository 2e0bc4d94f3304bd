use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamStore};

/// Report from a finite-difference sweep over every parameter entry.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - central| / max(1, |central|)`.
    pub max_relative_error: f64,
    /// Parameter name and flat entry index where the max occurred.
    pub worst_entry: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must be deterministic: it is evaluated twice at the initial
/// point and the two losses must agree bitwise, otherwise the run aborts.
/// Every parameter entry is then perturbed by `±step` and the analytic
/// gradient is compared to `(f(x+h) - f(x-h)) / 2h`.
pub fn grad_check<F>(params: &mut ParamStore, mut loss_fn: F, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    if !(step > 1e-7 && step < 1e-3) {
        return Err(TensorError::GradCheck(format!(
            "step {step} outside the supported range (1e-7, 1e-3)"
        )));
    }
    let (loss_a, grads) = loss_fn(params)?;
    let (loss_b, _) = loss_fn(params)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(TensorError::GradCheck(format!(
            "loss function is not deterministic: {loss_a} vs {loss_b}"
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_entry: None,
        entries_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let analytic = grads.get(id, params);
        let entries = params.get(id).numel();
        for entry in 0..entries {
            let original = params.get(id).data()[entry];
            params.get_mut(id).data_mut()[entry] = original + step;
            let (plus, _) = loss_fn(params)?;
            params.get_mut(id).data_mut()[entry] = original - step;
            let (minus, _) = loss_fn(params)?;
            params.get_mut(id).data_mut()[entry] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = (analytic.data()[entry] - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_entry = Some((params.name(id).to_string(), entry));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Mode, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::from_rows(&[vec![0.7, -1.3, 2.2]]).unwrap());
        let report = grad_check(
            &mut store,
            |p| {
                let mut tape = Tape::new(p, Mode::Eval);
                let w = tape.param(id)?;
                let sq = tape.mul(w, w)?;
                let loss = tape.sum_all(sq)?;
                let value = tape.scalar_value(loss);
                let grads = tape.backward(loss)?;
                Ok((value, grads))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-10);
        assert_eq!(report.entries_checked, 3);
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::from_rows(&[vec![0.4, 0.9]]).unwrap());
        let report = grad_check(
            &mut store,
            |p| {
                let mut tape = Tape::new(p, Mode::Eval);
                let w = tape.param(id)?;
                let sq = tape.mul(w, w)?;
                let loss = tape.sum_all(sq)?;
                let value = tape.scalar_value(loss);
                let mut grads = tape.backward(loss)?;
                // Tamper: double the gradient of the first entry.
                let bad = grads.get(id, p).map(|g| g * 2.0);
                grads = Gradients::new(p.len());
                grads.accumulate(id, &bad);
                Ok((value, grads))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error > 1e-2);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::scalar(1.0));
        let mut counter = 0.0;
        let err = grad_check(
            &mut store,
            |p| {
                counter += 1.0;
                let mut tape = Tape::new(p, Mode::Eval);
                let w = tape.param(id)?;
                let loss = tape.mul_scalar(w, counter)?;
                let value = tape.scalar_value(loss);
                let grads = tape.backward(loss)?;
                Ok((value, grads))
            },
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("not deterministic"));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(1.0));
        let err = grad_check(&mut store, |_| unreachable!(), 1e-2).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }
}
