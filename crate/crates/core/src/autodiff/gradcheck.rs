use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing backward() against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks the gradient of the scalar built by `f` at `x`.
///
/// `f` receives a fresh tape and the input variable and must return a scalar
/// variable. It is called once with `x` as a tracked leaf and then twice per
/// entry with `x +- h` as a constant.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant_ref(point);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf_ref(x);
        let out = f(&mut tape, v)?;
        if tape.is_tracked(out) {
            tape.backward(out)?.wrt(v)
        } else {
            Tensor::zeros(x.shape())
        }
    };

    let mut numeric = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (up - down) / (2.0 * h);
    }

    let (worst_index, max_rel_error) = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
