use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` builds the function on a fresh tape from leaf handles for `params`.
/// Returns `max |a − n| / max(1, |a|, |n|)` over every parameter entry.
pub fn grad_check<F>(f: F, params: &[Matrix], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::invalid(format!("step {h} outside [1e-7, 1e-3]")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("backward ran"))
        .collect();

    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
        let y = f(&mut t, &vs)?;
        let v = t.value(y).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("function value at perturbed point".into()))
        }
    };

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = work[pi].as_slice()[j];
            work[pi].as_mut_slice()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
