//! Central finite-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares tape gradients of `f` against central differences.
///
/// Returns the max over every input coordinate of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x)).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(*var) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; inputs[which].len()],
        };
        for coord in 0..inputs[which].len() {
            let orig = inputs[which].data()[coord];
            probe[which].data_mut()[coord] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[coord] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[coord];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {which} coordinate {coord}"
                )));
            }
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::NotScalar(t.shape().to_vec()));
    }
    let s = t.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(s)
}
