use super::tape::{Tape, Var};
use crate::error::{numeric_err, shape_err, Result};
use crate::tensor::{DType, Tensor};

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let v = tape.leaf(x);
    let out = f(&tape, v)?;
    let value = out.value();
    if value.numel() != 1 {
        return Err(shape_err!(
            "grad_check needs a scalar function, got {:?}",
            value.shape()
        ));
    }
    Ok(value.item())
}

/// Largest relative error between the tape gradient of scalar `f` at `x`
/// and a central difference with step `h`, over every coordinate of `x`.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`. Evaluation is in float64.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, h, &coords)
}

/// As [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let x = x.to_dtype(DType::F64).with_requires_grad(true);
    let analytic = {
        let tape = Tape::new();
        let v = tape.leaf(&x);
        let out = f(&tape, v)?;
        let grads = tape.backward(out)?;
        grads
            .raw(v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()])
    };
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(numeric_err!("non-finite analytic gradient"));
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.detached();
    for &c in coords {
        if c >= x.numel() {
            return Err(shape_err!(
                "coordinate {c} out of range for {} elements",
                x.numel()
            ));
        }
        let x0 = x.data()[c];
        let mut buf = x.data().to_vec();
        buf[c] = x0 + h;
        probe.assign(&buf)?;
        let fp = evaluate(&f, &probe)?;
        buf[c] = x0 - h;
        probe.assign(&buf)?;
        let fm = evaluate(&f, &probe)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(numeric_err!(
                "non-finite function value near coordinate {c}"
            ));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[c] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of x*stop(x) as seen by the tape is x, the true derivative is 2x.
        let x = Tensor::from_f64(&[2], vec![3.0, -2.0]).unwrap();
        let e = grad_check(|_, v| Ok(v.mul(v.detach())?.sum_all()), &x, 1e-4).unwrap();
        assert!(e > 0.4);
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let x = Tensor::from_f64(&[1], vec![1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                Ok(v.scalar_mul(f64::INFINITY)
                    .mul(t.constant(x.clone()))?
                    .sum_all())
            },
            &x,
            1e-4,
        );
        assert!(matches!(r, Err(crate::Error::Numeric(_))));
    }
}
