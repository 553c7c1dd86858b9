//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error of a single coordinate.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient of `f` at `x` with central differences.
///
/// `f` returns the scalar value together with its analytic gradient (the
/// gradient is only read at `x` itself). The result is the largest
/// coordinatewise `|fd - g| / max(|g|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let (_, analytic) = f(x)?;
    if analytic.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "finite_diff_check",
            left: x.shape().to_vec(),
            right: analytic.shape().to_vec(),
        });
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?.0;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?.0;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        let fd = (plus - minus) / (2.0 * h);
        let g = analytic.data()[i];
        let err = (fd - g).abs() / g.abs().max(REL_ERR_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = finite_diff_check(
            |x| {
                let v = x.data().iter().map(|a| a * a).sum();
                Ok((v, x.map(|a| 2.0 * a)))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let err = finite_diff_check(|x| Ok((7.5, Tensor::zeros(x.shape()))), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = finite_diff_check(
            |x| {
                let v = x.data().iter().map(|a| a * a).sum();
                Ok((v, x.map(|a| 3.0 * a)))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.3);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let res = finite_diff_check(
            |x| Ok((1.0 / x.data()[0].abs().min(1e-300) * f64::MAX, Tensor::zeros(&[1]))),
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
