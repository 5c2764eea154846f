use crate::error::{Error, Result};
use crate::geometry::RelativeOffsets;
use crate::scalar::Scalar;

fn check_sigma<T: Scalar>(sigma: T) -> Result<()> {
    if sigma > T::zero() && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")))
    }
}

/// `0.5 sigma^2 x^2` for `|x| <= 1/sigma^2`, else `|x| - 1/(2 sigma^2)`.
pub fn smooth_l1<T: Scalar>(x: T, sigma: T) -> Result<T> {
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    let half = T::lit(0.5);
    Ok(if x.abs() <= T::one() / s2 {
        half * s2 * x * x
    } else {
        x.abs() - half / s2
    })
}

/// Derivative of [`smooth_l1`] in `x`.
pub fn smooth_l1_grad<T: Scalar>(x: T, sigma: T) -> Result<T> {
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    Ok(if x.abs() <= T::one() / s2 {
        s2 * x
    } else {
        x.signum()
    })
}

/// Sum over the four offsets of `smooth_l1(target_i - pred_i)`.
pub fn loss<T: Scalar>(pred: &RelativeOffsets<T>, target: &RelativeOffsets<T>, sigma: T) -> Result<T> {
    let mut total = T::zero();
    for (p, t) in pred.0.iter().zip(&target.0) {
        total += smooth_l1(*t - *p, sigma)?;
    }
    Ok(total)
}

/// Gradient of [`loss`] with respect to `pred`.
pub fn loss_grad<T: Scalar>(pred: &RelativeOffsets<T>, target: &RelativeOffsets<T>, sigma: T) -> Result<[T; 4]> {
    let mut g = [T::zero(); 4];
    for ((gi, p), t) in g.iter_mut().zip(&pred.0).zip(&target.0) {
        *gi = -smooth_l1_grad(*t - *p, sigma)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tabulated_values() {
        assert_eq!(smooth_l1(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(smooth_l1(2.0, 1.0).unwrap(), 1.5);
        assert_eq!(smooth_l1(1.0, 1.0).unwrap(), 0.5);
        assert_eq!(smooth_l1(-2.0, 1.0).unwrap(), 1.5);
        // sigma = 2: breakpoint 0.25; 0.1 -> 0.5*4*0.01, 1 -> 1 - 0.125
        assert!((smooth_l1(0.1f64, 2.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(smooth_l1(1.0, 2.0).unwrap(), 0.875);
        assert!(smooth_l1(1.0, 0.0).is_err());
        assert!(smooth_l1(1.0, -1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let z = RelativeOffsets([0.0f64; 4]);
        assert_eq!(loss(&z, &z, 1.0).unwrap(), 0.0);
        let t = RelativeOffsets([0.1, 0.0, 0.0, 0.0]);
        assert!((loss(&z, &t, 1.0).unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(loss(&z, &RelativeOffsets([2.0; 4]), 1.0).unwrap(), 6.0);
    }

    #[test]
    fn gradient_on_quadratic_branch_is_scaled_residual() {
        let p = RelativeOffsets([0.1f64, -0.2, 0.05, 0.0]);
        let t = RelativeOffsets([0.2, 0.1, -0.05, 0.3]);
        let g = loss_grad(&p, &t, 1.5).unwrap();
        for i in 0..4 {
            assert!((g[i] + 2.25 * (t.0[i] - p.0[i])).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn even_nonnegative_monotone(x in -10.0..10.0f64, y in -10.0..10.0f64, sigma in 0.1..4.0f64) {
            let fx = smooth_l1(x, sigma).unwrap();
            prop_assert_eq!(fx, smooth_l1(-x, sigma).unwrap());
            prop_assert!(fx >= 0.0);
            if x.abs() <= y.abs() {
                prop_assert!(fx <= smooth_l1(y, sigma).unwrap());
            }
        }

        #[test]
        fn loss_symmetric(p in prop::array::uniform4(-3.0..3.0f64), t in prop::array::uniform4(-3.0..3.0f64)) {
            let a = loss(&RelativeOffsets(p), &RelativeOffsets(t), 1.0).unwrap();
            let b = loss(&RelativeOffsets(t), &RelativeOffsets(p), 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
