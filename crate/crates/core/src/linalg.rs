//! Dense matrix functions used to resample a discrete-time model onto a finer
//! (or arbitrary) step: `M^s = exp(s·log M)` on the block matrix
//! `[[A, B, F], [0, I, 0], [0, 0, I]]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Scaling-and-squaring exponential with a degree-18 Taylor kernel.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let y_inv = y.clone().try_inverse().ok_or_else(|| Error::Numerical("singular sqrtm iterate".into()))?;
        let z_inv = z.clone().try_inverse().ok_or_else(|| Error::Numerical("singular sqrtm iterate".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let change = (&y_next - &y).amax();
        y = y_next;
        z = z_next;
        if change <= 1e-15 * y.amax().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::Numerical("matrix square root did not converge".into()))
}

/// Principal logarithm by inverse scaling and squaring. Fails for matrices
/// with eigenvalues on the closed negative real axis.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut roots = 0;
    while (&x - &eye).abs().row_sum().max() > 0.1 {
        if roots > 60 {
            return Err(Error::Numerical("logm: square roots did not approach identity".into()));
        }
        x = sqrtm(&x)?;
        roots += 1;
    }
    // log(X) = 2·atanh((X−I)(X+I)⁻¹), odd series
    let plus_inv = (&x + &eye)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("logm: singular X+I".into()))?;
    let u = (&x - &eye) * plus_inv;
    let u2 = &u * &u;
    let mut power = u.clone();
    let mut sum = u.clone();
    for k in 1..40 {
        power = &power * &u2;
        let term = &power / (2 * k + 1) as f64;
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    if !sum.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("logm produced non-finite entries".into()));
    }
    Ok(sum * 2.0 * 2f64.powi(roots))
}

/// Real matrix power `A^s` through the principal logarithm.
pub fn powm(a: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    Ok(expm(&(logm(a)? * s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5, 3.0]));
        let e = expm(&a);
        for (i, v) in [-1.0f64, 0.5, 3.0].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() < 1e-12 * v.exp());
        }
    }

    #[test]
    fn log_inverts_exp() {
        let a = DMatrix::from_row_slice(3, 3, &[-0.5, 0.1, 0.0, 0.2, -0.02, 0.05, 0.0, 0.3, -1.2]);
        let back = logm(&expm(&a)).unwrap();
        assert!((back - &a).amax() < 1e-12);
    }

    #[test]
    fn fractional_powers_compose() {
        let a = expm(&DMatrix::from_row_slice(2, 2, &[-0.3, 0.2, 0.0, -0.05]));
        let half = powm(&a, 0.5).unwrap();
        assert!((&half * &half - &a).amax() < 1e-13);
        let fifth = powm(&a, 0.2).unwrap();
        let mut acc = DMatrix::identity(2, 2);
        for _ in 0..5 {
            acc = &acc * &fifth;
        }
        assert!((acc - &a).amax() < 1e-13);
    }

    #[test]
    fn jordan_block_at_one() {
        // [[a, b], [0, 1]]: the augmented input block
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 2.0, 0.0, 1.0]);
        let q = powm(&m, 0.25).unwrap();
        let mut acc = DMatrix::identity(2, 2);
        for _ in 0..4 {
            acc = &acc * &q;
        }
        assert!((acc - &m).amax() < 1e-12);
        assert!((q[(1, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[-0.5]);
        assert!(logm(&m).is_err());
    }
}
