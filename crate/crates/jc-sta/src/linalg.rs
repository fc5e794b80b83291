//! Small dense linear-algebra helpers on top of `ndarray-linalg`.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, Solve, UPLO, SVD};
use num_complex::Complex64 as C64;

use crate::error::{JcError, Result};

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending.
pub fn eigh(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (vals, vecs) = m.eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

/// exp(-i * H * t) for Hermitian H, via eigendecomposition.
pub fn expm_i_hermitian(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = eigh(h)?;
    let d = vals.len();
    let mut phased = Array2::<C64>::zeros((d, d));
    for (j, col) in vecs.columns().into_iter().enumerate() {
        let ph = (-I * c(vals[j] * t)).exp();
        for i in 0..d {
            phased[[i, j]] = col[i] * ph;
        }
    }
    Ok(phased.dot(&vecs.t().mapv(|z| z.conj())))
}

/// General matrix exponential by scaling and squaring with a Pade(13) approximant.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(JcError::Dimension("expm needs a square matrix".into()));
    }
    let norm = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max) * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a.mapv(|z| z / c(2f64.powi(s)));

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id = Array2::<C64>::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let u_inner = &a6 * c(B[13]) + &a4 * c(B[11]) + &a2 * c(B[9]);
    let u = scaled.dot(&(a6.dot(&u_inner) + &a6 * c(B[7]) + &a4 * c(B[5]) + &a2 * c(B[3]) + &id * c(B[1])));
    let v_inner = &a6 * c(B[12]) + &a4 * c(B[10]) + &a2 * c(B[8]);
    let v = a6.dot(&v_inner) + &a6 * c(B[6]) + &a4 * c(B[4]) + &a2 * c(B[2]) + &id * c(B[0]);

    // solve (V - U) X = (V + U)
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = Array2::<C64>::zeros((n, n));
    for (j, col) in rhs.columns().into_iter().enumerate() {
        let sol = lhs.solve(&col.to_owned())?;
        x.column_mut(j).assign(&sol);
    }
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Least squares `argmin_x |Ax - b|` with condition-number check via SVD.
pub fn least_squares(a: &Array2<f64>, b: &Array1<f64>) -> Result<(Array1<f64>, f64, f64)> {
    let (u, s, vt) = a
        .svd(true, true)
        .map_err(|e| JcError::Linalg(e.to_string()))?;
    let u = u.expect("svd with u");
    let vt = vt.expect("svd with vt");
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > 1e12 {
        return Err(JcError::FitIllConditioned(cond));
    }
    let k = s.len();
    let utb = u.t().dot(b);
    let mut y = Array1::<f64>::zeros(k);
    for i in 0..k {
        y[i] = utb[i] / s[i];
    }
    let x = vt.t().dot(&y);
    let resid = (a.dot(&x) - b).mapv(|v| v * v).sum().sqrt();
    Ok((x, resid, cond))
}

/// Kronecker product.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<C64>::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Frobenius norm.
pub fn fro_norm(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
