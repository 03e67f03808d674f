//! Classical Gram-Schmidt over matrix columns, with its reverse-mode derivative.
//!
//! Column `k` of the output is `t_k / ||t_k||` where
//! `t_k = v_k - Σ_{j<k} <v_k, u_j> u_j` and `v_k` is column `k` of the input.
//! Both directions run in 64-bit regardless of the storage type, so 32-bit
//! tables still come out orthonormal to ~1e-7 at d_s = 100.

use crate::numeric::{Matrix, Real};

use super::OteError;

/// Degeneracy threshold on `||t_k||`.
pub const TAU_GS: f64 = 1e-6;

/// Forward intermediates kept for the backward pass.
struct Factorization {
    /// Input columns, `v[k*n..]` is column k.
    v: Vec<f64>,
    /// Orthonormal columns, same layout.
    u: Vec<f64>,
    /// `r[j*n + k] = <v_k, u_j>` for j < k, `r[k*n + k] = ||t_k||`.
    r: Vec<f64>,
}

fn factorize<T: Real>(m: &[T], n: usize) -> Result<Factorization, OteError> {
    debug_assert_eq!(m.len(), n * n);
    let mut v = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            v[col * n + row] = m[row * n + col].f64();
        }
    }
    let mut u = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    let mut t = vec![0.0; n];
    for k in 0..n {
        let vk = &v[k * n..(k + 1) * n];
        t.copy_from_slice(vk);
        for j in 0..k {
            let uj = &u[j * n..(j + 1) * n];
            let c: f64 = uj.iter().zip(vk).map(|(a, b)| a * b).sum();
            r[j * n + k] = c;
            for (ti, &ui) in t.iter_mut().zip(uj) {
                *ti -= c * ui;
            }
        }
        let rho = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rho.is_nan() || rho < TAU_GS {
            return Err(OteError::Degenerate { index: k, norm: rho });
        }
        r[k * n + k] = rho;
        for (ui, &ti) in u[k * n..(k + 1) * n].iter_mut().zip(&t) {
            *ui = ti / rho;
        }
    }
    Ok(Factorization { v, u, r })
}

/// Writes `φ(m)` (row-major) into `out`.
pub fn orthogonalize<T: Real>(m: &[T], n: usize, out: &mut [T]) -> Result<(), OteError> {
    let f = factorize(m, n)?;
    for col in 0..n {
        for row in 0..n {
            out[row * n + col] = T::of(f.u[col * n + row]);
        }
    }
    Ok(())
}

/// Orthonormal matrix with the same leading column spans as `m`.
pub fn gram_schmidt<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>, OteError> {
    let n = m.dim();
    let mut out = vec![T::zero(); n * n];
    orthogonalize(m.as_slice(), n, &mut out)?;
    Ok(Matrix::from_row_major(n, out).expect("square"))
}

/// Accumulates `∂L/∂m` into `m_grad` given `∂L/∂φ(m)` in `q_grad` (both row-major).
pub fn orthogonalize_backward<T: Real>(m: &[T], n: usize, q_grad: &[T], m_grad: &mut [T]) -> Result<(), OteError> {
    let Factorization { v, u, r, .. } = factorize(m, n)?;
    // column-major copies of the incoming gradient
    let mut ubar = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            ubar[col * n + row] = q_grad[row * n + col].f64();
        }
    }
    let mut vbar = vec![0.0; n * n];
    let mut tbar = vec![0.0; n];
    for k in (0..n).rev() {
        let uk = &u[k * n..(k + 1) * n];
        let rho = r[k * n + k];
        let proj: f64 = uk.iter().zip(&ubar[k * n..(k + 1) * n]).map(|(a, b)| a * b).sum();
        for i in 0..n {
            tbar[i] = (ubar[k * n + i] - uk[i] * proj) / rho;
            vbar[k * n + i] += tbar[i];
        }
        let vk = &v[k * n..(k + 1) * n];
        for j in 0..k {
            let c = r[j * n + k];
            let uj = &u[j * n..(j + 1) * n];
            let cbar = -uj.iter().zip(&tbar).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                ubar[j * n + i] += -c * tbar[i] + cbar * vk[i];
                vbar[k * n + i] += cbar * uj[i];
            }
        }
    }
    for row in 0..n {
        for col in 0..n {
            m_grad[row * n + col] += T::of(vbar[col * n + row]);
        }
    }
    Ok(())
}
