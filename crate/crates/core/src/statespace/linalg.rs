//! Tiny row-major dense kernels for `K × K` state matrices.

use nalgebra::{DMatrix, SymmetricEigen};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = a · x`
pub(crate) fn matvec(a: &[f64], x: &[f64], out: &mut [f64], k: usize) {
    for (r, o) in out.iter_mut().enumerate().take(k) {
        *o = dot(&a[r * k..(r + 1) * k], x);
    }
}

/// `out = a · b`
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], k: usize) {
    for r in 0..k {
        for c in 0..k {
            let mut s = 0.0;
            for i in 0..k {
                s += a[r * k + i] * b[i * k + c];
            }
            out[r * k + c] = s;
        }
    }
}

/// `out = a · bᵀ`
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], out: &mut [f64], k: usize) {
    for r in 0..k {
        for c in 0..k {
            out[r * k + c] = dot(&a[r * k..(r + 1) * k], &b[c * k..(c + 1) * k]);
        }
    }
}

pub(crate) fn symmetrize(p: &mut [f64], k: usize) {
    for r in 0..k {
        for c in 0..r {
            let v = 0.5 * (p[r * k + c] + p[c * k + r]);
            p[r * k + c] = v;
            p[c * k + r] = v;
        }
    }
}

/// `hᵀ P h`
pub(crate) fn quad_form(h: &[f64], p: &[f64], k: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..k {
        if h[r] == 0.0 {
            continue;
        }
        s += h[r] * dot(&p[r * k..(r + 1) * k], h);
    }
    s
}

const RELATIVE_CUTOFF: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix. Uses Cholesky when
/// the matrix is well conditioned, an eigen-decomposition otherwise.
/// `work` must hold at least `k * (k + 1)` values.
pub(crate) fn pinv_psd(p: &[f64], out: &mut [f64], k: usize, work: &mut [f64]) {
    if k == 1 {
        out[0] = if p[0] > 0.0 { 1.0 / p[0] } else { 0.0 };
        return;
    }
    if cholesky_inverse(p, out, k, work) {
        return;
    }
    let m = DMatrix::from_row_slice(k, k, p);
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = RELATIVE_CUTOFF * max;
    out.fill(0.0);
    if max <= 0.0 {
        return;
    }
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(j);
        for r in 0..k {
            for c in 0..k {
                out[r * k + c] += v[r] * v[c] / lam;
            }
        }
    }
}

// Returns false when a pivot is too small relative to the diagonal.
fn cholesky_inverse(p: &[f64], out: &mut [f64], k: usize, work: &mut [f64]) -> bool {
    let (l, y) = work.split_at_mut(k * k);
    let max_diag = (0..k).map(|i| p[i * k + i]).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        return false;
    }
    let tol = RELATIVE_CUTOFF * max_diag;
    l.fill(0.0);
    for j in 0..k {
        let mut d = p[j * k + j];
        for i in 0..j {
            d -= l[j * k + i] * l[j * k + i];
        }
        if d <= tol {
            return false;
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for r in j + 1..k {
            let mut s = p[r * k + j];
            for i in 0..j {
                s -= l[r * k + i] * l[j * k + i];
            }
            l[r * k + j] = s / d;
        }
    }
    // Column c of the inverse: solve L y = e_c then Lᵀ x = y.
    for c in 0..k {
        for r in 0..k {
            let mut s = if r == c { 1.0 } else { 0.0 };
            for i in 0..r {
                s -= l[r * k + i] * y[i];
            }
            y[r] = s / l[r * k + r];
        }
        for r in (0..k).rev() {
            let mut s = y[r];
            for i in r + 1..k {
                s -= l[i * k + r] * out[i * k + c];
            }
            out[r * k + c] = s / l[r * k + r];
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_spd() {
        let p = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let mut inv = [0.0; 9];
        let mut work = [0.0; 12];
        pinv_psd(&p, &mut inv, 3, &mut work);
        let mut id = [0.0; 9];
        matmul(&p, &inv, &mut id, 3);
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((id[r * 3 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        // v vᵀ with v = (2, 1): pinv = v vᵀ / |v|⁴
        let p = [4.0, 2.0, 2.0, 1.0];
        let mut inv = [0.0; 4];
        let mut work = [0.0; 6];
        pinv_psd(&p, &mut inv, 2, &mut work);
        let want = [4.0 / 25.0, 2.0 / 25.0, 2.0 / 25.0, 1.0 / 25.0];
        for (a, b) in inv.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_pinv_is_zero() {
        let mut inv = [1.0; 4];
        let mut work = [0.0; 6];
        pinv_psd(&[0.0; 4], &mut inv, 2, &mut work);
        assert!(inv.iter().all(|&v| v == 0.0));
        let mut one = [1.0];
        pinv_psd(&[0.0], &mut one, 1, &mut work);
        assert_eq!(one[0], 0.0);
    }
}
