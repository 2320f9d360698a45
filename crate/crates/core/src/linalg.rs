//! Dense complex least squares by Householder QR with column equilibration.

use num_complex::Complex64;

/// Relative threshold on `|R_jj| / max_i |R_ii|` below which the
/// equilibrated regression is treated as rank deficient.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub(crate) struct LstsqFit {
    pub x: Vec<Complex64>,
    /// Residual sum of squares `||b - A x||^2`.
    pub rss: f64,
    /// `[(A^H A)^{-1}]_{00}`, the variance factor of the first parameter.
    pub inv_gram_00: f64,
}

/// Minimises `||b - A x||` where `columns[j]` is column `j` of `A`.
/// Returns `None` when `A` is (numerically) rank deficient or
/// underdetermined.
pub(crate) fn lstsq(columns: &[Vec<Complex64>], b: &[Complex64]) -> Option<LstsqFit> {
    let n = columns.len();
    let m = b.len();
    if n == 0 || m < n || columns.iter().any(|c| c.len() != m) {
        return None;
    }

    let scales: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt())
        .collect();
    if scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return None;
    }
    let mut a: Vec<Vec<Complex64>> = columns
        .iter()
        .zip(&scales)
        .map(|(c, &s)| c.iter().map(|v| v / s).collect())
        .collect();
    let mut qb = b.to_vec();
    let mut diag = vec![Complex64::new(0.0, 0.0); n];

    for j in 0..n {
        let norm = a[j][j..]
            .iter()
            .map(Complex64::norm_sqr)
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return None;
        }
        let x0 = a[j][j];
        let phase = if x0.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
        diag[j] = alpha;
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        let reflect = |col: &mut [Complex64]| {
            let dot: Complex64 = v
                .iter()
                .zip(col.iter())
                .map(|(vi, ci)| vi.conj() * ci)
                .sum();
            for (ci, vi) in col.iter_mut().zip(&v) {
                *ci -= vi * dot * 2.0;
            }
        };
        for col in a.iter_mut().skip(j + 1) {
            reflect(&mut col[j..]);
        }
        reflect(&mut qb[j..]);
        a[j][j] = alpha;
        for e in &mut a[j][j + 1..] {
            *e = Complex64::new(0.0, 0.0);
        }
    }

    let max_diag = diag.iter().fold(0.0f64, |acc, d| acc.max(d.norm()));
    if diag.iter().any(|d| d.norm() <= RANK_TOL * max_diag) {
        return None;
    }

    // R is stored as a[col][row] for row <= col.
    let r = |row: usize, col: usize| a[col][row];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let acc: Complex64 = (i + 1..n).map(|k| r(i, k) * z[k]).sum();
        z[i] = (qb[i] - acc) / r(i, i);
    }
    let x = z.iter().zip(&scales).map(|(zi, s)| zi / s).collect();
    let rss = qb[n..].iter().map(Complex64::norm_sqr).sum();

    // Solve R^H w = e_0; then [(R^H R)^{-1}]_{00} = ||w||^2.
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let rhs = if i == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
        let acc: Complex64 = (0..i).map(|k| r(k, i).conj() * w[k]).sum();
        w[i] = (rhs - acc) / r(i, i).conj();
    }
    let inv_gram_00 = w.iter().map(Complex64::norm_sqr).sum::<f64>() / (scales[0] * scales[0]);

    Some(LstsqFit {
        x,
        rss,
        inv_gram_00,
    })
}
