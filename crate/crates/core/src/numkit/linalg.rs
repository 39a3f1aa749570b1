//! Singular value decomposition by one-sided Jacobi rotations, and the
//! Moore–Penrose pseudoinverse built on it.

use super::matrix::{axpy, dot};
use super::Matrix;
use crate::{Error, Result};

/// Relative threshold used when no tolerance is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;

/// Thin SVD `A = U diag(s) Vᵀ` of an `m x n` matrix.
///
/// `u` is `m x k`, `s` has length `k`, `v` is `n x k` with `k = min(m, n)`.
/// Singular values are sorted in decreasing order. Singular values at the
/// rounding level of `A` are reported as exactly 0 with zero `u`/`v` columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// Computes the thin SVD with one-sided (Hestenes) Jacobi.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::Shape(format!(
            "svd of empty {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if !a.all_finite() {
        return Err(Error::Parameter("svd input contains non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose());
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    Ok(svd_tall(a))
}

/// Tall (`m >= n`) case.
///
/// A column-pivoted Householder QR `A P = Q R` comes first. Rows of `R` past
/// the numerical rank `k` are dropped, and one-sided Jacobi runs on the `n x k`
/// matrix `Rᵀ`, which is close to orthogonal-columned already and needs only
/// a handful of sweeps. With `Rᵀ = X Σ Yᵀ` the factors of `A` are
/// `U = Q [Y; 0]` and `V = P X`.
fn svd_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    let qr = pivoted_qr(a);
    let k = qr.rank;

    // Row i of `xt` is column i of Rᵀ, i.e. row i of R.
    let mut xt = Matrix::zeros(k, n);
    for i in 0..k {
        for j in i..n {
            xt.set(i, j, qr.cols.get(j, i));
        }
    }
    let (yt, sigma) = jacobi_columns(&mut xt);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    // Columns past `k` stay zero: they belong to singular values that are
    // rounding noise, which `rank` and `pinv` never use.
    let mut s = vec![0.0; n];
    let mut v = Matrix::zeros(n, n);
    let mut u_cols = Matrix::zeros(n, m);
    for (t, &j) in order.iter().enumerate() {
        let sj = sigma[j];
        s[t] = sj;
        if sj > 0.0 {
            for (r, &x) in xt.row(j).iter().enumerate() {
                v.set(qr.perm[r], t, x / sj);
            }
        }
        u_cols.row_mut(t)[..k].copy_from_slice(yt.row(j));
    }
    for t in 0..k {
        qr.apply_q(u_cols.row_mut(t));
    }
    Svd {
        u: u_cols.transpose(),
        s,
        v,
    }
}

struct PivotedQr {
    /// Row `j` holds column `j` of `A P` after elimination: entries `0..=j`
    /// (up to `rank`) are column `j` of `R`.
    cols: Matrix,
    /// Householder vectors `v_i` (length `m - i`) and their `2 / vᵀv`.
    reflectors: Vec<(Vec<f64>, f64)>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    /// `x <- Q x` with `Q = H_0 H_1 … H_{k-1}`.
    fn apply_q(&self, x: &mut [f64]) {
        for (i, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            let seg = &mut x[i..];
            let f = beta * dot(v, seg);
            axpy(-f, v, seg);
        }
    }
}

fn pivoted_qr(a: &Matrix) -> PivotedQr {
    let (m, n) = a.shape();
    let mut cols = a.transpose();
    let mut perm: Vec<usize> = (0..n).collect();
    let total: f64 = (0..n).map(|j| dot(cols.row(j), cols.row(j))).sum();
    // Anything below this is indistinguishable from rounding in `A` itself.
    let negligible = (m as f64 * f64::EPSILON).powi(2) * total;
    let mut reflectors = Vec::new();

    let mut k = 0;
    while k < n.min(m) {
        let (p, best) = (k..n)
            .map(|j| (j, dot(&cols.row(j)[k..], &cols.row(j)[k..])))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if best <= negligible {
            break;
        }
        if p != k {
            swap_rows(cols.as_mut_slice(), m, k, p);
            perm.swap(k, p);
        }
        let x = &cols.row(k)[k..];
        let norm = best.sqrt();
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        let beta = if vv > 0.0 { 2.0 / vv } else { 0.0 };
        {
            let row = &mut cols.row_mut(k)[k..];
            row[0] = alpha;
            row[1..].iter_mut().for_each(|r| *r = 0.0);
        }
        for j in k + 1..n {
            let seg = &mut cols.row_mut(j)[k..];
            let f = beta * dot(&v, seg);
            axpy(-f, &v, seg);
        }
        reflectors.push((v, beta));
        k += 1;
    }
    PivotedQr {
        cols,
        reflectors,
        perm,
        rank: k,
    }
}

fn swap_rows(data: &mut [f64], width: usize, p: usize, q: usize) {
    let (lo, hi) = (p.min(q), p.max(q));
    let (head, tail) = data.split_at_mut(hi * width);
    head[lo * width..(lo + 1) * width].swap_with_slice(&mut tail[..width]);
}

/// One-sided Jacobi on the rows of `x` (each row one column of the matrix
/// being orthogonalized). Returns the accumulated rotations — row `j` is
/// column `j` of the right factor — and the final row norms.
fn jacobi_columns(x: &mut Matrix) -> (Matrix, Vec<f64>) {
    let (k, len) = x.shape();
    let mut vt = Matrix::identity(k);
    let mut norms: Vec<f64> = (0..k).map(|j| dot(x.row(j), x.row(j))).collect();
    let negligible = (len as f64 * f64::EPSILON).powi(2) * norms.iter().sum::<f64>();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k.saturating_sub(1) {
            for q in p + 1..k {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(x.row(p), x.row(q));
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(x.as_mut_slice(), len, p, q, c, s);
                rotate_rows(vt.as_mut_slice(), k, p, q, c, s);
                norms[p] = dot(x.row(p), x.row(p));
                norms[q] = dot(x.row(q), x.row(q));
            }
        }
        if !rotated {
            break;
        }
    }
    (vt, norms.iter().map(|v| v.sqrt()).collect())
}

/// Applies the plane rotation `(x_p, x_q) <- (c x_p - s x_q, s x_p + c x_q)` to two rows.
fn rotate_rows(data: &mut [f64], width: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * width);
    let xp = &mut head[p * width..(p + 1) * width];
    let xq = &mut tail[..width];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, bq) = (*a, *b);
        *a = c * ap - s * bq;
        *b = s * ap + c * bq;
    }
}

impl Svd {
    /// Number of singular values above `tol * s_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let cutoff = tol * self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&x| x > cutoff).count()
    }

    /// `V diag(1/s) Uᵀ`, dropping singular values `<= tol * s_max`.
    pub fn pinv(&self, tol: f64) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let keep = self.rank(tol);
        let ut = self.u.transpose();
        let vt = self.v.transpose();
        let mut out = Matrix::zeros(n, m);
        for k in 0..keep {
            let inv = 1.0 / self.s[k];
            let vk = vt.row(k);
            let uk = ut.row(k);
            for (i, &vi) in vk.iter().enumerate() {
                if vi != 0.0 {
                    axpy(vi * inv, uk, out.row_mut(i));
                }
            }
        }
        out
    }
}

/// Moore–Penrose pseudoinverse.
///
/// Singular values `<= tol * s_max` are treated as zero, so rank deficiency is
/// absorbed rather than reported.
pub fn pseudoinverse(m: &Matrix, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("pseudoinverse tol must be > 0, got {tol}")));
    }
    Ok(svd(m)?.pinv(tol))
}
