//! Dense and banded linear algebra helpers shared by the solvers.
//!
//! The frequency-domain systems assembled on layered meshes are banded once the
//! nodes are numbered layer by layer, so a banded LU with partial pivoting gives
//! a direct factorization whose cost grows linearly with the number of layers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Banded LU factorization `P A = L U` with row pivoting.
///
/// Row `r` keeps columns `r - kl ..= r + ku + kl`, enough room for the fill
/// produced by partial pivoting.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    u: Vec<C64>,
    l: Vec<C64>,
    piv: Vec<usize>,
    norm1: f64,
}

impl BandLu {
    /// Factor the matrix given by `(row, col, value)` triplets; duplicates add up.
    pub fn factor<It>(n: usize, kl: usize, ku: usize, entries: It) -> Result<Self>
    where
        It: IntoIterator<Item = (usize, usize, C64)>,
    {
        let width = 2 * kl + ku + 1;
        let mut u = vec![C64::new(0.0, 0.0); n * width];
        let mut colsum = vec![0.0; n];
        for (r, col, v) in entries {
            assert!(
                col + kl >= r && col <= r + ku,
                "entry ({r},{col}) outside band kl={kl} ku={ku}"
            );
            u[r * width + col + kl - r] += v;
        }
        for r in 0..n {
            let lo = r.saturating_sub(kl);
            let hi = (r + ku).min(n - 1);
            for col in lo..=hi {
                colsum[col] += u[r * width + col + kl - r].norm();
            }
        }
        let norm1 = colsum.iter().cloned().fold(0.0, f64::max);
        let mut lu = BandLu { n, kl, ku, width, u, l: vec![C64::new(0.0, 0.0); n * kl.max(1)], piv: vec![0; n], norm1 };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, r: usize, col: usize) -> usize {
        r * self.width + col + self.kl - r
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let right = (k + ku + kl).min(n - 1);
            let mut p = k;
            let mut best = self.u[self.at(k, k)].norm();
            for r in k + 1..=last {
                let v = self.u[self.at(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(k));
            }
            self.piv[k] = p;
            if p != k {
                for col in k..=right {
                    let (a, b) = (self.at(k, col), self.at(p, col));
                    self.u.swap(a, b);
                }
            }
            let pivot = self.u[self.at(k, k)];
            for r in k + 1..=last {
                let ir = self.at(r, k);
                let m = self.u[ir] / pivot;
                self.l[k * kl + (r - k - 1)] = m;
                if m.norm() != 0.0 {
                    self.u[ir] = C64::new(0.0, 0.0);
                    for col in k + 1..=right {
                        let (src, dst) = (self.at(k, col), self.at(r, col));
                        let v = self.u[src];
                        self.u[dst] -= m * v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            let last = (k + kl).min(n - 1);
            for r in k + 1..=last {
                b[r] -= self.l[k * kl + (r - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let right = (k + ku + kl).min(n - 1);
            let mut s = b[k];
            for col in k + 1..=right {
                s -= self.u[self.at(k, col)] * b[col];
            }
            b[k] = s / self.u[self.at(k, k)];
        }
    }

    /// Solve `A^T x = b`.
    pub fn solve_transpose_in_place(&self, b: &mut [C64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let lo = k.saturating_sub(ku + kl);
            let mut s = b[k];
            for r in lo..k {
                s -= self.u[self.at(r, k)] * b[r];
            }
            b[k] = s / self.u[self.at(k, k)];
        }
        for k in (0..n).rev() {
            let last = (k + kl).min(n - 1);
            let mut s = b[k];
            for r in k + 1..=last {
                s -= self.l[k * kl + (r - k - 1)] * b[r];
            }
            b[k] = s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Hager-style estimate of the reciprocal 1-norm condition number.
    pub fn rcond(&self) -> f64 {
        let n = self.n;
        if n == 0 || self.norm1 == 0.0 {
            return 0.0;
        }
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            let ny: f64 = y.iter().map(|v| v.norm()).sum();
            if ny <= est {
                break;
            }
            est = ny;
            let mut s: Vec<C64> = y
                .iter()
                .map(|v| if v.norm() > 0.0 { v.conj() / v.norm() } else { C64::new(1.0, 0.0) })
                .collect();
            self.solve_transpose_in_place(&mut s);
            let (j, _) = s
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, v)| if v.norm() > acc.1 { (i, v.norm()) } else { acc });
            x = vec![C64::new(0.0, 0.0); n];
            x[j] = C64::new(1.0, 0.0);
        }
        1.0 / (self.norm1 * est)
    }
}

/// Eigenpairs of the pencil `K ψ = λ diag(m) ψ` for symmetric `K`, ascending,
/// with columns orthonormal in the `m`-weighted inner product.
pub fn generalized_symmetric_eigen(k: &DMatrix<f64>, m: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Eigensolver(format!("shape {}x{} vs {} measures", k.nrows(), k.ncols(), n)));
    }
    let s: Vec<f64> = m.iter().map(|v| 1.0 / v.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let v = s[i] * k[(i, j)] * s[j];
        if i == j { v } else { 0.5 * (v + s[j] * k[(j, i)] * s[i]) }
    });
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolver("non-finite matrix entries".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(a, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigensolver(format!("no convergence for n = {n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])] * s[r]);
    Ok((values, vectors))
}

/// Group ascending values into runs whose consecutive gaps are at most `tol`.
pub fn group_by_tolerance(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (v - values[*g.last().unwrap()]).abs() <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Deterministic Gram–Schmidt in the `m`-weighted inner product over the listed columns.
pub fn weighted_gram_schmidt(v: &mut DMatrix<f64>, cols: &[usize], m: &[f64]) {
    for (a, &ca) in cols.iter().enumerate() {
        for &cb in &cols[..a] {
            let p: f64 = (0..v.nrows()).map(|r| v[(r, ca)] * v[(r, cb)] * m[r]).sum();
            for r in 0..v.nrows() {
                let x = v[(r, cb)];
                v[(r, ca)] -= p * x;
            }
        }
        let nrm: f64 = (0..v.nrows()).map(|r| v[(r, ca)] * v[(r, ca)] * m[r]).sum::<f64>().sqrt();
        for r in 0..v.nrows() {
            v[(r, ca)] /= nrm;
        }
    }
}

/// Flip the sign of each column so its first entry above `tol` in magnitude is positive.
pub fn fix_signs(v: &mut DMatrix<f64>, tol: f64) {
    for col in 0..v.ncols() {
        if let Some(r) = (0..v.nrows()).find(|&r| v[(r, col)].abs() > tol) {
            if v[(r, col)] < 0.0 {
                v.column_mut(col).neg_mut();
            }
        }
    }
}

/// Orthogonal `Q` minimizing `‖A Q − B‖_F`.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.transpose() * b;
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v");
    u * vt
}

/// Numerical rank with singular values above `rtol · σ_max`, plus the singular values.
pub fn numerical_rank(a: &DMatrix<C64>, rtol: f64) -> (usize, Vec<f64>) {
    if a.nrows() == 0 || a.ncols() == 0 {
        return (0, vec![]);
    }
    let sv = a.clone().singular_values();
    let mut s: Vec<f64> = sv.iter().cloned().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let smax = s.first().cloned().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > rtol * smax).count();
    (rank, s)
}

/// Moore–Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pinv(a: &DMatrix<C64>, rtol: f64) -> DMatrix<C64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let k = svd.singular_values.len();
    let mut out = DMatrix::<C64>::zeros(a.ncols(), a.nrows());
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > rtol * smax {
            let ui = u.column(i);
            let vi = vt.row(i);
            for r in 0..a.ncols() {
                for col in 0..a.nrows() {
                    out[(r, col)] += vi[r].conj() * ui[col].conj() / s;
                }
            }
        }
    }
    out
}

/// Spectral norm of a complex matrix.
pub fn op_norm(a: &DMatrix<C64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn to_complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|v| C64::new(v, 0.0))
}

pub fn cvec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (Vec<(usize, usize, C64)>, DMatrix<C64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = DMatrix::<C64>::zeros(n, n);
        let mut trip = vec![];
        for r in 0..n {
            for col in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                dense[(r, col)] = v;
                trip.push((r, col, v));
            }
        }
        (trip, dense)
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let (n, kl, ku) = (37, 3, 5);
        let (trip, dense) = random_band(n, kl, ku, 7);
        let lu = BandLu::factor(n, kl, ku, trip).unwrap();
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0 - i as f64 * 0.1)).collect();
        let x = lu.solve(&b);
        let xd = dense.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).norm() < 1e-10 * (1.0 + xd[i].norm()));
        }
        let mut xt = b.clone();
        lu.solve_transpose_in_place(&mut xt);
        let xtd = dense.transpose().lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((xt[i] - xtd[i]).norm() < 1e-10 * (1.0 + xtd[i].norm()));
        }
    }

    #[test]
    fn rcond_flags_near_singular() {
        let n = 6;
        let mut trip = vec![];
        for i in 0..n {
            trip.push((i, i, c(if i == 3 { 1e-14 } else { 1.0 })));
        }
        let lu = BandLu::factor(n, 1, 1, trip).unwrap();
        assert!(lu.rcond() < 1e-10);
    }

    #[test]
    fn generalized_eigen_is_weighted_orthonormal() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let m = [0.5, 1.0, 2.0];
        let (vals, vecs) = generalized_symmetric_eigen(&k, &m).unwrap();
        assert!(vals[0].abs() < 1e-12);
        for a in 0..3 {
            for b in 0..3 {
                let p: f64 = (0..3).map(|r| vecs[(r, a)] * vecs[(r, b)] * m[r]).sum();
                assert!((p - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let t = 0.3f64;
        let q = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let b = &a * &q;
        let qq = procrustes(&a, &b);
        assert!((qq - q).norm() < 1e-12);
    }
}
