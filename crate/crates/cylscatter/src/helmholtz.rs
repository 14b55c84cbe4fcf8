//! Frequency-domain solver with exact per-mode closures on the end truncations.
//!
//! The truncation layer of each end is closed by the ghost relation
//! `u_{L+1} = T u_L`, `T = Σ_n ξ_n φ_n φ_nᵀ M`, where `ξ_n = e^{iκ_n h}` solves
//! the discrete dispersion `2(1 − cos κ_n h)/h² = z − λ_n` on the radiating
//! branch.  The closed matrix `M(H − z)` stays complex symmetric and banded.

use std::f64::consts::PI;

use serde::Serialize;

use crate::cross_section::{Limit, ModeBasis};
use crate::error::{Error, Result};
use crate::linalg::{c, BandLu, C64, I};
use crate::manifold::{DiscreteManifold, EndInfo};

pub const EXCEPTIONAL_RCOND: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClosureKind {
    Outgoing,
    Incoming,
    /// Outgoing closure with the free wave of mode `n` on its growing branch.
    NonPhysical(usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeClosure {
    pub energy: C64,
    pub h: f64,
    pub kind: ClosureKind,
    /// Branch of the free wave `e^{iκ_n y}` in each mode.
    pub kappa: Vec<C64>,
    /// Ghost multipliers used by the solver (always the radiating branch).
    pub xi: Vec<C64>,
}

/// `(κ, ξ)` on the radiating branch: outgoing (`Im ξ > 0`) or incoming on the
/// unit circle, `|ξ| < 1` otherwise.
pub fn radiating_branch(z: C64, lambda_n: f64, h: f64, incoming: bool) -> Result<(C64, C64)> {
    let cc = c(1.0) - (z - lambda_n) * (h * h / 2.0);
    if z.im == 0.0 {
        let cr = cc.re;
        if (cr - 1.0).abs() < 1e-12 || (cr + 1.0).abs() < 1e-12 {
            return Err(Error::Threshold { energy: z.re, mode: 0, threshold: lambda_n });
        }
        if cr.abs() < 1.0 {
            let s = (1.0 - cr * cr).sqrt();
            let kappa = cr.acos() / h;
            return Ok(if incoming { (c(-kappa), C64::new(cr, -s)) } else { (c(kappa), C64::new(cr, s)) });
        }
        if cr > 1.0 {
            let a = cr.acosh();
            return Ok((C64::new(0.0, a / h), c((-a).exp())));
        }
        let a = (-cr).acosh();
        return Ok((C64::new(PI / h, a / h), c(-(-a).exp())));
    }
    let root = (cc * cc - 1.0).sqrt();
    let mut xi = cc - root;
    if xi.norm() > 1.0 {
        xi = cc + root;
    }
    let kappa = -I * xi.ln() / h;
    Ok((kappa, xi))
}

pub fn make_closure(mb: &ModeBasis, z: C64, h: f64, kind: ClosureKind) -> Result<ModeClosure> {
    let incoming = kind == ClosureKind::Incoming;
    let mut kappa = Vec::with_capacity(mb.len());
    let mut xi = Vec::with_capacity(mb.len());
    for (n, &ln) in mb.eigenvalues.iter().enumerate() {
        let (k, x) = radiating_branch(z, ln, h, incoming).map_err(|_| Error::Threshold { energy: z.re, mode: n, threshold: ln })?;
        kappa.push(k);
        xi.push(x);
    }
    if let ClosureKind::NonPhysical(n) = kind {
        if !(z.im == 0.0 && z.re < mb.eigenvalues[n]) {
            return Err(Error::NotEvanescent { mode: n, energy: z.re, threshold: mb.eigenvalues[n] });
        }
        kappa[n] = -kappa[n];
    }
    Ok(ModeClosure { energy: z, h, kind, kappa, xi })
}

impl ModeClosure {
    /// Defect of the discrete dispersion relation over all modes.
    pub fn dispersion_defect(&self, mb: &ModeBasis) -> f64 {
        let h = self.h;
        self.kappa
            .iter()
            .zip(&mb.eigenvalues)
            .map(|(k, ln)| (c(2.0) * (c(1.0) - (k * h).cos()) / (h * h) - (self.energy - ln)).norm())
            .fold(0.0, f64::max)
    }
}

/// Open-stencil operator `H = M^{-1} K` in row form.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub measures: Vec<f64>,
}

pub fn assemble_hamiltonian(m: &DiscreteManifold) -> SparseOperator {
    let rows = (0..m.len())
        .map(|i| {
            let mut row = vec![(i, m.adjacency[i].iter().map(|e| e.weight).sum::<f64>() / m.measures[i])];
            row.extend(m.adjacency[i].iter().map(|e| (e.to, -e.weight / m.measures[i])));
            row.sort_by_key(|p| p.0);
            row
        })
        .collect();
    SparseOperator { rows, measures: m.measures.clone() }
}

impl SparseOperator {
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| u[j] * v).sum()).collect()
    }

    /// Largest `|m_i H_ij − m_j H_ji|`.
    pub fn weighted_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                let back = self.rows[j].iter().find(|p| p.0 == i).map(|p| p.1).unwrap_or(0.0);
                worst = worst.max((self.measures[i] * v - self.measures[j] * back).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FieldTag {
    Outgoing,
    Incoming,
    NonPhysical(usize),
    None,
}

#[derive(Clone, Debug, Serialize)]
pub struct WaveField {
    pub values: Vec<C64>,
    pub energy: C64,
    pub tag: FieldTag,
}

/// `M(H − z)` closed at every end truncation, factored once.
pub struct ClosedSystem {
    pub energy: C64,
    pub closures: Vec<ModeClosure>,
    pub rcond: f64,
    lu: BandLu,
    measures: Vec<f64>,
}

fn closure_entries(m: &DiscreteManifold, end: &EndInfo, cl: &ModeClosure) -> Vec<(usize, usize, C64)> {
    let mb = &m.modes;
    let mu = &m.cross_section.node_measures;
    let mut out = vec![];
    for a in 0..m.nx {
        for b in 0..m.nx {
            let t: C64 = (0..mb.len()).map(|n| cl.xi[n] * (mb.eigenvectors[(a, n)] * mb.eigenvectors[(b, n)] * mu[b])).sum();
            let delta = if a == b { 1.0 } else { 0.0 };
            out.push((m.node(end.closure_layer, a), m.node(end.closure_layer, b), (c(delta) - t) * (mu[a] / m.h_y)));
        }
    }
    out
}

impl ClosedSystem {
    /// `limit` selects `λ ± i0` for real `z`; complex `z` always uses the decaying branch.
    pub fn new(m: &DiscreteManifold, z: C64, limit: Limit) -> Result<Self> {
        let kind = match (z.im == 0.0, limit) {
            (true, Limit::Plus) | (false, _) => ClosureKind::Outgoing,
            (true, Limit::Minus) => ClosureKind::Incoming,
            (true, Limit::None) => return Err(Error::Threshold { energy: z.re, mode: 0, threshold: f64::NAN }),
        };
        let closure = make_closure(&m.modes, z, m.h_y, kind)?;
        let closures = vec![closure; m.ends.len()];
        let mut entries = Vec::with_capacity(m.len() * 7 + m.ends.len() * m.nx * m.nx);
        for i in 0..m.len() {
            let mut d = c(0.0) - z * m.measures[i];
            for e in &m.adjacency[i] {
                d += e.weight;
                entries.push((i, e.to, c(-e.weight)));
            }
            entries.push((i, i, d));
        }
        for (end, cl) in m.ends.iter().zip(&closures) {
            entries.extend(closure_entries(m, end, cl));
        }
        let lu = BandLu::factor(m.len(), m.nx, m.nx, entries).map_err(|_| Error::Exceptional { energy: z.re, rcond: 0.0 })?;
        let rcond = lu.rcond();
        if rcond < EXCEPTIONAL_RCOND {
            return Err(Error::Exceptional { energy: z.re, rcond });
        }
        Ok(ClosedSystem { energy: z, closures, rcond, lu, measures: m.measures.clone() })
    }

    /// Solve `(H − z)u = f`.
    pub fn solve(&self, f: &[C64]) -> Vec<C64> {
        let mut b: Vec<C64> = f.iter().zip(&self.measures).map(|(v, mi)| v * mi).collect();
        self.lu.solve_in_place(&mut b);
        b
    }

    /// `(H − z)u` with the closures applied.
    pub fn apply(&self, m: &DiscreteManifold, u: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = (0..m.len())
            .map(|i| m.adjacency[i].iter().map(|e| (u[i] - u[e.to]) * e.weight).sum::<C64>() - u[i] * self.energy * m.measures[i])
            .collect();
        for (end, cl) in m.ends.iter().zip(&self.closures) {
            for (i, j, v) in closure_entries(m, end, cl) {
                out[i] += v * u[j];
            }
        }
        out.iter().zip(&m.measures).map(|(v, mi)| v / mi).collect()
    }
}

/// Free wave `π^{-1/2} Q^{-1/2} cos(κ y) φ_n`, `Q = sin(κh)/h`, on the layers of end `j`.
/// With `κ = ik` this is the `cosh` wave of the non-physical family.
pub fn free_wave(m: &DiscreteManifold, end: usize, n: usize, kappa: C64) -> Result<Vec<C64>> {
    let e = &m.ends[end];
    let h = m.h_y;
    let ymax = e.y(e.closure_layer, h).abs().max(e.y(e.chi_layer, h).abs());
    if (kappa.im * ymax).abs() > 700.0 {
        return Err(Error::Overflow(kappa.im * ymax));
    }
    let q = (kappa * h).sin() / h;
    let pref = q.powf(-0.5) / PI.sqrt();
    let mut u = vec![c(0.0); m.len()];
    for l in 0..m.layers {
        let y = e.y(l, h);
        let amp = pref * (kappa * y).cos();
        for a in 0..m.nx {
            u[m.node(l, a)] = amp * m.modes.eigenvectors[(a, n)];
        }
    }
    Ok(u)
}

/// `χ_j u` for the indicator of the end region.
pub fn cutoff(m: &DiscreteManifold, end: usize, u: &[C64]) -> Vec<C64> {
    let e = &m.ends[end];
    (0..m.len()).map(|i| if e.in_region(m.layer_of(i)) { u[i] } else { c(0.0) }).collect()
}

/// `V_j W = (H − λ)(χ_j W)` for a free wave `W`; supported on the two layers
/// straddling the cutoff.
pub fn commutator_source(m: &DiscreteManifold, end: usize, w: &[C64], z: C64) -> Vec<C64> {
    let e = &m.ends[end];
    let chiw = cutoff(m, end, w);
    let inner = if e.direction > 0 { e.chi_layer - 1 } else { e.chi_layer + 1 };
    let mut out = vec![c(0.0); m.len()];
    for l in [inner, e.chi_layer] {
        for a in 0..m.nx {
            let i = m.node(l, a);
            let s: C64 = m.adjacency[i].iter().map(|ed| (chiw[i] - chiw[ed.to]) * ed.weight).sum();
            out[i] = s / m.measures[i] - chiw[i] * z;
        }
    }
    out
}

/// Outgoing-branch wavenumber of mode `n` at real `λ`.
pub fn outgoing_kappa(m: &DiscreteManifold, n: usize, lambda: f64) -> Result<C64> {
    radiating_branch(c(lambda), m.modes.eigenvalues[n], m.h_y, false).map(|p| p.0)
}

/// Eigenfunction `χW⁰ − R V W⁰` and its scattered part, with `R` from `sys`.
pub fn distorted_wave(m: &DiscreteManifold, sys: &ClosedSystem, end: usize, w0: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let src = commutator_source(m, end, w0, sys.energy);
    let scat: Vec<C64> = sys.solve(&src).into_iter().map(|v| -v).collect();
    let total = cutoff(m, end, w0).iter().zip(&scat).map(|(a, b)| a + b).collect();
    (total, scat)
}

/// `Ψ_{j,n,∓}(λ)`: `sign = −1` uses the outgoing resolvent, `+1` the incoming one.
pub fn generalized_eigenfunction(m: &DiscreteManifold, end: usize, n: usize, lambda: f64, sign: i32) -> Result<WaveField> {
    if lambda <= m.modes.eigenvalues[n] {
        return Err(Error::NotPropagating { mode: n, energy: lambda, threshold: m.modes.eigenvalues[n] });
    }
    let limit = if sign < 0 { Limit::Plus } else { Limit::Minus };
    let sys = ClosedSystem::new(m, c(lambda), limit)?;
    let w0 = free_wave(m, end, n, outgoing_kappa(m, n, lambda)?)?;
    let (values, _) = distorted_wave(m, &sys, end, &w0);
    Ok(WaveField { values, energy: c(lambda), tag: if sign < 0 { FieldTag::Outgoing } else { FieldTag::Incoming } })
}

/// `Φ_{1,n,−}(λ)` for `λ` below the threshold of mode `n` of end 1.
pub fn nonphysical_eigenfunction(m: &DiscreteManifold, n: usize, lambda: f64) -> Result<WaveField> {
    if lambda >= m.modes.eigenvalues[n] {
        return Err(Error::NotEvanescent { mode: n, energy: lambda, threshold: m.modes.eigenvalues[n] });
    }
    let sys = ClosedSystem::new(m, c(lambda), Limit::Plus)?;
    let w0 = free_wave(m, 0, n, outgoing_kappa(m, n, lambda)?)?;
    let (values, _) = distorted_wave(m, &sys, 0, &w0);
    Ok(WaveField { values, energy: c(lambda), tag: FieldTag::NonPhysical(n) })
}

/// Row residuals of `(H − λ)u` strictly inside the mesh (closure rows get 0).
pub fn open_residual_rows(m: &DiscreteManifold, u: &[C64], z: C64) -> Vec<f64> {
    let closure_layers: Vec<usize> = m.ends.iter().map(|e| e.closure_layer).collect();
    (0..m.len())
        .map(|i| {
            if closure_layers.contains(&m.layer_of(i)) {
                return 0.0;
            }
            let r: C64 = m.adjacency[i].iter().map(|e| (u[i] - u[e.to]) * e.weight).sum::<C64>() / m.measures[i] - u[i] * z;
            r.norm()
        })
        .collect()
}

pub fn open_residual(m: &DiscreteManifold, u: &[C64], z: C64) -> f64 {
    open_residual_rows(m, u, z).iter().map(|r| r * r).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;
    use crate::linalg::cvec_norm;

    fn flat(nx: usize, layers: usize) -> DiscreteManifold {
        let cs = CrossSection::cycle(nx, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers, chi_layer: 14, chi2_layer: 0, gamma_layer: 16, origins: vec![] };
        DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap()
    }

    fn bumped() -> DiscreteManifold {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 30, chi_layer: 14, chi2_layer: 0, gamma_layer: 16, origins: vec![] };
        let p = PerturbationSpec { kind: "bump".into(), amplitude: 0.4, center_node: 2, center_layer: 8.0, sigma: 2.0, support: (5, 12), ..Default::default() };
        DiscreteManifold::build(cs, &spec, &p).unwrap()
    }

    #[test]
    fn dispersion_and_branches() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let mb = crate::cross_section::transverse_spectrum(&cs).unwrap();
        for z in [c(1.0), c(3.3), c(7.5), C64::new(1.0, 0.3), C64::new(2.0, -0.5)] {
            let cl = make_closure(&mb, z, 1.0, ClosureKind::Outgoing).unwrap();
            assert!(cl.dispersion_defect(&mb) < 1e-12);
            assert!(cl.kappa.iter().all(|k| k.im >= 0.0));
            assert!(cl.xi.iter().all(|x| x.norm() <= 1.0 + 1e-15));
        }
        let cl = make_closure(&mb, c(1.0), 1.0, ClosureKind::Outgoing).unwrap();
        assert!(cl.kappa[0].re > 0.0 && cl.kappa[7].re == 0.0 && cl.kappa[7].im > 0.0);
        let np = make_closure(&mb, c(1.0), 1.0, ClosureKind::NonPhysical(7)).unwrap();
        assert!(np.kappa[7].im < 0.0);
        assert!(np.dispersion_defect(&mb) < 1e-12);
        assert!(make_closure(&mb, c(2.0), 1.0, ClosureKind::Outgoing).is_err());
    }

    #[test]
    fn kappa_converges_to_continuum() {
        let k: Vec<f64> = [0.1, 0.05].iter().map(|&h| radiating_branch(c(1.0), 0.0, h, false).unwrap().0.re).collect();
        assert!((k[0] - 1.0).abs() < 1e-3);
        let rich = (4.0 * k[1] - k[0]) / 3.0;
        assert!((rich - 1.0).abs() < 1e-6, "{rich}");
    }

    #[test]
    fn single_node_stencil_has_zero_row_sums() {
        let cs = CrossSection::from_edges(1, vec![], vec![1.0]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 8, chi_layer: 3, chi2_layer: 0, gamma_layer: 5, origins: vec![] };
        let m = DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap();
        let h = assemble_hamiltonian(&m);
        assert_eq!(h.rows[0], vec![(0, 2.0), (1, -2.0)]);
        assert_eq!(h.rows[3], vec![(2, -1.0), (3, 2.0), (4, -1.0)]);
        for r in &h.rows {
            assert!(r.iter().map(|p| p.1).sum::<f64>().abs() < 1e-15);
        }
        assert!(h.weighted_asymmetry() == 0.0);
        assert!(assemble_hamiltonian(&bumped()).weighted_asymmetry() < 1e-12);
    }

    #[test]
    fn product_operator_commutes_with_modes() {
        let m = flat(8, 20);
        let h = assemble_hamiltonian(&m);
        for n in 0..8 {
            let mut u = vec![c(0.0); m.len()];
            for l in 0..m.layers {
                for a in 0..8 {
                    u[m.node(l, a)] = c(((l * 7 + 3) % 5) as f64 * m.modes.eigenvectors[(a, n)]);
                }
            }
            let hu = h.apply(&u);
            for l in 0..m.layers {
                let layer: Vec<C64> = (0..8).map(|a| hu[m.node(l, a)]).collect();
                for k in 0..8 {
                    if k != n {
                        assert!(m.modes.coefficient(&layer, k).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn flat_green_function_matches_closed_form() {
        let m = flat(8, 30);
        for &(lambda, n) in &[(1.3, 0usize), (1.3, 2), (1.3, 5), (5.5, 7)] {
            let sys = ClosedSystem::new(&m, c(lambda), Limit::Plus).unwrap();
            let l0 = 9;
            let mut f = vec![c(0.0); m.len()];
            for a in 0..8 {
                f[m.node(l0, a)] = c(m.modes.eigenvectors[(a, n)]);
            }
            let u = sys.solve(&f);
            let kappa = outgoing_kappa(&m, n, lambda).unwrap();
            let q = kappa.sin();
            let mut err: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for l in 0..m.layers {
                let (ys, yb) = (l.min(l0) as f64, l.max(l0) as f64);
                let g = I / q * (kappa * ys).cos() * (I * kappa * yb).exp();
                for a in 0..8 {
                    let want = g * m.modes.eigenvectors[(a, n)];
                    err = err.max((u[m.node(l, a)] - want).norm());
                    scale = scale.max(want.norm());
                }
            }
            assert!(err <= 1e-8 * scale, "λ={lambda} n={n}: {err:e}");
        }
    }

    #[test]
    fn zero_source_and_conjugacy() {
        let m = bumped();
        let out = ClosedSystem::new(&m, c(1.7), Limit::Plus).unwrap();
        let inc = ClosedSystem::new(&m, c(1.7), Limit::Minus).unwrap();
        assert!(out.solve(&vec![c(0.0); m.len()]).iter().all(|v| v.norm() == 0.0));
        let f: Vec<C64> = (0..m.len()).map(|i| c(((i * 37) % 11) as f64 - 5.0)).collect();
        let a = out.solve(&f);
        let b = inc.solve(&f);
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y.conj()).norm()).fold(0.0, f64::max);
        assert!(d <= 1e-10 * cvec_norm(&a));
        let r: Vec<C64> = out.apply(&m, &a).iter().zip(&f).map(|(x, y)| x - y).collect();
        assert!(cvec_norm(&r) <= 1e-9 * cvec_norm(&f));
    }

    #[test]
    fn unperturbed_eigenfunctions_are_free() {
        let m = flat(8, 30);
        let psi = generalized_eigenfunction(&m, 0, 1, 1.7, -1).unwrap();
        let free = free_wave(&m, 0, 1, outgoing_kappa(&m, 1, 1.7).unwrap()).unwrap();
        let d: f64 = psi.values.iter().zip(&free).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d:e}");
        let phi = nonphysical_eigenfunction(&m, 5, 1.7).unwrap();
        let free = free_wave(&m, 0, 5, outgoing_kappa(&m, 5, 1.7).unwrap()).unwrap();
        let scale = cvec_norm(&free);
        let d: f64 = phi.values.iter().zip(&free).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-12 * scale, "{d:e}");
    }

    #[test]
    fn perturbed_eigenfunctions_solve_the_equation() {
        let m = bumped();
        for (n, lambda) in [(0usize, 1.1), (3, 2.9)] {
            let psi = generalized_eigenfunction(&m, 0, n, lambda, -1).unwrap();
            assert!(open_residual(&m, &psi.values, c(lambda)) <= 1e-9 * cvec_norm(&psi.values));
        }
        let phi = nonphysical_eigenfunction(&m, 7, 1.1).unwrap();
        let local = m.nx * 20;
        let rows = open_residual_rows(&m, &phi.values, c(1.1));
        let r = rows[..local].iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(r <= 1e-9 * cvec_norm(&phi.values[..local]), "{r:e}");
    }
}
