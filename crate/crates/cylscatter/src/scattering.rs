//! Scattering amplitudes, S-matrices and non-physical amplitudes.
//!
//! Every table is computed twice: from the far field of the distorted waves on
//! clean end layers, and as the bilinear quadrature `Σ m (V_k W⁰_{k,n}) W_{j,m}`
//! over the support of the cutoff commutator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cross_section::Limit;
use crate::error::{Error, Result};
use crate::helmholtz::{commutator_source, distorted_wave, free_wave, radiating_branch, ClosedSystem};
use crate::linalg::{c, C64, I};
use crate::manifold::DiscreteManifold;

pub const FIT_LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Channel {
    pub end: usize,
    pub mode: usize,
    pub threshold: f64,
    pub kappa: C64,
    pub open: bool,
}

impl Channel {
    /// `Q = sin(κh)/h`, the discrete flux factor of `e^{iκy}`.
    pub fn flux(&self, h: f64) -> C64 {
        (self.kappa * h).sin() / h
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub enum Regime {
    Phys,
    NphRow,
    NphCol,
    NphBoth,
}

#[derive(Clone, Debug, Serialize)]
pub struct AmplitudeTable {
    pub energy: f64,
    pub channels: Vec<Channel>,
    /// Far-field route, rows `(j, m)` and columns `(k, n)`.
    pub far_field: DMatrix<C64>,
    pub quadrature: DMatrix<C64>,
    /// Largest relative two-branch fit residual over all entries.
    pub fit_residual: f64,
    /// Largest incoming-branch coefficient relative to the outgoing one.
    pub incoming_leak: f64,
}

impl AmplitudeTable {
    pub fn regime(&self, row: usize, col: usize) -> Regime {
        match (self.channels[row].open, self.channels[col].open) {
            (true, true) => Regime::Phys,
            (false, true) => Regime::NphRow,
            (true, false) => Regime::NphCol,
            (false, false) => Regime::NphBoth,
        }
    }

    pub fn open_indices(&self) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| self.channels[i].open).collect()
    }

    /// `max |far − quad| / max |far|` over the entries selected by `keep`.
    pub fn route_error(&self, keep: impl Fn(Regime) -> bool) -> f64 {
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for r in 0..self.channels.len() {
            for col in 0..self.channels.len() {
                if keep(self.regime(r, col)) {
                    err = err.max((self.far_field[(r, col)] - self.quadrature[(r, col)]).norm());
                    scale = scale.max(self.far_field[(r, col)].norm());
                }
            }
        }
        if scale > 0.0 { err / scale } else { err }
    }

    pub fn index_of(&self, end: usize, mode: usize) -> Option<usize> {
        self.channels.iter().position(|ch| ch.end == end && ch.mode == mode)
    }
}

/// Channels at `λ`: every propagating `(j, n)`, plus evanescent modes of end 1
/// when `nonphysical` is set.
pub fn channels(m: &DiscreteManifold, lambda: f64, nonphysical: bool) -> Result<Vec<Channel>> {
    let mut out = vec![];
    for end in 0..m.ends.len() {
        for (n, &ln) in m.modes.eigenvalues.iter().enumerate() {
            let (kappa, _) = radiating_branch(c(lambda), ln, m.h_y, false).map_err(|_| Error::Threshold { energy: lambda, mode: n, threshold: ln })?;
            let open = lambda > ln;
            if open || (nonphysical && end == 0) {
                out.push(Channel { end, mode: n, threshold: ln, kappa, open });
            }
        }
    }
    Ok(out)
}

/// Mode-`n` coefficient of `u` on one layer.
pub fn layer_coefficient(m: &DiscreteManifold, u: &[C64], layer: usize, n: usize) -> C64 {
    let vals: Vec<C64> = (0..m.nx).map(|a| u[m.node(layer, a)]).collect();
    m.modes.coefficient(&vals, n)
}

/// Least-squares fit of `s(y) = α e^{iκy} + β e^{−iκy}` on the given layers of
/// end `j`; returns `(α, β, residual)` with the residual relative to `scale`
/// (or to `‖s‖` when `scale` is zero).
pub fn far_field_extract(m: &DiscreteManifold, u: &[C64], end: usize, n: usize, kappa: C64, layers: &[usize], scale: f64) -> (C64, C64, f64) {
    let e = &m.ends[end];
    let y0 = e.y(layers[0], m.h_y);
    let data: Vec<C64> = layers.iter().map(|&l| layer_coefficient(m, u, l, n)).collect();
    let a = DMatrix::from_fn(layers.len(), 2, |r, k| {
        let dy = e.y(layers[r], m.h_y) - y0;
        if k == 0 { (I * kappa * dy).exp() } else { (-I * kappa * dy).exp() }
    });
    let b = DVector::from_vec(data.clone());
    let norm = if scale > 0.0 { scale } else { b.norm() };
    if norm == 0.0 {
        return (c(0.0), c(0.0), 0.0);
    }
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-14).expect("two-column fit");
    let resid = (&a * &x - &b).norm() / norm;
    let alpha = x[0] * (-I * kappa * y0).exp();
    let beta = x[1] * (I * kappa * y0).exp();
    (alpha, beta, resid)
}

/// Amplitude table at real `λ`, both routes.
pub fn amplitude_table(m: &DiscreteManifold, lambda: f64, nonphysical: bool) -> Result<AmplitudeTable> {
    let chans = channels(m, lambda, nonphysical)?;
    amplitude_table_at(m, c(lambda), chans)
}

/// Amplitude table on explicit channels at a possibly complex energy (upper
/// half plane for the physical sheet).
pub fn amplitude_table_at(m: &DiscreteManifold, z: C64, chans: Vec<Channel>) -> Result<AmplitudeTable> {
    let sys = ClosedSystem::new(m, z, Limit::Plus)?;
    let h = m.h_y;
    let mut waves = Vec::with_capacity(chans.len());
    for ch in &chans {
        let w0 = free_wave(m, ch.end, ch.mode, ch.kappa)?;
        let src = commutator_source(m, ch.end, &w0, z);
        let (total, scat) = distorted_wave(m, &sys, ch.end, &w0);
        waves.push((src, total, scat));
    }
    let nc = chans.len();
    let mut quad = DMatrix::zeros(nc, nc);
    let mut far = DMatrix::zeros(nc, nc);
    let (mut fit, mut leak) = (0.0f64, 0.0f64);
    for col in 0..nc {
        let (src, _, scat) = &waves[col];
        let scale = m.ends.iter().flat_map(|e| e.region_layers().into_iter().take(FIT_LAYERS)).flat_map(|l| (0..m.nx).map(move |a| (l, a))).map(|(l, a)| scat[m.node(l, a)].norm_sqr()).sum::<f64>().sqrt();
        for row in 0..nc {
            let w = &waves[row].1;
            quad[(row, col)] = src.iter().zip(w).zip(&m.measures).filter(|((s, _), _)| s.norm() != 0.0).map(|((s, v), mi)| s * v * *mi).sum();
            let ch = &chans[row];
            let e = &m.ends[ch.end];
            let layers: Vec<usize> = e.region_layers().into_iter().take(FIT_LAYERS).collect();
            let (alpha, beta, resid) = far_field_extract(m, scat, ch.end, ch.mode, ch.kappa, &layers, scale);
            if resid > 1e-6 {
                return Err(Error::FarFieldContamination { end: ch.end, mode: ch.mode, residual: resid, limit: 1e-6 });
            }
            fit = fit.max(resid);
            if alpha.norm() > 0.0 {
                let ratio = if ch.open { 1.0 } else { (ch.kappa.im * (e.y(layers[0], h) - e.y(*layers.last().unwrap(), h))).exp() };
                leak = leak.max(beta.norm() / alpha.norm() * ratio);
            }
            far[(row, col)] = I * alpha * ch.flux(h).sqrt() / PI.sqrt();
        }
    }
    Ok(AmplitudeTable { energy: z.re, channels: chans, far_field: far, quadrature: quad, fit_residual: fit, incoming_leak: leak })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScatteringMatrix {
    pub energy: f64,
    pub channels: Vec<Channel>,
    pub s: DMatrix<C64>,
    pub unitarity_defect: f64,
    pub identity_defect: f64,
}

/// `Ŝ = I − 2πi 𝒜` restricted to the propagating channels.
pub fn s_matrix_from_table(t: &AmplitudeTable) -> ScatteringMatrix {
    let open = t.open_indices();
    let d = open.len();
    let s = DMatrix::from_fn(d, d, |r, k| {
        let delta = if r == k { c(1.0) } else { c(0.0) };
        delta - I * (2.0 * PI) * t.far_field[(open[r], open[k])]
    });
    let gram = s.adjoint() * &s - DMatrix::identity(d, d);
    let unitarity_defect = gram.norm();
    let identity_defect = (&s - DMatrix::identity(d, d)).norm();
    ScatteringMatrix { energy: t.energy, channels: open.iter().map(|&i| t.channels[i]).collect(), s, unitarity_defect, identity_defect }
}

pub fn s_matrix(m: &DiscreteManifold, lambda: f64) -> Result<ScatteringMatrix> {
    Ok(s_matrix_from_table(&amplitude_table(m, lambda, false)?))
}

/// S-matrices over an energy grid, in grid order.
pub fn s_matrix_sweep(m: &DiscreteManifold, energies: &[f64]) -> Vec<Result<ScatteringMatrix>> {
    energies.par_iter().map(|&e| s_matrix(m, e)).collect()
}

/// `𝒜^{nph}_{1m,1n}(λ)` by both routes: `(far field of Φ, quadrature)`.
pub fn nonphysical_amplitude(m: &DiscreteManifold, row: usize, col: usize, lambda: f64) -> Result<(C64, C64)> {
    let lm = m.modes.eigenvalues[row].max(m.modes.eigenvalues[col]);
    if lambda >= lm {
        return Err(Error::NotEvanescent { energy: lambda, mode: if m.modes.eigenvalues[row] >= m.modes.eigenvalues[col] { row } else { col }, threshold: lm });
    }
    let t = amplitude_table(m, lambda, true)?;
    let r = t.index_of(0, row).expect("end-1 channel");
    let k = t.index_of(0, col).expect("end-1 channel");
    Ok((t.far_field[(r, k)], t.quadrature[(r, k)]))
}

/// Type `(d, d)` rational least-squares fit `p(x)/q(x)` in a Chebyshev basis,
/// from the smallest singular vector of `[V, −diag(g) V]`.
pub struct RationalFit {
    p: Vec<C64>,
    q: Vec<C64>,
}

fn chebyshev(x: C64, d: usize) -> Vec<C64> {
    let mut t = vec![c(1.0), x];
    while t.len() <= d {
        let k = t.len();
        t.push(x * t[k - 1] * 2.0 - t[k - 2]);
    }
    t.truncate(d + 1);
    t
}

impl RationalFit {
    pub fn new(xs: &[C64], gs: &[C64], d: usize) -> Result<Self> {
        let scale = gs.iter().map(|g| g.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let a = DMatrix::from_fn(xs.len(), 2 * d + 2, |r, k| {
            let t = chebyshev(xs[r], d);
            if k <= d { t[k] } else { -t[k - d - 1] * gs[r] / scale }
        });
        if a.nrows() < a.ncols() {
            return Err(Error::RankDeficient { rank: a.nrows(), needed: a.ncols() });
        }
        let svd = a.svd(false, true);
        let vt = svd.v_t.expect("right vectors");
        let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v: Vec<C64> = vt.row(imin).iter().map(|z| z.conj()).collect();
        Ok(RationalFit { p: v[..=d].iter().map(|z| z * scale).collect(), q: v[d + 1..].to_vec() })
    }

    pub fn eval(&self, x: C64) -> C64 {
        let t = chebyshev(x, self.p.len() - 1);
        let num: C64 = t.iter().zip(&self.p).map(|(a, b)| a * b).sum();
        let den: C64 = t.iter().zip(&self.q).map(|(a, b)| a * b).sum();
        num / den
    }
}

/// Result of continuing a physical amplitude below the threshold of mode `n`.
#[derive(Clone, Debug, Serialize)]
pub struct ContinuationCheck {
    pub row: usize,
    pub col: usize,
    pub target_energy: f64,
    pub predicted: C64,
    pub computed: C64,
    pub relative_error: f64,
}

/// Fit `g(κ_n) = 𝒜_{1m,1n} Q_m^{1/2} Q_n^{1/2}` as a rational function of `κ_n` on
/// energies in `window` (above `λ_n`), evaluate at the evanescent `κ_n = ik`
/// of `target`, and compare with the non-physical amplitude there.
pub fn continuation_check(m: &DiscreteManifold, row: usize, col: usize, window: (f64, f64), samples: usize, degree: usize, target: f64) -> Result<ContinuationCheck> {
    let h = m.h_y;
    let ln = m.modes.eigenvalues[col];
    let lm = m.modes.eigenvalues[row];
    let flux = |lambda: f64, l: f64| -> Result<(C64, C64)> {
        let (k, _) = radiating_branch(c(lambda), l, h, false)?;
        Ok((k, (k * h).sin() / h))
    };
    let energies: Vec<f64> = (0..samples)
        .map(|i| {
            let t = 0.5 - 0.5 * (PI * (i as f64 + 0.5) / samples as f64).cos();
            window.0 + (window.1 - window.0) * t
        })
        .collect();
    let pts: Vec<Result<(C64, C64)>> = energies
        .par_iter()
        .map(|&e| {
            let tab = amplitude_table(m, e, false)?;
            let (r, k) = match (tab.index_of(0, row), tab.index_of(0, col)) {
                (Some(r), Some(k)) => (r, k),
                _ => return Err(Error::NotPropagating { energy: e, mode: col, threshold: ln.max(lm) }),
            };
            let a = tab.far_field[(r, k)];
            let (kn, qn) = flux(e, ln)?;
            let (_, qm) = flux(e, lm)?;
            Ok((kn, a * qm.sqrt() * qn.sqrt()))
        })
        .collect();
    let pts: Vec<(C64, C64)> = pts.into_iter().collect::<Result<_>>()?;
    let center = (pts[0].0.re + pts[pts.len() - 1].0.re) / 2.0;
    let radius = (pts[pts.len() - 1].0.re - pts[0].0.re).abs() / 2.0;
    let xs: Vec<C64> = pts.iter().map(|p| (p.0 - center) / radius).collect();
    let gs: Vec<C64> = pts.iter().map(|p| p.1).collect();
    let fit = RationalFit::new(&xs, &gs, degree)?;
    let (kt, qt) = flux(target, ln)?;
    let (_, qm) = flux(target, lm)?;
    let g = fit.eval((kt - center) / radius);
    let predicted = g / (qm.sqrt() * qt.sqrt());
    let (computed, _) = nonphysical_amplitude(m, row, col, target)?;
    let relative_error = (predicted - computed).norm() / computed.norm();
    Ok(ContinuationCheck { row, col, target_energy: target, predicted, computed, relative_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;

    fn manifold(amplitude: f64) -> DiscreteManifold {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 40, chi_layer: 16, chi2_layer: 0, gamma_layer: 20, origins: vec![] };
        let p = PerturbationSpec { kind: "bump".into(), amplitude, center_node: 2, center_layer: 8.0, sigma: 2.0, support: (5, 12), ..Default::default() };
        DiscreteManifold::build(cs, &spec, &p).unwrap()
    }

    #[test]
    fn unperturbed_table_vanishes() {
        let m = manifold(0.0);
        let t = amplitude_table(&m, 2.3, true).unwrap();
        for r in 0..t.channels.len() {
            for k in 0..t.channels.len() {
                let growth: f64 = [r, k].iter().map(|&i| (t.channels[i].kappa.im.abs() * 16.0).exp()).product();
                for v in [t.far_field[(r, k)], t.quadrature[(r, k)]] {
                    assert!(v.norm() < 1e-12 * growth, "({r},{k}) {v}");
                }
            }
        }
        let s = s_matrix_from_table(&t);
        assert!(s.identity_defect < 1e-10);
    }

    #[test]
    fn perturbed_routes_agree_and_s_is_unitary() {
        let m = manifold(0.4);
        for lambda in [0.3, 1.1, 2.7, 3.6] {
            let t = amplitude_table(&m, lambda, true).unwrap();
            let e = t.route_error(|_| true);
            assert!(e < 1e-8, "λ={lambda}: route error {e:e}");
            let s = s_matrix_from_table(&t);
            assert!(s.unitarity_defect < 1e-8, "λ={lambda}: {:e}", s.unitarity_defect);
            assert!(s.identity_defect > 1e-4);
            let asym = (&t.far_field - t.far_field.transpose()).norm() / t.far_field.norm();
            assert!(asym < 1e-8, "reciprocity {asym:e}");
        }
    }

    #[test]
    fn nonphysical_routes_and_continuation() {
        let m = manifold(0.4);
        let (far, quad) = nonphysical_amplitude(&m, 0, 2, 0.5843).unwrap();
        assert!((far - quad).norm() < 1e-8 * far.norm());
        let chk = continuation_check(&m, 0, 2, (0.5868, 0.68), 40, 8, 0.5843).unwrap();
        assert!(chk.relative_error < 1e-4, "{:e}", chk.relative_error);
        assert!(nonphysical_amplitude(&m, 0, 2, 0.7).is_err());
    }

    #[test]
    fn channel_count_steps_at_thresholds() {
        let m = manifold(0.4);
        let counts: Vec<usize> = [0.3, 0.6, 1.9, 2.1, 3.5, 3.9].iter().map(|&l| channels(&m, l, false).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 3, 3, 5, 7, 7]);
    }

    #[test]
    fn far_field_of_basis_members() {
        let m = manifold(0.0);
        let kappa = c(0.9);
        let mut u = vec![c(0.0); m.len()];
        for l in 0..m.layers {
            for a in 0..8 {
                u[m.node(l, a)] = (I * kappa * l as f64).exp() * m.modes.eigenvectors[(a, 3)] + (kappa * l as f64).cos() * m.modes.eigenvectors[(a, 0)];
            }
        }
        let layers = [16, 17, 18, 19];
        let (a, b, r) = far_field_extract(&m, &u, 0, 3, kappa, &layers, 0.0);
        assert!((a - 1.0).norm() < 1e-12 && b.norm() < 1e-12 && r < 1e-12);
        let (a, b, _) = far_field_extract(&m, &u, 0, 0, kappa, &layers, 0.0);
        assert!((a - 0.5).norm() < 1e-12 && (b - 0.5).norm() < 1e-12);
    }
}
