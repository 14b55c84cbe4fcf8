//! Boundary control on `Γ_O` from the boundary spectral projection alone.
//!
//! A wave `u^f(t)` is represented by its coefficients in an orthonormal
//! eigenbasis whose boundary traces come from the BSP, so every inner product
//! below is a finite Blagovestchenskii sum.  Controls are node indicators on
//! `Γ_O` times hat functions of width `Δt` centred at `kΔt`, `k = 1..=K`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary_data::BoundarySpectralProjection;
use crate::config::BcSpec;
use crate::error::{Error, Result};
use crate::manifold::InteriorDomain;
use crate::oracle::fdtd_simulate;

/// `Φ(x) = ∫_0^x ∫_0^y S(r, λ) dr dy` with `S(r, λ) = sin(√λ r)/√λ`, zero for `x ≤ 0`.
pub fn ramp_response(lambda: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let w2 = lambda.max(0.0);
    let w = w2.sqrt();
    if w * x < 0.5 {
        let x2 = x * x;
        let q = w2 * x2;
        return x * x2 * (1.0 / 6.0 - q / 120.0 * (1.0 - q / 42.0 * (1.0 - q / 72.0 * (1.0 - q / 110.0))));
    }
    (x - (w * x).sin() / w) / w2
}

/// `∫_0^t S(t − t′, λ) hat_k(t′) dt′` for the hat centred at `kΔt`.
pub fn hat_response(lambda: f64, k: usize, dt: f64, t: f64) -> f64 {
    let c = k as f64 * dt;
    (ramp_response(lambda, t - c + dt) - 2.0 * ramp_response(lambda, t - c) + ramp_response(lambda, t - c - dt)) / dt
}

/// `∫_0^t S(t − t′, λ) ∂_t hat_k(t′) dt′`, used for the velocity field.
fn hat_velocity(lambda: f64, k: usize, dt: f64, t: f64) -> f64 {
    let c = k as f64 * dt;
    let s1 = |x: f64| {
        if x <= 0.0 {
            0.0
        } else if lambda <= 1e-300 {
            0.5 * x * x
        } else {
            (1.0 - (lambda.sqrt() * x).cos()) / lambda
        }
    };
    (s1(t - c + dt) - 2.0 * s1(t - c) + s1(t - c - dt)) / dt
}

/// Wave synthesis data drawn from the BSP and the surface weights of `Γ_O`.
#[derive(Clone, Debug, Serialize)]
pub struct WaveModel {
    pub lambdas: Vec<f64>,
    /// `|Γ_O| × N` boundary values of an orthonormal eigenbasis.
    pub traces: DMatrix<f64>,
    pub surface: Vec<f64>,
}

impl WaveModel {
    pub fn new(bsp: &BoundarySpectralProjection) -> Self {
        let nb = bsp.surface.len();
        let n: usize = bsp.traces.iter().map(|t| t.ncols()).sum();
        let mut traces = DMatrix::zeros(nb, n);
        let mut lambdas = Vec::with_capacity(n);
        let mut col = 0;
        for (g, t) in bsp.traces.iter().enumerate() {
            for j in 0..t.ncols() {
                traces.set_column(col, &t.column(j));
                lambdas.push(bsp.eigenvalues[g]);
                col += 1;
            }
        }
        WaveModel { lambdas, traces, surface: bsp.surface.clone() }
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn boundary_len(&self) -> usize {
        self.surface.len()
    }
}

/// Node-times-hat controls on `[0, T]`.
#[derive(Clone, Debug, Serialize)]
pub struct ControlSpace {
    pub nodes: usize,
    pub dt: f64,
    pub horizon: f64,
    pub hats: usize,
}

/// A control as coefficients `F[b, k−1]` of node `b` and hat `k`.
pub type Control = DMatrix<f64>;

impl ControlSpace {
    pub fn new(nodes: usize, dt: f64, horizon: f64) -> Result<Self> {
        let hats = (horizon / dt).round() as usize;
        if hats == 0 || ((hats as f64) * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::config("bc.horizon", "horizon must be a positive multiple of the time step"));
        }
        Ok(ControlSpace { nodes, dt, horizon, hats })
    }

    pub fn len(&self) -> usize {
        self.nodes * self.hats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, node: usize, k: usize) -> usize {
        node * self.hats + (k - 1)
    }

    pub fn split(&self, index: usize) -> (usize, usize) {
        (index / self.hats, index % self.hats + 1)
    }

    pub fn basis(&self, index: usize) -> Control {
        let (b, k) = self.split(index);
        let mut f = DMatrix::zeros(self.nodes, self.hats);
        f[(b, k - 1)] = 1.0;
        f
    }

    /// Boundary values of the control at time `t`.
    pub fn evaluate(&self, f: &Control, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes];
        for k in 1..=self.hats {
            let w = (1.0 - (t / self.dt - k as f64).abs()).max(0.0);
            if w > 0.0 {
                for (b, slot) in out.iter_mut().enumerate() {
                    *slot += w * f[(b, k - 1)];
                }
            }
        }
        out
    }

    /// Hats `k` whose support lies in `[T − t, T + Δt]`.
    pub fn hats_within(&self, t: f64) -> std::ops::RangeInclusive<usize> {
        let first = ((self.horizon - t) / self.dt + 1.0 - 1e-9).ceil().max(1.0) as usize;
        first..=self.hats
    }

    /// Eigen-coefficients of `u^f(t)`.
    pub fn coefficients(&self, model: &WaveModel, f: &Control, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(model.dim());
        for i in 0..model.dim() {
            let mut acc = 0.0;
            for k in 1..=self.hats {
                let j = hat_response(model.lambdas[i], k, self.dt, t);
                if j == 0.0 {
                    continue;
                }
                for b in 0..self.nodes {
                    let v = f[(b, k - 1)];
                    if v != 0.0 {
                        acc += v * model.surface[b] * model.traces[(b, i)] * j;
                    }
                }
            }
            out[i] = acc;
        }
        out
    }

    /// Coefficients of `∂_t u^f(t)`.
    pub fn velocity_coefficients(&self, model: &WaveModel, f: &Control, t: f64) -> DVector<f64> {
        DVector::from_fn(model.dim(), |i, _| {
            let mut acc = 0.0;
            for k in 1..=self.hats {
                let j = hat_velocity(model.lambdas[i], k, self.dt, t);
                for b in 0..self.nodes {
                    acc += f[(b, k - 1)] * model.surface[b] * model.traces[(b, i)] * j;
                }
            }
            acc
        })
    }

    /// Columns: coefficients of every basis control at time `t`.
    pub fn basis_matrix(&self, model: &WaveModel, t: f64) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..self.len()).into_par_iter().map(|idx| {
            let (b, k) = self.split(idx);
            DVector::from_fn(model.dim(), |i, _| model.surface[b] * model.traces[(b, i)] * hat_response(model.lambdas[i], k, self.dt, t))
        }).collect();
        DMatrix::from_columns(&cols)
    }
}

/// `(u^f(t), u^h(s))` by the Blagovestchenskii sum.
pub fn wave_inner_product(model: &WaveModel, space: &ControlSpace, f: &Control, h: &Control, t: f64, s: f64) -> f64 {
    space.coefficients(model, f, t).dot(&space.coefficients(model, h, s))
}

/// One spectral/time-domain comparison of `(u^f(t), u^h(s))`.
#[derive(Clone, Debug, Serialize)]
pub struct InnerProductPair {
    pub t: f64,
    pub s: f64,
    pub spectral: f64,
    pub time_domain: f64,
    pub relative_error: f64,
}

/// Blagovestchenskii inner products against leapfrog simulations of the same
/// random controls, `h = f + g/2` so that the products stay away from zero.
pub fn fdtd_cross_check(dom: &InteriorDomain, model: &WaveModel, space: &ControlSpace, pairs: usize, substeps: usize, seed: u64) -> Result<Vec<InnerProductPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(Control, Control, f64, f64)> = (0..pairs)
        .map(|_| {
            let f = DMatrix::from_fn(space.nodes, space.hats, |_, _| rng.gen_range(-1.0..1.0));
            let g = DMatrix::from_fn(space.nodes, space.hats, |_, _| rng.gen_range(-1.0..1.0));
            let half = space.hats / 2;
            let t = rng.gen_range(half..=space.hats) as f64 * space.dt;
            let s = rng.gen_range(half..=space.hats) as f64 * space.dt;
            let h = &f + 0.5 * g;
            (f, h, t, s)
        })
        .collect();
    draws
        .into_par_iter()
        .map(|(f, h, t, s)| {
            let run_f = fdtd_simulate(dom, |tt| space.evaluate(&f, tt), space.horizon, space.dt, substeps, space.dt)?;
            let run_h = fdtd_simulate(dom, |tt| space.evaluate(&h, tt), space.horizon, space.dt, substeps, space.dt)?;
            let (uf, uh) = (run_f.at(t), run_h.at(s));
            let time_domain: f64 = (0..dom.len()).map(|i| dom.measures[i] * uf[i] * uh[i]).sum();
            let spectral = wave_inner_product(model, space, &f, &h, t, s);
            let relative_error = (spectral - time_domain).abs() / time_domain.abs();
            Ok(InnerProductPair { t, s, spectral, time_domain, relative_error })
        })
        .collect()
}

/// Node subsets of `Γ_O` paired with times.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct InfluenceCollection {
    pub pairs: Vec<(Vec<usize>, f64)>,
}

impl InfluenceCollection {
    pub fn new(pairs: Vec<(Vec<usize>, f64)>) -> Self {
        InfluenceCollection { pairs }
    }

    fn key(&self, dt: f64) -> Vec<(Vec<usize>, i64)> {
        let mut k: Vec<(Vec<usize>, i64)> = self
            .pairs
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|(s, t)| {
                let mut s = s.clone();
                s.sort_unstable();
                (s, (t / dt * 1e6).round() as i64)
            })
            .collect();
        k.sort();
        k.dedup();
        k
    }

    /// Pairs present in both collections.
    pub fn common(&self, other: &InfluenceCollection) -> InfluenceCollection {
        InfluenceCollection { pairs: self.pairs.iter().filter(|p| other.pairs.contains(p)).cloned().collect() }
    }
}

/// Cut energy with its regularization path.
#[derive(Clone, Debug, Serialize)]
pub struct CutEnergy {
    pub value: f64,
    pub path: Vec<(f64, f64)>,
    pub monotone: bool,
}

/// Eigen-factorization of the Gram matrix of one collection.
struct Projector {
    /// `B U`; column `k` has squared norm `d[k]`.
    w: DMatrix<f64>,
    d: Vec<f64>,
    /// Mean Gram diagonal, the unit of α.
    scale: f64,
}

impl Projector {
    fn empty(dim: usize) -> Self {
        Projector { w: DMatrix::zeros(dim, 0), d: vec![], scale: 1.0 }
    }

    fn new(b: DMatrix<f64>) -> Self {
        if b.ncols() == 0 {
            return Projector::empty(b.nrows());
        }
        let g = b.tr_mul(&b);
        let scale = g.diagonal().mean().max(f64::MIN_POSITIVE);
        let eig = SymmetricEigen::new(g);
        Projector { w: &b * &eig.eigenvectors, d: eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect(), scale }
    }

    /// Tikhonov objective `min_h ‖a − B h‖² + α‖h‖²`, monotone in α and in the span.
    fn objective(&self, a: &DVector<f64>, alpha: f64) -> f64 {
        let al = alpha * self.scale;
        let c = self.w.tr_mul(a);
        let captured: f64 = c.iter().zip(&self.d).map(|(ck, &dk)| if dk > 0.0 { ck * ck / (dk + al) } else { 0.0 }).sum();
        (a.norm_squared() - captured).max(0.0)
    }

    /// `a − B h_α` for every column of `a`.
    fn residual(&self, a: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
        if self.d.is_empty() {
            return a.clone();
        }
        let al = alpha * self.scale;
        let mut c = self.w.tr_mul(a);
        for (k, &dk) in self.d.iter().enumerate() {
            let f = if dk > 0.0 { 1.0 / (dk + al) } else { 0.0 };
            c.row_mut(k).scale_mut(f);
        }
        a - &self.w * c
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RelationOutcome {
    pub holds: bool,
    pub boundary_case: bool,
    /// Largest `(a_I(f) − a_{I′}(f)) / E(f)` over probes with contested energy.
    pub worst_margin: f64,
    pub worst_probe: Option<usize>,
    pub probes_tested: usize,
}

/// A wave of the `(Y, t)` span focused beyond `Γ_O(t − ε)`.
#[derive(Clone, Debug)]
pub struct FocusedProbe {
    /// Eigen-coefficients of the probe at `T`.
    pub coefficients: DVector<f64>,
    /// Fraction of its energy outside the span of `(Γ_O, t − ε)`.
    pub cap_fraction: f64,
    /// Residual energy outside that span.
    pub cap_energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceOutcome {
    pub distance: f64,
    /// Per ε: the first time at which `(Z, s)` reaches the focused cap.
    pub per_eps: Vec<(f64, Option<f64>)>,
    pub boundary_cases: usize,
    pub bracket_failure: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusOutcome {
    pub tau: f64,
    /// `(t, smallest cap fraction over Y)` on the time grid.
    pub grid: Vec<(f64, f64)>,
    pub near_tie: bool,
}

/// Boundary-control engine for one `Γ_O`.
pub struct BcEngine {
    pub model: WaveModel,
    pub space: ControlSpace,
    pub settings: BcSpec,
    /// Coefficients of the basis controls at `T`.
    pub at_horizon: DMatrix<f64>,
    probe_energy: Vec<f64>,
    energy_scale: f64,
    cache: Mutex<HashMap<Vec<(Vec<usize>, i64)>, Arc<Projector>>>,
}

impl BcEngine {
    pub fn new(bsp: &BoundarySpectralProjection, settings: &BcSpec) -> Result<Self> {
        let model = WaveModel::new(bsp);
        let space = ControlSpace::new(model.boundary_len(), settings.time_step, settings.horizon)?;
        let at_horizon = space.basis_matrix(&model, space.horizon);
        let probe_energy: Vec<f64> = (0..space.len()).map(|j| at_horizon.column(j).norm_squared()).collect();
        let energy_scale = probe_energy.iter().sum::<f64>() / probe_energy.len() as f64;
        Ok(BcEngine { model, space, settings: settings.clone(), at_horizon, probe_energy, energy_scale, cache: Mutex::new(HashMap::new()) })
    }

    pub fn horizon(&self) -> f64 {
        self.space.horizon
    }

    pub fn energy_scale(&self) -> f64 {
        self.energy_scale
    }

    /// Basis controls assigned to the pairs of `I`.
    pub fn assigned(&self, coll: &InfluenceCollection) -> Vec<usize> {
        let mut out = vec![];
        for (sigma, t) in &coll.pairs {
            if *t <= 0.0 {
                continue;
            }
            for &b in sigma {
                for k in self.space.hats_within(*t) {
                    out.push(self.space.index(b, k));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn projector(&self, coll: &InfluenceCollection) -> Arc<Projector> {
        let key = coll.key(self.space.dt);
        if let Some(p) = self.cache.lock().expect("cache lock").get(&key) {
            return p.clone();
        }
        let idx = self.assigned(coll);
        let p = Arc::new(Projector::new(self.at_horizon.select_columns(&idx)));
        self.cache.lock().expect("cache lock").insert(key, p.clone());
        p
    }

    fn finish(&self, path_vals: Vec<f64>) -> CutEnergy {
        let alphas = &self.settings.alphas;
        let path: Vec<(f64, f64)> = alphas.iter().cloned().zip(path_vals.iter().cloned()).collect();
        let tol = self.settings.tol_abs * self.energy_scale;
        let monotone = path.windows(2).all(|w| (w[1].0 < w[0].0) == (w[1].1 <= w[0].1 + tol));
        let n = path.len();
        let value = if n >= 2 {
            let (a1, v1) = path[n - 2];
            let (a2, v2) = path[n - 1];
            (v2 - a2 * (v1 - v2) / (a1 - a2)).max(0.0)
        } else {
            path[0].1
        };
        CutEnergy { value, path, monotone }
    }

    fn path(&self, p: &Projector, a: &DVector<f64>) -> CutEnergy {
        self.finish(self.settings.alphas.iter().map(|&al| p.objective(a, al)).collect())
    }

    /// `a_{I,T}(f)` for a control given by its coefficients at `T`.
    pub fn cut_energy_coefficients(&self, a: &DVector<f64>, coll: &InfluenceCollection) -> CutEnergy {
        self.path(&self.projector(coll), a)
    }

    pub fn cut_energy(&self, f: &Control, coll: &InfluenceCollection) -> Result<CutEnergy> {
        let a = self.space.coefficients(&self.model, f, self.space.horizon);
        let e = self.cut_energy_coefficients(&a, coll);
        if !e.monotone {
            return Err(Error::Unstable(format!("non-monotone regularization path {:?}", e.path)));
        }
        Ok(e)
    }

    /// Is `I ≥ I′`, i.e. `a_I(f) ≤ a_{I′}(f)` for every basis probe?  Margins are
    /// measured against the energy left by the pairs shared by both collections.
    pub fn relation_test(&self, big: &InfluenceCollection, small: &InfluenceCollection) -> RelationOutcome {
        let probes: Vec<usize> = (0..self.space.len()).collect();
        self.relation_test_on(big, small, &probes, self.settings.tol_rel)
    }

    /// [`relation_test`](Self::relation_test) restricted to the given basis probes.
    pub fn relation_test_on(&self, big: &InfluenceCollection, small: &InfluenceCollection, probes: &[usize], tol: f64) -> RelationOutcome {
        let common = big.common(small);
        let (pb, ps, pc) = (self.projector(big), self.projector(small), self.projector(&common));
        let floor = self.settings.tol_abs * self.energy_scale;
        let results: Vec<Option<(f64, usize)>> = probes
            .par_iter()
            .map(|&j| {
                if self.probe_energy[j] <= floor {
                    return None;
                }
                let a = self.at_horizon.column(j).into_owned();
                let contested = if common.pairs.is_empty() { self.probe_energy[j] } else { self.path(&pc, &a).value };
                if contested <= floor {
                    return None;
                }
                let ab = self.path(&pb, &a).value;
                let asm = self.path(&ps, &a).value;
                Some(((ab - asm - floor) / contested, j))
            })
            .collect();
        let tested: Vec<(f64, usize)> = results.into_iter().flatten().collect();
        let worst = tested.iter().cloned().fold((f64::NEG_INFINITY, None), |acc, (m, j)| if m > acc.0 { (m, Some(j)) } else { acc });
        let margin = worst.0;
        RelationOutcome {
            holds: margin <= tol,
            boundary_case: margin > -tol && margin < 2.0 * tol,
            worst_margin: margin,
            worst_probe: worst.1,
            probes_tested: tested.len(),
        }
    }

    fn eps_values(&self, t: f64) -> Vec<f64> {
        self.settings.eps_steps.iter().map(|e| e * self.space.dt).filter(|&e| e < t - 1e-12).collect()
    }

    /// The wave of the `(Y, t)` span with the largest share of energy outside
    /// the span of `(Γ_O, t − ε)`, at the geometry regularization.
    pub fn focused_probe(&self, y: usize, t: f64, eps: f64) -> Option<FocusedProbe> {
        let all: Vec<usize> = (0..self.space.nodes).collect();
        let alpha = self.settings.probe_alpha;
        let by = self.at_horizon.select_columns(&self.assigned(&InfluenceCollection::new(vec![(vec![y], t)])));
        if by.ncols() == 0 {
            return None;
        }
        let gamma = self.projector(&InfluenceCollection::new(vec![(all, t - eps)]));
        let r = gamma.residual(&by, alpha);
        let g = by.tr_mul(&by);
        let eig = SymmetricEigen::new(g);
        let top = eig.eigenvalues.max();
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
        let v = DMatrix::from_fn(by.ncols(), keep.len(), |i, k| eig.eigenvectors[(i, keep[k])] / eig.eigenvalues[keep[k]].sqrt());
        let rv = &r * &v;
        let h = SymmetricEigen::new(rv.tr_mul(&rv));
        let (best, frac) = h.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc });
        let x = &v * h.eigenvectors.column(best);
        let coefficients = &by * x;
        let cap_energy = gamma.residual(&DMatrix::from_columns(&[coefficients.clone()]), alpha).norm_squared();
        Some(FocusedProbe { coefficients, cap_fraction: frac.clamp(0.0, 1.0), cap_energy })
    }

    /// Share of the probe's cap captured once `(Z, s)` joins `(Γ_O, t − ε)`.
    pub fn contact_fraction(&self, probe: &FocusedProbe, t: f64, eps: f64, z: usize, s: f64) -> f64 {
        let all: Vec<usize> = (0..self.space.nodes).collect();
        let coll = InfluenceCollection::new(vec![(all, t - eps), (vec![z], s)]);
        let p = self.projector(&coll);
        let left = p.residual(&DMatrix::from_columns(&[probe.coefficients.clone()]), self.settings.probe_alpha).norm_squared();
        1.0 - left / probe.cap_energy
    }

    /// `d_O(X, Z)` for `X` at depth `t` on the normal from `Y`: the first grid
    /// time `s` at which the waves from `(Z, s)` reach the focused cap of
    /// `(Y, t)` beyond `Γ_O(t − ε)`, median over ε.  `t = 0` gives the
    /// shallower depths are raised to the first one with an admissible ε and
    /// the result shifted back.
    pub fn point_distance(&self, y: usize, t: f64, z: usize) -> DistanceOutcome {
        let dt = self.space.dt;
        let shallow = self.settings.eps_steps.iter().cloned().fold(f64::INFINITY, f64::min) * dt + dt;
        let (tt, shift) = if self.eps_values(t).is_empty() { (shallow, shallow - t) } else { (t, 0.0) };
        let mut per_eps = vec![];
        let mut boundary_cases = 0;
        let mut bracket_failure = false;
        let theta = self.settings.contact_fraction;
        for eps in self.eps_values(tt) {
            let Some(probe) = self.focused_probe(y, tt, eps) else {
                bracket_failure = true;
                per_eps.push((eps, None));
                continue;
            };
            let hit = |j: usize| self.contact_fraction(&probe, tt, eps, z, j as f64 * dt);
            let top = self.space.hats;
            let upper = hit(top);
            if upper <= theta {
                bracket_failure = true;
                per_eps.push((eps, None));
                continue;
            }
            let mut prev = 0.0;
            let mut found = top as f64 * dt;
            for j in 0..=top {
                let f = if j == top { upper } else { hit(j) };
                if (f - theta).abs() < 0.25 * theta {
                    boundary_cases += 1;
                }
                if f > theta {
                    found = if j == 0 { 0.0 } else { (j as f64 - (f - theta) / (f - prev)) * dt };
                    break;
                }
                prev = f;
            }
            per_eps.push((eps, Some((found - shift).max(0.0))));
        }
        let mut found: Vec<f64> = per_eps.iter().filter_map(|p| p.1).collect();
        found.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let distance = if found.is_empty() { f64::NAN } else { found[found.len() / 2] };
        DistanceOutcome { distance, per_eps, boundary_cases, bracket_failure }
    }

    /// `τ_O(Γ_O)`: the last grid time before some `Y` loses its cap beyond
    /// `Γ_O(t − ε)` (majority over ε).
    pub fn critical_radius(&self) -> RadiusOutcome {
        let dt = self.space.dt;
        let theta = self.settings.cap_fraction;
        let mut grid = vec![];
        let mut tau = 0.0;
        let mut near_tie = false;
        for j in 1..self.space.hats {
            let t = j as f64 * dt;
            let eps = self.eps_values(t);
            if eps.is_empty() {
                tau = t;
                continue;
            }
            let per_y: Vec<(bool, f64, bool)> = (0..self.space.nodes)
                .into_par_iter()
                .map(|y| {
                    let fr: Vec<f64> = eps.iter().map(|&e| self.focused_probe(y, t, e).map_or(0.0, |p| p.cap_fraction)).collect();
                    let votes = fr.iter().filter(|&&f| f > theta).count();
                    let tie = fr.iter().any(|&f| (f - theta).abs() < 0.25 * theta);
                    (2 * votes > fr.len(), fr.iter().cloned().fold(f64::INFINITY, f64::min), tie)
                })
                .collect();
            let holds = per_y.iter().all(|p| p.0);
            near_tie |= per_y.iter().any(|p| p.2);
            grid.push((t, per_y.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)));
            if !holds {
                break;
            }
            tau = t;
        }
        RadiusOutcome { tau, grid, near_tie }
    }

    /// `r_X(Z)` for every `Z` in `targets`.
    pub fn distance_vector(&self, y: usize, t: f64, targets: &[usize]) -> Vec<DistanceOutcome> {
        targets.par_iter().map(|&z| self.point_distance(y, t, z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::boundary_data::boundary_spectral_projection;
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;
    use crate::manifold::{split_interior, CutSpecification, DiscreteManifold};

    fn domain(nx: usize, gamma: usize) -> InteriorDomain {
        let cs = CrossSection::cycle(nx, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: gamma + 10, chi_layer: gamma - 2, chi2_layer: 0, gamma_layer: gamma, origins: vec![] };
        let m = DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap();
        split_interior(&m, &CutSpecification::default()).unwrap()
    }

    fn engine(nx: usize, gamma: usize, horizon: f64) -> (InteriorDomain, BcEngine) {
        let dom = domain(nx, gamma);
        let bsp = boundary_spectral_projection(&dom).unwrap();
        let eng = BcEngine::new(&bsp, &BcSpec { horizon, ..BcSpec::default() }).unwrap();
        (dom, eng)
    }

    #[test]
    fn norms_are_nonnegative_and_vanish_at_time_zero() {
        let (_, eng) = engine(6, 8, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let f = DMatrix::from_fn(eng.space.nodes, eng.space.hats, |_, _| rng.gen_range(-1.0..1.0));
            for k in 0..=eng.space.hats {
                let t = k as f64 * eng.space.dt;
                assert!(wave_inner_product(&eng.model, &eng.space, &f, &f, t, t) >= -1e-12);
            }
            assert_eq!(wave_inner_product(&eng.model, &eng.space, &f, &f, 0.0, 0.0), 0.0);
        }
    }

    #[test]
    fn spectral_products_match_leapfrog() {
        let (dom, eng) = engine(6, 8, 5.0);
        let pairs = fdtd_cross_check(&dom, &eng.model, &eng.space, 6, 64, 11).unwrap();
        for p in &pairs {
            assert!(p.relative_error < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn cut_energy_limits_and_monotonicity() {
        let (_, eng) = engine(6, 8, 5.0);
        let all: Vec<usize> = (0..6).collect();
        let f = eng.space.basis(eng.space.index(2, eng.space.hats - 3));
        let full = eng.space.coefficients(&eng.model, &f, eng.horizon()).norm_squared();
        let none = eng.cut_energy(&f, &InfluenceCollection::new(vec![(all.clone(), 0.0)])).unwrap();
        assert!((none.value - full).abs() <= 1e-12 * full);
        let mut last = f64::INFINITY;
        for j in 0..=eng.space.hats {
            let e = eng.cut_energy(&f, &InfluenceCollection::new(vec![(vec![0, 1], 5.0), (all.clone(), j as f64 * eng.space.dt)])).unwrap();
            assert!(e.value <= last + 1e-9 * eng.energy_scale());
            last = e.value;
        }
        let everything = eng.cut_energy(&f, &InfluenceCollection::new(vec![(all, eng.horizon())])).unwrap();
        assert!(everything.value < 1e-6 * full);
    }

    #[test]
    fn relation_is_reflexive_and_respects_inclusion() {
        let (_, eng) = engine(6, 8, 4.0);
        let a = InfluenceCollection::new(vec![(vec![0, 1], 2.0)]);
        let b = InfluenceCollection::new(vec![(vec![0, 1], 2.0), (vec![3], 1.0)]);
        assert!(eng.relation_test(&a, &a).holds);
        assert!(eng.relation_test(&b, &a).holds);
        let far = InfluenceCollection::new(vec![(vec![3], 0.5)]);
        let near = InfluenceCollection::new(vec![(vec![0], 2.0)]);
        assert!(!eng.relation_test(&far, &near).holds);
    }

    #[test]
    fn point_distances_on_the_flat_cylinder() {
        let (_, eng) = engine(8, 12, 10.0);
        assert_eq!(eng.point_distance(0, 0.0, 0).distance, 0.0);
        for (t, z, exact) in [(2.0, 0, 2.0), (4.0, 2, f64::hypot(4.0, 2.0)), (6.0, 4, f64::hypot(6.0, 4.0))] {
            let d = eng.point_distance(0, t, z);
            assert!((d.distance - exact).abs() <= 2.0, "{t} {z} {d:?}");
        }
    }

    #[test]
    fn ramp_series_matches_closed_form() {
        for lambda in [0.01, 0.3, 2.0, 7.5] {
            let w = f64::sqrt(lambda);
            for wx in [0.2, 0.35, 0.4999, 0.5001, 1.0, 3.0] {
                let x = wx / w;
                let exact = (x - (w * x).sin() / w) / lambda;
                assert!((ramp_response(lambda, x) - exact).abs() <= 1e-8 * exact, "{lambda} {x}");
            }
        }
        assert_eq!(ramp_response(0.0, 2.0), 8.0 / 6.0);
        assert_eq!(ramp_response(1.0, -1.0), 0.0);
    }

    #[test]
    fn hat_response_matches_quadrature() {
        let (lambda, dt, k, t) = (1.7, 0.5, 3, 4.2);
        let n = 200_000;
        let w = f64::sqrt(lambda);
        let q: f64 = (0..n)
            .map(|i| {
                let tp = (i as f64 + 0.5) * t / n as f64;
                let hat = (1.0 - (tp / dt - k as f64).abs()).max(0.0);
                (w * (t - tp)).sin() / w * hat * t / n as f64
            })
            .sum();
        assert!((hat_response(lambda, k, dt, t) - q).abs() < 1e-9);
    }
}
