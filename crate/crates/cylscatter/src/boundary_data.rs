//! Boundary data on `Γ_O`: the N-D map, the boundary spectral projection, the
//! contour-integral passage from one to the other, and the N-D map assembled
//! from scattering amplitudes.
//!
//! Kernels are Schwartz kernels with respect to the surface weights `s` of
//! `Γ_O`: `(Λf)(X) = Σ_Y Λ(X, Y) f(Y) s_Y`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, generalized_symmetric_eigen, group_by_tolerance, numerical_rank, pinv, procrustes, BandLu, C64, I};
use crate::manifold::{DiscreteManifold, InteriorDomain};
use crate::scattering::AmplitudeTable;

pub const POLE_GUARD: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct NdMap {
    pub z: C64,
    pub kernel: DMatrix<C64>,
    pub surface: Vec<f64>,
}

impl NdMap {
    /// `S^{1/2} Λ S^{1/2}`, the map as a symmetric operator on `ℓ²(Γ_O, s)`.
    pub fn operator(&self) -> DMatrix<C64> {
        let n = self.surface.len();
        DMatrix::from_fn(n, n, |i, j| self.kernel[(i, j)] * (self.surface[i] * self.surface[j]).sqrt())
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.kernel - self.kernel.transpose()).norm() / self.kernel.norm().max(f64::MIN_POSITIVE)
    }

    /// Relative operator-norm distance.
    pub fn distance(&self, other: &NdMap) -> f64 {
        let a = self.operator();
        crate::linalg::op_norm(&(&a - other.operator())) / crate::linalg::op_norm(&a)
    }
}

/// Eigenpairs of `H_O` (ascending, `M`-orthonormal columns).
pub fn interior_eigen(dom: &InteriorDomain) -> Result<(Vec<f64>, DMatrix<f64>)> {
    generalized_symmetric_eigen(&dom.stiffness(), &dom.measures)
}

fn check_pole(eigenvalues: &[f64], z: C64) -> Result<()> {
    let nearest = eigenvalues.iter().map(|&l| (z - l).norm()).fold(f64::INFINITY, f64::min);
    if nearest < POLE_GUARD {
        return Err(Error::PoleProximity { z: format!("{z}"), distance: nearest });
    }
    Ok(())
}

/// N-D map evaluator with the interior spectrum cached for the pole guard.
pub struct NdMapSolver<'a> {
    pub domain: &'a InteriorDomain,
    pub eigenvalues: Vec<f64>,
}

impl<'a> NdMapSolver<'a> {
    pub fn new(domain: &'a InteriorDomain) -> Result<Self> {
        Ok(NdMapSolver { domain, eigenvalues: interior_eigen(domain)?.0 })
    }

    /// Resolvent route: dense `(H_O − z)^{-1}` restricted to `Γ_O`, divided by `m_Y`.
    pub fn direct(&self, z: C64) -> Result<NdMap> {
        check_pole(&self.eigenvalues, z)?;
        let dom = self.domain;
        let n = dom.len();
        let k = dom.stiffness();
        let h = DMatrix::from_fn(n, n, |i, j| c(k[(i, j)] / dom.measures[i]) - if i == j { z } else { c(0.0) });
        let inv = h.try_inverse().ok_or(Error::Singular(0))?;
        let nb = dom.boundary.len();
        let kernel = DMatrix::from_fn(nb, nb, |a, b| inv[(dom.boundary[a], dom.boundary[b])] / dom.measures[dom.boundary[b]]);
        Ok(NdMap { z, kernel, surface: dom.surface.clone() })
    }

    /// BVP route: solve `(K − zM)u = s ∘ f` for each unit Neumann datum and read the trace.
    pub fn bvp(&self, z: C64) -> Result<NdMap> {
        check_pole(&self.eigenvalues, z)?;
        let dom = self.domain;
        let lu = interior_system(dom, z)?;
        let nb = dom.boundary.len();
        let mut kernel = DMatrix::zeros(nb, nb);
        for b in 0..nb {
            let mut rhs = vec![c(0.0); dom.len()];
            rhs[dom.boundary[b]] = c(1.0);
            lu.solve_in_place(&mut rhs);
            for a in 0..nb {
                kernel[(a, b)] = rhs[dom.boundary[a]];
            }
        }
        Ok(NdMap { z, kernel, surface: dom.surface.clone() })
    }
}

pub fn nd_map_direct(dom: &InteriorDomain, z: C64) -> Result<NdMap> {
    NdMapSolver::new(dom)?.direct(z)
}

pub fn nd_map_bvp(dom: &InteriorDomain, z: C64) -> Result<NdMap> {
    NdMapSolver::new(dom)?.bvp(z)
}

/// Banded factorization of `K − zM` on the interior numbering.
pub fn interior_system(dom: &InteriorDomain, z: C64) -> Result<BandLu> {
    let bw = dom.bandwidth();
    let mut entries = vec![];
    for i in 0..dom.len() {
        let mut d = c(0.0) - z * dom.measures[i];
        for e in &dom.adjacency[i] {
            d += e.weight;
            entries.push((i, e.to, c(-e.weight)));
        }
        entries.push((i, i, d));
    }
    BandLu::factor(dom.len(), bw, bw, entries)
}

/// Boundary spectral projection: eigenvalue groups with their boundary traces.
#[derive(Clone, Debug, Serialize)]
pub struct BoundarySpectralProjection {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Per group, `|Γ_O| × multiplicity` boundary values of an orthonormal eigenbasis.
    pub traces: Vec<DMatrix<f64>>,
    pub surface: Vec<f64>,
}

impl BoundarySpectralProjection {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `δ* P_i δ` as a Schwartz kernel.
    pub fn kernel(&self, i: usize) -> DMatrix<f64> {
        &self.traces[i] * self.traces[i].transpose()
    }

    /// `Λ(z) = Σ_i K_i / (λ_i − z)`.
    pub fn nd_map(&self, z: C64) -> Result<NdMap> {
        check_pole(&self.eigenvalues, z)?;
        let nb = self.surface.len();
        let mut kernel = DMatrix::zeros(nb, nb);
        for i in 0..self.len() {
            let k = self.kernel(i);
            let w = c(1.0) / (c(self.eigenvalues[i]) - z);
            kernel += k.map(|v| w * v);
        }
        Ok(NdMap { z, kernel, surface: self.surface.clone() })
    }

    /// `‖Σ_i K_i − diag(1/m)‖ / ‖diag(1/m)‖` for the boundary node measures `m`.
    pub fn completeness_defect(&self, boundary_measures: &[f64]) -> f64 {
        let nb = self.surface.len();
        let mut sum = DMatrix::zeros(nb, nb);
        for i in 0..self.len() {
            sum += self.kernel(i);
        }
        let target = DMatrix::from_fn(nb, nb, |a, b| if a == b { 1.0 / boundary_measures[a] } else { 0.0 });
        (sum - &target).norm() / target.norm()
    }

    /// Frobenius distance of all kernels (summed over groups) to another BSP with
    /// the same eigenvalue grouping.
    pub fn kernel_distance(&self, other: &BoundarySpectralProjection) -> f64 {
        let mut worst: f64 = 0.0;
        let scale = (0..self.len()).map(|i| self.kernel(i).norm()).fold(0.0, f64::max);
        for i in 0..self.len().min(other.len()) {
            worst = worst.max((self.kernel(i) - other.kernel(i)).norm());
        }
        worst / scale
    }

    /// Drop groups whose kernels are invisible from `Γ_O`.
    pub fn visible(&self, rtol: f64) -> BoundarySpectralProjection {
        let scale = (0..self.len()).map(|i| self.kernel(i).norm()).fold(0.0, f64::max);
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.kernel(i).norm() > rtol * scale).collect();
        BoundarySpectralProjection {
            eigenvalues: keep.iter().map(|&i| self.eigenvalues[i]).collect(),
            multiplicities: keep.iter().map(|&i| self.multiplicities[i]).collect(),
            traces: keep.iter().map(|&i| self.traces[i].clone()).collect(),
            surface: self.surface.clone(),
        }
    }

    /// Traces rotated within each eigenspace onto those of `reference`.
    pub fn aligned_to(&self, reference: &BoundarySpectralProjection) -> Vec<DMatrix<f64>> {
        self.traces
            .iter()
            .zip(&reference.traces)
            .map(|(t, r)| if t.ncols() == r.ncols() { t * procrustes(t, r) } else { t.clone() })
            .collect()
    }
}

pub fn boundary_spectral_projection(dom: &InteriorDomain) -> Result<BoundarySpectralProjection> {
    let (vals, vecs) = interior_eigen(dom)?;
    let groups = group_by_tolerance(&vals, 1e-9);
    let nb = dom.boundary.len();
    let mut out = BoundarySpectralProjection { eigenvalues: vec![], multiplicities: vec![], traces: vec![], surface: dom.surface.clone() };
    for g in groups {
        out.eigenvalues.push(g.iter().map(|&i| vals[i]).sum::<f64>() / g.len() as f64);
        out.multiplicities.push(g.len());
        out.traces.push(DMatrix::from_fn(nb, g.len(), |a, k| vecs[(dom.boundary[a], g[k])]));
    }
    Ok(out)
}

/// Measures of the boundary nodes of `dom`.
pub fn boundary_measures(dom: &InteriorDomain) -> Vec<f64> {
    dom.boundary.iter().map(|&b| dom.measures[b]).collect()
}

/// Settings for contour extraction of the BSP from N-D samples.
#[derive(Clone, Debug, Serialize)]
pub struct ContourSettings {
    /// The spectrum lies in `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
    /// Real-axis scan resolution used to place contour endpoints.
    pub scan_points: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Relative agreement demanded between nested quadratures.
    pub tol: f64,
    pub rank_tol: f64,
    /// Consistency demanded of the second moment against the extracted poles.
    pub moment_tol: f64,
}

impl Default for ContourSettings {
    fn default() -> Self {
        ContourSettings { lower: -0.5, upper: 8.5, scan_points: 6000, min_nodes: 64, max_nodes: 1 << 14, tol: 1e-12, rank_tol: 1e-9, moment_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContourReport {
    pub circles: usize,
    pub evaluations: usize,
    pub max_nodes_used: usize,
    pub completeness_defect: f64,
}

/// Scaled moments `(1/2πi)∮ ((z − c)/r)^k Λ dz`, `k = 0, 1, 2`, by the trapezoid
/// rule on the full node set and on every second node.
fn moments<F>(lambda: &F, center: f64, radius: f64, nodes: usize) -> Result<[[DMatrix<C64>; 3]; 2]>
where
    F: Fn(C64) -> Result<DMatrix<C64>> + Sync,
{
    let pts: Vec<Result<(C64, DMatrix<C64>)>> = (0..nodes)
        .into_par_iter()
        .map(|j| {
            let u = C64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / nodes as f64);
            Ok((u, lambda(c(center) + u * radius)?))
        })
        .collect();
    let pts: Vec<(C64, DMatrix<C64>)> = pts.into_iter().collect::<Result<_>>()?;
    let nb = pts[0].1.nrows();
    let run = |stride: usize| {
        let mut acc = [DMatrix::zeros(nb, nb), DMatrix::zeros(nb, nb), DMatrix::zeros(nb, nb)];
        let weight = radius / (nodes / stride) as f64;
        for (u, l) in pts.iter().step_by(stride) {
            let mut p = u * weight;
            for slot in acc.iter_mut() {
                *slot += l.map(|v| v * p);
                p *= u;
            }
        }
        acc
    };
    Ok([run(1), run(2)])
}

fn real_sym(a: &DMatrix<C64>) -> DMatrix<f64> {
    let b = a.map(|v| -v.re);
    (&b + b.transpose()) * 0.5
}

enum CircleOutcome {
    Resolved(Vec<(f64, DMatrix<f64>)>),
    Split,
}

fn beyn_step(m: &[DMatrix<C64>; 3], center: f64, radius: f64, nb: usize, settings: &ContourSettings) -> CircleOutcome {
    let (b0, b1, b2) = (real_sym(&m[0]), real_sym(&m[1]), real_sym(&m[2]));
    let eig = nalgebra::SymmetricEigen::new(b0.clone());
    let smax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..nb).filter(|&i| eig.eigenvalues[i] > settings.rank_tol * smax.max(1e-300) && eig.eigenvalues[i] > 1e-13).collect();
    if keep.is_empty() {
        return CircleOutcome::Resolved(vec![]);
    }
    if keep.len() == nb {
        return CircleOutcome::Split;
    }
    let r = keep.len();
    let v = DMatrix::from_fn(nb, r, |i, k| eig.eigenvectors[(i, keep[k])]);
    let sig: Vec<f64> = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
    let p = v.transpose() * &b1 * &v;
    let t = DMatrix::from_fn(r, r, |i, j| p[(i, j)] / (sig[i] * sig[j]).sqrt());
    let small = nalgebra::SymmetricEigen::new((&t + t.transpose()) * 0.5);
    let mut found = vec![];
    let mut model = DMatrix::zeros(nb, nb);
    for k in 0..r {
        let mu = small.eigenvalues[k];
        if mu.abs() > 1.0 + 1e-9 {
            return CircleOutcome::Split;
        }
        let q = small.eigenvectors.column(k);
        let trace = DMatrix::from_fn(nb, 1, |i, _| (0..r).map(|j| v[(i, j)] * sig[j].sqrt() * q[j]).sum());
        model += &trace * trace.transpose() * (mu * mu);
        found.push((center + radius * mu, trace));
    }
    if (&b2 - model).norm() > settings.moment_tol * b0.norm() {
        return CircleOutcome::Split;
    }
    CircleOutcome::Resolved(found)
}

/// Recover the BSP from samples of `Λ(z)` by contour integration around
/// groups of poles.  The result reproduces only the groups visible from `Γ_O`.
pub fn bsp_from_ndmap<F>(lambda: F, surface: &[f64], settings: &ContourSettings) -> Result<(BoundarySpectralProjection, ContourReport)>
where
    F: Fn(C64) -> Result<DMatrix<C64>> + Sync,
{
    let nb = surface.len();
    let n = settings.scan_points;
    let xs: Vec<f64> = (0..=n).map(|i| settings.lower + (settings.upper - settings.lower) * i as f64 / n as f64).collect();
    let norms: Vec<f64> = xs.par_iter().map(|&x| lambda(c(x)).map(|l| l.norm()).unwrap_or(f64::INFINITY)).collect();
    let mut cuts = vec![settings.lower];
    for i in 1..n {
        if norms[i] < norms[i - 1] && norms[i] <= norms[i + 1] {
            cuts.push(xs[i]);
        }
    }
    cuts.push(settings.upper);
    let mut report = ContourReport { circles: 0, evaluations: n + 1, max_nodes_used: 0, completeness_defect: f64::NAN };
    let mut found: Vec<(f64, DMatrix<f64>)> = vec![];
    let mut stack: Vec<(f64, f64, usize)> = cuts.windows(2).map(|w| (w[0], w[1], 0)).rev().collect();
    const SPLITS: [f64; 5] = [0.5, 0.382, 0.618, 0.3, 0.7];
    while let Some((a, b, attempt)) = stack.pop() {
        let center = 0.5 * (a + b);
        let radius = 0.5 * (b - a);
        let mut nodes = settings.min_nodes;
        let converged = loop {
            let m = moments(&lambda, center, radius, nodes)?;
            report.evaluations += nodes;
            let scale = m[0][0].norm().max(1e-300);
            let diff = (0..3).map(|k| (&m[0][k] - &m[1][k]).norm()).fold(0.0, f64::max);
            if diff <= settings.tol * scale.max(1.0) {
                break Some(m);
            }
            if nodes >= settings.max_nodes {
                break None;
            }
            nodes *= 2;
        };
        report.max_nodes_used = report.max_nodes_used.max(nodes);
        let outcome = match &converged {
            Some(m) => beyn_step(&m[0], center, radius, nb, settings),
            None => CircleOutcome::Split,
        };
        match outcome {
            CircleOutcome::Resolved(pairs) => {
                report.circles += 1;
                found.extend(pairs);
            }
            CircleOutcome::Split => {
                if radius < 1e-7 || attempt >= 24 {
                    return Err(Error::UnresolvedCluster { center, radius, gap: f64::NAN });
                }
                let frac = if converged.is_some() { 0.5 } else { SPLITS[attempt % SPLITS.len()] };
                let cut = a + frac * (b - a);
                stack.push((cut, b, attempt + 1));
                stack.push((a, cut, attempt + 1));
            }
        }
    }
    found.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite eigenvalues"));
    let vals: Vec<f64> = found.iter().map(|f| f.0).collect();
    let groups = group_by_tolerance(&vals, 1e-7);
    let mut bsp = BoundarySpectralProjection { eigenvalues: vec![], multiplicities: vec![], traces: vec![], surface: surface.to_vec() };
    for g in groups {
        bsp.eigenvalues.push(g.iter().map(|&i| vals[i]).sum::<f64>() / g.len() as f64);
        bsp.multiplicities.push(g.len());
        bsp.traces.push(DMatrix::from_fn(nb, g.len(), |a, k| found[g[k]].1[(a, 0)]));
    }
    Ok((bsp, report))
}

/// Trace data of one eigenfunction on `Γ`: Dirichlet values and the outward
/// Neumann derivative.
#[derive(Clone, Debug, Serialize)]
pub struct GammaTraces {
    pub dirichlet: Vec<C64>,
    pub neumann: Vec<C64>,
}

/// Synthesize `W_n = W⁰_n + Σ_m α_{mn} e^{iκ_m y} φ_m` on the three layers around
/// `Γ` from the amplitude table alone, and return its traces on `Γ`.
pub fn gamma_traces_from_table(m: &DiscreteManifold, table: &AmplitudeTable, col: usize) -> Vec<GammaTraces> {
    let _ = col;
    let h = m.h_y;
    let end = &m.ends[0];
    let g = m.gamma_layer;
    let mb = &m.modes;
    let chans: Vec<usize> = (0..table.channels.len()).filter(|&i| table.channels[i].end == 0).collect();
    let mut out = vec![];
    for &k in &chans {
        let chk = table.channels[k];
        let layer_vals = |l: usize| -> Vec<C64> {
            let y = end.y(l, h);
            let mut v = vec![c(0.0); m.nx];
            let q = chk.flux(h);
            let free = q.powf(-0.5) / PI.sqrt() * (chk.kappa * y).cos();
            for (a, slot) in v.iter_mut().enumerate() {
                *slot += free * mb.eigenvectors[(a, chk.mode)];
            }
            for &j in &chans {
                let chj = table.channels[j];
                let alpha = -I * PI.sqrt() * chj.flux(h).powf(-0.5) * table.far_field[(j, k)];
                let w = alpha * (I * chj.kappa * y).exp();
                for (a, slot) in v.iter_mut().enumerate() {
                    *slot += w * mb.eigenvectors[(a, chj.mode)];
                }
            }
            v
        };
        let (lo, mid, hi) = (layer_vals(g - 1), layer_vals(g), layer_vals(g + 1));
        let neumann = hi.iter().zip(&lo).map(|(p, q)| (p - q) / (2.0 * h) * end.direction as f64).collect();
        out.push(GammaTraces { dirichlet: mid, neumann });
    }
    out
}

/// Traces on `Γ` read directly from computed eigenfunctions on the mesh.
pub fn gamma_traces_from_field(m: &DiscreteManifold, u: &[C64]) -> GammaTraces {
    let g = m.gamma_layer;
    let h = m.h_y;
    let dirichlet = (0..m.nx).map(|a| u[m.node(g, a)]).collect();
    let neumann = (0..m.nx).map(|a| (u[m.node(g + 1, a)] - u[m.node(g - 1, a)]) / (2.0 * h)).collect();
    GammaTraces { dirichlet, neumann }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScatteringNdReport {
    /// Numerical rank of the Neumann-trace family after each added member.
    pub rank_curve: Vec<usize>,
    /// Condition number of the full Neumann-trace matrix.
    pub condition: f64,
    pub family_size: usize,
}

/// `Λ(λ) = D (S F)^+` from Dirichlet traces `D` and Neumann traces `F` of the
/// eigenfunction family.
pub fn nd_map_from_traces(traces: &[GammaTraces], surface: &[f64], lambda: f64) -> Result<(NdMap, ScatteringNdReport)> {
    let nb = surface.len();
    let nf = traces.len();
    let d = DMatrix::from_fn(nb, nf, |a, k| traces[k].dirichlet[a]);
    let f = DMatrix::from_fn(nb, nf, |a, k| traces[k].neumann[a] * surface[a]);
    let colscale: Vec<f64> = (0..nf).map(|k| f.column(k).norm().max(f64::MIN_POSITIVE)).collect();
    let fs = DMatrix::from_fn(nb, nf, |a, k| f[(a, k)] / colscale[k]);
    let ds = DMatrix::from_fn(nb, nf, |a, k| d[(a, k)] / colscale[k]);
    let mut rank_curve = vec![];
    for k in 1..=nf {
        rank_curve.push(numerical_rank(&fs.columns(0, k).into_owned(), 1e-10).0);
    }
    let (rank, sv) = numerical_rank(&fs, 1e-10);
    let condition = sv.first().copied().unwrap_or(0.0) / sv.get(nb.min(nf).saturating_sub(1)).copied().unwrap_or(0.0);
    if rank < nb {
        return Err(Error::RankDeficient { rank, needed: nb });
    }
    let kernel = &ds * pinv(&fs, 1e-14);
    Ok((NdMap { z: c(lambda), kernel, surface: surface.to_vec() }, ScatteringNdReport { rank_curve, condition, family_size: nf }))
}

/// `Λ(λ)` on `Γ` from the end-1 amplitude table (physical and non-physical).
pub fn nd_map_from_scattering(m: &DiscreteManifold, table: &AmplitudeTable) -> Result<(NdMap, ScatteringNdReport)> {
    let traces = gamma_traces_from_table(m, table, 0);
    nd_map_from_traces(&traces, &m.cross_section.node_measures, table.energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;
    use crate::manifold::{split_interior, CutSpecification};
    use crate::scattering::amplitude_table;

    fn manifold(nx: usize, amplitude: f64) -> DiscreteManifold {
        let cs = CrossSection::cycle(nx, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 40, chi_layer: 16, chi2_layer: 0, gamma_layer: 20, origins: vec![] };
        let p = PerturbationSpec { kind: "bump".into(), amplitude, center_node: 2 % nx, center_layer: 8.0, sigma: 2.0, support: (5, 12), ..Default::default() };
        DiscreteManifold::build(cs, &spec, &p).unwrap()
    }

    #[test]
    fn interval_nd_map_closed_form() {
        let cs = CrossSection::from_edges(1, vec![], vec![1.0]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 12, chi_layer: 4, chi2_layer: 0, gamma_layer: 6, origins: vec![] };
        let m = DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap();
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let z = -0.7;
        let nd = nd_map_direct(&dom, c(z)).unwrap();
        let k = (1.0 - z / 2.0).acosh();
        let want = (k * 6.0).cosh() / (k * 6.0).sinh() / k.sinh();
        assert!((nd.kernel[(0, 0)].re - want).abs() < 1e-12 * want, "{} vs {want}", nd.kernel[(0, 0)]);
    }

    #[test]
    fn resolvent_and_bvp_routes_agree() {
        let m = manifold(8, 0.4);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        for z in [c(-0.3), C64::new(1.0, 0.5), c(2.345)] {
            let a = nd_map_direct(&dom, z).unwrap();
            let b = nd_map_bvp(&dom, z).unwrap();
            assert!(a.distance(&b) < 1e-10);
            assert!(a.symmetry_defect() < 1e-12);
        }
    }

    #[test]
    fn bsp_completeness_and_spectral_sum() {
        let m = manifold(8, 0.4);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let bsp = boundary_spectral_projection(&dom).unwrap();
        assert!(bsp.completeness_defect(&boundary_measures(&dom)) < 1e-10);
        let z = C64::new(1.3, 0.2);
        assert!(bsp.nd_map(z).unwrap().distance(&nd_map_direct(&dom, z).unwrap()) < 1e-10);
        for i in 0..bsp.len() {
            let e = nalgebra::SymmetricEigen::new(bsp.kernel(i));
            assert!(e.eigenvalues.iter().all(|&v| v > -1e-12));
        }
        let flat = boundary_spectral_projection(&split_interior(&manifold(8, 0.0), &CutSpecification::default()).unwrap()).unwrap();
        let d: f64 = bsp.eigenvalues.iter().zip(&flat.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d > 1e-3);
    }

    #[test]
    fn contour_round_trip() {
        let m = manifold(8, 0.4);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let truth = boundary_spectral_projection(&dom).unwrap().visible(1e-6);
        let settings = ContourSettings { upper: 8.5, ..Default::default() };
        let solver = NdMapSolver::new(&dom).unwrap();
        let (got, rep) = bsp_from_ndmap(|z| solver.bvp(z).map(|n| n.kernel), &dom.surface, &settings).unwrap();
        let got = got.visible(1e-6);
        assert_eq!(got.len(), truth.len(), "{rep:?}");
        let d: f64 = got.eigenvalues.iter().zip(&truth.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d:e}");
        assert!(got.kernel_distance(&truth) < 1e-6);
    }

    #[test]
    fn scattering_determines_nd_map() {
        let m = manifold(8, 0.4);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        for lambda in [0.37, 1.55, 3.05] {
            let t = amplitude_table(&m, lambda, true).unwrap();
            let (nd, rep) = nd_map_from_scattering(&m, &t).unwrap();
            let direct = nd_map_direct(&dom, c(lambda)).unwrap();
            let e = nd.distance(&direct);
            assert!(e < 1e-6, "λ={lambda}: {e:e} cond {}", rep.condition);
            assert_eq!(*rep.rank_curve.last().unwrap(), 8);
        }
    }
}
