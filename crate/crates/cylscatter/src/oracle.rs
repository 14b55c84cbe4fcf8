//! Independent reference engines used for verification only.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, C64, I};
use crate::manifold::{DiscreteManifold, InteriorDomain};

/// Leapfrog run of `M u_tt + K u = S f` on an interior domain.
#[derive(Clone, Debug, Serialize)]
pub struct TimeDomainRun {
    pub dt: f64,
    pub substeps: usize,
    /// Field at `k · dt`, `k = 0, …, steps`.
    pub snapshots: Vec<Vec<f64>>,
    /// Relative drift of the discrete energy after the source switched off.
    pub energy_drift: f64,
}

impl TimeDomainRun {
    pub fn at(&self, t: f64) -> &[f64] {
        let k = (t / self.dt).round() as usize;
        &self.snapshots[k.min(self.snapshots.len() - 1)]
    }
}

struct Stepper<'a> {
    dom: &'a InteriorDomain,
}

impl Stepper<'_> {
    fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let dom = self.dom;
        (0..dom.len())
            .map(|i| dom.adjacency[i].iter().map(|e| e.weight * (u[i] - u[e.to])).sum())
            .collect()
    }

    fn energy(&self, prev: &[f64], next: &[f64], dt: f64) -> f64 {
        let ku = self.stiffness_apply(next);
        let kin: f64 = (0..prev.len()).map(|i| self.dom.measures[i] * ((next[i] - prev[i]) / dt).powi(2)).sum();
        let pot: f64 = (0..prev.len()).map(|i| ku[i] * prev[i]).sum();
        0.5 * (kin + pot)
    }

    fn spectral_radius_bound(&self) -> f64 {
        let dom = self.dom;
        (0..dom.len()).map(|i| 2.0 * dom.adjacency[i].iter().map(|e| e.weight).sum::<f64>() / dom.measures[i]).fold(0.0, f64::max)
    }
}

/// Simulate the Neumann-driven wave equation with boundary data `f(t)` (one value
/// per boundary node) over `[0, horizon]`, storing snapshots every `dt`.  The
/// leapfrog step is `dt / substeps`; the run continues to `horizon + tail` with the
/// source switched off to measure energy drift.
pub fn fdtd_simulate<F>(dom: &InteriorDomain, f: F, horizon: f64, dt: f64, substeps: usize, tail: f64) -> Result<TimeDomainRun>
where
    F: Fn(f64) -> Vec<f64>,
{
    let st = Stepper { dom };
    let step = dt / substeps as f64;
    let limit = 2.0 / st.spectral_radius_bound().sqrt();
    if step > 0.9 * limit {
        return Err(Error::Unstable(format!("time step {step} exceeds 0.9 × stability limit {limit}")));
    }
    let n = dom.len();
    let steps = (horizon / dt).round() as usize;
    let tail_steps = ((tail / dt).round() as usize).max(1) * substeps;
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let force = |t: f64| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (k, v) in f(t).into_iter().enumerate() {
            g[dom.boundary[k]] += dom.surface[k] * v;
        }
        g
    };
    {
        let g = force(0.0);
        for i in 0..n {
            cur[i] = 0.5 * step * step * g[i] / dom.measures[i];
        }
    }
    let advance = |prev: &mut Vec<f64>, cur: &mut Vec<f64>, g: &[f64]| {
        let ku = st.stiffness_apply(cur);
        let next: Vec<f64> = (0..n).map(|i| 2.0 * cur[i] - prev[i] + step * step * (g[i] - ku[i]) / dom.measures[i]).collect();
        *prev = std::mem::replace(cur, next);
    };
    let mut snapshots = vec![vec![0.0; n]];
    let mut total = 1usize;
    for _ in 0..steps {
        for _ in 0..substeps {
            let g = force(total as f64 * step);
            advance(&mut prev, &mut cur, &g);
            total += 1;
        }
        snapshots.push(prev.clone());
    }
    let zero = vec![0.0; n];
    let e0 = st.energy(&prev, &cur, step);
    let mut drift: f64 = 0.0;
    for _ in 0..tail_steps {
        advance(&mut prev, &mut cur, &zero);
        drift = drift.max((st.energy(&prev, &cur, step) - e0).abs());
    }
    Ok(TimeDomainRun { dt, substeps, snapshots, energy_drift: if e0 > 0.0 { drift / e0 } else { drift } })
}

/// Neighbour moves for the geodesic oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stencil {
    /// Mesh edges only.
    Edges,
    /// Edges plus transverse-longitudinal diagonals.
    Diagonal,
    /// Diagonals plus knight moves.
    Knight,
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then(other.1.cmp(&self.1))
    }
}

/// Weighted graph for shortest paths over local indices of an interior domain.
#[derive(Clone, Debug, Serialize)]
pub struct GeodesicGraph {
    pub links: Vec<Vec<(usize, f64)>>,
}

impl GeodesicGraph {
    /// Links of `dom` for the given stencil; the manifold provides layer structure
    /// and the conformal factor used for composite moves.
    pub fn new(m: &DiscreteManifold, dom: &InteriorDomain, stencil: Stencil) -> Self {
        let n = dom.len();
        let mut links: Vec<Vec<(usize, f64)>> = (0..n).map(|i| dom.adjacency[i].iter().map(|e| (e.to, e.length)).collect()).collect();
        if stencil == Stencil::Edges {
            return GeodesicGraph { links };
        }
        let cs = &m.cross_section;
        let h = m.h_y;
        let cs_len: Vec<Vec<(usize, f64)>> = (0..cs.nodes)
            .map(|a| cs.edges.iter().filter_map(|&(p, q, w)| if p == a { Some((q, 1.0 / w)) } else if q == a { Some((p, 1.0 / w)) } else { None }).collect())
            .collect();
        let local = |l: i64, a: usize| -> Option<usize> {
            if l < 0 || l as usize > m.gamma_layer {
                return None;
            }
            dom.local_of(m.node(l as usize, a))
        };
        let factor = |i: usize| m.metric_factor[dom.global[i]];
        let add = |links: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, p: f64, q: f64| {
            let len = (p * p + q * q).sqrt() * (0.5 * (factor(i) + factor(j))).sqrt();
            links[i].push((j, len));
        };
        for i in 0..n {
            let g = dom.global[i];
            let (l, a) = (m.layer_of(g) as i64, m.transverse_of(g));
            for dl in [-1i64, 1] {
                for &(b, p) in &cs_len[a] {
                    let via = [local(l, b), local(l + dl, a)];
                    if let (Some(j), true) = (local(l + dl, b), via.iter().all(Option::is_some)) {
                        add(&mut links, i, j, p, h);
                    }
                    if stencil == Stencil::Knight {
                        if let (Some(j), Some(_), Some(_)) = (local(l + 2 * dl, b), local(l + dl, b), local(l + dl, a)) {
                            add(&mut links, i, j, p, 2.0 * h);
                        }
                        for &(c2, p2) in &cs_len[b] {
                            if c2 == a {
                                continue;
                            }
                            if let (Some(j), Some(_), Some(_)) = (local(l + dl, c2), local(l, b), local(l + dl, b)) {
                                add(&mut links, i, j, p + p2, h);
                            }
                        }
                    }
                }
            }
        }
        GeodesicGraph { links }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

/// Multi-source Dijkstra: distance from the nearest of `sources`.
pub fn graph_geodesics(graph: &GeodesicGraph, sources: &[usize]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Item(0.0, s));
    }
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(j, w) in &graph.links[i] {
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Item(nd, j));
            }
        }
    }
    dist
}

/// Distance table from every node in `sources` (rows) to all nodes.
pub fn distance_table(graph: &GeodesicGraph, sources: &[usize]) -> Vec<Vec<f64>> {
    sources.iter().map(|&s| graph_geodesics(graph, &[s])).collect()
}

/// `τ_O(Γ_O)` from graph distances: for each `Y` the largest distance to `Γ_O`
/// of a node whose nearest boundary point is `Y` up to `slack`, minimized over `Y`.
pub fn critical_radius_oracle(graph: &GeodesicGraph, boundary: &[usize], slack: f64) -> f64 {
    let to_boundary = graph_geodesics(graph, boundary);
    boundary
        .iter()
        .map(|&y| {
            let from_y = graph_geodesics(graph, &[y]);
            from_y.iter().zip(&to_boundary).filter(|(dy, db)| **dy <= **db + slack).map(|(_, db)| *db).fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Dense Green's matrix `G(z; X, Y) = [(K − zM)^{-1}]_{XY}` on an interior domain.
pub fn dense_resolvent(dom: &InteriorDomain, z: C64) -> Result<DMatrix<C64>> {
    let n = dom.len();
    let mut a = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -z * dom.measures[i];
        for e in &dom.adjacency[i] {
            a[(i, i)] += e.weight;
            a[(i, e.to)] -= e.weight;
        }
    }
    let lu = a.lu();
    let inv = lu.try_inverse().ok_or(Error::Singular(0))?;
    let scale = inv.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !scale.is_finite() || scale > 1e14 {
        return Err(Error::PoleProximity { z: format!("{z}"), distance: 1.0 / scale });
    }
    Ok(inv)
}

/// Reflection and transmission of one transverse mode through a two-ended pipe
/// whose conformal factor depends on the layer only, by the three-term recurrence.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PipeCoefficients {
    pub kappa: C64,
    pub reflection: C64,
    pub transmission: C64,
}

pub fn layered_pipe(m: &DiscreteManifold, mode: usize, lambda: f64) -> Result<PipeCoefficients> {
    if m.ends.len() != 2 {
        return Err(Error::Geometry("the transfer-matrix oracle needs two ends".into()));
    }
    let h = m.h_y;
    let lam_n = m.modes.eigenvalues[mode];
    let cosk = 1.0 - h * h * (lambda - lam_n) / 2.0;
    if cosk.abs() >= 1.0 {
        return Err(Error::NotPropagating { energy: lambda, mode, threshold: lam_n });
    }
    let kappa = c(cosk.acos() / h);
    let (e1, e2) = (&m.ends[0], &m.ends[1]);
    let factor = |l: usize| m.metric_factor[m.node(l, 0)];
    let mut u = vec![c(0.0); m.layers];
    for l in 0..=1 {
        u[l] = (I * kappa * e2.y(l, h)).exp();
    }
    for l in 1..m.layers - 1 {
        u[l + 1] = u[l] * (2.0 + h * h * (lam_n - lambda * factor(l))) - u[l - 1];
    }
    let (p, q) = (m.layers - 2, m.layers - 1);
    let (yp, yq) = (e1.y(p, h), e1.y(q, h));
    let mat = nalgebra::Matrix2::new((-I * kappa * yp).exp(), (I * kappa * yp).exp(), (-I * kappa * yq).exp(), (I * kappa * yq).exp());
    let sol = mat.lu().solve(&nalgebra::Vector2::new(u[p], u[q])).ok_or(Error::Singular(2))?;
    let (incoming, outgoing) = (sol[0], sol[1]);
    Ok(PipeCoefficients { kappa, reflection: outgoing / incoming, transmission: c(1.0) / incoming })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_data::{boundary_spectral_projection, nd_map_bvp};
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;
    use crate::manifold::{split_interior, CutSpecification};

    fn flat(nx: usize, gamma: usize) -> DiscreteManifold {
        let cs = CrossSection::cycle(nx, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: gamma + 20, chi_layer: gamma - 4, chi2_layer: 0, gamma_layer: gamma, origins: vec![] };
        DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap()
    }

    #[test]
    fn leapfrog_conserves_energy_and_vanishes_without_source() {
        let m = flat(8, 12);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let zero = fdtd_simulate(&dom, |_| vec![0.0; 8], 3.0, 0.5, 4, 1.0).unwrap();
        assert!(zero.snapshots.iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let run = fdtd_simulate(&dom, |t| (0..8).map(|k| if k == 2 { (t * (2.0 - t)).max(0.0) } else { 0.0 }).collect(), 4.0, 0.5, 16, 20.0).unwrap();
        assert!(run.energy_drift < 1e-10, "{}", run.energy_drift);
        assert!(fdtd_simulate(&dom, |_| vec![0.0; 8], 1.0, 1.0, 1, 0.0).is_err());
    }

    #[test]
    fn geodesics_on_the_product() {
        let m = flat(8, 12);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let src = dom.local_of(m.node(12, 0)).unwrap();
        let edges = graph_geodesics(&GeodesicGraph::new(&m, &dom, Stencil::Edges), &[src]);
        let knight = GeodesicGraph::new(&m, &dom, Stencil::Knight);
        let kd = graph_geodesics(&knight, &[src]);
        for l in 0..=12usize {
            for a in 0..8usize {
                let i = dom.local_of(m.node(l, a)).unwrap();
                let da = a.min(8 - a) as f64;
                let dy = (12 - l) as f64;
                assert_eq!(edges[i], da + dy);
                let euclid = (da * da + dy * dy).sqrt();
                assert!(kd[i] >= euclid - 1e-12 && kd[i] <= euclid * 1.06, "{l} {a}: {} vs {euclid}", kd[i]);
            }
        }
        for i in 0..knight.len() {
            for &(j, w) in &knight.links[i] {
                assert!(kd[j] <= kd[i] + w + 1e-12);
            }
        }
    }

    #[test]
    fn dense_resolvent_matches_sparse_and_residues() {
        let cs = CrossSection::cycle(6, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: 30, chi_layer: 10, chi2_layer: 0, gamma_layer: 14, origins: vec![] };
        let p = PerturbationSpec { kind: "bump".into(), amplitude: 0.3, center_node: 1, center_layer: 5.0, sigma: 1.5, support: (2, 8), ..Default::default() };
        let m = DiscreteManifold::build(cs, &spec, &p).unwrap();
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let z = C64::new(0.8, 0.3);
        let g = dense_resolvent(&dom, z).unwrap();
        assert!((&g - g.transpose()).norm() / g.norm() < 1e-11);
        let nd = nd_map_bvp(&dom, z).unwrap();
        for (a, &x) in dom.boundary.iter().enumerate() {
            for (b, &y) in dom.boundary.iter().enumerate() {
                assert!((g[(x, y)] - nd.kernel[(a, b)]).norm() < 1e-10 * nd.kernel.norm());
            }
        }
        let bsp = boundary_spectral_projection(&dom).unwrap();
        let k = 7;
        let (lam, radius, nodes) = (bsp.eigenvalues[k], 1e-5, 64);
        let mut res = DMatrix::<C64>::zeros(dom.len(), dom.len());
        for j in 0..nodes {
            let w = C64::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / nodes as f64);
            res += dense_resolvent(&dom, c(lam) + w).unwrap() * (w / nodes as f64);
        }
        let (vals, vecs) = crate::boundary_data::interior_eigen(&dom).unwrap();
        let idx: Vec<usize> = (0..vals.len()).filter(|&i| (vals[i] - lam).abs() < 1e-9).collect();
        let proj = DMatrix::from_fn(dom.len(), dom.len(), |x, y| idx.iter().map(|&i| vecs[(x, i)] * vecs[(y, i)]).sum::<f64>());
        let err = (res + proj.map(c)).norm() / proj.norm();
        assert!(err < 1e-9, "{err:e} {:?}", &vals[..12]);
    }

    #[test]
    fn straight_pipe_transmits_fully() {
        let cs = CrossSection::cycle(4, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 2, h_y: 1.0, layers: 30, chi_layer: 20, chi2_layer: 6, gamma_layer: 24, origins: vec![] };
        let m = DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap();
        let pc = layered_pipe(&m, 0, 1.3).unwrap();
        assert!(pc.reflection.norm() < 1e-12);
        let expect = (I * pc.kappa * ((m.ends[0].origin as f64 - m.ends[1].origin as f64) * m.h_y)).exp();
        assert!((pc.transmission - expect).norm() < 1e-12);
    }
}
