//! The discrete manifold: a layered mesh `M × {0, …, L}` with perturbed weights,
//! end attachments, cutoff layers and the splitting along the cut Γ.
//!
//! Node `(layer, a)` has global index `layer · nx + a`.  With a single end the
//! first layer is a Neumann wall (half cell), and the last layer is where the
//! exact mode closure of end 1 is applied.  With two ends, layer 0 carries the
//! closure of end 2.

use std::collections::VecDeque;

use serde::Serialize;

use crate::config::{ManifoldSpec, PerturbationSpec, RunConfig};
use crate::cross_section::{transverse_spectrum, CrossSection, ModeBasis};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub weight: f64,
    pub length: f64,
}

/// One cylindrical end.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EndInfo {
    /// `+1` when the end runs towards increasing layers.
    pub direction: i64,
    /// Layer carrying the exact closure.
    pub closure_layer: usize,
    /// Boundary layer of the indicator region χ_j (inclusive).
    pub chi_layer: usize,
    /// Layer where the end coordinate `y` vanishes.
    pub origin: usize,
}

impl EndInfo {
    pub fn y(&self, layer: usize, h: f64) -> f64 {
        (layer as f64 - self.origin as f64) * self.direction as f64 * h
    }

    pub fn in_region(&self, layer: usize) -> bool {
        if self.direction > 0 { layer >= self.chi_layer } else { layer <= self.chi_layer }
    }

    /// Layers of the χ_j region on the mesh, ordered outward.
    pub fn region_layers(&self) -> Vec<usize> {
        if self.direction > 0 {
            (self.chi_layer..=self.closure_layer).collect()
        } else {
            (self.closure_layer..=self.chi_layer).rev().collect()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteManifold {
    pub cross_section: CrossSection,
    #[serde(skip)]
    pub modes: ModeBasis,
    pub nx: usize,
    pub h_y: f64,
    pub layers: usize,
    pub ends: Vec<EndInfo>,
    pub gamma_layer: usize,
    pub support: Option<(usize, usize)>,
    /// Conformal factor `c` per node (1 outside the perturbation support).
    pub metric_factor: Vec<f64>,
    pub measures: Vec<f64>,
    pub adjacency: Vec<Vec<Edge>>,
}

pub fn half_wall(ends: usize, layer: usize) -> f64 {
    if ends == 1 && layer == 0 { 0.5 } else { 1.0 }
}

impl DiscreteManifold {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let cs = CrossSection::from_spec(&cfg.cross_section)?;
        Self::build(cs, &cfg.manifold, &cfg.perturbation)
    }

    pub fn build(cs: CrossSection, spec: &ManifoldSpec, pert: &PerturbationSpec) -> Result<Self> {
        let modes = transverse_spectrum(&cs)?;
        let nx = cs.nodes;
        let layers = spec.layers;
        let last = layers.checked_sub(1).ok_or_else(|| Error::config("manifold.layers", "need at least one layer"))?;
        let h = spec.h_y;
        let mut ends = vec![EndInfo {
            direction: 1,
            closure_layer: last,
            chi_layer: spec.chi_layer,
            origin: spec.origins.first().copied().unwrap_or(if spec.ends == 1 { 0 } else { spec.chi_layer }),
        }];
        if spec.ends == 2 {
            ends.push(EndInfo { direction: -1, closure_layer: 0, chi_layer: spec.chi2_layer, origin: spec.origins.get(1).copied().unwrap_or(spec.chi2_layer) });
        }
        if spec.chi_layer < 1 || spec.chi_layer + 4 > last + 1 {
            return Err(Error::config("manifold.chi_layer", "end-1 region needs at least four clean layers before the closure"));
        }
        if spec.gamma_layer < spec.chi_layer + 1 || spec.gamma_layer + 1 >= last {
            return Err(Error::config("manifold.gamma_layer", "Γ must lie inside end 1 with a clean layer on each side"));
        }
        if spec.ends == 2 && (spec.chi2_layer < 3 || spec.chi2_layer + 2 > spec.chi_layer) {
            return Err(Error::config("manifold.chi2_layer", "end-2 region needs clean layers and must sit below end 1"));
        }
        let support = if pert.kind != "none" && pert.amplitude != 0.0 { Some(pert.support) } else { None };
        if let Some((lo, hi)) = support {
            if lo > hi || hi > last {
                return Err(Error::config("perturbation.support", "empty or out-of-mesh support"));
            }
            if hi >= last || hi + 2 > spec.chi_layer {
                return Err(Error::config("perturbation.support", "perturbation support overlaps the end-1 cutoff or truncation zone"));
            }
            if (lo..=hi).contains(&spec.gamma_layer) {
                return Err(Error::config("manifold.gamma_layer", "Γ placed inside the perturbation support"));
            }
            if spec.ends == 2 && lo < spec.chi2_layer + 2 {
                return Err(Error::config("perturbation.support", "perturbation support overlaps the end-2 cutoff or truncation zone"));
            }
        }

        let n = nx * layers;
        let mut factor = vec![1.0; n];
        if let Some((lo, hi)) = support {
            let dx = cs.distances_from(pert.center_node.min(nx - 1));
            for l in lo..=hi {
                for a in 0..nx {
                    let dy = (l as f64 - pert.center_layer) * h;
                    let d2 = if pert.kind == "layered" { dy * dy } else { dx[a] * dx[a] + dy * dy };
                    factor[l * nx + a] = 1.0 + pert.amplitude * (-d2 / (2.0 * pert.sigma * pert.sigma)).exp();
                }
            }
        }
        if factor.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::config("perturbation.amplitude", "conformal factor must stay positive"));
        }
        let dim = pert.dimension;
        let (mexp, wexp) = if pert.perturb_measure { (dim / 2.0, dim / 2.0 - 1.0) } else { (0.0, 1.0) };

        let mut measures = vec![0.0; n];
        let mut adjacency = vec![Vec::new(); n];
        let link = |adj: &mut Vec<Vec<Edge>>, i: usize, j: usize, w: f64, len: f64| {
            let cbar = 0.5 * (factor[i] + factor[j]);
            let weight = w * cbar.powf(wexp);
            let length = len * cbar.sqrt();
            adj[i].push(Edge { to: j, weight, length });
            adj[j].push(Edge { to: i, weight, length });
        };
        for l in 0..layers {
            let half = half_wall(spec.ends, l);
            for a in 0..nx {
                let i = l * nx + a;
                measures[i] = cs.node_measures[a] * h * half * factor[i].powf(mexp);
            }
            for &(a, b, w) in &cs.edges {
                link(&mut adjacency, l * nx + a, l * nx + b, w * h * half, CrossSection::edge_length(w));
            }
            if l + 1 < layers {
                for a in 0..nx {
                    link(&mut adjacency, l * nx + a, (l + 1) * nx + a, cs.node_measures[a] / h, h);
                }
            }
        }
        for list in adjacency.iter_mut() {
            list.sort_by_key(|e| e.to);
        }
        Ok(DiscreteManifold { cross_section: cs, modes, nx, h_y: h, layers, ends, gamma_layer: spec.gamma_layer, support, metric_factor: factor, measures, adjacency })
    }

    pub fn node(&self, layer: usize, a: usize) -> usize {
        layer * self.nx + a
    }

    pub fn layer_of(&self, node: usize) -> usize {
        node / self.nx
    }

    pub fn transverse_of(&self, node: usize) -> usize {
        node % self.nx
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    /// Apply `H = −Δ_G` (no closures) to a real vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.adjacency[i].iter().map(|e| e.weight * (u[i] - u[e.to])).sum::<f64>() / self.measures[i])
            .collect()
    }

    /// Largest absolute entry of `diag(m) H − (diag(m) H)^T`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for e in &self.adjacency[i] {
                let back = self.adjacency[e.to].iter().find(|f| f.to == i).map(|f| f.weight).unwrap_or(f64::NAN);
                worst = worst.max((e.weight - back).abs());
            }
        }
        worst
    }

    pub fn gamma_nodes(&self) -> Vec<usize> {
        (0..self.nx).map(|a| self.node(self.gamma_layer, a)).collect()
    }
}

/// Cut data: Σ ⊂ Γ and an optional obstacle ball.
#[derive(Clone, Debug, Serialize, Default)]
pub struct CutSpecification {
    /// Σ as transverse indices on Γ (empty: all of Γ).
    pub sigma: Vec<usize>,
    /// Obstacle center (global node) and graph radius.
    pub obstacle: Option<(usize, usize)>,
}

/// A bounded interior `Ω_O` with its boundary `Γ_O`, numbered locally.
#[derive(Clone, Debug, Serialize)]
pub struct InteriorDomain {
    /// Global node of each local node, ascending.
    pub global: Vec<usize>,
    pub measures: Vec<f64>,
    pub adjacency: Vec<Vec<Edge>>,
    /// Local indices of `Γ_O`.
    pub boundary: Vec<usize>,
    /// Surface weight of each boundary node.
    pub surface: Vec<f64>,
    pub removed: Vec<usize>,
    pub nx: usize,
    pub h_y: f64,
    pub obstacle: Option<(usize, usize)>,
}

pub fn bfs_hops(adjacency: &[Vec<Edge>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[source] = 0;
    let mut q = VecDeque::from([source]);
    while let Some(i) = q.pop_front() {
        for e in &adjacency[i] {
            if dist[e.to] == usize::MAX {
                dist[e.to] = dist[i] + 1;
                q.push_back(e.to);
            }
        }
    }
    dist
}

/// Split off the bounded interior (layers `0..=Γ`) and remove an optional obstacle.
pub fn split_interior(m: &DiscreteManifold, cut: &CutSpecification) -> Result<InteriorDomain> {
    if m.ends.len() != 1 {
        return Err(Error::Geometry("a bounded interior needs exactly one end".into()));
    }
    let g = m.gamma_layer;
    let n_int = (g + 1) * m.nx;
    let mut adj_int: Vec<Vec<Edge>> = (0..n_int)
        .map(|i| {
            let half = if m.layer_of(i) == g { 0.5 } else { 1.0 };
            m.adjacency[i]
                .iter()
                .filter(|e| e.to < n_int)
                .map(|e| {
                    let transverse = m.layer_of(e.to) == m.layer_of(i);
                    Edge { weight: if transverse { e.weight * half } else { e.weight }, ..*e }
                })
                .collect()
        })
        .collect();
    let mut measures: Vec<f64> = (0..n_int).map(|i| if m.layer_of(i) == g { 0.5 * m.measures[i] } else { m.measures[i] }).collect();

    let mut removed = vec![];
    let mut sphere = vec![];
    if let Some((center, radius)) = cut.obstacle {
        if center >= n_int {
            return Err(Error::Geometry("obstacle center outside the interior".into()));
        }
        if radius == 0 {
            return Err(Error::Geometry("obstacle of zero volume".into()));
        }
        let hops = bfs_hops(&adj_int, center);
        removed = (0..n_int).filter(|&i| hops[i] < radius).collect();
        sphere = (0..n_int).filter(|&i| hops[i] == radius).collect();
        if sphere.iter().any(|&i| m.layer_of(i) == g || m.layer_of(i) == 0) {
            return Err(Error::Geometry("obstacle sphere meets the boundary of the interior".into()));
        }
    }
    let keep: Vec<usize> = (0..n_int).filter(|i| removed.binary_search(i).is_err()).collect();
    let mut local = vec![usize::MAX; n_int];
    for (k, &i) in keep.iter().enumerate() {
        local[i] = k;
    }
    let mut boundary = vec![];
    let mut surface = vec![];
    if cut.obstacle.is_some() {
        for &i in &sphere {
            let s: f64 = adj_int[i].iter().filter(|e| removed.binary_search(&e.to).is_ok()).map(|e| e.weight * e.length).sum();
            boundary.push(local[i]);
            surface.push(s);
        }
    } else {
        let sigma: Vec<usize> = if cut.sigma.is_empty() { (0..m.nx).collect() } else { cut.sigma.clone() };
        for a in sigma {
            if a >= m.nx {
                return Err(Error::Geometry(format!("Σ node {a} outside Γ")));
            }
            boundary.push(local[m.node(g, a)]);
            surface.push(m.cross_section.node_measures[a]);
        }
    }
    let adjacency: Vec<Vec<Edge>> = keep
        .iter()
        .map(|&i| adj_int[i].iter().filter(|e| local[e.to] != usize::MAX).map(|e| Edge { to: local[e.to], ..*e }).collect())
        .collect();
    measures = keep.iter().map(|&i| measures[i]).collect();
    adj_int.clear();
    let dom = InteriorDomain { global: keep, measures, adjacency, boundary, surface, removed, nx: m.nx, h_y: m.h_y, obstacle: cut.obstacle };
    if dom.components() != 1 {
        return Err(Error::InteriorDisconnected);
    }
    Ok(dom)
}

impl InteriorDomain {
    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    fn components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for s in 0..self.len() {
            if !seen[s] {
                count += 1;
                let d = bfs_hops(&self.adjacency, s);
                for (i, v) in d.iter().enumerate() {
                    if *v != usize::MAX {
                        seen[i] = true;
                    }
                }
            }
        }
        count
    }

    /// Flux-form stiffness matrix `K` with `H_O = diag(m)^{-1} K`.
    pub fn stiffness(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for e in &self.adjacency[i] {
                k[(i, i)] += e.weight;
                k[(i, e.to)] -= e.weight;
            }
        }
        k
    }

    /// Half bandwidth of the local numbering.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.len() {
            for e in &self.adjacency[i] {
                bw = bw.max(i.abs_diff(e.to));
            }
        }
        bw
    }

    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.global.binary_search(&global).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(layers: usize) -> ManifoldSpec {
        ManifoldSpec { ends: 1, h_y: 1.0, layers, chi_layer: 14, chi2_layer: 0, gamma_layer: 16, origins: vec![] }
    }

    fn bump() -> PerturbationSpec {
        PerturbationSpec { kind: "bump".into(), amplitude: 0.4, center_node: 2, center_layer: 8.0, sigma: 2.0, support: (5, 12), ..Default::default() }
    }

    #[test]
    fn unperturbed_is_product() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let m = DiscreteManifold::build(cs, &spec(20), &PerturbationSpec::default()).unwrap();
        assert!(m.metric_factor.iter().all(|&c| c == 1.0));
        for i in 0..m.len() {
            let l = m.layer_of(i);
            assert_eq!(m.measures[i], if l == 0 { 0.5 } else { 1.0 });
            for e in &m.adjacency[i] {
                let expect = if m.layer_of(e.to) == l { if l == 0 { 0.5 } else { 1.0 } } else { 1.0 };
                assert_eq!(e.weight, expect);
            }
        }
    }

    #[test]
    fn bump_respects_support() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let p = PerturbationSpec { perturb_measure: false, ..bump() };
        let m = DiscreteManifold::build(cs.clone(), &spec(20), &p).unwrap();
        let flat = DiscreteManifold::build(cs, &spec(20), &PerturbationSpec::default()).unwrap();
        for i in 0..m.len() {
            let l = m.layer_of(i);
            for (e, f) in m.adjacency[i].iter().zip(&flat.adjacency[i]) {
                let touches = (5..=12).contains(&l) || (5..=12).contains(&m.layer_of(e.to));
                if !touches {
                    assert_eq!(e.weight, f.weight);
                }
            }
        }
        assert!(m.symmetry_defect() <= 1e-12);
    }

    #[test]
    fn gamma_in_support_rejected() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let p = PerturbationSpec { support: (5, 17), ..bump() };
        assert!(DiscreteManifold::build(cs, &spec(30), &p).is_err());
    }

    #[test]
    fn obstacle_sphere() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let m = DiscreteManifold::build(cs, &spec(20), &PerturbationSpec::default()).unwrap();
        let empty = split_interior(&m, &CutSpecification::default()).unwrap();
        let g: Vec<usize> = empty.boundary.iter().map(|&k| empty.global[k]).collect();
        assert_eq!(g, m.gamma_nodes());
        let center = m.node(8, 3);
        let dom = split_interior(&m, &CutSpecification { sigma: vec![], obstacle: Some((center, 2)) }).unwrap();
        assert_eq!(dom.removed.len(), 5);
        assert_eq!(dom.boundary.len(), 8);
        let hops = bfs_hops(&m.adjacency, center);
        for &k in &dom.boundary {
            assert_eq!(hops[dom.global[k]], 2);
        }
    }

    #[test]
    fn disconnecting_obstacle_rejected() {
        let cs = CrossSection::cycle(4, 1.0, &[]).unwrap();
        let s = ManifoldSpec { ends: 1, h_y: 1.0, layers: 20, chi_layer: 12, chi2_layer: 0, gamma_layer: 14, origins: vec![] };
        let m = DiscreteManifold::build(cs, &s, &PerturbationSpec::default()).unwrap();
        let r = split_interior(&m, &CutSpecification { sigma: vec![], obstacle: Some((m.node(7, 0), 3)) });
        assert!(matches!(r, Err(Error::InteriorDisconnected)), "{r:?}");
    }
}
