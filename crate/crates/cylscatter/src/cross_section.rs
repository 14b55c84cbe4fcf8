//! Transverse cross-sections: weighted graphs with node measures.
//!
//! The Laplacian acts as `Δ_h f(a) = (1/μ_a) Σ_b w_ab (f(b) − f(a))`, so the
//! transverse spectral calculus is exact linear algebra.  Eigenvectors are
//! orthonormal in the measure-weighted inner product and carry a deterministic
//! sign (first entry of magnitude above 1e-12 is positive).

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::CrossSectionSpec;
use crate::error::{Error, Result};
use crate::linalg::{fix_signs, generalized_symmetric_eigen, group_by_tolerance, weighted_gram_schmidt, C64};

/// Multiplicity tolerance for grouping transverse eigenvalues.
pub const MULTIPLICITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct CrossSection {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub node_measures: Vec<f64>,
    pub boundary_nodes: Vec<usize>,
}

impl CrossSection {
    /// Validate and build from an explicit edge list.
    pub fn from_edges(nodes: usize, edges: Vec<(usize, usize, f64)>, node_measures: Vec<f64>) -> Result<Self> {
        if node_measures.len() != nodes {
            return Err(Error::config("cross_section.measures", format!("expected {nodes} measures, got {}", node_measures.len())));
        }
        for (i, &m) in node_measures.iter().enumerate() {
            if !(m > 0.0) {
                return Err(Error::NonpositiveMeasure { node: i, value: m });
            }
        }
        for &(a, b, w) in &edges {
            if a >= nodes || b >= nodes || a == b {
                return Err(Error::config("cross_section.edges", format!("bad edge ({a}, {b})")));
            }
            if !(w > 0.0) {
                return Err(Error::NonpositiveWeight { a, b, value: w });
            }
        }
        let cs = CrossSection { nodes, edges, node_measures, boundary_nodes: vec![] };
        let comps = cs.components();
        if comps != 1 {
            return Err(Error::Disconnected { components: comps });
        }
        Ok(cs)
    }

    /// Cycle of `n` nodes with spacing `h`: measures `h`, weights `scale_k / h`.
    pub fn cycle(n: usize, h: f64, scale: &[f64]) -> Result<Self> {
        if n == 1 {
            return Self::from_edges(1, vec![], vec![h]);
        }
        let edges = (0..n)
            .filter(|&k| n > 2 || k == 0)
            .map(|k| (k, (k + 1) % n, scale.get(k).copied().unwrap_or(1.0) / h))
            .collect();
        Self::from_edges(n, edges, vec![h; n])
    }

    /// Path of `n` nodes with spacing `h` (Neumann ends): unit-free weights `scale_k / h`.
    pub fn path(n: usize, h: f64, scale: &[f64]) -> Result<Self> {
        let edges = (0..n.saturating_sub(1)).map(|k| (k, k + 1, scale.get(k).copied().unwrap_or(1.0) / h)).collect();
        let mut cs = Self::from_edges(n, edges, vec![h; n])?;
        if n > 1 {
            cs.boundary_nodes = vec![0, n - 1];
        }
        Ok(cs)
    }

    pub fn from_spec(spec: &CrossSectionSpec) -> Result<Self> {
        match spec.kind.as_str() {
            "cycle" => Self::cycle(spec.nodes, spec.spacing, &spec.edge_scale),
            "path" => Self::path(spec.nodes, spec.spacing, &spec.edge_scale),
            "graph" => {
                let measures = if spec.measures.is_empty() { vec![1.0; spec.nodes] } else { spec.measures.clone() };
                Self::from_edges(spec.nodes, spec.edges.clone(), measures)
            }
            other => Err(Error::config("cross_section.kind", format!("unknown generator `{other}`"))),
        }
    }

    pub fn neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![vec![]; self.nodes];
        for &(a, b, w) in &self.edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        adj
    }

    fn components(&self) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; self.nodes];
        let mut count = 0;
        for s in 0..self.nodes {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut q = VecDeque::from([s]);
            seen[s] = true;
            while let Some(a) = q.pop_front() {
                for &(b, _) in &adj[a] {
                    if !seen[b] {
                        seen[b] = true;
                        q.push_back(b);
                    }
                }
            }
        }
        count
    }

    /// Flux-form Laplacian matrix `K` with `−Δ_h = diag(μ)^{-1} K`.
    pub fn stiffness(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.nodes, self.nodes);
        for &(a, b, w) in &self.edges {
            k[(a, a)] += w;
            k[(b, b)] += w;
            k[(a, b)] -= w;
            k[(b, a)] -= w;
        }
        k
    }

    /// Matrix of `Δ_h` acting on node values.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.stiffness();
        for a in 0..self.nodes {
            let mu = self.node_measures[a];
            l.row_mut(a).scale_mut(1.0 / mu);
        }
        l
    }

    /// Length of an edge in the one-dimensional graph convention, `1 / w`.
    pub fn edge_length(w: f64) -> f64 {
        1.0 / w
    }

    /// Shortest-path distances from `source` with edge lengths `1 / w`.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let adj = self.neighbors();
        let mut dist = vec![f64::INFINITY; self.nodes];
        let mut done = vec![false; self.nodes];
        dist[source] = 0.0;
        for _ in 0..self.nodes {
            let Some(a) = (0..self.nodes).filter(|&i| !done[i]).min_by(|&i, &j| dist[i].partial_cmp(&dist[j]).unwrap()) else {
                break;
            };
            done[a] = true;
            for &(b, w) in &adj[a] {
                let d = dist[a] + Self::edge_length(w);
                if d < dist[b] {
                    dist[b] = d;
                }
            }
        }
        dist
    }
}

/// Transverse eigenpairs `(λ_n, φ_n)`.
#[derive(Clone, Debug, Serialize)]
pub struct ModeBasis {
    pub eigenvalues: Vec<f64>,
    /// Column `n` holds `φ_n` at every node.
    pub eigenvectors: DMatrix<f64>,
    pub multiplicity_groups: Vec<Vec<usize>>,
    pub measures: Vec<f64>,
}

/// One-sided limit selector for `P(z)` on the real axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limit {
    None,
    Plus,
    Minus,
}

pub fn transverse_spectrum(cs: &CrossSection) -> Result<ModeBasis> {
    let k = cs.stiffness();
    let (mut vals, mut vecs) = generalized_symmetric_eigen(&k, &cs.node_measures)?;
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in vals.iter_mut() {
        if v.abs() < 1e-13 * scale {
            *v = 0.0;
        }
    }
    let groups = group_by_tolerance(&vals, MULTIPLICITY_TOL);
    for g in &groups {
        if g.len() > 1 {
            weighted_gram_schmidt(&mut vecs, g, &cs.node_measures);
        }
    }
    fix_signs(&mut vecs, 1e-12);
    let mb = ModeBasis { eigenvalues: vals, eigenvectors: vecs, multiplicity_groups: groups, measures: cs.node_measures.clone() };
    let resid = mb.max_residual(cs);
    if !(resid <= 1e-9 * scale.max(1.0)) {
        return Err(Error::Eigensolver(format!("residual {resid:e} exceeds tolerance (spectral scale {scale:e})")));
    }
    Ok(mb)
}

impl ModeBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn phi(&self, n: usize) -> Vec<f64> {
        self.eigenvectors.column(n).iter().cloned().collect()
    }

    /// `⟨f, φ_n⟩` in the weighted inner product (bilinear).
    pub fn coefficient(&self, f: &[C64], n: usize) -> C64 {
        f.iter()
            .enumerate()
            .map(|(a, v)| v * (self.eigenvectors[(a, n)] * self.measures[a]))
            .sum()
    }

    /// Projection `P_g` onto a multiplicity group, as a matrix acting on node values.
    pub fn group_projection(&self, group: &[usize]) -> DMatrix<f64> {
        let n = self.measures.len();
        DMatrix::from_fn(n, n, |a, b| group.iter().map(|&k| self.eigenvectors[(a, k)] * self.eigenvectors[(b, k)] * self.measures[b]).sum())
    }

    /// Largest relative residual `‖Δ_h φ_n + λ_n φ_n‖`.
    pub fn max_residual(&self, cs: &CrossSection) -> f64 {
        let l = cs.laplacian();
        let mut worst: f64 = 0.0;
        for n in 0..self.len() {
            let phi = self.eigenvectors.column(n);
            let r = &l * phi + phi * self.eigenvalues[n];
            worst = worst.max(r.norm() / self.eigenvalues[n].abs().max(1.0));
        }
        worst
    }

    /// Per-mode values of `P(z) = √(z − λ_n)` on the branch with `Im ≥ 0`.
    pub fn sqrt_operator(&self, z: C64, limit: Limit) -> Result<Vec<C64>> {
        (0..self.len()).map(|n| branch_sqrt(z - self.eigenvalues[n], limit).map_err(|_| Error::Threshold { energy: z.re, mode: n, threshold: self.eigenvalues[n] })).collect()
    }
}

/// `√ζ = √r e^{iθ/2}` with `ζ = r e^{iθ}`, `0 < θ < 2π`; on the cut `ζ > 0` the
/// `+i0` limit gives the positive root and `−i0` the negative one.
pub fn branch_sqrt(zeta: C64, limit: Limit) -> Result<C64> {
    if zeta.im == 0.0 {
        if zeta.re == 0.0 {
            return Err(Error::Threshold { energy: 0.0, mode: 0, threshold: 0.0 });
        }
        if zeta.re < 0.0 {
            return Ok(C64::new(0.0, (-zeta.re).sqrt()));
        }
        return match limit {
            Limit::Plus => Ok(C64::new(zeta.re.sqrt(), 0.0)),
            Limit::Minus => Ok(C64::new(-zeta.re.sqrt(), 0.0)),
            Limit::None => Err(Error::Threshold { energy: zeta.re, mode: 0, threshold: 0.0 }),
        };
    }
    let r = zeta.norm();
    let mut theta = zeta.im.atan2(zeta.re);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    Ok(C64::from_polar(r.sqrt(), theta / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle8_spectrum_closed_form() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let mb = transverse_spectrum(&cs).unwrap();
        let mut expect: Vec<f64> = (0..8).map(|k| 2.0 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / 8.0).cos())).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in mb.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let frozen = [0.0, 0.585786437626905, 0.585786437626905, 2.0, 2.0, 3.414213562373095, 3.414213562373095, 4.0];
        for (a, b) in mb.eigenvalues.iter().zip(&frozen) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mb.multiplicity_groups.len(), 5);
        let phi0 = mb.phi(0);
        assert!(phi0.iter().all(|v| (v - phi0[0]).abs() < 1e-12 && *v > 0.0));
    }

    #[test]
    fn path3_spectrum() {
        let cs = CrossSection::from_edges(3, vec![(0, 1, 1.0), (1, 2, 1.0)], vec![1.0; 3]).unwrap();
        let mb = transverse_spectrum(&cs).unwrap();
        for (a, b) in mb.eigenvalues.iter().zip(&[0.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node() {
        let cs = CrossSection::cycle(1, 1.0, &[]).unwrap();
        let mb = transverse_spectrum(&cs).unwrap();
        assert_eq!(mb.eigenvalues, vec![0.0]);
        assert!((mb.eigenvectors[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn validation_errors() {
        let e = CrossSection::from_edges(2, vec![(0, 1, -1.0)], vec![1.0, 1.0]).unwrap_err();
        assert!(e.to_string().contains("nonpositive weight"));
        let e = CrossSection::from_edges(3, vec![(0, 1, 1.0)], vec![1.0; 3]).unwrap_err();
        assert!(matches!(e, Error::Disconnected { components: 2 }));
    }

    #[test]
    fn scaled_cycle_echoes_weights() {
        let scale: Vec<f64> = (0..8).map(|k| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * k as f64 / 8.0).cos()).collect();
        let cs = CrossSection::cycle(8, 1.0, &scale).unwrap();
        for (k, &(_, _, w)) in cs.edges.iter().enumerate() {
            assert!((w - scale[k]).abs() < 1e-15);
        }
        let k = cs.stiffness();
        assert!((k.clone() - k.transpose()).norm() == 0.0);
    }

    #[test]
    fn branch_examples() {
        let v = branch_sqrt(C64::new(4.0, 0.0), Limit::Plus).unwrap();
        assert!((v - C64::new(2.0, 0.0)).norm() < 1e-15);
        let v = branch_sqrt(C64::new(-9.0, 0.0), Limit::Plus).unwrap();
        assert!((v - C64::new(0.0, 3.0)).norm() < 1e-15);
        let z = C64::new(0.0, 4.0);
        let v = branch_sqrt(z, Limit::None).unwrap();
        assert!((v * v - z).norm() < 1e-12 && v.im >= 0.0);
        assert!((v - C64::new(2f64.sqrt(), 2f64.sqrt())).norm() < 1e-12);
        assert!(branch_sqrt(C64::new(0.0, 0.0), Limit::Plus).is_err());
    }

    #[test]
    fn projections_resolve_identity() {
        let cs = CrossSection::cycle(8, 1.0, &[]).unwrap();
        let mb = transverse_spectrum(&cs).unwrap();
        let mut sum = DMatrix::<f64>::zeros(8, 8);
        for g in &mb.multiplicity_groups {
            let p = mb.group_projection(g);
            assert!((&p * &p - &p).norm() < 1e-10);
            sum += p;
        }
        assert!((sum - DMatrix::identity(8, 8)).norm() < 1e-10);
        let mut rebuilt = DMatrix::<f64>::zeros(8, 8);
        for g in &mb.multiplicity_groups {
            rebuilt -= mb.group_projection(g) * mb.eigenvalues[g[0]];
        }
        let lap = cs.laplacian();
        assert!((rebuilt - &lap).norm() / lap.norm() < 1e-10);
    }
}
