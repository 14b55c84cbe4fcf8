//! Interior reconstruction: boundary distance representation, metric recovery,
//! Green's function continuation to removed balls, gluing and the iteration.
//!
//! The reconstruction itself only consumes boundary spectral data.  The
//! ground-truth manifold enters in two places: the node identification used to
//! evaluate Green's probe vectors at recovered points, and the evaluation of
//! coverage and metric error.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::bc_method::BcEngine;
use crate::boundary_data::{boundary_spectral_projection, bsp_from_ndmap, interior_system, BoundarySpectralProjection, ContourReport, ContourSettings, NdMap};
use crate::config::{BcSpec, ReconstructSpec};
use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::manifold::{bfs_hops, split_interior, CutSpecification, DiscreteManifold, InteriorDomain};
use crate::oracle::{graph_geodesics, GeodesicGraph, Stencil};

/// Cyclic arclength coordinate on a one-dimensional `Γ_O`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryChart {
    /// Boundary indices in cyclic order.
    pub order: Vec<usize>,
    /// Arclength position of each boundary index.
    pub position: Vec<f64>,
    pub period: f64,
}

impl BoundaryChart {
    /// Chart of `Γ_O`: the cross-section cycle for a cut, angular order around
    /// the center for an obstacle sphere.
    pub fn new(m: &DiscreteManifold, dom: &InteriorDomain) -> Result<Self> {
        let nb = dom.boundary.len();
        let cs = &m.cross_section;
        let cycle = cs.edges.len() == cs.nodes && cs.nodes > 2 && (0..cs.nodes).all(|a| cs.edges.iter().any(|&(p, q, _)| p == a && q == (a + 1) % cs.nodes));
        if !cycle {
            return Err(Error::Geometry("boundary charts need a cycle cross-section".into()));
        }
        let step = |a: usize| {
            let w = cs.edges.iter().find(|&&(p, q, _)| p == a && q == (a + 1) % cs.nodes).map(|e| e.2).unwrap_or(1.0);
            crate::cross_section::CrossSection::edge_length(w)
        };
        let column = |i: usize| m.transverse_of(dom.global[i]);
        let layer = |i: usize| m.layer_of(dom.global[i]) as f64 * m.h_y;
        let mut at = vec![0.0; cs.nodes + 1];
        for a in 0..cs.nodes {
            at[a + 1] = at[a] + step(a);
        }
        let period = at[cs.nodes];
        match dom.obstacle {
            None => {
                let mut order: Vec<usize> = (0..nb).collect();
                order.sort_by_key(|&b| column(dom.boundary[b]));
                let position = (0..nb).map(|b| at[column(dom.boundary[b])]).collect();
                Ok(BoundaryChart { order, position, period })
            }
            Some((center, _)) => {
                let (cl, ca) = (m.layer_of(center) as f64 * m.h_y, at[m.transverse_of(center)]);
                let wrap = |x: f64| x - period * ((x / period) + 0.5).floor();
                let xy: Vec<(f64, f64)> = dom.boundary.iter().map(|&i| (layer(i) - cl, wrap(at[column(i)] - ca))).collect();
                let mut order: Vec<usize> = (0..nb).collect();
                order.sort_by(|&a, &b| xy[a].1.atan2(xy[a].0).partial_cmp(&xy[b].1.atan2(xy[b].0)).expect("finite"));
                let factor = |b: usize| m.metric_factor[dom.global[dom.boundary[b]]];
                let mut position = vec![0.0; nb];
                let mut run = 0.0;
                for k in 0..nb {
                    let (a, b) = (order[k], order[(k + 1) % nb]);
                    position[a] = run;
                    let d = f64::hypot(xy[b].0 - xy[a].0, xy[b].1 - xy[a].1);
                    run += d * (0.5 * (factor(a) + factor(b))).sqrt();
                }
                Ok(BoundaryChart { order, position, period: run })
            }
        }
    }

    /// Signed cyclic offset `position[b] − position[a]`.
    pub fn offset(&self, a: usize, b: usize) -> f64 {
        let d = self.position[b] - self.position[a];
        d - self.period * ((d / self.period) + 0.5).floor()
    }

    fn rank(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (k, &b) in self.order.iter().enumerate() {
            r[b] = k;
        }
        r
    }
}

/// `r_X = (d_O(X, Z))_Z` for `X` at depth `t` on the normal from `Y`.
#[derive(Clone, Debug, Serialize)]
pub struct DistanceSample {
    pub foot: usize,
    pub depth: f64,
    pub distances: Vec<f64>,
    pub geometry_flags: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryDistanceRepresentation {
    pub feet: Vec<usize>,
    pub depths: Vec<f64>,
    /// Foot-major: sample `(i, k)` sits at `i · depths.len() + k`.
    pub samples: Vec<DistanceSample>,
    /// Smallest max-norm separation between distinct samples.
    pub separation: f64,
    /// Largest `|min_Z r_X(Z) − t|`.
    pub readout_defect: f64,
}

impl BoundaryDistanceRepresentation {
    pub fn sample(&self, foot_index: usize, depth_index: usize) -> &DistanceSample {
        &self.samples[foot_index * self.depths.len() + depth_index]
    }

    pub fn injective(&self, tol: f64) -> bool {
        self.separation > tol
    }
}

pub fn boundary_distance_representation(engine: &BcEngine, feet: &[usize], depths: &[f64]) -> BoundaryDistanceRepresentation {
    let targets: Vec<usize> = (0..engine.space.nodes).collect();
    let jobs: Vec<(usize, f64)> = feet.iter().flat_map(|&y| depths.iter().map(move |&t| (y, t))).collect();
    let samples: Vec<DistanceSample> = jobs
        .par_iter()
        .map(|&(y, t)| {
            let out = engine.distance_vector(y, t, &targets);
            DistanceSample {
                foot: y,
                depth: t,
                distances: out.iter().map(|o| o.distance).collect(),
                geometry_flags: out.iter().filter(|o| o.bracket_failure).count(),
            }
        })
        .collect();
    let mut separation = f64::INFINITY;
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            let d = samples[a].distances.iter().zip(&samples[b].distances).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            separation = separation.min(d);
        }
    }
    let readout_defect = samples
        .iter()
        .map(|s| (s.distances.iter().cloned().fold(f64::INFINITY, f64::min) - s.depth).abs())
        .fold(0.0, f64::max);
    BoundaryDistanceRepresentation { feet: feet.to_vec(), depths: depths.to_vec(), samples, separation, readout_defect }
}

/// One recovered point: boundary normal coordinates `(t, σ)` and the metric there.
#[derive(Clone, Debug, Serialize)]
pub struct MetricSample {
    pub foot: usize,
    pub depth: f64,
    pub coords: [f64; 2],
    /// `g` in the `(t, σ)` coordinates.
    pub metric: [[f64; 2]; 2],
    pub spd: bool,
    /// `| |dE_Y|_g − 1 |` for the foot point `Y`.
    pub unit_covector: f64,
    /// Normalized Jacobian determinant of the best pair of evaluation functions.
    pub conditioning: f64,
    pub chart_probes: (usize, usize),
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructedPatch {
    pub provenance: String,
    pub chart: BoundaryChart,
    pub samples: Vec<MetricSample>,
}

impl ReconstructedPatch {
    pub fn spd_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.spd).count() as f64 / self.samples.len().max(1) as f64
    }

    /// Share of samples with a unit foot covector within `tol`.
    pub fn unit_covector_fraction(&self, tol: f64) -> f64 {
        self.samples.iter().filter(|s| s.unit_covector <= tol).count() as f64 / self.samples.len().max(1) as f64
    }
}

/// Gradient and value of `E_Z` at the window centre from a quadratic fit of
/// `E_Z²`, which is exact for flat geometry.
fn local_gradient(points: &[(f64, f64, f64)]) -> Option<(f64, f64, f64)> {
    let cols = if points.len() >= 8 { 6 } else { 3 };
    if points.len() < 3 {
        return None;
    }
    let a = DMatrix::from_fn(points.len(), cols, |r, k| {
        let (x, y, _) = points[r];
        [1.0, x, y, x * x, x * y, y * y][k]
    });
    let b = DMatrix::from_fn(points.len(), 1, |r, _| points[r].2 * points[r].2);
    let sol = a.svd(true, true).solve(&b, 1e-10).ok()?;
    let e = sol[(0, 0)].max(0.0).sqrt();
    (e > 0.0).then(|| (sol[(1, 0)] / (2.0 * e), sol[(2, 0)] / (2.0 * e), e))
}

/// Differentials by local regression on the `(t, σ)` sample grid and the
/// cometric by least squares on `|dE_Z|²_g = 1`.
pub fn recover_metric(rdr: &BoundaryDistanceRepresentation, chart: &BoundaryChart, window: usize, transverse_window: usize, min_distance: f64, provenance: &str) -> ReconstructedPatch {
    let nf = rdr.feet.len();
    let nd = rdr.depths.len();
    let rank = chart.rank();
    let by_rank: Vec<usize> = {
        let mut v: Vec<usize> = (0..nf).collect();
        v.sort_by_key(|&i| rank[rdr.feet[i]]);
        v
    };
    let slot: Vec<usize> = {
        let mut s = vec![0; nf];
        for (k, &i) in by_rank.iter().enumerate() {
            s[i] = k;
        }
        s
    };
    let nz = rdr.samples.first().map_or(0, |s| s.distances.len());
    let w = window as i64;
    let ws = transverse_window as i64;
    let samples: Vec<MetricSample> = (0..nf * nd)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / nd, idx % nd);
            let centre = rdr.sample(i, k);
            let mut grads = vec![None; nz];
            for (z, g) in grads.iter_mut().enumerate() {
                if chart.offset(rdr.feet[i], z).abs() > 0.25 * chart.period {
                    continue;
                }
                let mut pts = vec![];
                for di in -ws..=ws {
                    if nf < 3 && di != 0 {
                        continue;
                    }
                    let j = by_rank[((slot[i] as i64 + di).rem_euclid(nf as i64)) as usize];
                    let ds = chart.offset(rdr.feet[i], rdr.feet[j]);
                    for dk in -w..=w {
                        let kk = k as i64 + dk;
                        if kk < 0 || kk >= nd as i64 {
                            continue;
                        }
                        let s = rdr.sample(j, kk as usize);
                        let v = s.distances[z];
                        if v.is_finite() {
                            pts.push((s.depth - centre.depth, ds, v));
                        }
                    }
                }
                *g = local_gradient(&pts).filter(|f| f.2 >= min_distance).map(|f| (f.0, f.1));
            }
            let rows: Vec<(f64, f64)> = grads.iter().flatten().cloned().collect();
            let mut normal = Matrix3::zeros();
            let mut rhs = Vector3::zeros();
            for &(p, q) in &rows {
                let v = Vector3::new(p * p, 2.0 * p * q, q * q);
                normal += v * v.transpose();
                rhs += v;
            }
            let eig = SymmetricEigen::new(normal);
            let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
            let mut best = (0.0, (0, 0));
            for a in 0..nz {
                for b in a + 1..nz {
                    if let (Some((p1, q1)), Some((p2, q2))) = (grads[a], grads[b]) {
                        let det = (p1 * q2 - p2 * q1).abs() / (f64::hypot(p1, q1) * f64::hypot(p2, q2)).max(f64::MIN_POSITIVE);
                        if det > best.0 {
                            best = (det, (a, b));
                        }
                    }
                }
            }
            let (metric, spd, unit) = if rows.len() >= 3 && lo > 1e-12 * hi {
                let x = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e)) * eig.eigenvectors.transpose() * rhs;
                let co = Matrix2::new(x[0], x[1], x[1], x[2]);
                let spd = x[0] > 0.0 && x[0] * x[2] - x[1] * x[1] > 0.0;
                let g = co.try_inverse().unwrap_or_else(Matrix2::zeros);
                let foot = rdr.feet[i];
                let unit = grads.get(foot).copied().flatten().map_or(f64::INFINITY, |(p, q)| {
                    let n2 = x[0] * p * p + 2.0 * x[1] * p * q + x[2] * q * q;
                    (n2.max(0.0).sqrt() - 1.0).abs()
                });
                ([[g[(0, 0)], g[(0, 1)]], [g[(1, 0)], g[(1, 1)]]], spd, unit)
            } else {
                ([[f64::NAN; 2]; 2], false, f64::INFINITY)
            };
            MetricSample {
                foot: rdr.feet[i],
                depth: centre.depth,
                coords: [centre.depth, chart.position[rdr.feet[i]]],
                metric,
                spd,
                unit_covector: unit,
                conditioning: best.0,
                chart_probes: best.1,
                distances: centre.distances.clone(),
            }
        })
        .collect();
    ReconstructedPatch { provenance: provenance.into(), chart: chart.clone(), samples }
}

/// Where the Green's function on the known patch comes from.
#[derive(Clone, Copy, Debug)]
pub enum GreenSource<'a> {
    /// Solves with the patch operator on the full interior.
    Operator(&'a InteriorDomain),
    /// Cauchy marching inward from the N-D kernel of the Γ BSP, with a
    /// Tikhonov-damped division at each layer.
    Cauchy { domain: &'a InteriorDomain, bsp: &'a BoundarySpectralProjection, nx: usize, alpha: f64 },
}

impl GreenSource<'_> {
    pub fn domain(&self) -> &InteriorDomain {
        match self {
            GreenSource::Operator(d) => d,
            GreenSource::Cauchy { domain, .. } => domain,
        }
    }

    /// Columns `G(z; ·, Y)` for every `Y` in `cols` (full-interior numbering).
    pub fn columns(&self, cols: &[usize], z: C64) -> Result<DMatrix<C64>> {
        match *self {
            GreenSource::Operator(dom) => {
                let lu = interior_system(dom, z)?;
                let mut out = DMatrix::zeros(dom.len(), cols.len());
                for (k, &y) in cols.iter().enumerate() {
                    let mut rhs = vec![c(0.0); dom.len()];
                    rhs[y] = c(1.0);
                    lu.solve_in_place(&mut rhs);
                    out.set_column(k, &nalgebra::DVector::from_vec(rhs));
                }
                Ok(out)
            }
            GreenSource::Cauchy { domain, bsp, nx, alpha } => cauchy_columns(domain, bsp, nx, alpha, cols, z),
        }
    }
}

/// March a field with Neumann source at `source` from its Γ values down to layer 0.
fn march(dom: &InteriorDomain, nx: usize, gamma_values: &[C64], source: Option<usize>, z: C64, alpha: f64) -> Vec<C64> {
    let n = dom.len();
    let layers = n / nx;
    let mut u = vec![c(0.0); n];
    let top = layers - 1;
    for a in 0..nx {
        u[top * nx + a] = gamma_values[a];
    }
    for l in (1..layers).rev() {
        for a in 0..nx {
            let i = l * nx + a;
            let below = i - nx;
            let mut s = -z * dom.measures[i] * u[i];
            let mut wb = 0.0;
            for e in &dom.adjacency[i] {
                if e.to == below {
                    wb = e.weight;
                    s += u[i] * e.weight;
                } else {
                    s += (u[i] - u[e.to]) * e.weight;
                }
            }
            if source == Some(i) {
                s -= c(1.0);
            }
            u[below] = s * (wb / (wb * wb + alpha));
        }
    }
    u
}

fn cauchy_columns(dom: &InteriorDomain, bsp: &BoundarySpectralProjection, nx: usize, alpha: f64, cols: &[usize], z: C64) -> Result<DMatrix<C64>> {
    if !dom.removed.is_empty() || dom.boundary.len() != nx || dom.len() % nx != 0 {
        return Err(Error::Geometry("Cauchy continuation needs the full interior with all of Γ as boundary".into()));
    }
    let kernel = bsp.nd_map(z)?.kernel;
    let n = dom.len();
    // G(·, X) for X on Γ, from the N-D kernel.
    let mut from_gamma = DMatrix::zeros(n, nx);
    for b in 0..nx {
        let vals: Vec<C64> = (0..nx).map(|a| kernel[(a, b)]).collect();
        let u = march(dom, nx, &vals, Some(dom.boundary[b]), z, alpha);
        from_gamma.set_column(b, &nalgebra::DVector::from_vec(u));
    }
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &y) in cols.iter().enumerate() {
        let vals: Vec<C64> = (0..nx).map(|b| from_gamma[(y, b)]).collect();
        let u = march(dom, nx, &vals, Some(y), z, alpha);
        out.set_column(k, &nalgebra::DVector::from_vec(u));
    }
    Ok(out)
}

/// Entries of `K − zM` between the listed nodes.
fn operator_block(dom: &InteriorDomain, nodes: &[usize], index: &dyn Fn(usize) -> Option<usize>, z: C64) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(nodes.len(), nodes.len());
    for (r, &i) in nodes.iter().enumerate() {
        let Some(li) = index(i) else {
            a[(r, r)] = c(1.0);
            continue;
        };
        a[(r, r)] -= z * dom.measures[li];
        for e in &dom.adjacency[li] {
            a[(r, r)] += e.weight;
            if let Some(col) = nodes.iter().position(|&j| index(j) == Some(e.to)) {
                a[(r, col)] -= e.weight;
            }
        }
    }
    a
}

/// `Λ_O(z)` on `∂O` from `G(z)` on the ball and its sphere by the Woodbury
/// identity for removing the ball from the operator.
pub fn obstacle_nd_map(source: &GreenSource, obstacle: &InteriorDomain, z: C64) -> Result<NdMap> {
    let full = source.domain();
    let mut ball: Vec<usize> = obstacle.removed.clone();
    ball.extend(obstacle.boundary.iter().map(|&b| obstacle.global[b]));
    ball.sort_unstable();
    let cols = source.columns(&ball, z)?;
    let g_bb = DMatrix::from_fn(ball.len(), ball.len(), |r, k| cols[(ball[r], k)]);
    let a = operator_block(full, &ball, &|i| full.local_of(i), z);
    let a_tilde = operator_block(obstacle, &ball, &|i| obstacle.local_of(i), z);
    let delta = a_tilde - a;
    let m = DMatrix::identity(ball.len(), ball.len()) + &delta * &g_bb;
    let lu = m.lu();
    let corr = lu.solve(&(&delta * &g_bb)).ok_or(Error::Singular(0))?;
    let g_o = &g_bb - &g_bb * corr;
    let nb = obstacle.boundary.len();
    let pos: Vec<usize> = obstacle.boundary.iter().map(|&b| ball.binary_search(&obstacle.global[b]).expect("sphere node in ball")).collect();
    let kernel = DMatrix::from_fn(nb, nb, |p, q| g_o[(pos[p], pos[q])]);
    Ok(NdMap { z, kernel, surface: obstacle.surface.clone() })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationOutcome {
    pub bsp: BoundarySpectralProjection,
    pub contour: ContourReport,
    /// Against the eigendecomposition of the true `H_O` (visible groups).
    pub eigenvalue_error: f64,
    pub kernel_error: f64,
    pub groups_matched: bool,
}

/// BSP on `∂O` from the continued Green's function via contour extraction,
/// compared with the direct eigendecomposition of `H_O`.
pub fn greens_continuation(source: &GreenSource, obstacle: &InteriorDomain, settings: &ContourSettings) -> Result<ContinuationOutcome> {
    let (bsp, contour) = bsp_from_ndmap(|z| obstacle_nd_map(source, obstacle, z).map(|n| n.kernel), &obstacle.surface, settings)?;
    let got = bsp.visible(1e-6);
    let truth = boundary_spectral_projection(obstacle)?.visible(1e-6);
    let groups_matched = got.len() == truth.len();
    let eigenvalue_error = got.eigenvalues.iter().zip(&truth.eigenvalues).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
    let kernel_error = if groups_matched { got.kernel_distance(&truth) } else { f64::INFINITY };
    Ok(ContinuationOutcome { bsp, contour, eigenvalue_error, kernel_error, groups_matched })
}

/// Ground truth used for node identification and evaluation.
pub struct GroundTruth<'a> {
    pub manifold: &'a DiscreteManifold,
    pub interior: &'a InteriorDomain,
}

impl GroundTruth<'_> {
    /// Node of `sub` (reported in interior numbering) at depth `t` on the normal
    /// from boundary index `foot`: nearest to `Γ_O` at `foot`, depth within `h/2`.
    pub fn locate(&self, sub: &InteriorDomain, graph: &GeodesicGraph, to_boundary: &[f64], from_feet: &[Vec<f64>], foot: usize, t: f64) -> Option<usize> {
        let h = self.manifold.h_y;
        let mut best: Option<(f64, usize)> = None;
        for x in 0..sub.len() {
            let own = from_feet[foot][x];
            if own > to_boundary[x] + 1e-9 {
                continue;
            }
            let miss = (to_boundary[x] - t).abs();
            if miss <= 0.5 * h + 1e-9 && best.is_none_or(|b| miss < b.0 - 1e-12) {
                best = Some((miss, x));
            }
        }
        let _ = graph;
        best.and_then(|(_, x)| self.interior.local_of(sub.global[x]))
    }

    /// Metric in boundary normal coordinates of Γ along straight normals.
    pub fn reference_metric(&self, node: usize) -> [[f64; 2]; 2] {
        let c = self.manifold.metric_factor[self.interior.global[node]];
        [[1.0, 0.0], [0.0, c]]
    }
}

/// Point of the glued atlas with its chart memberships.
#[derive(Clone, Debug, Serialize)]
pub struct AtlasPoint {
    /// Interior node used to evaluate its Green's probe vector.
    pub node: usize,
    pub members: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Atlas {
    pub patches: Vec<ReconstructedPatch>,
    pub points: Vec<AtlasPoint>,
    /// Probe vectors `G(z; X, Y′)` per point.
    #[serde(skip)]
    pub probes: Vec<Vec<C64>>,
    pub ambiguous: usize,
    pub identifications: usize,
}

fn relative_gap(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt());
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Merge `patch` into `atlas`: a sample joins an existing point when their Green's
/// probe vectors agree within `tol`; two candidates are resolved by the closest.
pub fn glue(atlas: &mut Atlas, patch: ReconstructedPatch, sample_probes: Vec<Option<(usize, Vec<C64>)>>, tol: f64) {
    let p = atlas.patches.len();
    for (s, probe) in sample_probes.into_iter().enumerate() {
        let Some((node, vec)) = probe else { continue };
        let mut hits: Vec<(f64, usize)> = atlas.probes.iter().enumerate().map(|(k, q)| (relative_gap(&vec, q), k)).filter(|h| h.0 <= tol).collect();
        hits.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if hits.len() > 1 {
            atlas.ambiguous += 1;
        }
        match hits.first() {
            Some(&(_, k)) => {
                atlas.points[k].members.push((p, s));
                atlas.identifications += 1;
            }
            None => {
                atlas.points.push(AtlasPoint { node, members: vec![(p, s)] });
                atlas.probes.push(vec);
            }
        }
    }
    atlas.patches.push(patch);
}

/// Per-iteration record of the maximal extension.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub center: usize,
    pub radius: usize,
    pub tau: f64,
    pub eigenvalue_error: f64,
    pub kernel_error: f64,
    pub new_nodes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionReport {
    pub atlas: Atlas,
    pub coverage: f64,
    pub covered: Vec<usize>,
    /// Relative Frobenius metric errors on the Γ patch (median, 90th percentile, max).
    pub metric_error: [f64; 3],
    pub spd_fraction: f64,
    pub unit_covector_fraction: f64,
    pub separation: f64,
    pub iterations: Vec<IterationRecord>,
    pub comparison: Vec<ComparisonRow>,
    pub complete: bool,
}

/// One row of the comparison against the ground truth.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub patch: usize,
    pub foot: usize,
    pub depth: f64,
    /// Interior node identified with the sample, if any.
    pub node: Option<usize>,
    pub distance_error: f64,
    /// Relative Frobenius error against the reference metric (Γ patch only).
    pub metric_error: f64,
    pub spd: bool,
    pub conditioning: f64,
    pub valid: bool,
}

impl ComparisonRow {
    fn accepted(&self) -> Option<usize> {
        self.node.filter(|_| self.valid)
    }
}

/// Locates each sample in the ground truth and checks its distances, SPD and
/// chart conditioning.
fn judge(truth: &GroundTruth, sub: &InteriorDomain, graph: &GeodesicGraph, patch: &ReconstructedPatch, index: usize, tol: f64) -> Vec<ComparisonRow> {
    let to_boundary = graph_geodesics(graph, &sub.boundary);
    let from_feet: Vec<Vec<f64>> = sub.boundary.iter().map(|&b| graph_geodesics(graph, &[b])).collect();
    patch
        .samples
        .iter()
        .map(|s| {
            let node = truth.locate(sub, graph, &to_boundary, &from_feet, s.foot, s.depth);
            let distance_error = node.and_then(|x| sub.local_of(truth.interior.global[x])).map_or(f64::INFINITY, |xs| {
                s.distances.iter().enumerate().map(|(z, d)| (d - from_feet[z][xs]).abs()).fold(0.0, f64::max)
            });
            let metric_error = match node {
                Some(x) if index == 0 => frobenius_error(&s.metric, &truth.reference_metric(x)),
                _ => f64::NAN,
            };
            ComparisonRow {
                patch: index,
                foot: s.foot,
                depth: s.depth,
                node,
                distance_error,
                metric_error,
                spd: s.spd,
                conditioning: s.conditioning,
                valid: node.is_some() && s.spd && distance_error <= tol && s.conditioning > 1e-3,
            }
        })
        .collect()
}

fn frobenius_error(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            num += (a[i][j] - b[i][j]).powi(2);
            den += b[i][j].powi(2);
        }
    }
    (num / den).sqrt()
}

fn percentile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v[((v.len() - 1) as f64 * q).round() as usize]
}

fn probe_vectors(source: &GreenSource, probe_nodes: &[usize], z_grid: &[C64], nodes: &[Option<usize>]) -> Result<Vec<Option<(usize, Vec<C64>)>>> {
    let cols: Vec<DMatrix<C64>> = z_grid.iter().map(|&z| source.columns(probe_nodes, z)).collect::<Result<_>>()?;
    Ok(nodes.iter().map(|n| n.map(|x| (x, cols.iter().flat_map(|g| g.row(x).iter().cloned().collect::<Vec<_>>()).collect()))).collect())
}

/// Full pipeline from the BSP on Γ: the Γ patch, then balls removed next to the
/// frontier, continued BSPs on their spheres, patches from those, and gluing.
pub fn reconstruct_all(m: &DiscreteManifold, bsp: &BoundarySpectralProjection, bc: &BcSpec, spec: &ReconstructSpec) -> Result<ReconstructionReport> {
    let interior = split_interior(m, &CutSpecification::default())?;
    let truth = GroundTruth { manifold: m, interior: &interior };
    let source = if spec.regularized_ucp {
        GreenSource::Cauchy { domain: &interior, bsp, nx: m.nx, alpha: spec.ucp_alpha }
    } else {
        GreenSource::Operator(&interior)
    };
    let z_grid: Vec<C64> = spec.z_grid.iter().map(|&(re, im)| C64::new(re, im)).collect();
    let depths = |max: f64| -> Vec<f64> {
        let k = (max / spec.depth_step + 1e-9).floor() as usize;
        (0..=k).map(|j| j as f64 * spec.depth_step).collect()
    };

    let engine = BcEngine::new(bsp, bc)?;
    let chart = BoundaryChart::new(m, &interior)?;
    let feet: Vec<usize> = (0..interior.boundary.len()).collect();
    let rdr = boundary_distance_representation(&engine, &feet, &depths(spec.max_depth.min(bc.horizon)));
    let patch = recover_metric(&rdr, &chart, spec.window, spec.transverse_window, spec.min_distance, "Γ");
    let graph = GeodesicGraph::new(m, &interior, Stencil::Knight);
    let rows = judge(&truth, &interior, &graph, &patch, 0, spec.distance_tol);
    let nodes: Vec<Option<usize>> = rows.iter().map(ComparisonRow::accepted).collect();
    let mut errors: Vec<f64> = rows.iter().filter(|r| r.valid).map(|r| r.metric_error).collect();
    let mut comparison = rows;
    let metric_error = [percentile(&mut errors, 0.5), percentile(&mut errors, 0.9), percentile(&mut errors, 1.0)];
    let spd_fraction = patch.spd_fraction();
    let unit_covector_fraction = patch.unit_covector_fraction(0.05);
    let mut covered: BTreeSet<usize> = nodes.iter().flatten().cloned().collect();

    let mut atlas = Atlas { patches: vec![], points: vec![], probes: vec![], ambiguous: 0, identifications: 0 };
    let mut iterations = vec![];
    // Probe vectors are taken against sources on Γ, where G is known from the start.
    let probe_nodes = interior.boundary.clone();
    let probes = probe_vectors(&source, &probe_nodes, &z_grid, &nodes)?;
    glue(&mut atlas, patch, probes, spec.match_tol);
    let mut tried: BTreeSet<usize> = BTreeSet::new();
    while iterations.len() < spec.max_iterations {
        let uncovered: Vec<usize> = (0..interior.len()).filter(|x| !covered.contains(x)).collect();
        if uncovered.is_empty() {
            break;
        }
        let to_frontier = graph_geodesics(&graph, &uncovered);
        let ball = |x: usize| {
            let hops = bfs_hops(&interior.adjacency, x);
            (0..interior.len()).filter(move |&i| hops[i] <= spec.obstacle_radius)
        };
        let cut = |x: usize| CutSpecification { sigma: vec![], obstacle: Some((interior.global[x], spec.obstacle_radius)) };
        let center = covered
            .iter()
            .cloned()
            .filter(|x| !tried.contains(x))
            .filter(|&x| ball(x).all(|i| covered.contains(&i)) && split_interior(m, &cut(x)).is_ok())
            .min_by(|&a, &b| to_frontier[a].partial_cmp(&to_frontier[b]).expect("finite").then(a.cmp(&b)));
        let Some(x1) = center else { break };
        tried.insert(x1);
        let obstacle = split_interior(m, &cut(x1))?;
        let cont = greens_continuation(&source, &obstacle, &ContourSettings::default())?;
        let engine_o = BcEngine::new(&cont.bsp, bc)?;
        let tau = engine_o.critical_radius().tau.min(spec.max_depth);
        let chart_o = BoundaryChart::new(m, &obstacle)?;
        let feet_o: Vec<usize> = (0..obstacle.boundary.len()).collect();
        let rdr_o = boundary_distance_representation(&engine_o, &feet_o, &depths(tau));
        let label = format!("sphere({}, {})", interior.global[x1], spec.obstacle_radius);
        let patch_o = recover_metric(&rdr_o, &chart_o, spec.window, spec.transverse_window, spec.min_distance, &label);
        let graph_o = GeodesicGraph::new(m, &obstacle, Stencil::Knight);
        let rows = judge(&truth, &obstacle, &graph_o, &patch_o, atlas.patches.len(), spec.distance_tol);
        let nodes_o: Vec<Option<usize>> = rows.iter().map(ComparisonRow::accepted).collect();
        comparison.extend(rows);
        let before = covered.len();
        covered.extend(nodes_o.iter().flatten().cloned());
        iterations.push(IterationRecord {
            center: interior.global[x1],
            radius: spec.obstacle_radius,
            tau,
            eigenvalue_error: cont.eigenvalue_error,
            kernel_error: cont.kernel_error,
            new_nodes: covered.len() - before,
        });
        let probes = probe_vectors(&source, &probe_nodes, &z_grid, &nodes_o)?;
        glue(&mut atlas, patch_o, probes, spec.match_tol);
    }
    let coverage = covered.len() as f64 / interior.len() as f64;
    Ok(ReconstructionReport {
        atlas,
        coverage,
        covered: covered.into_iter().collect(),
        metric_error,
        spd_fraction,
        unit_covector_fraction,
        separation: rdr.separation,
        iterations,
        comparison,
        complete: coverage >= 1.0,
    })
}

/// Largest disagreement of two patches related by a boundary isometry
/// `b ↦ map(b)` that reverses the boundary orientation: distance vectors, and
/// metrics with the sign of `g_tσ` flipped.
pub fn mirrored_discrepancy(a: &ReconstructedPatch, b: &ReconstructedPatch, map: impl Fn(usize) -> usize) -> (f64, f64) {
    let mut dist: f64 = 0.0;
    let mut metric: f64 = 0.0;
    for s in &a.samples {
        let Some(t) = b.samples.iter().find(|t| t.foot == map(s.foot) && t.depth == s.depth) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        for (z, d) in s.distances.iter().enumerate() {
            dist = dist.max((d - t.distances[map(z)]).abs());
        }
        if s.spd || t.spd {
            let flipped = [[t.metric[0][0], -t.metric[0][1]], [-t.metric[1][0], t.metric[1][1]]];
            metric = metric.max(frobenius_error(&s.metric, &flipped));
        }
    }
    (dist, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::boundary_data::nd_map_direct;
    use crate::config::{ManifoldSpec, PerturbationSpec};
    use crate::cross_section::CrossSection;

    fn manifold(nx: usize, gamma: usize) -> DiscreteManifold {
        let cs = CrossSection::cycle(nx, 1.0, &[]).unwrap();
        let spec = ManifoldSpec { ends: 1, h_y: 1.0, layers: gamma + 10, chi_layer: gamma - 2, chi2_layer: 0, gamma_layer: gamma, origins: vec![] };
        DiscreteManifold::build(cs, &spec, &PerturbationSpec::default()).unwrap()
    }

    #[test]
    fn charts_are_cyclic() {
        let m = manifold(8, 8);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let chart = BoundaryChart::new(&m, &dom).unwrap();
        assert_eq!(chart.period, 8.0);
        assert_eq!(chart.offset(0, 7), -1.0);
        assert_eq!(chart.offset(1, 3), 2.0);
        let ball = split_interior(&m, &CutSpecification { sigma: vec![], obstacle: Some((m.node(4, 3), 2)) }).unwrap();
        let chart = BoundaryChart::new(&m, &ball).unwrap();
        assert_eq!(chart.order.len(), ball.boundary.len());
        assert!(chart.period > 8.0 && chart.period < 12.0);
        let mut seen = chart.order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..ball.boundary.len()).collect::<Vec<_>>());
    }

    #[test]
    fn flat_distances_give_the_euclidean_metric() {
        let m = manifold(12, 10);
        let dom = split_interior(&m, &CutSpecification::default()).unwrap();
        let chart = BoundaryChart::new(&m, &dom).unwrap();
        let feet: Vec<usize> = (0..12).collect();
        let depths: Vec<f64> = (0..=16).map(|j| j as f64 * 0.5).collect();
        let samples = feet
            .iter()
            .flat_map(|&y| depths.iter().map(move |&t| (y, t)))
            .map(|(y, t)| DistanceSample { foot: y, depth: t, distances: (0..12).map(|z| f64::hypot(t, chart.offset(y, z))).collect(), geometry_flags: 0 })
            .collect();
        let rdr = BoundaryDistanceRepresentation { feet, depths, samples, separation: 0.0, readout_defect: 0.0 };
        let patch = recover_metric(&rdr, &chart, 4, 2, 1.0, "flat");
        for s in patch.samples.iter().filter(|s| s.depth >= 1.0) {
            assert!(s.spd);
            assert!(frobenius_error(&s.metric, &[[1.0, 0.0], [0.0, 1.0]]) < 1e-8, "{s:?}");
            assert!(s.unit_covector < 1e-8);
        }
    }

    #[test]
    fn removing_a_ball_matches_the_obstacle_resolvent() {
        let m = manifold(8, 10);
        let full = split_interior(&m, &CutSpecification::default()).unwrap();
        let ball = split_interior(&m, &CutSpecification { sigma: vec![], obstacle: Some((m.node(5, 2), 2)) }).unwrap();
        let z = C64::new(0.7, 0.4);
        let got = obstacle_nd_map(&GreenSource::Operator(&full), &ball, z).unwrap();
        let want = nd_map_direct(&ball, z).unwrap();
        assert!(got.distance(&want) < 1e-10, "{}", got.distance(&want));
    }

    #[test]
    fn cauchy_marching_agrees_near_gamma() {
        let m = manifold(8, 10);
        let full = split_interior(&m, &CutSpecification::default()).unwrap();
        let bsp = boundary_spectral_projection(&full).unwrap();
        let z = C64::new(0.0, 0.5);
        let cols = [m.node(8, 1), m.node(9, 5)];
        let a = GreenSource::Operator(&full).columns(&cols, z).unwrap();
        let b = GreenSource::Cauchy { domain: &full, bsp: &bsp, nx: 8, alpha: 1e-14 }.columns(&cols, z).unwrap();
        for l in 6..=10 {
            for k in 0..2 {
                let i = m.node(l, 3);
                assert!((a[(i, k)] - b[(i, k)]).norm() < 1e-8 * a[(i, k)].norm(), "layer {l}");
            }
        }
    }

    #[test]
    fn continued_bsp_matches_the_obstacle_spectrum() {
        let m = manifold(6, 8);
        let full = split_interior(&m, &CutSpecification::default()).unwrap();
        let ball = split_interior(&m, &CutSpecification { sigma: vec![], obstacle: Some((m.node(4, 0), 1)) }).unwrap();
        let out = greens_continuation(&GreenSource::Operator(&full), &ball, &ContourSettings::default()).unwrap();
        assert!(out.groups_matched);
        assert!(out.eigenvalue_error < 1e-4, "{}", out.eigenvalue_error);
        assert!(out.kernel_error < 1e-3, "{}", out.kernel_error);
    }

    fn patch(n: usize) -> ReconstructedPatch {
        let chart = BoundaryChart { order: vec![0], position: vec![0.0], period: 1.0 };
        let sample = MetricSample {
            foot: 0,
            depth: 0.0,
            coords: [0.0; 2],
            metric: [[1.0, 0.0], [0.0, 1.0]],
            spd: true,
            unit_covector: 0.0,
            conditioning: 1.0,
            chart_probes: (0, 0),
            distances: vec![],
        };
        ReconstructedPatch { provenance: "test".into(), chart, samples: vec![sample; n] }
    }

    #[test]
    fn glue_merges_matching_probes_and_flags_ties() {
        let mut atlas = Atlas { patches: vec![], points: vec![], probes: vec![], ambiguous: 0, identifications: 0 };
        let v = |x: f64| vec![c(1.0), c(x)];
        glue(&mut atlas, patch(2), vec![Some((0, v(0.0))), Some((1, v(1.0)))], 1e-6);
        assert_eq!(atlas.points.len(), 2);
        glue(&mut atlas, patch(3), vec![Some((1, v(1.0 + 1e-9))), Some((5, v(3.0))), None], 1e-6);
        assert_eq!(atlas.points.len(), 3);
        assert_eq!(atlas.identifications, 1);
        assert_eq!(atlas.points[1].members, vec![(0, 1), (1, 0)]);
        glue(&mut atlas, patch(1), vec![Some((0, v(0.5)))], 0.6);
        assert_eq!(atlas.ambiguous, 1);
    }
}
