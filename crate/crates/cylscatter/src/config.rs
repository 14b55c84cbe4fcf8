//! Versioned run configuration, read from TOML and hashed into artifact headers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cross_section: CrossSectionSpec,
    #[serde(default)]
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub energies: EnergyGrid,
    #[serde(default)]
    pub cut: CutSpec,
    #[serde(default)]
    pub bc: BcSpec,
    #[serde(default)]
    pub reconstruct: ReconstructSpec,
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSectionSpec {
    /// `cycle`, `path` or `graph`.
    pub kind: String,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "one")]
    pub spacing: f64,
    /// Optional multiplier per edge, in generator order.
    #[serde(default)]
    pub edge_scale: Vec<f64>,
    /// Explicit edges `[a, b, weight]` for `kind = "graph"`.
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub measures: Vec<f64>,
}

fn default_nodes() -> usize {
    8
}
fn one() -> f64 {
    1.0
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        CrossSectionSpec { kind: "cycle".into(), nodes: 8, spacing: 1.0, edge_scale: vec![], edges: vec![], measures: vec![] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSpec {
    /// Number of cylindrical ends (1 or 2).
    pub ends: usize,
    pub h_y: f64,
    /// Number of mesh layers; the last one (and the first one for two ends) carries the mode closure.
    pub layers: usize,
    /// First layer of the end-1 cutoff region (χ₁ = 1 on layers ≥ this).
    pub chi_layer: usize,
    /// Last layer of the end-2 cutoff region (two ends only).
    #[serde(default)]
    pub chi2_layer: usize,
    pub gamma_layer: usize,
    /// Layer of y = 0 for each end.
    #[serde(default)]
    pub origins: Vec<usize>,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        ManifoldSpec { ends: 1, h_y: 1.0, layers: 40, chi_layer: 16, chi2_layer: 0, gamma_layer: 20, origins: vec![] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    /// `none`, `bump` (Gaussian in both directions) or `layered` (layer only).
    pub kind: String,
    #[serde(default)]
    pub amplitude: f64,
    /// Transverse node and (fractional) layer of the bump center.
    #[serde(default)]
    pub center_node: usize,
    #[serde(default)]
    pub center_layer: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    /// Inclusive layer range carrying the multiplier.
    #[serde(default)]
    pub support: (usize, usize),
    /// Scale node measures as well as edge weights (conformal change of the metric).
    #[serde(default = "yes")]
    pub perturb_measure: bool,
    /// Dimension used for the conformal scaling of measures and weights.
    #[serde(default = "two")]
    pub dimension: f64,
}

fn yes() -> bool {
    true
}
fn two() -> f64 {
    2.0
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kind: "none".into(),
            amplitude: 0.0,
            center_node: 0,
            center_layer: 0.0,
            sigma: 1.0,
            support: (0, 0),
            perturb_measure: true,
            dimension: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    /// Minimum distance from any threshold; grid points closer are nudged away.
    #[serde(default = "default_skip")]
    pub skip_radius: f64,
}

fn default_skip() -> f64 {
    1e-3
}

impl Default for EnergyGrid {
    fn default() -> Self {
        EnergyGrid { start: 0.1, stop: 3.9, count: 25, skip_radius: 1e-3 }
    }
}

impl EnergyGrid {
    /// Grid energies, each moved off any threshold by at least `skip_radius`.
    pub fn energies(&self, thresholds: &[f64]) -> Vec<f64> {
        let n = self.count.max(1);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = if n == 1 { self.start } else { self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64 };
            for _ in 0..8 {
                match thresholds.iter().find(|&&t| (e - t).abs() < self.skip_radius) {
                    Some(&t) => e = t + if e >= t { self.skip_radius } else { -self.skip_radius } * 1.5,
                    None => break,
                }
            }
            out.push(e);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CutSpec {
    /// Σ as a list of Γ node indices; empty means all of Γ.
    #[serde(default)]
    pub sigma: Vec<usize>,
    /// Obstacle center as (transverse node, layer).
    #[serde(default)]
    pub obstacle_center: Option<(usize, usize)>,
    #[serde(default)]
    pub obstacle_radius: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BcSpec {
    pub time_step: f64,
    pub horizon: f64,
    pub alphas: Vec<f64>,
    pub eps_steps: Vec<f64>,
    pub tol_rel: f64,
    pub tol_abs: f64,
    /// Number of random control pairs in the Blagovestchenskii check.
    pub control_pairs: usize,
    /// FDTD sub-steps per control time step.
    pub fdtd_substeps: usize,
    /// Fixed Tikhonov level (relative) for the geometric tests.
    pub probe_alpha: f64,
    /// Captured share of a focused cap that counts as contact.
    pub contact_fraction: f64,
    /// Smallest cap share for which a point still lies beyond `Γ_O(t − ε)`.
    pub cap_fraction: f64,
}

impl Default for BcSpec {
    fn default() -> Self {
        BcSpec {
            time_step: 0.5,
            horizon: 10.0,
            alphas: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            eps_steps: vec![4.0, 2.0, 1.0],
            tol_rel: 1e-3,
            tol_abs: 1e-9,
            control_pairs: 50,
            fdtd_substeps: 128,
            probe_alpha: 1e-4,
            contact_fraction: 0.1,
            cap_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSpec {
    /// Depth step of the boundary distance representation, in units of h_y.
    pub depth_step: f64,
    /// Largest sampled depth from Γ (asserted below the critical distance of Γ).
    pub max_depth: f64,
    /// Graph radius of the balls removed in the continuation steps.
    pub obstacle_radius: usize,
    /// Spectral parameters of the Green's probe vectors, as `(re, im)`.
    pub z_grid: Vec<(f64, f64)>,
    pub match_tol: f64,
    /// Continue Green's functions by Tikhonov-regularized Cauchy marching from the
    /// Γ data instead of the reconstructed patch operator.
    pub regularized_ucp: bool,
    pub ucp_alpha: f64,
    /// Half widths, in samples, of the regression window for differentials in
    /// depth and along the boundary.
    pub window: usize,
    pub transverse_window: usize,
    /// Evaluation functions closer than this to the sample are left out of the fit.
    pub min_distance: f64,
    /// Sample acceptance: largest distance error against the ground truth.
    pub distance_tol: f64,
    pub max_iterations: usize,
}

impl Default for ReconstructSpec {
    fn default() -> Self {
        ReconstructSpec {
            depth_step: 0.5,
            max_depth: 10.0,
            obstacle_radius: 2,
            z_grid: vec![(0.0, 0.5), (0.0, -0.5), (1.0, 0.5), (1.0, -0.5)],
            match_tol: 1e-6,
            regularized_ucp: false,
            ucp_alpha: 1e-14,
            window: 4,
            transverse_window: 2,
            min_distance: 1.0,
            distance_tol: 3.0,
            max_iterations: 3,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: SCHEMA_VERSION,
            seed: 0,
            cross_section: Default::default(),
            manifold: Default::default(),
            perturbation: Default::default(),
            energies: Default::default(),
            cut: Default::default(),
            bc: Default::default(),
            reconstruct: Default::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| locate(text, s.start)).unwrap_or_else(|| "<root>".into());
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::config("version", format!("unsupported schema version {}", self.version)));
        }
        if !["cycle", "path", "graph"].contains(&self.cross_section.kind.as_str()) {
            return Err(Error::config("cross_section.kind", format!("unknown generator `{}`", self.cross_section.kind)));
        }
        if !["none", "bump", "layered"].contains(&self.perturbation.kind.as_str()) {
            return Err(Error::config("perturbation.kind", format!("unknown perturbation `{}`", self.perturbation.kind)));
        }
        let m = &self.manifold;
        if m.ends != 1 && m.ends != 2 {
            return Err(Error::config("manifold.ends", "only one or two ends are supported"));
        }
        if !(m.h_y > 0.0) {
            return Err(Error::config("manifold.h_y", "spacing must be positive"));
        }
        if self.energies.count == 0 {
            return Err(Error::config("energies.count", "must be at least one"));
        }
        if self.bc.time_step <= 0.0 || self.bc.horizon <= 0.0 {
            return Err(Error::config("bc.time_step", "time step and horizon must be positive"));
        }
        if self.bc.alphas.is_empty() || self.bc.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("bc.alphas", "regularization levels must decrease"));
        }
        if !(0.0..1.0).contains(&self.bc.contact_fraction) || !(0.0..1.0).contains(&self.bc.cap_fraction) {
            return Err(Error::config("bc.contact_fraction", "fractions must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn locate(text: &str, offset: usize) -> String {
    let upto = &text[..offset.min(text.len())];
    let mut table = String::new();
    for line in upto.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            table = t.trim_matches(|c| c == '[' || c == ']').to_string();
        }
    }
    let key = text[offset.min(text.len())..].split(['=', '\n']).next().unwrap_or("").trim().to_string();
    if key.starts_with('[') {
        return key.trim_matches(|c| c == '[' || c == ']').to_string();
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_from_defaults() {
        let cfg = RunConfig::from_toml("[bc]\nhorizon = 14.0\n[manifold]\ngamma_layer = 18\n").unwrap();
        assert_eq!(cfg.bc, BcSpec { horizon: 14.0, ..BcSpec::default() });
        assert_eq!(cfg.manifold.layers, ManifoldSpec::default().layers);
        let err = RunConfig::from_toml("[bc]\nhorizn = 3\n").unwrap_err().to_string();
        assert!(err.contains("bc.horizn"), "{err}");
    }

    #[test]
    fn round_trip_and_hash_are_stable() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = RunConfig::from_toml("[manifold]\nends = 1\nh_y = 1.0\nlayers = 4\nchi_layer = 1\ngamma_layer = 2\nbogus = 3\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("manifold"), "{msg}");
    }

    #[test]
    fn energies_avoid_thresholds() {
        let g = EnergyGrid { start: 0.0, stop: 1.0, count: 3, skip_radius: 1e-3 };
        let e = g.energies(&[0.5]);
        assert!((e[1] - 0.5).abs() >= 1e-3);
    }
}
