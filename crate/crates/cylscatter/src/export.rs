//! CSV and JSON artifacts.  Every file carries the config hash in its header:
//! a leading `# config_hash=…` comment line for CSV, a `config_hash` key for JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::boundary_data::{BoundarySpectralProjection, NdMap};
use crate::cross_section::ModeBasis;
use crate::error::Result;
use crate::helmholtz::WaveField;
use crate::manifold::DiscreteManifold;
use crate::reconstruct::{BoundaryDistanceRepresentation, ComparisonRow, ReconstructionReport};
use crate::scattering::ScatteringMatrix;

/// A CSV table held in memory before writing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { comments: vec![], columns: columns.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str) -> String {
        let mut out = format!("# config_hash={hash}\n");
        for c in &self.comments {
            out += &format!("# {c}\n");
        }
        out += &self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out += &r.join(",");
            out.push('\n');
        }
        out
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes artifacts into one directory, stamping each with the config hash.
pub struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), hash: hash.to_string(), written: vec![] })
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, table.render(&self.hash))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, data: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let doc = json!({ "config_hash": self.hash, "kind": kind, "data": data });
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// `index, eigenvalue, φ(0), …`.
pub fn spectrum_table(mb: &ModeBasis) -> Table {
    let n = mb.eigenvectors.nrows();
    let mut cols = vec!["index".to_string(), "eigenvalue".to_string()];
    cols.extend((0..n).map(|a| format!("phi_{a}")));
    let mut t = Table { columns: cols, ..Table::default() };
    for (k, &l) in mb.eigenvalues.iter().enumerate() {
        let mut row = vec![k.to_string(), num(l)];
        row.extend((0..n).map(|a| num(mb.eigenvectors[(a, k)])));
        t.push(row);
    }
    t
}

/// Edge list of the mesh with weights and lengths.
pub fn mesh_table(m: &DiscreteManifold) -> Table {
    let mut t = Table::new(&["from", "to", "from_layer", "from_node", "to_layer", "to_node", "weight", "length"]);
    for (i, edges) in m.adjacency.iter().enumerate() {
        for e in edges.iter().filter(|e| e.to > i) {
            t.push(vec![
                i.to_string(),
                e.to.to_string(),
                m.layer_of(i).to_string(),
                m.transverse_of(i).to_string(),
                m.layer_of(e.to).to_string(),
                m.transverse_of(e.to).to_string(),
                num(e.weight),
                num(e.length),
            ]);
        }
    }
    t
}

pub fn wavefield_table(u: &WaveField) -> Table {
    let mut t = Table::new(&["node", "re", "im"]);
    t.comments.push(format!("energy={}{:+}i", u.energy.re, u.energy.im));
    for (i, v) in u.values.iter().enumerate() {
        t.push(vec![i.to_string(), num(v.re), num(v.im)]);
    }
    t
}

/// Matrix entries with the channel table in the header comments.
pub fn smatrix_table(s: &ScatteringMatrix) -> Table {
    let mut t = Table::new(&["row", "col", "re", "im"]);
    t.comments.push(format!("energy={}", s.energy));
    t.comments.push("channel,end,mode,threshold,kappa_re,kappa_im".into());
    for (i, c) in s.channels.iter().enumerate() {
        t.comments.push(format!("{i},{},{},{},{},{}", c.end, c.mode, c.threshold, c.kappa.re, c.kappa.im));
    }
    for r in 0..s.s.nrows() {
        for k in 0..s.s.ncols() {
            t.push(vec![r.to_string(), k.to_string(), num(s.s[(r, k)].re), num(s.s[(r, k)].im)]);
        }
    }
    t
}

#[derive(Serialize)]
pub struct SmatrixSummary {
    pub energy: f64,
    pub channels: usize,
    pub unitarity_defect: f64,
    pub identity_defect: f64,
}

pub fn smatrix_summary(s: &[ScatteringMatrix]) -> Vec<SmatrixSummary> {
    s.iter()
        .map(|s| SmatrixSummary { energy: s.energy, channels: s.channels.len(), unitarity_defect: s.unitarity_defect, identity_defect: s.identity_defect })
        .collect()
}

pub fn ndmap_table(map: &NdMap) -> Table {
    let mut t = Table::new(&["row", "col", "re", "im"]);
    t.comments.push(format!("z={}{:+}i", map.z.re, map.z.im));
    for r in 0..map.kernel.nrows() {
        for k in 0..map.kernel.ncols() {
            t.push(vec![r.to_string(), k.to_string(), num(map.kernel[(r, k)].re), num(map.kernel[(r, k)].im)]);
        }
    }
    t
}

#[derive(Serialize)]
pub struct KernelEntry {
    pub eigenvalue: f64,
    pub multiplicity: usize,
    pub rows: usize,
    /// Row-major real and imaginary parts of `δ*P_iδ`.
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub fn bsp_entries(bsp: &BoundarySpectralProjection) -> Vec<KernelEntry> {
    (0..bsp.len())
        .map(|i| {
            let k = bsp.kernel(i);
            let n = k.nrows();
            KernelEntry {
                eigenvalue: bsp.eigenvalues[i],
                multiplicity: bsp.multiplicities[i],
                rows: n,
                re: (0..n * n).map(|p| k[(p / n, p % n)]).collect(),
                im: vec![0.0; n * n],
            }
        })
        .collect()
}

pub fn distance_table(rdr: &BoundaryDistanceRepresentation) -> Table {
    let mut t = Table::new(&["foot", "depth", "target", "distance"]);
    t.comments.push(format!("separation={} readout_defect={}", rdr.separation, rdr.readout_defect));
    for s in &rdr.samples {
        for (z, d) in s.distances.iter().enumerate() {
            t.push(vec![s.foot.to_string(), num(s.depth), z.to_string(), num(*d)]);
        }
    }
    t
}

pub fn comparison_table(rows: &[ComparisonRow]) -> Table {
    let mut t = Table::new(&["patch", "foot", "depth", "node", "distance_error", "metric_error", "spd", "conditioning", "valid"]);
    for r in rows {
        t.push(vec![
            r.patch.to_string(),
            r.foot.to_string(),
            num(r.depth),
            r.node.map_or(String::new(), |n| n.to_string()),
            num(r.distance_error),
            num(r.metric_error),
            r.spd.to_string(),
            num(r.conditioning),
            r.valid.to_string(),
        ]);
    }
    t
}

/// Atlas JSON without the comparison rows, which go to CSV.
pub fn atlas_document(report: &ReconstructionReport) -> serde_json::Value {
    json!({
        "coverage": report.coverage,
        "complete": report.complete,
        "metric_error": report.metric_error,
        "spd_fraction": report.spd_fraction,
        "unit_covector_fraction": report.unit_covector_fraction,
        "separation": report.separation,
        "iterations": report.iterations,
        "atlas": report.atlas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_carry_the_hash_first() {
        let mut t = Table::new(&["a", "b"]);
        t.comments.push("note".into());
        t.push(vec!["1".into(), num(0.1)]);
        assert_eq!(t.render("abc"), "# config_hash=abc\n# note\na,b\n1,0.1\n");
    }

    #[test]
    fn json_artifacts_are_stamped() {
        let dir = std::env::temp_dir().join(format!("cylscatter-export-{}", std::process::id()));
        let mut w = ArtifactWriter::new(&dir, "feed").unwrap();
        let p = w.json("x.json", "test", &vec![1.5, 2.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["config_hash"], "feed");
        assert_eq!(v["data"][0], 1.5);
        fs::remove_dir_all(dir).unwrap();
    }
}
