//! Command-line front end: config loading, command dispatch and artifact output.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use crate::bc_method::BcEngine;
use crate::boundary_data::{boundary_spectral_projection, nd_map_direct, nd_map_from_scattering};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::export::{
    atlas_document, bsp_entries, comparison_table, distance_table, mesh_table, ndmap_table, smatrix_summary, smatrix_table, spectrum_table, wavefield_table, ArtifactWriter, Table,
};
use crate::helmholtz::generalized_eigenfunction;
use crate::linalg::c;
use crate::manifold::{split_interior, CutSpecification, DiscreteManifold};
use crate::reconstruct::{boundary_distance_representation, reconstruct_all};
use crate::scattering::{amplitude_table, s_matrix_from_table};
use crate::verify::run_suite;

#[derive(Parser, Debug)]
#[command(name = "cylscatter", about = "Scattering and boundary-control reconstruction on manifolds with cylindrical ends", disable_version_flag = true)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the version and the config hash.
    #[arg(long)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Transverse spectrum and mesh edge list.
    Spectrum,
    /// Generalized eigenfunctions on the energy grid.
    Forward,
    /// Scattering matrices on the energy grid.
    Smatrix,
    /// Amplitude tables including non-physical channels.
    Nonphys,
    /// N-D maps on Γ, directly and from scattering data.
    Ndmap,
    /// Boundary spectral projection of the configured cut.
    Bsp,
    /// Boundary distance representation and critical radius.
    Bcdist,
    /// Full reconstruction with atlas export.
    Reconstruct,
    /// Run the acceptance suite; exits nonzero on any failure.
    Verify {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cut(m: &DiscreteManifold, cfg: &RunConfig) -> CutSpecification {
    CutSpecification { sigma: cfg.cut.sigma.clone(), obstacle: cfg.cut.obstacle_center.map(|(a, l)| (m.node(l, a), cfg.cut.obstacle_radius)) }
}

/// Runs one command and returns the process exit code.
pub fn execute(command: &Command, cfg: &RunConfig, out: &std::path::Path) -> Result<i32> {
    let hash = cfg.hash();
    let mut w = ArtifactWriter::new(out, &hash)?;
    let m = DiscreteManifold::from_config(cfg)?;
    let energies = cfg.energies.energies(&m.modes.eigenvalues);
    eprintln!("config {hash} seed {}", cfg.seed);
    match command {
        Command::Spectrum => {
            w.csv("spectrum.csv", &spectrum_table(&m.modes))?;
            w.csv("mesh.csv", &mesh_table(&m))?;
        }
        Command::Forward => {
            for (i, &e) in energies.iter().enumerate() {
                for n in (0..m.nx).filter(|&n| m.modes.eigenvalues[n] < e) {
                    let u = generalized_eigenfunction(&m, 0, n, e, -1)?;
                    w.csv(&format!("field_e{i:02}_n{n}.csv"), &wavefield_table(&u))?;
                }
            }
        }
        Command::Smatrix => {
            let mut all = vec![];
            for (i, &e) in energies.iter().enumerate() {
                let s = s_matrix_from_table(&amplitude_table(&m, e, false)?);
                w.csv(&format!("smatrix_e{i:02}.csv"), &smatrix_table(&s))?;
                all.push(s);
            }
            w.json("smatrix_summary.json", "smatrix_summary", &smatrix_summary(&all))?;
        }
        Command::Nonphys => {
            for (i, &e) in energies.iter().enumerate() {
                let t = amplitude_table(&m, e, true)?;
                let mut tab = Table::new(&["row", "col", "regime", "far_re", "far_im", "quad_re", "quad_im"]);
                tab.comments.push(format!("energy={e}"));
                for r in 0..t.channels.len() {
                    for k in 0..t.channels.len() {
                        let (f, q) = (t.far_field[(r, k)], t.quadrature[(r, k)]);
                        let regime = format!("{:?}", t.regime(r, k));
                        tab.push(vec![r.to_string(), k.to_string(), regime, f.re.to_string(), f.im.to_string(), q.re.to_string(), q.im.to_string()]);
                    }
                }
                w.csv(&format!("amplitudes_e{i:02}.csv"), &tab)?;
            }
        }
        Command::Ndmap => {
            let dom = split_interior(&m, &CutSpecification::default())?;
            for (i, &e) in energies.iter().enumerate() {
                w.csv(&format!("nd_direct_e{i:02}.csv"), &ndmap_table(&nd_map_direct(&dom, c(e))?))?;
                let (nd, rep) = nd_map_from_scattering(&m, &amplitude_table(&m, e, true)?)?;
                let mut tab = ndmap_table(&nd);
                tab.comments.push(format!("rank_curve={:?} condition={}", rep.rank_curve, rep.condition));
                w.csv(&format!("nd_scattering_e{i:02}.csv"), &tab)?;
            }
            for (i, &(re, im)) in cfg.reconstruct.z_grid.iter().enumerate() {
                w.csv(&format!("nd_direct_z{i}.csv"), &ndmap_table(&nd_map_direct(&dom, Complex64::new(re, im))?))?;
            }
        }
        Command::Bsp => {
            let dom = split_interior(&m, &cut(&m, cfg))?;
            w.json("bsp.json", "bsp", &bsp_entries(&boundary_spectral_projection(&dom)?))?;
        }
        Command::Bcdist => {
            let dom = split_interior(&m, &cut(&m, cfg))?;
            let engine = BcEngine::new(&boundary_spectral_projection(&dom)?, &cfg.bc)?;
            let step = cfg.reconstruct.depth_step;
            let top = cfg.reconstruct.max_depth.min(cfg.bc.horizon);
            let depths: Vec<f64> = (0..=((top / step + 1e-9).floor() as usize)).map(|k| k as f64 * step).collect();
            let feet: Vec<usize> = (0..dom.boundary.len()).collect();
            w.csv("distances.csv", &distance_table(&boundary_distance_representation(&engine, &feet, &depths)))?;
            w.json("critical_radius.json", "critical_radius", &engine.critical_radius())?;
        }
        Command::Reconstruct => {
            let dom = split_interior(&m, &CutSpecification::default())?;
            let report = reconstruct_all(&m, &boundary_spectral_projection(&dom)?, &cfg.bc, &cfg.reconstruct)?;
            w.json("atlas.json", "atlas", &atlas_document(&report))?;
            w.csv("comparison.csv", &comparison_table(&report.comparison))?;
            eprintln!("coverage {:.3} median metric error {:.3}", report.coverage, report.metric_error[0]);
        }
        Command::Verify { only } => {
            let reports = run_suite(cfg.seed, only);
            for r in &reports {
                println!("{}", r.line());
            }
            w.json("verify.json", "verify", &reports)?;
            let mut tab = Table::new(&["criterion", "check", "value", "tolerance", "margin", "passed"]);
            for r in &reports {
                for ch in &r.checks {
                    tab.push(vec![r.id.to_string(), ch.label.clone(), ch.value.to_string(), ch.tolerance.to_string(), ch.margin().to_string(), ch.passed().to_string()]);
                }
            }
            w.csv("verify.csv", &tab)?;
            if reports.iter().any(|r| !r.passed()) {
                return Ok(1);
            }
        }
    }
    for p in w.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(0)
}

/// Parses arguments and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cli.version {
        println!("cylscatter {} config {}", env!("CARGO_PKG_VERSION"), cfg.hash());
        return 0;
    }
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return 2;
        }
    }
    let Some(command) = cli.command else {
        eprintln!("error: no command given (try --help)");
        return 2;
    };
    match execute(&command, &cfg, &cli.out) {
        Ok(code) => code,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
