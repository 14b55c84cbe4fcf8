//! Boundary distance functions from boundary control against graph geodesics.

use cylscatter::bc_method::BcEngine;
use cylscatter::boundary_data::boundary_spectral_projection;
use cylscatter::config::{BcSpec, PerturbationSpec};
use cylscatter::manifold::{split_interior, CutSpecification};
use cylscatter::oracle::{graph_geodesics, GeodesicGraph, Stencil};
use cylscatter::verify::reconstruction_manifold;

fn main() -> cylscatter::error::Result<()> {
    let m = reconstruction_manifold(&PerturbationSpec::default())?;
    let dom = split_interior(&m, &CutSpecification::default())?;
    let engine = BcEngine::new(&boundary_spectral_projection(&dom)?, &BcSpec::default())?;
    let graph = GeodesicGraph::new(&m, &dom, Stencil::Knight);
    let gamma = m.gamma_layer;
    let targets: Vec<usize> = (0..dom.boundary.len()).collect();
    for depth in [0usize, 2, 4] {
        let x = dom.local_of(m.node(gamma - depth, 0)).unwrap();
        let reference = graph_geodesics(&graph, &[x]);
        let got = engine.distance_vector(0, depth as f64, &targets);
        let row: Vec<String> = targets.iter().map(|&z| format!("{:.2}/{:.2}", got[z].distance, reference[dom.boundary[z]])).collect();
        println!("depth {depth}: {}", row.join(" "));
    }
    println!("critical radius {:.2}", engine.critical_radius().tau);
    Ok(())
}
