//! N-D map on Γ from the interior operator and from scattering data, and the
//! boundary spectral projection recovered from it by contour integration.

use cylscatter::boundary_data::*;
use cylscatter::linalg::c;
use cylscatter::manifold::{split_interior, CutSpecification};
use cylscatter::scattering::amplitude_table;
use cylscatter::verify::{desk_manifold, scattering_bump};

fn main() -> cylscatter::error::Result<()> {
    let m = desk_manifold(&scattering_bump())?;
    let dom = split_interior(&m, &CutSpecification::default())?;
    let lambda = 1.55;
    let direct = nd_map_direct(&dom, c(lambda))?;
    let (from_traces, report) = nd_map_from_scattering(&m, &amplitude_table(&m, lambda, true)?)?;
    println!("Λ from traces vs direct: {:.2e} (rank curve {:?})", from_traces.distance(&direct), report.rank_curve);

    let exact = boundary_spectral_projection(&dom)?;
    let solver = NdMapSolver::new(&dom)?;
    let (bsp, contour) = bsp_from_ndmap(|z| solver.bvp(z).map(|n| n.kernel), &dom.surface, &ContourSettings::default())?;
    println!("{} eigenvalues from the contour, kernel distance {:.2e}", bsp.len(), bsp.kernel_distance(&exact));
    println!("{contour:?}");
    Ok(())
}
