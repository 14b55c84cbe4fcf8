//! Wave inner products from boundary data checked against leapfrog simulations.

use cylscatter::bc_method::{fdtd_cross_check, BcEngine};
use cylscatter::boundary_data::boundary_spectral_projection;
use cylscatter::config::BcSpec;
use cylscatter::manifold::{split_interior, CutSpecification};
use cylscatter::verify::{desk_manifold, scattering_bump};

fn main() -> cylscatter::error::Result<()> {
    let m = desk_manifold(&scattering_bump())?;
    let dom = split_interior(&m, &CutSpecification::default())?;
    let bc = BcSpec { control_pairs: 8, ..BcSpec::default() };
    let engine = BcEngine::new(&boundary_spectral_projection(&dom)?, &bc)?;
    for p in fdtd_cross_check(&dom, &engine.model, &engine.space, bc.control_pairs, bc.fdtd_substeps, 7)? {
        println!("t {:5.2} s {:5.2}  spectral {:+.6e}  leapfrog {:+.6e}  rel {:.1e}", p.t, p.s, p.spectral, p.time_domain, p.relative_error);
    }
    Ok(())
}
