//! Scattering matrix of a bumped manifold on the default energy grid.

use cylscatter::config::EnergyGrid;
use cylscatter::scattering::s_matrix_sweep;
use cylscatter::verify::{desk_manifold, scattering_bump};

fn main() -> cylscatter::error::Result<()> {
    let m = desk_manifold(&scattering_bump())?;
    let energies = EnergyGrid::default().energies(&m.modes.eigenvalues);
    for s in s_matrix_sweep(&m, &energies) {
        let s = s?;
        println!("λ = {:.4}  channels {:2}  unitarity defect {:.1e}", s.energy, s.channels.len(), s.unitarity_defect);
    }
    Ok(())
}
