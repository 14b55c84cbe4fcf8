//! Transverse spectrum of a cycle cross-section and the residual of its eigenpairs.

use cylscatter::cross_section::{transverse_spectrum, CrossSection};

fn main() -> cylscatter::error::Result<()> {
    let cs = CrossSection::cycle(8, 1.0, &[])?;
    let modes = transverse_spectrum(&cs)?;
    for (n, l) in modes.eigenvalues.iter().enumerate() {
        println!("mode {n}: {l:.6}");
    }
    println!("max residual {:.2e}", modes.max_residual(&cs));
    Ok(())
}
