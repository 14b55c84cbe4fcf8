//! Non-physical amplitudes by two routes, and continuation of a physical
//! amplitude below its threshold.

use cylscatter::scattering::{amplitude_table, continuation_check, Regime};
use cylscatter::verify::{desk_manifold, scattering_bump};

fn main() -> cylscatter::error::Result<()> {
    let m = desk_manifold(&scattering_bump())?;
    let t = amplitude_table(&m, 1.2, true)?;
    println!("{} channels, worst route error on physical entries {:.2e}", t.channels.len(), t.route_error(|r| r == Regime::Phys));
    let c = continuation_check(&m, 0, 2, (0.5868, 0.68), 40, 8, 0.5843)?;
    println!("continued {:.6} vs computed {:.6}: relative error {:.2e}", c.predicted, c.computed, c.relative_error);
    Ok(())
}
