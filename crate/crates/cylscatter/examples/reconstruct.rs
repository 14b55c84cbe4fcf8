//! Reconstruction of the flat collar from its boundary spectral data.

use cylscatter::config::PerturbationSpec;
use cylscatter::verify::reconstruct_case;

fn main() -> cylscatter::error::Result<()> {
    let r = reconstruct_case(&PerturbationSpec::default())?;
    println!("coverage {:.3}, {} patches, {} balls", r.coverage, r.atlas.patches.len(), r.iterations.len());
    println!("metric error median {:.3} p90 {:.3} max {:.3}", r.metric_error[0], r.metric_error[1], r.metric_error[2]);
    for it in &r.iterations {
        println!("ball at node {} radius {}: τ {:.2}, {} new nodes", it.center, it.radius, it.tau, it.new_nodes);
    }
    Ok(())
}
