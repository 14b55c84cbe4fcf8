use cylscatter::config::{ManifoldSpec, PerturbationSpec};
use cylscatter::cross_section::CrossSection;
use cylscatter::manifold::DiscreteManifold;
use cylscatter::oracle::layered_pipe;
use cylscatter::scattering::s_matrix;

fn pipe(amplitude: f64) -> DiscreteManifold {
    let cs = CrossSection::cycle(6, 1.0, &[]).unwrap();
    let spec = ManifoldSpec { ends: 2, h_y: 1.0, layers: 40, chi_layer: 30, chi2_layer: 8, gamma_layer: 34, origins: vec![] };
    let p = PerturbationSpec { kind: "layered".into(), amplitude, center_layer: 19.0, sigma: 2.5, support: (11, 27), ..Default::default() };
    DiscreteManifold::build(cs, &spec, &p).unwrap()
}

#[test]
fn layered_pipe_matches_transfer_matrix() {
    for amplitude in [0.0, 0.5] {
        let m = pipe(amplitude);
        for lambda in [0.4, 1.7, 2.9] {
            let s = s_matrix(&m, lambda).unwrap();
            for (col, ch) in s.channels.iter().enumerate() {
                if ch.end != 0 {
                    continue;
                }
                let pc = layered_pipe(&m, ch.mode, lambda).unwrap();
                let refl = s.channels.iter().position(|c| c.end == 0 && c.mode == ch.mode).unwrap();
                let trans = s.channels.iter().position(|c| c.end == 1 && c.mode == ch.mode).unwrap();
                assert!((s.s[(refl, col)] - pc.reflection).norm() < 1e-9, "λ={lambda} mode {}: {} vs {}", ch.mode, s.s[(refl, col)], pc.reflection);
                assert!((s.s[(trans, col)] - pc.transmission).norm() < 1e-9, "λ={lambda} mode {}: {} vs {}", ch.mode, s.s[(trans, col)], pc.transmission);
                let off: f64 = (0..s.channels.len()).filter(|&r| r != refl && r != trans).map(|r| s.s[(r, col)].norm()).sum();
                assert!(off < 1e-9);
            }
        }
    }
}
