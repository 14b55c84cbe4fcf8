use proptest::prelude::*;

use cylscatter::config::RunConfig;
use cylscatter::cross_section::{transverse_spectrum, CrossSection};
use cylscatter::export::Table;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectrum_diagonalizes_weighted_cycles(n in 3usize..12, scale in prop::collection::vec(0.5f64..2.0, 12)) {
        let cs = CrossSection::cycle(n, 1.0, &scale[..n]).unwrap();
        let modes = transverse_spectrum(&cs).unwrap();
        prop_assert!(modes.max_residual(&cs) < 1e-10);
        prop_assert!(modes.eigenvalues[0].abs() < 1e-10);
        prop_assert!(modes.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn cross_section_distances_obey_the_triangle_inequality(n in 3usize..12, scale in prop::collection::vec(0.5f64..2.0, 12), a in 0usize..12, b in 0usize..12) {
        let cs = CrossSection::cycle(n, 1.0, &scale[..n]).unwrap();
        let (a, b) = (a % n, b % n);
        let da = cs.distances_from(a);
        let db = cs.distances_from(b);
        prop_assert!((da[b] - db[a]).abs() < 1e-12);
        for z in 0..n {
            prop_assert!(da[z] <= da[b] + db[z] + 1e-12);
        }
    }

    #[test]
    fn config_round_trips_with_a_stable_hash(seed in any::<u64>()) {
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn tables_render_one_line_per_row(rows in prop::collection::vec((any::<i32>(), -1e6f64..1e6), 0..20)) {
        let mut t = Table::new(&["k", "x"]);
        for (k, x) in &rows {
            t.push(vec![k.to_string(), x.to_string()]);
        }
        let text = t.render("h");
        prop_assert_eq!(text.lines().count(), rows.len() + 2);
        for (line, (k, x)) in text.lines().skip(2).zip(&rows) {
            let (a, b) = line.split_once(',').unwrap();
            prop_assert_eq!(a.parse::<i32>().unwrap(), *k);
            prop_assert_eq!(b.parse::<f64>().unwrap(), *x);
        }
    }
}
