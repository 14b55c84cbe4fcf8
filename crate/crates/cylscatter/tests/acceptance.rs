//! One line per acceptance criterion.  Criteria listed in `KNOWN_FAILURES` are
//! reported but do not fail the run; any other failure does.

use cylscatter::verify::{run_suite, CRITERIA};

// Distances from boundary control are biased short at depth; see README.
const KNOWN_FAILURES: [usize; 2] = [7, 8];

fn main() {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let reports = run_suite(20240917, &only);
    let mut unexpected = 0;
    for r in &reports {
        println!("{}", r.line());
        for n in &r.notes {
            println!("    {n}");
        }
        if !r.passed() && !KNOWN_FAILURES.contains(&r.id) {
            unexpected += 1;
        }
        if r.passed() && KNOWN_FAILURES.contains(&r.id) {
            println!("    passed although listed as a known failure");
        }
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} criteria passed ({} listed)", reports.len(), CRITERIA.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
