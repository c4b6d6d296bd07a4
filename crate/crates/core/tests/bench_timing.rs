//! Timing properties of the benchmark. Kept in their own binary so no other
//! test competes for the CPU while they run.

use efs::bench::{run_time_bench, REFERENCE_SIZES};

#[test]
fn repeated_runs_agree_and_baseline_is_cheaper() {
    let a = run_time_bench(&REFERENCE_SIZES, 301).unwrap();
    let b = run_time_bench(&REFERENCE_SIZES, 301).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let (lo, hi) = (x.median_ns.min(y.median_ns) as f64, x.median_ns.max(y.median_ns) as f64);
        assert!(hi / lo <= 1.25, "n={}: {} vs {}", x.size_in, x.median_ns, y.median_ns);
        assert!(x.baseline_ns <= x.median_ns, "n={}: baseline {} > {}", x.size_in, x.baseline_ns, x.median_ns);
    }
}
