use hno_core::gradcheck::op_suite;

#[test]
fn every_op_matches_finite_differences() {
    let mut failed = Vec::new();
    for (name, report) in op_suite().unwrap() {
        println!(
            "{name:>18}: {:.2e} ({} probes, worst {})",
            report.max_rel_err, report.probes, report.worst
        );
        if !report.passes(1e-4) {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "gradient mismatch: {failed:?}");
}
