mod common;

use common::*;
use fecnet::rng::{stream, Domain};

#[test]
fn primitives_and_losses_match_finite_differences() {
    for row in gradient_suite(20) {
        assert!(
            row.passed(),
            "{}: worst relative error {:.3e}, {} compared, {} straddled a kink",
            row.name,
            row.check.worst,
            row.check.compared,
            row.check.straddled
        );
    }
}

#[test]
fn full_unet_matches_finite_differences() {
    for t in 0..3 {
        let c = unet_case(&mut stream(11, Domain::Misc, t), 150);
        assert!(c.worst < NET_TOL, "trial {t}: worst relative error {:.3e}", c.worst);
        assert!(c.straddled * 20 <= c.compared, "trial {t}: {} of {} probes straddled a kink", c.straddled, c.compared);
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!((rel_err(1e-9, 0.0) - 1e-3).abs() < 1e-12);
    assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
}
