mod support;

use support::criteria::{gradient_checks, GRAD_POINTS};

#[test]
fn analytic_gradients_match_central_differences() {
    for (name, check) in gradient_checks() {
        assert_eq!(check.checked, GRAD_POINTS);
        assert!(
            check.max_rel_error < 1e-4,
            "{name}: max relative error {:.3e}",
            check.max_rel_error
        );
    }
}
