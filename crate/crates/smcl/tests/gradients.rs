mod common;

use common::gradcheck::{gradient_errors, TOLERANCE};

#[test]
fn gradients_match_central_differences() {
    for (case, e) in gradient_errors(20, 2024).into_iter().enumerate() {
        assert!(e < TOLERANCE, "case {case}: relative gradient error {e}");
    }
}
