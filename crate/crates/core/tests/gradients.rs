//! Reverse-mode gradients of the ELBO against central finite differences,
//! with the reparameterization noise and the discrete path held fixed.

mod common;

use common::{draw, max_relative_error};
use ds3m::Sequence;

#[test]
fn elbo_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for draw_seed in 0..20 {
        let (m, seqs) = draw(draw_seed);
        let refs: Vec<&Sequence> = seqs.iter().collect();
        worst = worst.max(max_relative_error(&m, &refs, 0.7, draw_seed + 100, 1e-8));
    }
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn annealed_and_unit_beta_agree_too() {
    let (m, seqs) = draw(77);
    let refs: Vec<&Sequence> = seqs.iter().collect();
    for beta in [0.0, 1.0] {
        let e = max_relative_error(&m, &refs, beta, 3, 1e-8);
        assert!(e <= 1e-4, "beta {beta}: {e}");
    }
}
