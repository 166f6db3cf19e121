//! The Monte-Carlo ELBO never exceeds an importance-sampling estimate of the
//! log-likelihood.

mod common;

use common::{draw, elbo_draws, importance_log_likelihood, mean_se};

#[test]
fn elbo_is_below_importance_sampled_likelihood() {
    for seed in [5, 6] {
        let (m, seqs) = draw(seed);
        let (elbo, se_e) = mean_se(&elbo_draws(&m, &seqs[0], 4000, seed));
        let (ll, se_l) = importance_log_likelihood(&m, &seqs[0], 20_000, seed + 1);
        let tol = 3.0 * (se_e * se_e + se_l * se_l).sqrt();
        assert!(elbo <= ll + tol, "seed {seed}: elbo {elbo} vs log p {ll} ± {tol}");
    }
}
