//! Coarse-to-fine schedule: a geometric ladder of kernel widths paired with
//! the fraction of each point set used at that level.

use crate::error::{Error, Result};

/// Geometric ladder from `sigma0` down to exactly `sigma_final`.
///
/// Each level divides by `factor`; the final value is pinned to
/// `sigma_final` rather than whatever the division lands on, so the last
/// level always runs at the requested width.
pub fn make_sigma_ladder(sigma0: f64, sigma_final: f64, factor: f64) -> Result<Vec<f64>> {
    for (name, v) in [("sigma0", sigma0), ("sigma_final", sigma_final)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    if !(factor > 1.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ladder factor must exceed 1, got {factor}"
        )));
    }
    if sigma0 < sigma_final {
        return Err(Error::InvalidParameter(format!(
            "sigma0 ({sigma0}) must not be below sigma_final ({sigma_final})"
        )));
    }
    let mut ladder = vec![sigma0];
    let mut sigma = sigma0;
    loop {
        sigma /= factor;
        // The tiny slack keeps a division that lands on sigma_final up to
        // roundoff from producing a near-duplicate final rung.
        if sigma > sigma_final * (1.0 + 1e-9) {
            ladder.push(sigma);
        } else {
            break;
        }
    }
    if sigma0 > sigma_final * (1.0 + 1e-9) {
        ladder.push(sigma_final);
    } else {
        // sigma0 and sigma_final coincide: a single level.
        ladder[0] = sigma_final;
    }
    Ok(ladder)
}

/// Everything the coarse-to-fine driver needs besides the data: the sigma
/// ladder bounds and the per-level subsampling fractions.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub sigma0: f64,
    pub sigma_final: f64,
    pub sigma_factor: f64,
    /// Fraction of each set drawn at each level, aligned with the ladder
    /// from coarse to fine. Shorter lists are padded with 1.0; the last
    /// level always sees the full sets.
    pub resolution_fractions: Vec<f64>,
    /// Seed for the per-level subsampling draws.
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            sigma0: 0.5,
            sigma_final: 0.02,
            sigma_factor: 2.0,
            resolution_fractions: vec![0.1, 0.25, 0.5, 1.0],
            seed: 0,
        }
    }
}

impl Schedule {
    /// Expands the schedule into `(sigma, fraction)` pairs, one per level.
    pub fn levels(&self) -> Result<Vec<(f64, f64)>> {
        let ladder = make_sigma_ladder(self.sigma0, self.sigma_final, self.sigma_factor)?;
        if self.resolution_fractions.len() > ladder.len() {
            return Err(Error::InvalidParameter(format!(
                "{} resolution fractions for a {}-level ladder",
                self.resolution_fractions.len(),
                ladder.len()
            )));
        }
        let mut fractions = self.resolution_fractions.clone();
        fractions.resize(ladder.len(), 1.0);
        for pair in fractions.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::InvalidParameter(
                    "resolution fractions must be non-decreasing".into(),
                ));
            }
        }
        for &f in &fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "resolution fractions must lie in (0, 1], got {f}"
                )));
            }
        }
        if *fractions.last().expect("ladder is never empty") != 1.0 {
            return Err(Error::InvalidParameter(
                "the final level must use the full sets (fraction 1.0)".into(),
            ));
        }
        Ok(ladder.into_iter().zip(fractions).collect())
    }
}
