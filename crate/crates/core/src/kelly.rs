//! Expected log-growth of the even-money betting game, its Kelly optimum and
//! the ruin threshold beyond which log-wealth drifts to minus infinity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::roots;

const MAX_ITER: usize = 200;

/// Expected log-growth per round, `p log(1 + gamma) + (1 - p) log(1 - gamma)`,
/// in nats. Exactly zero at `gamma == 0`.
pub fn growth_rate(p: f64, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "growth rate needs 0 <= gamma < 1, got {gamma}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "growth rate needs 0 <= p <= 1, got {p}"
        )));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(g(p, gamma))
}

#[inline]
fn g(p: f64, gamma: f64) -> f64 {
    p * gamma.ln_1p() + (1.0 - p) * (-gamma).ln_1p()
}

/// Closed-form derivative `((2p - 1) - gamma) / (1 - gamma^2)`.
pub fn growth_rate_derivative(p: f64, gamma: f64) -> f64 {
    ((2.0 * p - 1.0) - gamma) / (1.0 - gamma * gamma)
}

/// The Kelly fraction `2p - 1`, defined only for games with an edge.
pub fn kelly_fraction(p: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Domain(format!(
            "Kelly fraction needs 1/2 < p < 1, got {p}"
        )));
    }
    Ok(2.0 * p - 1.0)
}

/// Nonzero root `gamma_0` of the growth rate, above the Kelly fraction.
///
/// The returned value satisfies `|g(gamma_0)| <= tol * min(|g'(gamma_0)|, 1)`,
/// or is the best double on a collapsed bracket. The derivative factor is
/// capped at 1 because `|g'|` explodes near `gamma = 1`.
///
/// For `p` close to 1 the root lies closer to 1 than a double can represent,
/// which is reported as a domain error.
pub fn ruin_threshold(p: f64, tol: f64) -> Result<f64> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let lo = kelly_fraction(p)?;
    let hi = 1.0 - f64::EPSILON / 2.0;
    if g(p, hi) >= 0.0 {
        return Err(Error::Domain(format!(
            "ruin threshold for p={p} is not representable below 1"
        )));
    }
    let f = |x: f64| (g(p, x), growth_rate_derivative(p, x));
    roots::solve(
        f,
        lo,
        hi,
        |_, gx, dgx| gx.abs() <= tol * dgx.abs().min(1.0),
        MAX_ITER,
    )
}

/// Expected one-round gain `(2p - 1) gamma x`.
pub fn expected_gain(params: &ModelParams, x: f64) -> f64 {
    (2.0 * params.p - 1.0) * params.gamma * x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
}

/// Bankroll after each round: `X_k = X_0 prod_{i <= k} (1 + eps_i gamma)`.
/// The first element is `x0`.
pub fn bankroll_path(gamma: f64, x0: f64, outcomes: &[Outcome]) -> Vec<f64> {
    let mut path = Vec::with_capacity(outcomes.len() + 1);
    let mut x = x0;
    path.push(x);
    for o in outcomes {
        x *= match o {
            Outcome::Win => 1.0 + gamma,
            Outcome::Loss => 1.0 - gamma,
        };
        path.push(x);
    }
    path
}

/// Growth curve for a fixed `p`: Kelly fraction, ruin threshold and samples of
/// `g` on a caller-chosen grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub p: f64,
    pub gamma_star: f64,
    pub gamma_zero: f64,
    /// `(gamma, g(gamma))` pairs, nats per round.
    pub g_at: Vec<(f64, f64)>,
}

impl GrowthProfile {
    pub fn new(p: f64, gammas: &[f64], tol: f64) -> Result<Self> {
        let gamma_star = kelly_fraction(p)?;
        let gamma_zero = ruin_threshold(p, tol)?;
        let g_at = gammas
            .iter()
            .map(|&gm| growth_rate(p, gm).map(|v| (gm, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GrowthProfile {
            p,
            gamma_star,
            gamma_zero,
            g_at,
        })
    }

    pub fn g_at_star(&self) -> f64 {
        g(self.p, self.gamma_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_wager_is_exactly_zero() {
        for &p in &[0.0, 0.3, 0.5, 0.6, 1.0] {
            assert_eq!(growth_rate(p, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn reference_growth_value() {
        let direct = 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln();
        let v = growth_rate(0.6, 0.2).unwrap();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.020136).abs() < 1e-6);
    }

    #[test]
    fn fair_game_loses() {
        for &gm in &[0.01, 0.3, 0.9] {
            let v = growth_rate(0.5, gm).unwrap();
            assert!((v - 0.5 * (1.0 - gm * gm).ln()).abs() < 1e-15);
            assert!(v < 0.0);
        }
    }

    #[test]
    fn growth_rejects_full_wager() {
        assert!(matches!(growth_rate(0.6, 1.0), Err(Error::Domain(_))));
        assert!(matches!(growth_rate(0.6, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn kelly_examples() {
        assert_eq!(kelly_fraction(0.6).unwrap(), 2.0 * 0.6 - 1.0);
        assert!((kelly_fraction(0.6).unwrap() - 0.2).abs() < 1e-15);
        assert!((kelly_fraction(0.51).unwrap() - 0.02).abs() < 1e-15);
        let tiny = kelly_fraction(0.5 + 1e-9).unwrap();
        assert!(tiny > 0.0 && tiny < 3e-9);
        assert!(kelly_fraction(0.5).is_err());
        assert!(kelly_fraction(0.3).is_err());
    }

    /// Plain bisection on g over (gamma*, 1), independent of the Newton path.
    fn bisect_oracle(p: f64) -> f64 {
        let gf = |x: f64| p * (1.0 + x).ln() + (1.0 - p) * (1.0 - x).ln();
        let (mut lo, mut hi) = (2.0 * p - 1.0, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gf(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ruin_threshold_matches_oracle() {
        let oracle = bisect_oracle(0.6);
        assert!((oracle - 0.3895).abs() < 2e-4, "oracle={oracle}");
        let r = ruin_threshold(0.6, 1e-13).unwrap();
        assert!((r - oracle).abs() < 1e-10);
        assert!(growth_rate(0.6, r).unwrap().abs() < 1e-13);
    }

    #[test]
    fn small_edge_threshold_is_twice_kelly() {
        let p = 0.51;
        let r = ruin_threshold(p, 1e-14).unwrap();
        let gs = kelly_fraction(p).unwrap();
        // second-order Taylor gives 2 gamma*; the cubic term shifts it by O(gamma*^2)
        assert!((r / gs - 2.0).abs() < 0.05, "ratio {}", r / gs);
        assert!((r - bisect_oracle(p)).abs() < 1e-12);
    }

    #[test]
    fn ruin_threshold_domain() {
        assert!(ruin_threshold(0.5, 1e-12).is_err());
        assert!(ruin_threshold(0.6, 0.0).is_err());
        assert!(matches!(
            ruin_threshold(0.995, 1e-12),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn expected_gain_examples() {
        let fair = ModelParams::new(0.5, 0.3, 1.0).unwrap();
        assert_eq!(expected_gain(&fair, 123.0), 0.0);
        let edge = ModelParams::new(0.6, 0.2, 1.0).unwrap();
        assert!((expected_gain(&edge, 100.0) - 4.0).abs() < 1e-12);
        assert_eq!(expected_gain(&edge, 0.0), 0.0);
    }

    #[test]
    fn bankroll_examples() {
        assert_eq!(bankroll_path(0.2, 5.0, &[]), vec![5.0]);
        let path = bankroll_path(0.2, 1.0, &[Outcome::Win, Outcome::Loss]);
        assert_eq!(path.len(), 3);
        assert_eq!(path[1], 1.2);
        assert!((path[2] - 0.96).abs() < 1e-15);
        let wl = bankroll_path(0.2, 1.0, &[Outcome::Win, Outcome::Loss]);
        let lw = bankroll_path(0.2, 1.0, &[Outcome::Loss, Outcome::Win]);
        assert!((wl[2] - lw[2]).abs() < 1e-15);
    }

    #[test]
    fn profile_is_concave_with_max_at_kelly() {
        let gammas: Vec<f64> = (0..=98).map(|i| i as f64 * 0.01).collect();
        let prof = GrowthProfile::new(0.7, &gammas, 1e-12).unwrap();
        assert!(
            0.0 < prof.gamma_star && prof.gamma_star < prof.gamma_zero && prof.gamma_zero < 1.0
        );
        for &(_, v) in &prof.g_at {
            assert!(prof.g_at_star() >= v);
        }
        for w in prof.g_at.windows(3) {
            assert!(w[0].1 - 2.0 * w[1].1 + w[2].1 <= 1e-9);
        }
    }

    proptest! {
        #[test]
        fn sign_structure(p in 0.505f64..0.95) {
            let gs = kelly_fraction(p).unwrap();
            let g0 = ruin_threshold(p, 1e-13).unwrap();
            prop_assert!(growth_rate(p, gs).unwrap() > 0.0);
            for i in 1..20 {
                let gm = g0 + (1.0 - g0) * i as f64 / 20.0;
                prop_assert!(growth_rate(p, gm).unwrap() < 0.0);
            }
        }

        #[test]
        fn derivative_matches_central_difference(p in 0.05f64..0.95, gm in 0.01f64..0.9) {
            let h = 1e-5;
            let fd = (growth_rate(p, gm + h).unwrap() - growth_rate(p, gm - h).unwrap()) / (2.0 * h);
            let exact = growth_rate_derivative(p, gm);
            // O(h^2) truncation scaled by the third derivative, plus rounding
            let bound = h * h * 10.0 / (1.0 - gm).powi(3) + 1e-9;
            prop_assert!((fd - exact).abs() <= bound, "fd={} exact={}", fd, exact);
        }

        #[test]
        fn kelly_maximizes(p in 0.51f64..0.99) {
            let gs = kelly_fraction(p).unwrap();
            let top = growth_rate(p, gs).unwrap();
            for &d in &[1e-3, 1e-2, 1e-1] {
                for cand in [gs - d, gs + d] {
                    let cand = cand.clamp(0.0, 1.0 - 1e-9);
                    prop_assert!(top >= growth_rate(p, cand).unwrap());
                }
            }
        }

        #[test]
        fn log_bankroll_is_sum_of_log_steps(
            gm in 0.01f64..0.9,
            wins in proptest::collection::vec(any::<bool>(), 0..400),
        ) {
            let outcomes: Vec<Outcome> = wins.iter().map(|&w| if w { Outcome::Win } else { Outcome::Loss }).collect();
            let path = bankroll_path(gm, 2.5, &outcomes);
            let nw = wins.iter().filter(|&&w| w).count() as f64;
            let nl = wins.len() as f64 - nw;
            let lhs = (path.last().unwrap() / 2.5).ln();
            let rhs = nw * gm.ln_1p() + nl * (-gm).ln_1p();
            let scale = nw * gm.ln_1p() - nl * (-gm).ln_1p();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * scale.max(1.0));
        }
    }
}
