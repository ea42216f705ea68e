//! Real roots of the characteristic function
//! `h(rho) = a e^(lambda rho) - 1 + b e^(-mu rho)`.
//!
//! `F(s) = e^(rho s)` solves the log-variable fixed-point equation exactly when
//! `h(rho) = 0`, i.e. `f(x) = x^rho` is invariant under the dissipative
//! operator. The negative root gives the Pareto exponent `alpha = -rho`.
//! `h` is strictly convex, so it has at most two real roots and they straddle
//! the stationary point `rho_0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LogCoefficients, ModelParams};
use crate::roots;

/// Arguments above this overflow `exp`.
const MAX_EXP_ARG: f64 = 709.78;
/// `|h(0)|` at or below this is treated as the boundary `kappa == kappa_min`.
pub const BOUNDARY_TOL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicProblem {
    pub params: ModelParams,
    pub coeffs: LogCoefficients,
}

impl CharacteristicProblem {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.check()?;
        Ok(CharacteristicProblem {
            params: *params,
            coeffs: params.log_coefficients(),
        })
    }

    /// A zero step or a zero weight leaves `h` without the convex two-sided
    /// structure.
    pub fn is_degenerate(&self) -> bool {
        let c = &self.coeffs;
        c.lambda == 0.0 || c.mu == 0.0 || c.a == 0.0 || c.b == 0.0
    }

    /// True when evaluating `h(rho)` would overflow.
    pub fn saturates(&self, rho: f64) -> bool {
        let c = &self.coeffs;
        c.lambda * rho > MAX_EXP_ARG || -c.mu * rho > MAX_EXP_ARG
    }

    /// `h(rho)`, saturating to `+inf` past the exponent range.
    pub fn h(&self, rho: f64) -> f64 {
        if self.saturates(rho) {
            return f64::INFINITY;
        }
        let c = &self.coeffs;
        c.a * (c.lambda * rho).exp() - 1.0 + c.b * (-c.mu * rho).exp()
    }

    pub fn h_prime(&self, rho: f64) -> f64 {
        let c = &self.coeffs;
        c.a * c.lambda * (c.lambda * rho).exp() - c.b * c.mu * (-c.mu * rho).exp()
    }

    pub fn h_second(&self, rho: f64) -> f64 {
        let c = &self.coeffs;
        c.a * c.lambda * c.lambda * (c.lambda * rho).exp() + c.b * c.mu * c.mu * (-c.mu * rho).exp()
    }

    /// Closed-form minimiser `rho_0 = log(mu b / (lambda a)) / (lambda + mu)`.
    /// Degenerate problems report 0.
    pub fn stationary_point(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        let c = &self.coeffs;
        ((c.mu * c.b) / (c.lambda * c.a)).ln() / (c.lambda + c.mu)
    }

    pub fn solve_roots(&self, tol: f64) -> Result<SpectralResult> {
        solve_roots(self, tol)
    }
}

/// Dissipation threshold `(1 - (2p - 1) gamma) / (1 - gamma^2)`. Equals
/// `kappa (a + b)`, so `h(0) = kappa_min / kappa - 1`.
pub fn kappa_min(p: f64, gamma: f64) -> f64 {
    (1.0 - (2.0 * p - 1.0) * gamma) / (1.0 - gamma * gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootStructure {
    /// `h(0) < 0`: one negative and one positive root.
    Straddling,
    /// `h(0) = 0` within [`BOUNDARY_TOL`]: zero is a root.
    Boundary,
    /// `h(0) > 0` and `h(rho_0) < 0`: two roots on the side of `rho_0`.
    SameSign,
    /// `h(rho_0) = 0`: a double root at `rho_0`.
    Tangent,
    /// `h(rho_0) > 0`. Not reached for `kappa >= 1`, where `h(-1) = 1/kappa - 1`.
    NoRealRoots,
    /// Zero step or zero weight; no root structure is reported.
    Degenerate,
}

/// Roots and derived quantities for one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub p: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub kappa_min: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_neg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_pos: Option<f64>,
    pub rho_0: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    /// `alpha > 1`: the invariant density has finite mass at infinity.
    pub summable: bool,
    pub structure: RootStructure,
    /// Every real root found, ascending.
    pub roots: Vec<f64>,
}

/// Expands from `start` in direction `dir` by doubling until `h > 0`.
fn bracket_outward(problem: &CharacteristicProblem, start: f64, dir: f64) -> Result<f64> {
    let mut step = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        let x = start + dir * step;
        if problem.h(x) > 0.0 {
            return Ok(x);
        }
        step *= 2.0;
    }
    Err(Error::SolverFailure {
        lo: start.min(start + dir * step),
        hi: start.max(start + dir * step),
        iterations: MAX_DOUBLINGS,
    })
}

fn root_in(problem: &CharacteristicProblem, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    roots::solve(
        |x| (problem.h(x), problem.h_prime(x)),
        lo,
        hi,
        |_, hx, _| hx.abs() <= tol,
        MAX_ITER,
    )
}

pub fn solve_roots(problem: &CharacteristicProblem, tol: f64) -> Result<SpectralResult> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let ModelParams { p, gamma, kappa } = problem.params;
    let mut out = SpectralResult {
        p,
        gamma,
        kappa,
        kappa_min: kappa_min(p, gamma),
        rho_neg: None,
        rho_pos: None,
        rho_0: problem.stationary_point(),
        alpha: None,
        summable: false,
        structure: RootStructure::Degenerate,
        roots: Vec::new(),
    };
    if problem.is_degenerate() {
        return Ok(out);
    }

    let rho_0 = out.rho_0;
    let h0 = problem.h(0.0);
    let h_min = problem.h(rho_0);

    if h0.abs() <= BOUNDARY_TOL {
        out.structure = RootStructure::Boundary;
        out.roots = if rho_0.abs() <= BOUNDARY_TOL || h_min >= -tol {
            vec![0.0]
        } else if rho_0 < 0.0 {
            let lo = bracket_outward(problem, rho_0, -1.0)?;
            vec![root_in(problem, lo, rho_0, tol)?, 0.0]
        } else {
            let hi = bracket_outward(problem, rho_0, 1.0)?;
            vec![0.0, root_in(problem, rho_0, hi, tol)?]
        };
        return Ok(out);
    }

    if h0 < 0.0 {
        let lo = bracket_outward(problem, rho_0.min(0.0), -1.0)?;
        let hi = bracket_outward(problem, rho_0.max(0.0), 1.0)?;
        let neg = root_in(problem, lo, rho_0.min(0.0), tol)?;
        let pos = root_in(problem, rho_0.max(0.0), hi, tol)?;
        out.structure = RootStructure::Straddling;
        out.rho_neg = Some(neg);
        out.rho_pos = Some(pos);
        out.alpha = Some(-neg);
        out.summable = -neg > 1.0;
        out.roots = vec![neg, pos];
        return Ok(out);
    }

    if h_min.abs() <= tol {
        out.structure = RootStructure::Tangent;
        out.roots = vec![rho_0];
    } else if h_min < 0.0 {
        let lo = bracket_outward(problem, rho_0, -1.0)?;
        let hi = bracket_outward(problem, rho_0, 1.0)?;
        out.structure = RootStructure::SameSign;
        out.roots = vec![
            root_in(problem, lo, rho_0, tol)?,
            root_in(problem, rho_0, hi, tol)?,
        ];
    } else {
        out.structure = RootStructure::NoRealRoots;
    }
    Ok(out)
}

/// Pareto exponent admitted by `(p, gamma, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleAlpha {
    /// Present iff `kappa > kappa_min`.
    pub alpha: Option<f64>,
    pub summable: bool,
}

pub fn admissible_alpha(params: &ModelParams, tol: f64) -> Result<AdmissibleAlpha> {
    let res = CharacteristicProblem::new(params)?.solve_roots(tol)?;
    Ok(AdmissibleAlpha {
        alpha: res.alpha,
        summable: res.summable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-13;

    fn problem(p: f64, gamma: f64, kappa: f64) -> CharacteristicProblem {
        CharacteristicProblem::new(&ModelParams::new(p, gamma, kappa).unwrap()).unwrap()
    }

    /// Plain bisection, independent of the Newton path.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn h_at_zero() {
        let pr = problem(0.6, 0.3, 1.1);
        let c = pr.coeffs;
        assert!((pr.h(0.0) - (c.a + c.b - 1.0)).abs() < 1e-16);
        assert!((pr.h(0.0) - (kappa_min(0.6, 0.3) / 1.1 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn h_vanishes_at_zero_on_the_boundary() {
        let k0 = kappa_min(0.6, 0.3);
        let pr = problem(0.6, 0.3, k0);
        assert!(pr.h(0.0).abs() < 1e-15);
    }

    #[test]
    fn h_blows_up_at_both_ends() {
        let pr = problem(0.6, 0.3, 1.1);
        let c = pr.coeffs;
        for rho in [50.0 / c.lambda, -50.0 / c.lambda, 50.0 / c.mu, -50.0 / c.mu] {
            assert!(pr.h(rho) > 1e10, "h({rho}) = {}", pr.h(rho));
        }
        assert!(pr.saturates(1e6));
        assert_eq!(pr.h(1e6), f64::INFINITY);
        assert_eq!(pr.h(-1e6), f64::INFINITY);
    }

    #[test]
    fn stationary_point_zero_when_balanced() {
        let gamma: f64 = 0.25;
        let (lam, mu) = (-(1.0 - gamma).ln(), (1.0 + gamma).ln());
        let r = lam * (1.0 + gamma) / (mu * (1.0 - gamma));
        let p = r / (1.0 + r);
        let pr = problem(p, gamma, 1.0);
        assert!(pr.stationary_point().abs() < 1e-14);
    }

    #[test]
    fn stationary_point_reference() {
        let pr = problem(0.6, 0.2, 1.0);
        let (lam, mu) = (-(0.8f64).ln(), (1.2f64).ln());
        let expected = (mu / lam).ln() / (lam + mu);
        assert!((pr.stationary_point() - expected).abs() < 1e-14);
        let r0 = pr.stationary_point();
        let d = 1e-4;
        let fd = (pr.h(r0 + d) - pr.h(r0 - d)) / (2.0 * d);
        assert!(fd.abs() < 1e-10, "fd = {fd}");
        for i in -100..=100 {
            assert!(pr.h(r0) <= pr.h(r0 + i as f64 * 0.37));
        }
    }

    #[test]
    fn kappa_min_examples() {
        assert!((kappa_min(0.6, 0.3) - 0.94 / 0.91).abs() < 1e-15);
        assert!((kappa_min(0.6, 0.3) - 1.032967).abs() < 1e-6);
        for &p in &[0.55, 0.6, 0.8] {
            assert!((kappa_min(p, 2.0 * p - 1.0) - 1.0).abs() < 1e-12);
            assert!(kappa_min(p, 0.5 * (2.0 * p - 1.0)) < 1.0);
        }
    }

    #[test]
    fn boundary_reports_zero_root_and_no_alpha() {
        let k0 = kappa_min(0.6, 0.3);
        let res = problem(0.6, 0.3, k0).solve_roots(TOL).unwrap();
        assert_eq!(res.structure, RootStructure::Boundary);
        assert!(res.rho_neg.is_none() && res.alpha.is_none());
        assert!(res.roots.contains(&0.0));
        assert_eq!(res.roots.len(), 2);
        // rho_0 < 0 here, so the other root is negative
        assert!(res.rho_0 < 0.0 && res.roots[0] < res.rho_0);
    }

    #[test]
    fn straddling_roots_match_bisection() {
        let pr = problem(0.6, 0.3, 1.1);
        let res = pr.solve_roots(TOL).unwrap();
        assert_eq!(res.structure, RootStructure::Straddling);
        let neg = res.rho_neg.unwrap();
        let pos = res.rho_pos.unwrap();
        assert!(pr.h(neg).abs() <= 1e-12 && pr.h(pos).abs() <= 1e-12);
        assert!(neg < res.rho_0 && res.rho_0 < pos);
        let oracle = bisect(|r| pr.h(r), -50.0, res.rho_0.min(0.0));
        assert!((neg - oracle).abs() < 1e-10);
        assert!((res.alpha.unwrap() - 2.334079).abs() < 1e-5);
    }

    #[test]
    fn no_dissipation_below_kelly_has_unit_alpha() {
        // with kappa = 1: a e^-lambda + b e^mu = q + p = 1, so rho = -1 is a root
        for &(p, g) in &[(0.6, 0.1), (0.7, 0.2), (0.9, 0.5)] {
            let res = problem(p, g, 1.0).solve_roots(TOL).unwrap();
            assert!((res.alpha.unwrap() - 1.0).abs() < 1e-10, "p={p} g={g}");
            assert!(!res.summable);
        }
    }

    #[test]
    fn alpha_is_absent_at_or_below_threshold() {
        let k0 = kappa_min(0.6, 0.3);
        for k in [1.0, 1.01, k0] {
            let a = admissible_alpha(&ModelParams::new(0.6, 0.3, k).unwrap(), TOL).unwrap();
            assert!(a.alpha.is_none(), "kappa={k}");
        }
    }

    #[test]
    fn alpha_is_continuous_down_to_the_threshold() {
        // At kappa_min the root leaving through zero is the positive one
        // (rho_0 < 0 whenever kappa_min >= 1), so alpha tends to minus the
        // left boundary root, not to zero.
        let k0 = kappa_min(0.6, 0.3);
        let boundary = problem(0.6, 0.3, k0).solve_roots(TOL).unwrap();
        let limit = -boundary.roots[0];
        assert!(limit > 1.0);
        let mut prev_gap = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let a = admissible_alpha(&ModelParams::new(0.6, 0.3, k0 * (1.0 + eps)).unwrap(), TOL)
                .unwrap()
                .alpha
                .unwrap();
            let gap = a - limit;
            assert!(gap > 0.0 && gap < prev_gap, "eps={eps} alpha={a}");
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-6);
    }

    #[test]
    fn alpha_increases_with_kappa() {
        let k0 = kappa_min(0.6, 0.3);
        let alphas: Vec<f64> = (1..=40)
            .map(|i| {
                let k = k0 + 0.05 * i as f64;
                admissible_alpha(&ModelParams::new(0.6, 0.3, k).unwrap(), TOL)
                    .unwrap()
                    .alpha
                    .unwrap()
            })
            .collect();
        for w in alphas.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn same_sign_roots_without_dissipation_above_kelly() {
        // kappa = 1 above Kelly: h(0) > 0, rho_0 < 0, both roots negative (-1 is one)
        let res = problem(0.6, 0.3, 1.0).solve_roots(TOL).unwrap();
        assert_eq!(res.structure, RootStructure::SameSign);
        assert_eq!(res.roots.len(), 2);
        assert!(res.roots.iter().all(|&r| r < 0.0));
        assert!(res.roots.iter().any(|&r| (r + 1.0).abs() < 1e-10));
        assert!(res.alpha.is_none() && res.rho_neg.is_none());
    }

    #[test]
    fn degenerate_zero_wager() {
        let res = problem(0.6, 0.0, 1.2).solve_roots(TOL).unwrap();
        assert_eq!(res.structure, RootStructure::Degenerate);
        assert!(res.roots.is_empty() && res.alpha.is_none());
        assert_eq!(res.rho_0, 0.0);
    }

    #[test]
    fn json_omits_absent_roots() {
        let res = problem(0.6, 0.3, 1.0).solve_roots(TOL).unwrap();
        let v = serde_json::to_value(&res).unwrap();
        assert!(v.get("rho_neg").is_none() && v.get("alpha").is_none());
        assert!(v.get("rho_0").is_some() && v.get("summable").is_some());
    }

    proptest! {
        #[test]
        fn h_is_convex(p in 0.05f64..0.95, g in 0.01f64..0.95, k in 1.0f64..3.0,
                       r1 in -20.0f64..20.0, r2 in -20.0f64..20.0, t in 0.0f64..1.0) {
            let pr = problem(p, g, k);
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            let lhs = pr.h(t * lo + (1.0 - t) * hi);
            let rhs = t * pr.h(lo) + (1.0 - t) * pr.h(hi);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn second_derivative_matches_difference(p in 0.05f64..0.95, g in 0.05f64..0.9, k in 1.0f64..3.0,
                                                r in -5.0f64..5.0) {
            let pr = problem(p, g, k);
            let d = 1e-3;
            let fd = (pr.h(r + d) - 2.0 * pr.h(r) + pr.h(r - d)) / (d * d);
            let exact = pr.h_second(r);
            prop_assert!(exact > 0.0);
            prop_assert!((fd - exact).abs() <= 1e-4 * exact.max(1.0) + 1e-6);
        }

        #[test]
        fn two_roots_above_threshold(p in 0.05f64..0.95, g in 0.01f64..0.95, extra in 1e-3f64..2.0) {
            let k = kappa_min(p, g).max(1.0) * (1.0 + extra);
            let pr = problem(p, g, k);
            let res = pr.solve_roots(TOL).unwrap();
            prop_assert_eq!(res.structure, RootStructure::Straddling);
            let (neg, pos) = (res.rho_neg.unwrap(), res.rho_pos.unwrap());
            prop_assert!(neg < 0.0 && pos > 0.0);
            prop_assert!(neg < res.rho_0 && res.rho_0 < pos);
            prop_assert!(pr.h(neg).abs() <= 1e-10 && pr.h(pos).abs() <= 1e-10);
        }

        #[test]
        fn minimum_is_never_positive(p in 0.01f64..0.99, g in 0.01f64..0.95, k in 1.0f64..5.0) {
            // kappa h(-1) + kappa = q + p, so h(rho_0) <= h(-1) = 1/kappa - 1 <= 0
            let pr = problem(p, g, k);
            prop_assert!(pr.h(pr.stationary_point()) <= 1e-15);
            prop_assert!(pr.solve_roots(TOL).unwrap().structure != RootStructure::NoRealRoots);
        }

        #[test]
        fn kelly_boundary_coherence(p in 0.5001f64..0.9999) {
            prop_assert!((kappa_min(p, 2.0 * p - 1.0) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn roots_solve_log_functional_equation(p in 0.3f64..0.9, g in 0.05f64..0.8, extra in 0.01f64..1.0,
                                               x in -3.0f64..3.0) {
            let k = kappa_min(p, g).max(1.0) * (1.0 + extra);
            let pr = problem(p, g, k);
            let res = pr.solve_roots(TOL).unwrap();
            let c = pr.coeffs;
            for rho in res.roots {
                let f = |s: f64| (rho * s).exp();
                let lhs = c.a * f(x + c.lambda) - f(x) + c.b * f(x - c.mu);
                prop_assert!(lhs.abs() <= 1e-10 * f(x).max(1.0));
            }
        }
    }
}
