//! Model parameters of the betting game and the log-variable constants
//! derived from them.
//!
//! Every round an agent wagers a fraction `gamma` of its wealth; with
//! probability `p` the stake is won (wealth times `1 + gamma`), otherwise it is
//! lost (wealth times `1 - gamma`). The dissipative coefficient `kappa >= 1`
//! scales the population density by `1 / kappa` each round.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The triple `(p, gamma, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Probability of winning a round.
    pub p: f64,
    /// Fraction of wealth wagered per round.
    pub gamma: f64,
    /// Dissipative coefficient.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// The parameters are rejected by every consumer.
    Hard,
    /// Accepted, but the caller should know.
    Advisory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Issue {
    NonFinite,
    ProbabilityOutOfRange,
    FractionOutOfRange,
    KappaBelowOne,
    /// `p <= 1/2`: the game has no positive edge.
    NoEdge,
    /// `p` is exactly 0 or 1: outcomes are deterministic.
    DeterministicOutcome,
    /// `gamma == 0`: nothing is wagered.
    NoWager,
}

impl Issue {
    pub fn severity(self) -> Severity {
        match self {
            Issue::NonFinite
            | Issue::ProbabilityOutOfRange
            | Issue::FractionOutOfRange
            | Issue::KappaBelowOne => Severity::Hard,
            Issue::NoEdge | Issue::DeterministicOutcome | Issue::NoWager => Severity::Advisory,
        }
    }

    pub fn message(self) -> &'static str {
        match self {
            Issue::NonFinite => "parameters must be finite",
            Issue::ProbabilityOutOfRange => "p must lie in [0, 1]",
            Issue::FractionOutOfRange => "gamma must lie in [0, 1)",
            Issue::KappaBelowOne => "kappa must be >= 1",
            Issue::NoEdge => "no edge: p <= 1/2",
            Issue::DeterministicOutcome => "degenerate: p is 0 or 1",
            Issue::NoWager => "degenerate: gamma = 0",
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

/// Outcome of [`validate`]: hard violations plus advisory flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.hard().next().is_none()
    }

    pub fn hard(&self) -> impl Iterator<Item = Issue> + '_ {
        self.issues
            .iter()
            .copied()
            .filter(|i| i.severity() == Severity::Hard)
    }

    pub fn advisories(&self) -> impl Iterator<Item = Issue> + '_ {
        self.issues
            .iter()
            .copied()
            .filter(|i| i.severity() == Severity::Advisory)
    }

    pub fn has(&self, issue: Issue) -> bool {
        self.issues.contains(&issue)
    }
}

/// Checks every constraint and reports; never fails.
pub fn validate(params: &ModelParams) -> ValidationReport {
    let ModelParams { p, gamma, kappa } = *params;
    let mut issues = Vec::new();
    if !(p.is_finite() && gamma.is_finite() && kappa.is_finite()) {
        issues.push(Issue::NonFinite);
        return ValidationReport { issues };
    }
    if !(0.0..=1.0).contains(&p) {
        issues.push(Issue::ProbabilityOutOfRange);
    }
    if !(0.0..1.0).contains(&gamma) {
        issues.push(Issue::FractionOutOfRange);
    }
    if kappa < 1.0 {
        issues.push(Issue::KappaBelowOne);
    }
    if p <= 0.5 {
        issues.push(Issue::NoEdge);
    }
    if p == 0.0 || p == 1.0 {
        issues.push(Issue::DeterministicOutcome);
    }
    if gamma == 0.0 {
        issues.push(Issue::NoWager);
    }
    ValidationReport { issues }
}

impl ModelParams {
    /// Builds validated parameters. Advisory flags do not cause rejection.
    pub fn new(p: f64, gamma: f64, kappa: f64) -> Result<Self> {
        let params = ModelParams { p, gamma, kappa };
        params.check()?;
        Ok(params)
    }

    /// Fails with the list of hard violations, if any.
    pub fn check(&self) -> Result<()> {
        let report = validate(self);
        if report.is_valid() {
            return Ok(());
        }
        let msgs: Vec<&str> = report.hard().map(Issue::message).collect();
        Err(Error::InvalidParams(format!(
            "(p={}, gamma={}, kappa={}): {}",
            self.p,
            self.gamma,
            self.kappa,
            msgs.join("; ")
        )))
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn log_coefficients(&self) -> LogCoefficients {
        log_coefficients(self)
    }
}

/// Constants of the functional equation in log-wealth `s = log x`:
/// `a F(s + lambda) - F(s) + b F(s - mu) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCoefficients {
    /// Log-step on a loss, `-log(1 - gamma)`.
    pub lambda: f64,
    /// Log-step on a win, `log(1 + gamma)`.
    pub mu: f64,
    /// Loss weight `q / (kappa (1 - gamma))`.
    pub a: f64,
    /// Win weight `p / (kappa (1 + gamma))`.
    pub b: f64,
}

pub fn log_coefficients(params: &ModelParams) -> LogCoefficients {
    let ModelParams { p, gamma, kappa } = *params;
    let q = 1.0 - p;
    LogCoefficients {
        lambda: -(-gamma).ln_1p(),
        mu: gamma.ln_1p(),
        a: q / (kappa * (1.0 - gamma)),
        b: p / (kappa * (1.0 + gamma)),
    }
}
