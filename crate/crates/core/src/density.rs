//! Wealth densities on a uniform grid in log-wealth and the evolution operator
//! `W_k f(x) = (1/k) [ p/(1+g) f(x/(1+g)) + q/(1-g) f(x/(1-g)) ]`.
//!
//! On the grid `s = log x` the operator is a pair of pure shifts, by `+mu` on a
//! win and by `-lambda` on a loss. Two discretisations are provided:
//!
//! * [`Scheme::PushForward`] moves node masses `f(x) x ds` along the two shifts
//!   and splits each between the two nearest nodes. Total mass is conserved up
//!   to what leaves the grid, and the map is linear.
//! * [`Scheme::Interpolate`] evaluates the formula pointwise, reading the
//!   shifted density by geometric interpolation (linear in log-density).
//!
//! Reads past either edge contribute nothing. The mass that leaves the grid in
//! an application is recorded in [`GridDensity::truncation_mass`].

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::output::fmt_f64;

pub const MIN_NODES: usize = 16;
/// Minimum number of positive points a tail fit accepts.
pub const MIN_FIT_POINTS: usize = 8;
pub const DEFAULT_TAIL_WINDOW: (f64, f64) = (0.95, 0.999);

/// Uniform log-wealth grid `log_min, ..., log_max` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub log_min: f64,
    pub log_max: f64,
    pub n: usize,
}

impl Default for LogGrid {
    fn default() -> Self {
        LogGrid {
            log_min: -20.0,
            log_max: 60.0,
            n: 4096,
        }
    }
}

impl LogGrid {
    pub fn check(&self) -> Result<()> {
        if self.n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes, got {}",
                self.n
            )));
        }
        if !(self.log_min.is_finite() && self.log_max.is_finite() && self.log_max > self.log_min) {
            return Err(Error::InvalidGrid(format!(
                "bounds [{}, {}] must be finite and increasing",
                self.log_min, self.log_max
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.log_max - self.log_min) / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let d = self.step();
        (0..self.n).map(|i| self.log_min + i as f64 * d).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    log_x: Vec<f64>,
    values: Vec<f64>,
    truncation_mass: f64,
}

impl GridDensity {
    /// Validates a grid read from elsewhere: at least [`MIN_NODES`] nodes,
    /// uniform positive spacing, finite nonnegative values.
    pub fn new(log_x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if log_x.len() != values.len() {
            return Err(Error::InvalidGrid(format!(
                "{} nodes but {} values",
                log_x.len(),
                values.len()
            )));
        }
        if log_x.len() < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes, got {}",
                log_x.len()
            )));
        }
        let d = (log_x[log_x.len() - 1] - log_x[0]) / (log_x.len() - 1) as f64;
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidGrid(
                "log_x must be strictly increasing".into(),
            ));
        }
        for (i, w) in log_x.windows(2).enumerate() {
            if ((w[1] - w[0]) - d).abs() > 1e-6 * d {
                return Err(Error::InvalidGrid(format!(
                    "non-uniform spacing at node {}",
                    i + 1
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "value at node {i} is {}",
                values[i]
            )));
        }
        Ok(GridDensity {
            log_x,
            values,
            truncation_mass: 0.0,
        })
    }

    pub fn zeros(grid: &LogGrid) -> Result<Self> {
        grid.check()?;
        Ok(GridDensity {
            log_x: grid.nodes(),
            values: vec![0.0; grid.n],
            truncation_mass: 0.0,
        })
    }

    /// Samples `f(x)` at `x = e^s` for every node. Negative or non-finite
    /// samples are an error.
    pub fn from_fn(grid: &LogGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        grid.check()?;
        let log_x = grid.nodes();
        let values = log_x.iter().map(|&s| f(s.exp())).collect();
        GridDensity::new(log_x, values)
    }

    /// Histogram of weighted samples `(wealth, weight)` on `grid`: each sample
    /// goes to the nearest node and the node mass is divided by the node's
    /// wealth width. Returns the density and the number of samples that fell
    /// outside the grid or had nonpositive wealth.
    pub fn histogram(
        grid: &LogGrid,
        samples: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<(Self, usize)> {
        grid.check()?;
        let mut out = GridDensity::zeros(grid)?;
        let d = grid.step();
        let mut dropped = 0;
        for (x, w) in samples {
            let u = if x > 0.0 {
                (x.ln() - grid.log_min) / d
            } else {
                f64::NAN
            };
            let j = u.round();
            if !(j >= 0.0 && j <= (grid.n - 1) as f64) {
                dropped += 1;
                continue;
            }
            out.values[j as usize] += w;
        }
        let widths = out.mass_weights();
        for (v, w) in out.values.iter_mut().zip(&widths) {
            *v /= w;
        }
        Ok((out, dropped))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn log_x(&self) -> &[f64] {
        &self.log_x
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        (self.log_x[self.len() - 1] - self.log_x[0]) / (self.len() - 1) as f64
    }

    pub fn grid(&self) -> LogGrid {
        LogGrid {
            log_min: self.log_x[0],
            log_max: self.log_x[self.len() - 1],
            n: self.len(),
        }
    }

    /// Mass lost past the grid edges by the application that produced this
    /// density; zero for densities built directly.
    pub fn truncation_mass(&self) -> f64 {
        self.truncation_mass
    }

    pub fn scaled(&self, c: f64) -> GridDensity {
        GridDensity {
            log_x: self.log_x.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            truncation_mass: self.truncation_mass * c,
        }
    }

    /// `self + c * other` on the same grid.
    pub fn add_scaled(&self, other: &GridDensity, c: f64) -> Result<GridDensity> {
        if self.log_x != other.log_x {
            return Err(Error::InvalidGrid(
                "densities live on different grids".into(),
            ));
        }
        Ok(GridDensity {
            log_x: self.log_x.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
            truncation_mass: self.truncation_mass,
        })
    }

    /// Trapezoid weights of `dx = e^s ds`: node mass is `value * weight`.
    pub fn mass_weights(&self) -> Vec<f64> {
        let d = self.step();
        let n = self.len();
        self.log_x
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let w = if i == 0 || i == n - 1 { 0.5 * d } else { d };
                s.exp() * w
            })
            .collect()
    }

    pub fn node_masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.mass_weights())
            .map(|(v, w)| v * w)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["log_x", "value"])?;
        for (s, v) in self.log_x.iter().zip(&self.values) {
            w.write_record([fmt_f64(*s), fmt_f64(*v)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["log_x", "value"] {
            return Err(Error::InvalidGrid(format!(
                "expected header log_x,value, got {:?}",
                headers
            )));
        }
        let mut log_x = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidGrid(format!("bad number {:?}: {e}", &rec[i])))
            };
            log_x.push(parse(0)?);
            values.push(parse(1)?);
        }
        GridDensity::new(log_x, values)
    }
}

/// Trapezoid integral of `f(x) dx` over the grid.
pub fn l1_mass(f: &GridDensity) -> f64 {
    f.node_masses().iter().sum()
}

/// `sum |m_i - n_i|` over node masses.
pub fn l1_distance(f: &GridDensity, g: &GridDensity) -> f64 {
    f.node_masses()
        .iter()
        .zip(g.node_masses())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    PushForward,
    Interpolate,
}

/// One of the two branches of the operator: weight and shift in grid units.
#[derive(Debug, Clone, Copy)]
struct Branch {
    weight: f64,
    whole: isize,
    frac: f64,
}

impl Branch {
    fn new(weight: f64, shift: f64) -> Self {
        let whole = shift.floor();
        Branch {
            weight,
            whole: whole as isize,
            frac: shift - whole,
        }
    }

    /// Mass sent from source `i` past the grid edges, as a fraction of `m_i`.
    fn lost_fraction(&self, i: usize, n: usize) -> f64 {
        let off = |k: isize| {
            let j = i as isize + k;
            j < 0 || j >= n as isize
        };
        let mut lost = 0.0;
        if off(self.whole) {
            lost += 1.0 - self.frac;
        }
        if self.frac > 0.0 && off(self.whole + 1) {
            lost += self.frac;
        }
        lost
    }
}

fn branches(params: &ModelParams, step: f64) -> [Branch; 2] {
    let c = params.log_coefficients();
    [
        Branch::new(params.p / params.kappa, c.mu / step),
        Branch::new(params.q() / params.kappa, -c.lambda / step),
    ]
}

fn at(v: &[f64], j: isize) -> Option<f64> {
    if j >= 0 && (j as usize) < v.len() {
        Some(v[j as usize])
    } else {
        None
    }
}

/// Applies the push-forward form of the operator.
pub fn apply_operator(f: &GridDensity, params: &ModelParams) -> GridDensity {
    apply_operator_with(f, params, Scheme::PushForward)
}

pub fn apply_operator_with(f: &GridDensity, params: &ModelParams, scheme: Scheme) -> GridDensity {
    let n = f.len();
    let step = f.step();
    let weights = f.mass_weights();
    let masses: Vec<f64> = f.values.iter().zip(&weights).map(|(v, w)| v * w).collect();
    let br = branches(params, step);

    let truncation_mass: f64 = masses
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, m)| {
            br.iter()
                .map(|b| b.weight * b.lost_fraction(i, n))
                .sum::<f64>()
                * m
        })
        .sum();

    let values: Vec<f64> = match scheme {
        Scheme::PushForward => (0..n)
            .into_par_iter()
            .map(|j| {
                let j = j as isize;
                let m: f64 = br
                    .iter()
                    .map(|b| {
                        let near = at(&masses, j - b.whole).unwrap_or(0.0);
                        let far = at(&masses, j - b.whole - 1).unwrap_or(0.0);
                        b.weight * ((1.0 - b.frac) * near + b.frac * far)
                    })
                    .sum();
                m / weights[j as usize]
            })
            .collect(),
        Scheme::Interpolate => {
            let c = params.log_coefficients();
            // g(s) = b f(s - mu) + a f(s + lambda)
            let reads = [(c.b, -c.mu / step), (c.a, c.lambda / step)];
            (0..n)
                .into_par_iter()
                .map(|j| {
                    reads
                        .iter()
                        .map(|&(coef, shift)| coef * interpolate(&f.values, j as f64 + shift))
                        .sum()
                })
                .collect()
        }
    };

    GridDensity {
        log_x: f.log_x.clone(),
        values,
        truncation_mass,
    }
}

/// Reads `values` at fractional index `u`, interpolating log-density when
/// both neighbours are positive and density otherwise. Zero off the grid.
fn interpolate(values: &[f64], u: f64) -> f64 {
    let last = (values.len() - 1) as f64;
    if !(u >= 0.0 && u <= last) {
        return 0.0;
    }
    let i = u.floor();
    let t = u - i;
    let i = i as usize;
    if t == 0.0 {
        return values[i];
    }
    let (lo, hi) = (values[i], values[i + 1]);
    if lo > 0.0 && hi > 0.0 {
        (lo.ln() * (1.0 - t) + hi.ln() * t).exp()
    } else {
        lo * (1.0 - t) + hi * t
    }
}

/// How mass is handled between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Plain `f <- W_k f`; mass decays by `1/k` per step.
    #[default]
    None,
    /// Rescale to the previous mass after every step. Commutes with the linear
    /// operator, so the shape is that of the undissipated iteration.
    Rescale,
    /// Re-add the dissipated mass `(1 - 1/k) |f|` in the shape of the initial
    /// density. The iteration converges to `f = W_k f + c f_0`, whose tail away
    /// from the source follows the negative characteristic root.
    Reinject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mass: f64,
    /// Mass lost past the edges during this step.
    pub truncation_mass: f64,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub density: GridDensity,
    /// Row 0 is the initial density.
    pub trace: Vec<TraceRow>,
    /// Relative L1 change between successive iterates, one entry per step.
    pub l1_changes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateOptions {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub normalization: Normalization,
}

/// Applies the operator `n_steps` times, recording mass after each step.
/// `on_step` sees every iterate, e.g. to dump checkpoints.
pub fn iterate(
    f0: &GridDensity,
    params: &ModelParams,
    n_steps: usize,
    opts: IterateOptions,
    mut on_step: impl FnMut(usize, &GridDensity) -> Result<()>,
) -> Result<Evolution> {
    params.check()?;
    let m0 = l1_mass(f0);
    let mut trace = Vec::with_capacity(n_steps + 1);
    trace.push(TraceRow {
        step: 0,
        mass: m0,
        truncation_mass: f0.truncation_mass,
    });
    let mut l1_changes = Vec::with_capacity(n_steps);
    let mut cur = f0.clone();
    on_step(0, &cur)?;
    for step in 1..=n_steps {
        let before = l1_mass(&cur);
        let mut next = apply_operator_with(&cur, params, opts.scheme);
        match opts.normalization {
            Normalization::None => {}
            Normalization::Rescale => {
                let after = l1_mass(&next);
                if after > 0.0 {
                    let lost = next.truncation_mass;
                    next = next.scaled(before / after);
                    next.truncation_mass = lost;
                }
            }
            Normalization::Reinject => {
                if m0 > 0.0 {
                    let lost = next.truncation_mass;
                    let dissipated = (1.0 - 1.0 / params.kappa) * before;
                    next = next.add_scaled(f0, dissipated / m0)?;
                    next.truncation_mass = lost;
                }
            }
        }
        let mass = l1_mass(&next);
        l1_changes.push(if mass > 0.0 {
            l1_distance(&next, &cur) / mass
        } else {
            0.0
        });
        trace.push(TraceRow {
            step,
            mass,
            truncation_mass: next.truncation_mass,
        });
        on_step(step, &next)?;
        cur = next;
    }
    Ok(Evolution {
        density: cur,
        trace,
        l1_changes,
    })
}

/// Least-squares fit of `log f` against `log x` over a mass-quantile window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub alpha_hat: f64,
    /// `[x_lo, x_hi]` of the fitted points, in wealth units.
    pub window: [f64; 2],
    pub r2: f64,
    pub points: usize,
}

pub fn fit_tail(f: &GridDensity, window_quantiles: (f64, f64)) -> Result<TailFit> {
    let (q_lo, q_hi) = window_quantiles;
    if !(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0) {
        return Err(Error::Domain(format!(
            "bad quantile window ({q_lo}, {q_hi})"
        )));
    }
    let masses = f.node_masses();
    let total: f64 = masses.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InsufficientSupport {
            found: 0,
            required: MIN_FIT_POINTS,
        });
    }
    let mut cum = 0.0;
    let mut lo = None;
    let mut hi = f.len() - 1;
    for (i, m) in masses.iter().enumerate() {
        cum += m;
        if lo.is_none() && cum >= q_lo * total {
            lo = Some(i);
        }
        if cum >= q_hi * total {
            hi = i;
            break;
        }
    }
    let lo = lo.unwrap_or(hi);

    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&i| f.values[i] > 0.0)
        .map(|i| (f.log_x[i], f.values[i].ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientSupport {
            found: pts.len(),
            required: MIN_FIT_POINTS,
        });
    }

    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };

    Ok(TailFit {
        alpha_hat: -slope,
        window: [pts[0].0.exp(), pts[pts.len() - 1].0.exp()],
        r2,
        points: pts.len(),
    })
}
