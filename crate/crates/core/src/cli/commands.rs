use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    EvolveConfig, ExponentConfig, InitialDensity, KappaAxis, KellyConfig, SimulateConfig,
};
use super::schema::{self, check_file};
use crate::abm::{circulation, empirical_tail, ruin_stats, simulate, CirculationReport, RuinRow};
use crate::density::{fit_tail, iterate, GridDensity, TailFit};
use crate::error::{Error, Result};
use crate::kelly::GrowthProfile;
use crate::model::ModelParams;
use crate::output::{fmt_f64, fmt_opt, write_csv, write_json};
use crate::spectral::{kappa_min, CharacteristicProblem, SpectralResult};

/// Machine-readable form of an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Files written by a command and the number of parameter points that failed.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn checked(files: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    for f in &files {
        check_file(f)?;
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KellySummary {
    pub config: KellyConfig,
    pub gamma_star: f64,
    pub gamma_zero: f64,
    pub g_at_star: f64,
}

pub fn cmd_kelly(cfg: &KellyConfig, out: &Path) -> Result<(KellySummary, Outcome)> {
    let gammas = cfg.gammas.values()?;
    for &g in &gammas {
        ModelParams::new(cfg.p, g, 1.0)?;
    }
    let profile = GrowthProfile::new(cfg.p, &gammas, cfg.tol)?;
    prepare_out(out)?;

    let csv_path = out.join(schema::KELLY_CSV);
    write_csv(
        &csv_path,
        &["gamma", "g"],
        profile.g_at.iter().map(|&(g, v)| [fmt_f64(g), fmt_f64(v)]),
    )?;
    let summary = KellySummary {
        config: cfg.clone(),
        gamma_star: profile.gamma_star,
        gamma_zero: profile.gamma_zero,
        g_at_star: profile.g_at_star(),
    };
    let json_path = out.join(schema::KELLY_JSON);
    write_json(&json_path, &summary)?;
    let files = checked(vec![csv_path, json_path])?;
    Ok((summary, Outcome { files, failures: 0 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub index: usize,
    pub p: f64,
    pub gamma: f64,
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result: Option<SpectralResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub config: ExponentConfig,
    pub rows: Vec<ExponentRow>,
    pub failures: usize,
}

fn solve_point(p: f64, gamma: f64, kappa: f64, tol: f64) -> Result<SpectralResult> {
    let params = ModelParams::new(p, gamma, kappa)?;
    CharacteristicProblem::new(&params)?.solve_roots(tol)
}

/// Solves every point of the Cartesian sweep `p x gamma x kappa`. Rows are
/// ordered by parameter index; per-point failures are recorded in the row.
pub fn cmd_exponent(cfg: &ExponentConfig, out: &Path) -> Result<(ExponentReport, Outcome)> {
    let ps = cfg.p.values()?;
    let gammas = cfg.gamma.values()?;
    let (kappas, offset) = match &cfg.kappa {
        KappaAxis::Absolute(a) => (a.values()?, false),
        KappaAxis::Offset { offset_from_min } => (offset_from_min.values()?, true),
    };
    let mut points = Vec::with_capacity(ps.len() * gammas.len() * kappas.len());
    for &p in &ps {
        for &g in &gammas {
            for &k in &kappas {
                let kappa = if offset { kappa_min(p, g) + k } else { k };
                points.push((p, g, kappa));
            }
        }
    }
    prepare_out(out)?;

    let rows: Vec<ExponentRow> = points
        .par_iter()
        .enumerate()
        .map(|(index, &(p, gamma, kappa))| {
            let (result, error) = match solve_point(p, gamma, kappa, cfg.tol) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(ErrorRecord::from(&e))),
            };
            ExponentRow {
                index,
                p,
                gamma,
                kappa,
                result,
                error,
            }
        })
        .collect();
    let failures = rows.iter().filter(|r| r.error.is_some()).count();

    let csv_path = out.join(schema::EXPONENT_CSV);
    write_csv(
        &csv_path,
        &[
            "index",
            "p",
            "gamma",
            "kappa",
            "kappa_min",
            "structure",
            "rho_neg",
            "rho_pos",
            "rho_0",
            "alpha",
            "summable",
            "error",
        ],
        rows.iter().map(exponent_cells),
    )?;
    let report = ExponentReport {
        config: cfg.clone(),
        rows,
        failures,
    };
    let json_path = out.join(schema::EXPONENT_JSON);
    write_json(&json_path, &report)?;
    let files = checked(vec![csv_path, json_path])?;
    Ok((report, Outcome { files, failures }))
}

fn exponent_cells(row: &ExponentRow) -> Vec<String> {
    let mut cells = vec![
        row.index.to_string(),
        fmt_f64(row.p),
        fmt_f64(row.gamma),
        fmt_f64(row.kappa),
    ];
    match &row.result {
        Some(r) => {
            let structure = serde_json::to_value(r.structure)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            cells.extend([
                fmt_f64(r.kappa_min),
                structure,
                fmt_opt(r.rho_neg),
                fmt_opt(r.rho_pos),
                fmt_f64(r.rho_0),
                fmt_opt(r.alpha),
                r.summable.to_string(),
            ]);
        }
        None => cells.extend(std::iter::repeat_n(String::new(), 7)),
    }
    cells.push(
        row.error
            .as_ref()
            .map(|e| format!("{}: {}", e.kind, e.message))
            .unwrap_or_default(),
    );
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub config: EvolveConfig,
    pub steps: usize,
    pub final_mass: f64,
    /// Mass lost past the grid edges, summed over all steps.
    pub total_truncation_mass: f64,
    /// Relative L1 change of the last step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub last_l1_change: Option<f64>,
    pub tail_fit: TailFit,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha_spectral: Option<f64>,
    /// `|alpha_hat - alpha_spectral| / alpha_spectral`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relative_error: Option<f64>,
}

fn initial_density(cfg: &EvolveConfig) -> Result<GridDensity> {
    match &cfg.initial {
        InitialDensity::TruncatedExponential { cutoff, scale } => {
            if scale.is_nan() || *scale <= 0.0 {
                return Err(Error::Config(format!(
                    "initial scale must be positive, got {scale}"
                )));
            }
            let (cutoff, scale) = (*cutoff, *scale);
            GridDensity::from_fn(&cfg.grid, |x| {
                if x <= cutoff {
                    (-x / scale).exp()
                } else {
                    0.0
                }
            })
        }
        InitialDensity::File { path } => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            GridDensity::read_csv(file)
        }
    }
}

fn write_density(path: &Path, f: &GridDensity) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_csv(std::io::BufWriter::new(file))
}

/// Iterates the operator from the configured initial density, writing
/// checkpoints, the final density, the mass trace and a tail fit compared
/// against the spectral exponent when one exists.
pub fn cmd_evolve(cfg: &EvolveConfig, out: &Path) -> Result<(EvolveSummary, Outcome)> {
    let params = cfg.params()?;
    let mut effective = cfg.clone();
    let f0 = initial_density(cfg)?;
    effective.grid = f0.grid();
    prepare_out(out)?;

    let checkpoints: BTreeSet<usize> = cfg.checkpoints.iter().copied().collect();
    let mut files = Vec::new();
    let evo = iterate(&f0, &params, cfg.steps, cfg.options(), |step, f| {
        if checkpoints.contains(&step) {
            let path = out.join(schema::density_checkpoint_name(step));
            write_density(&path, f)?;
            files.push(path);
        }
        Ok(())
    })?;

    let final_path = out.join(schema::DENSITY_FINAL_CSV);
    write_density(&final_path, &evo.density)?;
    files.push(final_path);
    let trace_path = out.join(schema::MASS_TRACE_CSV);
    write_csv(
        &trace_path,
        &["step", "mass", "truncation_mass"],
        evo.trace.iter().map(|r| {
            [
                r.step.to_string(),
                fmt_f64(r.mass),
                fmt_f64(r.truncation_mass),
            ]
        }),
    )?;
    files.push(trace_path);

    let tail_fit = fit_tail(&evo.density, (cfg.tail_window[0], cfg.tail_window[1]))?;
    let spectral = CharacteristicProblem::new(&params)?.solve_roots(cfg.tol)?;
    let alpha_spectral = spectral.alpha;
    let summary = EvolveSummary {
        config: effective,
        steps: cfg.steps,
        final_mass: evo.trace.last().map_or(0.0, |r| r.mass),
        total_truncation_mass: evo.trace[1..].iter().map(|r| r.truncation_mass).sum(),
        last_l1_change: evo.l1_changes.last().copied(),
        relative_error: alpha_spectral.map(|a| (tail_fit.alpha_hat - a).abs() / a),
        tail_fit,
        alpha_spectral,
    };
    let json_path = out.join(schema::TAIL_FIT_JSON);
    write_json(&json_path, &summary)?;
    files.push(json_path);
    let files = checked(files)?;
    Ok((summary, Outcome { files, failures: 0 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config: SimulateConfig,
    pub seed: u64,
    pub snapshots: Vec<u64>,
    pub ruin: Vec<RuinRow>,
    /// One report per configured elite quantile.
    pub circulation: Vec<CirculationReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub empirical_tail: Option<TailFit>,
}

/// Runs the agent simulation, then circulation at every elite quantile over
/// all snapshots, and ruin statistics.
pub fn cmd_simulate(cfg: &SimulateConfig, out: &Path) -> Result<(SimulateReport, Outcome)> {
    let spec = cfg.spec()?;
    prepare_out(out)?;
    let traj = simulate(&spec)?;
    let rounds = traj.snapshot_rounds();
    let reports = cfg
        .elite_quantiles
        .iter()
        .map(|&q| circulation(&traj, q, &rounds))
        .collect::<Result<Vec<_>>>()?;
    let ruin = ruin_stats(&traj);
    let empirical_tail = cfg
        .tail_window
        .map(|w| empirical_tail(traj.final_population(), (w[0], w[1])))
        .transpose()?;

    let mut files = Vec::new();
    for rep in &reports {
        let path = out.join(schema::turnover_name(rep.elite_quantile));
        write_csv(
            &path,
            &["round_a", "round_b", "jaccard", "fraction_replaced"],
            rep.turnover_rows()
                .into_iter()
                .map(|(a, b, j, r)| [a.to_string(), b.to_string(), fmt_f64(j), fmt_f64(r)]),
        )?;
        files.push(path);
        let path = out.join(schema::tenure_name(rep.elite_quantile));
        write_csv(
            &path,
            &["tenure_rounds", "count"],
            rep.tenure
                .histogram
                .iter()
                .map(|(t, c)| [t.to_string(), c.to_string()]),
        )?;
        files.push(path);
    }
    let ruin_path = out.join(schema::RUIN_CSV);
    write_csv(
        &ruin_path,
        &["round", "ruin_fraction", "rebirths"],
        ruin.iter().map(|r| {
            [
                r.round.to_string(),
                fmt_f64(r.ruin_fraction),
                r.rebirths.to_string(),
            ]
        }),
    )?;
    files.push(ruin_path);

    let report = SimulateReport {
        config: cfg.clone(),
        seed: cfg.seed,
        snapshots: rounds,
        ruin,
        circulation: reports,
        empirical_tail,
    };
    let json_path = out.join(schema::REPORT_JSON);
    write_json(&json_path, &report)?;
    files.push(json_path);
    let files = checked(files)?;
    Ok((report, Outcome { files, failures: 0 }))
}
