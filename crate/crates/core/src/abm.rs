//! Agent-based Monte Carlo of the betting dynamics.
//!
//! Every agent starts at the same wealth and bets the fraction `gamma` each
//! round. Agent `i` draws from its own ChaCha8 stream (`seed`, stream `i`), so
//! results do not depend on how agents are scheduled across threads.
//!
//! Agents whose wealth falls below `ruin_floor * initial_wealth` are flagged
//! ruined and frozen. With `rebirth` on, they are instead reset to the median
//! live wealth at the end of the round (exploratory, off by default).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{fit_tail, GridDensity, LogGrid, TailFit};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Smallest elite set `circulation` accepts.
pub const MIN_ELITE: usize = 50;
/// Smallest number of live agents `empirical_tail` accepts.
pub const MIN_TAIL_AGENTS: usize = 1000;
/// Histogram spacing in log-wealth used by `empirical_tail`.
pub const TAIL_BIN: f64 = 0.2;

const AGENT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub params: ModelParams,
    pub n_agents: usize,
    pub n_rounds: u64,
    pub seed: u64,
    #[serde(default = "default_ruin_floor")]
    pub ruin_floor: f64,
    #[serde(default = "default_initial_wealth")]
    pub initial_wealth: f64,
    /// Rounds at which the population is recorded. Round 0 and `n_rounds`
    /// are always added.
    #[serde(default)]
    pub snapshot_rounds: Vec<u64>,
    #[serde(default)]
    pub rebirth: bool,
    #[serde(default = "default_memory_budget")]
    pub memory_budget_bytes: u64,
}

fn default_ruin_floor() -> f64 {
    1e-3
}

fn default_initial_wealth() -> f64 {
    1.0
}

fn default_memory_budget() -> u64 {
    1 << 30
}

impl SimulationSpec {
    pub fn new(params: ModelParams, n_agents: usize, n_rounds: u64, seed: u64) -> Self {
        SimulationSpec {
            params,
            n_agents,
            n_rounds,
            seed,
            ruin_floor: default_ruin_floor(),
            initial_wealth: default_initial_wealth(),
            snapshot_rounds: Vec::new(),
            rebirth: false,
            memory_budget_bytes: default_memory_budget(),
        }
    }

    pub fn with_snapshots(mut self, rounds: impl IntoIterator<Item = u64>) -> Self {
        self.snapshot_rounds = rounds.into_iter().collect();
        self
    }

    pub fn with_ruin_floor(mut self, floor: f64) -> Self {
        self.ruin_floor = floor;
        self
    }

    /// Sorted, deduplicated snapshot rounds including 0 and `n_rounds`.
    pub fn resolved_snapshots(&self) -> Vec<u64> {
        let mut rounds = self.snapshot_rounds.clone();
        rounds.push(0);
        rounds.push(self.n_rounds);
        rounds.sort_unstable();
        rounds.dedup();
        rounds
    }

    pub fn check(&self) -> Result<()> {
        self.params.check()?;
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be at least 1".into()));
        }
        if self.n_agents > u32::MAX as usize || self.n_rounds > u32::MAX as u64 {
            return Err(Error::Config(
                "n_agents and n_rounds must fit in 32 bits".into(),
            ));
        }
        if !(self.ruin_floor > 0.0 && self.ruin_floor < 1.0) {
            return Err(Error::Config(format!(
                "ruin_floor must lie in (0, 1), got {}",
                self.ruin_floor
            )));
        }
        if !(self.initial_wealth.is_finite() && self.initial_wealth > 0.0) {
            return Err(Error::Config(format!(
                "initial_wealth must be positive and finite, got {}",
                self.initial_wealth
            )));
        }
        if let Some(&r) = self.snapshot_rounds.iter().find(|&&r| r > self.n_rounds) {
            return Err(Error::Config(format!(
                "snapshot round {r} is past the horizon {}",
                self.n_rounds
            )));
        }
        let required = self.retained_bytes();
        if required > self.memory_budget_bytes {
            return Err(Error::ResourceLimit {
                required,
                budget: self.memory_budget_bytes,
            });
        }
        Ok(())
    }

    /// Bytes held by the recorded populations.
    pub fn retained_bytes(&self) -> u64 {
        let snapshots = self.resolved_snapshots().len() as u64;
        snapshots
            .saturating_mul(self.n_agents as u64)
            .saturating_mul(BYTES_PER_AGENT)
    }
}

// wealth (8) + wins (4) + losses (4) + ruined (1)
const BYTES_PER_AGENT: u64 = 17;

/// Agent state at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub wealth: Vec<f64>,
    pub ruined: Vec<bool>,
    pub wins: Vec<u32>,
    pub losses: Vec<u32>,
    /// Common log mass weight `-round * ln(kappa)` of every agent. Kept in
    /// log form because `kappa^-round` underflows on long runs.
    pub log_weight: f64,
    pub round: u64,
    pub seed: u64,
}

impl Population {
    fn with_capacity(n: usize, round: u64, seed: u64, log_kappa: f64) -> Self {
        Population {
            wealth: Vec::with_capacity(n),
            ruined: Vec::with_capacity(n),
            wins: Vec::with_capacity(n),
            losses: Vec::with_capacity(n),
            log_weight: -(round as f64) * log_kappa,
            round,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wealth.is_empty()
    }

    /// `kappa^-round`; may underflow to 0.
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn ruined_count(&self) -> usize {
        self.ruined.iter().filter(|&&r| r).count()
    }

    pub fn live_count(&self) -> usize {
        self.len() - self.ruined_count()
    }

    fn push(&mut self, a: &AgentState) {
        self.wealth.push(a.wealth);
        self.ruined.push(a.ruined);
        self.wins.push(a.wins);
        self.losses.push(a.losses);
    }
}

/// Recorded populations of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: SimulationSpec,
    snapshots: Vec<Population>,
    /// Cumulative rebirths up to each snapshot.
    rebirths: Vec<u64>,
}

impl Trajectory {
    pub fn snapshot_rounds(&self) -> Vec<u64> {
        self.snapshots.iter().map(|p| p.round).collect()
    }

    pub fn snapshots(&self) -> &[Population] {
        &self.snapshots
    }

    pub fn at(&self, round: u64) -> Result<&Population> {
        self.snapshots
            .binary_search_by_key(&round, |p| p.round)
            .map(|i| &self.snapshots[i])
            .map_err(|_| Error::MissingSnapshot(round))
    }

    pub fn final_population(&self) -> &Population {
        self.snapshots.last().expect("round 0 is always recorded")
    }

    pub fn rebirths(&self) -> &[u64] {
        &self.rebirths
    }
}

#[derive(Debug, Clone, Copy)]
struct AgentState {
    wealth: f64,
    ruined: bool,
    wins: u32,
    losses: u32,
}

struct Step {
    p: f64,
    up: f64,
    down: f64,
    floor: f64,
}

impl Step {
    fn new(spec: &SimulationSpec) -> Self {
        let g = spec.params.gamma;
        Step {
            p: spec.params.p,
            up: 1.0 + g,
            down: 1.0 - g,
            floor: spec.ruin_floor * spec.initial_wealth,
        }
    }

    /// One bet for a live agent.
    #[inline]
    fn apply(&self, a: &mut AgentState, rng: &mut ChaCha8Rng) {
        if rng.gen_bool(self.p) {
            a.wealth *= self.up;
            a.wins += 1;
        } else {
            a.wealth *= self.down;
            a.losses += 1;
        }
        if a.wealth < self.floor {
            a.ruined = true;
        }
    }
}

fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

/// Runs the simulation and records the population at the snapshot rounds.
pub fn simulate(spec: &SimulationSpec) -> Result<Trajectory> {
    spec.check()?;
    let rounds = spec.resolved_snapshots();
    if spec.rebirth {
        Ok(simulate_round_major(spec, &rounds))
    } else {
        Ok(simulate_agent_major(spec, &rounds))
    }
}

/// Agents are independent without rebirth, so each one runs its whole
/// horizon at once and stops drawing once ruined.
fn simulate_agent_major(spec: &SimulationSpec, rounds: &[u64]) -> Trajectory {
    let step = Step::new(spec);
    let n = spec.n_agents;
    let log_kappa = spec.params.kappa.ln();

    let chunks: Vec<Vec<Population>> = (0..n.div_ceil(AGENT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * AGENT_CHUNK;
            let end = (start + AGENT_CHUNK).min(n);
            let mut cols: Vec<Population> = rounds
                .iter()
                .map(|&r| Population::with_capacity(end - start, r, spec.seed, log_kappa))
                .collect();
            for i in start..end {
                let mut rng = agent_rng(spec.seed, i);
                let mut a = AgentState {
                    wealth: spec.initial_wealth,
                    ruined: false,
                    wins: 0,
                    losses: 0,
                };
                let mut t = 0;
                for (col, &r) in cols.iter_mut().zip(rounds) {
                    while t < r && !a.ruined {
                        step.apply(&mut a, &mut rng);
                        t += 1;
                    }
                    col.push(&a);
                }
            }
            cols
        })
        .collect();

    let mut snapshots: Vec<Population> = rounds
        .iter()
        .map(|&r| Population::with_capacity(n, r, spec.seed, log_kappa))
        .collect();
    for chunk in chunks {
        for (dst, src) in snapshots.iter_mut().zip(chunk) {
            dst.wealth.extend(src.wealth);
            dst.ruined.extend(src.ruined);
            dst.wins.extend(src.wins);
            dst.losses.extend(src.losses);
        }
    }
    Trajectory {
        spec: spec.clone(),
        rebirths: vec![0; snapshots.len()],
        snapshots,
    }
}

/// Round-by-round loop, needed when rebirth couples agents through the
/// median. Each agent consumes its stream in the same order as above.
fn simulate_round_major(spec: &SimulationSpec, rounds: &[u64]) -> Trajectory {
    let step = Step::new(spec);
    let n = spec.n_agents;
    let log_kappa = spec.params.kappa.ln();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| agent_rng(spec.seed, i)).collect();
    let mut agents = vec![
        AgentState {
            wealth: spec.initial_wealth,
            ruined: false,
            wins: 0,
            losses: 0,
        };
        n
    ];
    let mut snapshots = Vec::with_capacity(rounds.len());
    let mut rebirths = Vec::with_capacity(rounds.len());
    let mut reborn = 0u64;
    let mut next = 0;

    for t in 0..=spec.n_rounds {
        if rounds.get(next) == Some(&t) {
            let mut pop = Population::with_capacity(n, t, spec.seed, log_kappa);
            agents.iter().for_each(|a| pop.push(a));
            snapshots.push(pop);
            rebirths.push(reborn);
            next += 1;
        }
        if t == spec.n_rounds {
            break;
        }
        agents
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .filter(|(a, _)| !a.ruined)
            .for_each(|(a, rng)| step.apply(a, rng));

        if spec.rebirth && agents.iter().any(|a| a.ruined) {
            let mut live: Vec<f64> = agents
                .iter()
                .filter(|a| !a.ruined)
                .map(|a| a.wealth)
                .collect();
            let median = if live.is_empty() {
                spec.initial_wealth
            } else {
                median_in_place(&mut live)
            };
            for a in agents.iter_mut().filter(|a| a.ruined) {
                a.wealth = median;
                a.ruined = false;
                reborn += 1;
            }
        }
    }
    Trajectory {
        spec: spec.clone(),
        snapshots,
        rebirths,
    }
}

/// Lower median.
fn median_in_place(v: &mut [f64]) -> f64 {
    let k = (v.len() - 1) / 2;
    *v.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
}

/// Indices of the top `k` agents by wealth, ties broken by lower index, as a
/// membership mask.
pub fn elite_mask(wealth: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; wealth.len()];
    if k == 0 {
        return mask;
    }
    let mut idx: Vec<usize> = (0..wealth.len()).collect();
    let by_rank = |&i: &usize, &j: &usize| wealth[j].total_cmp(&wealth[i]).then(i.cmp(&j));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_rank);
    }
    for &i in &idx[..k.min(idx.len())] {
        mask[i] = true;
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenureSummary {
    /// `(tenure_rounds, count)` in increasing tenure.
    pub histogram: Vec<(u64, u64)>,
    pub runs: u64,
    /// Runs still open at the last snapshot.
    pub censored: u64,
    pub mean: Option<f64>,
    pub max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculationReport {
    pub elite_quantile: f64,
    pub elite_size: usize,
    pub snapshots: Vec<u64>,
    /// `jaccard[a][b]` between the elite sets at `snapshots[a]` and `snapshots[b]`.
    pub jaccard: Vec<Vec<f64>>,
    /// Share of the elite at `snapshots[a]` absent at `snapshots[b]`.
    pub fraction_replaced: Vec<Vec<f64>>,
    /// Mean over agents of `(1/n) log(X_n / X_0)` at the last snapshot.
    pub mean_log_growth: Option<f64>,
    pub mean_log_growth_se: Option<f64>,
    /// Ruined share at the last snapshot.
    pub ruin_fraction: f64,
    pub tenure: TenureSummary,
}

impl CirculationReport {
    /// Upper-triangle rows `(round_a, round_b, jaccard, fraction_replaced)`.
    pub fn turnover_rows(&self) -> Vec<(u64, u64, f64, f64)> {
        let s = &self.snapshots;
        let mut rows = Vec::new();
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                rows.push((s[a], s[b], self.jaccard[a][b], self.fraction_replaced[a][b]));
            }
        }
        rows
    }

    pub fn replaced_between(&self, round_a: u64, round_b: u64) -> Option<f64> {
        let a = self.snapshots.iter().position(|&r| r == round_a)?;
        let b = self.snapshots.iter().position(|&r| r == round_b)?;
        Some(self.fraction_replaced[a][b])
    }
}

/// Elite turnover between the recorded populations at `rounds`.
///
/// The elite at a round is the top `ceil(q N)` agents by wealth. Tenure is
/// measured on the snapshot sequence: a run of membership from snapshot `s_a`
/// through `s_b` counts `s_b - s_a + 1` rounds.
pub fn circulation(
    traj: &Trajectory,
    elite_quantile: f64,
    rounds: &[u64],
) -> Result<CirculationReport> {
    if !(elite_quantile > 0.0 && elite_quantile <= 1.0) {
        return Err(Error::Domain(format!(
            "elite quantile must lie in (0, 1], got {elite_quantile}"
        )));
    }
    let mut rounds = rounds.to_vec();
    rounds.sort_unstable();
    rounds.dedup();
    let pops = rounds
        .iter()
        .map(|&r| traj.at(r))
        .collect::<Result<Vec<_>>>()?;
    let n = traj.spec.n_agents;
    let k = ((elite_quantile * n as f64).ceil() as usize).min(n);
    if k < MIN_ELITE {
        return Err(Error::InsufficientElite {
            size: k,
            required: MIN_ELITE,
        });
    }

    let masks: Vec<Vec<bool>> = pops.par_iter().map(|p| elite_mask(&p.wealth, k)).collect();
    let s = masks.len();
    let mut jaccard = vec![vec![1.0; s]; s];
    let mut replaced = vec![vec![0.0; s]; s];
    for a in 0..s {
        for b in a + 1..s {
            let both = masks[a]
                .iter()
                .zip(&masks[b])
                .filter(|(x, y)| **x && **y)
                .count();
            let j = both as f64 / (2 * k - both) as f64;
            let r = (k - both) as f64 / k as f64;
            jaccard[a][b] = j;
            jaccard[b][a] = j;
            replaced[a][b] = r;
            replaced[b][a] = r;
        }
    }

    let last = pops.last().expect("rounds is nonempty after check");
    let (mean_log_growth, mean_log_growth_se) = log_growth(last, traj.spec.initial_wealth);

    Ok(CirculationReport {
        elite_quantile,
        elite_size: k,
        snapshots: rounds.clone(),
        jaccard,
        fraction_replaced: replaced,
        mean_log_growth,
        mean_log_growth_se,
        ruin_fraction: last.ruined_count() as f64 / n as f64,
        tenure: tenure(&masks, &rounds),
    })
}

fn log_growth(pop: &Population, x0: f64) -> (Option<f64>, Option<f64>) {
    if pop.round == 0 {
        return (None, None);
    }
    let n = pop.round as f64;
    let samples: Vec<f64> = pop.wealth.iter().map(|w| (w / x0).ln() / n).collect();
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let se = if samples.len() > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Some((var / m).sqrt())
    } else {
        None
    };
    (Some(mean), se)
}

fn tenure(masks: &[Vec<bool>], rounds: &[u64]) -> TenureSummary {
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    let mut censored = 0;
    let n = masks.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut start: Option<usize> = None;
        for (s, mask) in masks.iter().enumerate() {
            match (mask[i], start) {
                (true, None) => start = Some(s),
                (false, Some(a)) => {
                    *hist.entry(rounds[s - 1] - rounds[a] + 1).or_default() += 1;
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(a) = start {
            *hist
                .entry(rounds[masks.len() - 1] - rounds[a] + 1)
                .or_default() += 1;
            censored += 1;
        }
    }
    let runs: u64 = hist.values().sum();
    let total: u64 = hist.iter().map(|(t, c)| t * c).sum();
    TenureSummary {
        mean: (runs > 0).then(|| total as f64 / runs as f64),
        max: hist.keys().next_back().copied(),
        histogram: hist.into_iter().collect(),
        runs,
        censored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinRow {
    pub round: u64,
    pub ruin_fraction: f64,
    /// Cumulative rebirths, always 0 without rebirth.
    pub rebirths: u64,
}

/// Ruined share at every recorded snapshot, using the run's own floor.
pub fn ruin_stats(traj: &Trajectory) -> Vec<RuinRow> {
    let n = traj.spec.n_agents as f64;
    traj.snapshots
        .iter()
        .zip(&traj.rebirths)
        .map(|(p, &rebirths)| RuinRow {
            round: p.round,
            ruin_fraction: p.ruined_count() as f64 / n,
            rebirths,
        })
        .collect()
}

/// Power-law fit to the cross-section of live agents.
///
/// Live agents share the weight `kappa^-round`, which cancels in the fit, so
/// the histogram uses unit weights.
pub fn empirical_tail(pop: &Population, window_quantiles: (f64, f64)) -> Result<TailFit> {
    let live: Vec<f64> = pop
        .wealth
        .iter()
        .zip(&pop.ruined)
        .filter(|(_, r)| !**r)
        .map(|(w, _)| *w)
        .collect();
    if live.len() < MIN_TAIL_AGENTS {
        return Err(Error::TooFewAgents {
            found: live.len(),
            required: MIN_TAIL_AGENTS,
        });
    }
    let (lo, hi) = live
        .iter()
        .map(|w| w.ln())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s), hi.max(s))
        });
    let n = (((hi - lo) / TAIL_BIN).ceil() as usize + 3).max(crate::density::MIN_NODES);
    let grid = LogGrid {
        log_min: lo - TAIL_BIN,
        log_max: lo - TAIL_BIN + (n - 1) as f64 * TAIL_BIN,
        n,
    };
    let (hist, _) = GridDensity::histogram(&grid, live.iter().map(|&w| (w, 1.0)))?;
    fit_tail(&hist, window_quantiles)
}
