//! Simulated annealing over point exchanges.
//!
//! Each sweep proposes one whole-plot exchange, one interchange of subplot
//! points between two whole plots, and one subplot exchange per whole plot.
//! Proposals are accepted by the Metropolis rule on the raw loss, and the
//! temperature is multiplied by `f` after every `N_T` sweeps, `M0` times in
//! total. The best design seen over all restarts is returned together with
//! the final design of the winning restart.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrasts::FactorLayout;
use crate::criterion::{evaluate, loss, state_for, CriterionState, LossReport};
use crate::design::{SplitPlotDesign, WholePlot};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::updates::{apply_delta, propose, Move, MoveKind, DEFAULT_REFRESH_INTERVAL, DRIFT_THRESHOLD};

/// Attempts per proposal before a sweep step is skipped.
pub const PROPOSAL_RETRIES: usize = 20;

/// Attempts at drawing a feasible, nonsingular initial design.
pub const INITIAL_RETRIES: usize = 1000;

/// Accepted moves between checks of the inverse drift.
const DRIFT_CHECK_INTERVAL: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "M0")]
    pub m0: usize,
    #[serde(rename = "N_T")]
    pub n_t: usize,
    pub a_b: usize,
    /// Largest number of subplots changed per plot, one entry per plot.
    pub e_max: Vec<usize>,
    pub f: f64,
    pub seed: u64,
    pub restarts: usize,
    pub refresh_interval: usize,
}

impl AnnealParams {
    /// Settings used for both worked examples: `T0 = .001, M0 = 50, N_T = 100, f = .8`.
    pub fn standard(a_b: usize, e_max: Vec<usize>) -> Self {
        AnnealParams {
            t0: 0.001,
            m0: 50,
            n_t: 100,
            a_b,
            e_max,
            f: 0.8,
            seed: 0,
            restarts: 1,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
        }
    }

    pub fn validate(&self, sizes: &[usize]) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::param("T0", "must be finite and > 0"));
        }
        if self.m0 < 1 {
            return Err(Error::param("M0", "must be at least 1"));
        }
        if self.a_b < 1 || self.a_b > sizes.len() {
            return Err(Error::param("a_b", format!("must lie in [1, b = {}]", sizes.len())));
        }
        if self.e_max.len() != sizes.len() {
            return Err(Error::param(
                "e_max",
                format!("needs one entry per whole plot ({}), got {}", sizes.len(), self.e_max.len()),
            ));
        }
        for (i, (&e, &n)) in self.e_max.iter().zip(sizes).enumerate() {
            if e < 1 || e > n {
                return Err(Error::param(
                    "e_max",
                    format!("entry {} is {e}, must lie in [1, n_{} = {n}]", i + 1, i + 1),
                ));
            }
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(Error::param("f", "must lie in (0, 1)"));
        }
        if self.restarts < 1 {
            return Err(Error::param("restarts", "must be at least 1"));
        }
        if self.refresh_interval < 1 {
            return Err(Error::param("refresh_interval", "must be at least 1"));
        }
        Ok(())
    }
}

/// Candidate whole-plot (`A`) and subplot (`E`) level combinations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSets {
    pub whole: Vec<Vec<usize>>,
    pub sub: Vec<Vec<usize>>,
}

impl CandidateSets {
    pub fn new(layout: &FactorLayout) -> Self {
        CandidateSets {
            whole: layout.combinations(layout.whole_plot_factors()),
            sub: layout.combinations(layout.subplot_factors()),
        }
    }

    /// `E_i`: subplot candidates not currently in plot `i`.
    pub fn free_subplots<'a>(&'a self, plot: &'a WholePlot) -> impl Iterator<Item = &'a Vec<usize>> + 'a {
        self.sub.iter().filter(move |t| !plot.subplots.contains(t))
    }
}

/// Draws `b` whole plots with the given sizes so that all runs are distinct.
pub fn initial_design<R: Rng + ?Sized>(
    layout: &FactorLayout,
    sizes: &[usize],
    rng: &mut R,
) -> Result<SplitPlotDesign> {
    let cands = CandidateSets::new(layout);
    check_feasible(layout, sizes)?;
    'attempt: for _ in 0..INITIAL_RETRIES {
        let mut plots: Vec<WholePlot> = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let whole = cands.whole[rng.random_range(0..cands.whole.len())].clone();
            let taken: Vec<&Vec<usize>> = plots
                .iter()
                .filter(|p| p.whole == whole)
                .flat_map(|p| p.subplots.iter())
                .collect();
            let free: Vec<&Vec<usize>> = cands.sub.iter().filter(|t| !taken.contains(t)).collect();
            if free.len() < n {
                continue 'attempt;
            }
            let subplots = sample(rng, free.len(), n).into_iter().map(|j| free[j].clone()).collect();
            plots.push(WholePlot { whole, subplots });
        }
        return Ok(SplitPlotDesign::new_unchecked(plots));
    }
    Err(Error::Infeasible(format!(
        "could not place {} distinct runs into plots of sizes {sizes:?} after {INITIAL_RETRIES} attempts",
        sizes.iter().sum::<usize>()
    )))
}

fn check_feasible(layout: &FactorLayout, sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Infeasible("need at least one whole plot".into()));
    }
    let e = layout.combinations(layout.subplot_factors()).len();
    let n: usize = sizes.iter().sum();
    if let Some((i, &ni)) = sizes.iter().enumerate().find(|(_, &ni)| ni == 0 || ni > e) {
        return Err(Error::Infeasible(format!(
            "plot {} has n_i = {ni}, must lie in [1, |E| = {e}]",
            i + 1
        )));
    }
    if n > layout.run_count() {
        return Err(Error::Infeasible(format!(
            "n = {n} exceeds the N = {} runs of the full factorial",
            layout.run_count()
        )));
    }
    Ok(())
}

/// Metropolis rule: downhill always, uphill with probability `exp(-(new - old) / T)`.
pub fn accept<R: Rng + ?Sized>(loss_new: f64, loss_old: f64, temperature: f64, rng: &mut R) -> bool {
    if loss_new < loss_old {
        return true;
    }
    let p = (-(loss_new - loss_old) / temperature).exp();
    rng.random::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub temperature_step: usize,
    pub iteration: usize,
    pub current_loss_root: f64,
    pub best_loss_root: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub proposals: u64,
    pub accepted: u64,
    pub rejected_invalid: u64,
    pub recomputes: u64,
}

/// Result of one restart.
#[derive(Debug, Clone)]
pub struct RestartResult {
    pub restart: usize,
    pub best: SplitPlotDesign,
    pub best_log_loss: f64,
    pub last: SplitPlotDesign,
    pub last_state: CriterionState,
    pub trace: Vec<TraceRow>,
    pub stats: SearchStats,
    /// Raw-loss increases proposed during the first temperature stage.
    pub uphill_steps: Vec<f64>,
}

/// Result of a whole search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: SplitPlotDesign,
    pub report: LossReport,
    /// Final design of the restart that produced `best`.
    pub last: SplitPlotDesign,
    pub last_report: LossReport,
    pub best_restart: usize,
    /// Best log-loss of every restart, in restart order.
    pub restart_log_losses: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub stats: SearchStats,
    /// Median raw-loss increase proposed in the first temperature stage of
    /// restart 0, used to judge whether `T0` suits the problem scale.
    pub median_uphill: Option<f64>,
}

impl SearchOutcome {
    /// True when `T0` exceeds the median initial uphill step a thousandfold,
    /// which makes the early stages a random walk.
    pub fn temperature_too_high(&self, t0: f64) -> bool {
        matches!(self.median_uphill, Some(m) if m > 0.0 && t0 > 1e3 * m)
    }
}

struct Chain<'a> {
    problem: &'a Problem,
    cands: CandidateSets,
    design: SplitPlotDesign,
    state: CriterionState,
    log_loss: f64,
    since_refresh: usize,
    refresh_interval: usize,
    stats: SearchStats,
}

impl<'a> Chain<'a> {
    fn log_loss_of(&self, state: &CriterionState) -> Option<f64> {
        loss(state, self.problem.big_n(), self.problem.alpha(), self.problem.var())
            .ok()
            .map(|r| r.log_loss)
            .filter(|v| v.is_finite())
    }

    /// Evaluates a move. Returns `None` when the move is invalid or leads to
    /// a singular design.
    fn evaluate(&mut self, mv: &Move) -> Option<(SplitPlotDesign, CriterionState, f64)> {
        let (after, delta) = propose(self.problem, &self.design, &self.state, mv).ok()?;
        let state = match apply_delta(&self.state, &delta, self.problem.var()) {
            Ok(s) => s,
            Err(_) => {
                self.stats.recomputes += 1;
                state_for(self.problem, &after).ok()?
            }
        };
        let ll = self.log_loss_of(&state)?;
        Some((after, state, ll))
    }

    fn commit(&mut self, design: SplitPlotDesign, state: CriterionState, log_loss: f64) {
        self.design = design;
        self.state = state;
        self.log_loss = log_loss;
        self.since_refresh += 1;
        debug_assert!(self.design.check_unique().is_ok());
        let due = self.since_refresh >= self.refresh_interval
            || (self.since_refresh % DRIFT_CHECK_INTERVAL == 0 && self.state.inverse_drift() > DRIFT_THRESHOLD);
        if due {
            if let Ok(s) = state_for(self.problem, &self.design) {
                self.stats.recomputes += 1;
                if let Some(ll) = self.log_loss_of(&s) {
                    self.state = s;
                    self.log_loss = ll;
                }
            }
            self.since_refresh = 0;
        }
    }

    /// Draws up to [`PROPOSAL_RETRIES`] moves until one is valid, then
    /// applies the Metropolis rule. Returns the raw uphill step if any.
    fn step<R: Rng>(
        &mut self,
        rng: &mut R,
        temperature: f64,
        mut draw: impl FnMut(&Self, &mut R) -> Option<Move>,
    ) -> Option<f64> {
        for _ in 0..PROPOSAL_RETRIES {
            let Some(mv) = draw(self, rng) else {
                return None;
            };
            self.stats.proposals += 1;
            let Some((after, state, ll)) = self.evaluate(&mv) else {
                self.stats.rejected_invalid += 1;
                continue;
            };
            let new = ll.exp();
            let old = self.log_loss.exp();
            // ties up to rounding are not uphill steps
            let uphill = (new - old > 1e-12 * old).then_some(new - old);
            if accept(new, old, temperature, rng) {
                self.stats.accepted += 1;
                self.commit(after, state, ll);
            }
            return uphill;
        }
        None
    }
}

fn draw_wp_exchange<R: Rng>(design: &SplitPlotDesign, cands: &CandidateSets, rng: &mut R, a_b: usize) -> Option<Move> {
    let b = design.b();
    let a = rng.random_range(1..=a_b.min(b));
    let plots = sample(rng, b, a).into_vec();
    let wholes = (0..a)
        .map(|_| cands.whole[rng.random_range(0..cands.whole.len())].clone())
        .collect();
    Some(Move::WholePlotExchange { plots, wholes })
}

fn draw_interchange<R: Rng>(design: &SplitPlotDesign, rng: &mut R) -> Option<Move> {
    let b = design.b();
    if b < 2 {
        return None;
    }
    let pair = sample(rng, b, 2);
    let (i, l) = (pair.index(0), pair.index(1));
    let plots = design.plots();
    Some(Move::Interchange {
        plot_a: i,
        sub_a: rng.random_range(0..plots[i].subplots.len()),
        plot_b: l,
        sub_b: rng.random_range(0..plots[l].subplots.len()),
    })
}

fn draw_sp_exchange<R: Rng>(
    design: &SplitPlotDesign,
    cands: &CandidateSets,
    rng: &mut R,
    plot: usize,
    e_max: usize,
) -> Option<Move> {
    let p = &design.plots()[plot];
    let free: Vec<&Vec<usize>> = cands.free_subplots(p).collect();
    if free.is_empty() {
        return None;
    }
    let e = rng.random_range(1..=e_max).min(free.len()).min(p.subplots.len());
    let subplots = sample(rng, p.subplots.len(), e).into_vec();
    let replacements = sample(rng, free.len(), e).into_iter().map(|j| free[j].clone()).collect();
    Some(Move::SubplotExchange {
        plot,
        subplots,
        replacements,
    })
}

/// Draws one random move of the given kind, as the search would propose it.
/// Subplot exchanges pick their plot uniformly. Returns `None` when no move
/// of that kind exists (an interchange with one plot, or a plot that
/// already holds every subplot point).
pub fn random_move<R: Rng>(
    kind: MoveKind,
    design: &SplitPlotDesign,
    cands: &CandidateSets,
    a_b: usize,
    e_max: &[usize],
    rng: &mut R,
) -> Option<Move> {
    match kind {
        MoveKind::WholePlotExchange => draw_wp_exchange(design, cands, rng, a_b),
        MoveKind::Interchange => draw_interchange(design, rng),
        MoveKind::SubplotExchange => {
            let plot = rng.random_range(0..design.b());
            draw_sp_exchange(design, cands, rng, plot, e_max[plot])
        }
    }
}

/// Random design with a nonsingular information matrix and finite loss.
pub fn random_nonsingular_design<R: Rng>(
    problem: &Problem,
    sizes: &[usize],
    rng: &mut R,
) -> Result<SplitPlotDesign> {
    start(problem, sizes, rng).map(|(d, _, _)| d)
}

/// Nonsingular random starting design.
fn start<R: Rng>(problem: &Problem, sizes: &[usize], rng: &mut R) -> Result<(SplitPlotDesign, CriterionState, f64)> {
    let mut last_err = None;
    for _ in 0..INITIAL_RETRIES {
        let d = initial_design(problem.layout(), sizes, rng)?;
        match state_for(problem, &d).and_then(|s| {
            let r = loss(&s, problem.big_n(), problem.alpha(), problem.var())?;
            Ok((s, r.log_loss))
        }) {
            Ok((s, ll)) => return Ok((d, s, ll)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Infeasible(format!(
        "no nonsingular initial design found in {INITIAL_RETRIES} draws ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Runs one annealing chain.
pub fn run_restart(
    problem: &Problem,
    sizes: &[usize],
    params: &AnnealParams,
    restart: usize,
) -> Result<RestartResult> {
    params.validate(sizes)?;
    let mut rng = restart_rng(params.seed, restart);
    let (design, state, log_loss) = start(problem, sizes, &mut rng)?;
    let k = (problem.p() + 1) as f64;
    let mut chain = Chain {
        problem,
        cands: CandidateSets::new(problem.layout()),
        design,
        state,
        log_loss,
        since_refresh: 0,
        refresh_interval: params.refresh_interval,
        stats: SearchStats::default(),
    };
    let mut best = chain.design.clone();
    let mut best_ll = chain.log_loss;
    let mut trace = Vec::with_capacity(params.m0 * params.n_t);
    let mut uphill_steps = Vec::new();
    let mut temperature = params.t0;
    let b = sizes.len();

    for stage in 1..=params.m0 {
        for iteration in 0..params.n_t {
            let mut ups = Vec::with_capacity(b + 2);
            ups.extend(chain.step(&mut rng, temperature, |c, r| draw_wp_exchange(&c.design, &c.cands, r, params.a_b)));
            track_best(&chain, &mut best, &mut best_ll);
            ups.extend(chain.step(&mut rng, temperature, |c, r| draw_interchange(&c.design, r)));
            track_best(&chain, &mut best, &mut best_ll);
            for plot in 0..b {
                let e = params.e_max[plot];
                ups.extend(chain.step(&mut rng, temperature, |c, r| draw_sp_exchange(&c.design, &c.cands, r, plot, e)));
                track_best(&chain, &mut best, &mut best_ll);
            }
            if stage == 1 {
                uphill_steps.extend(ups);
            }
            trace.push(TraceRow {
                temperature_step: stage,
                iteration: iteration + 1,
                current_loss_root: (chain.log_loss / k).exp(),
                best_loss_root: (best_ll / k).exp(),
            });
        }
        temperature *= params.f;
    }

    Ok(RestartResult {
        restart,
        best,
        best_log_loss: best_ll,
        last: chain.design,
        last_state: chain.state,
        trace,
        stats: chain.stats,
        uphill_steps,
    })
}

fn track_best(chain: &Chain, best: &mut SplitPlotDesign, best_ll: &mut f64) {
    // strict improvement keeps the first-found design on ties
    if chain.log_loss < *best_ll {
        *best_ll = chain.log_loss;
        best.clone_from(&chain.design);
    }
}

/// Runs `params.restarts` independent chains (in parallel when the
/// `parallel` feature is enabled and `threads > 1`) and keeps the best.
pub fn search(
    problem: &Problem,
    sizes: &[usize],
    params: &AnnealParams,
    threads: Option<usize>,
) -> Result<SearchOutcome> {
    params.validate(sizes)?;
    check_feasible(problem.layout(), sizes)?;
    let n: usize = sizes.iter().sum();
    if n < problem.p() + 1 {
        return Err(Error::Infeasible(format!(
            "n = {n} runs cannot estimate {} parameters",
            problem.p() + 1
        )));
    }
    let results = run_all(problem, sizes, params, threads)?;
    merge(problem, results)
}

#[cfg(feature = "parallel")]
fn run_all(
    problem: &Problem,
    sizes: &[usize],
    params: &AnnealParams,
    threads: Option<usize>,
) -> Result<Vec<RestartResult>> {
    use rayon::prelude::*;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads <= 1 || params.restarts == 1 {
        return (0..params.restarts).map(|r| run_restart(problem, sizes, params, r)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    pool.install(|| {
        (0..params.restarts)
            .into_par_iter()
            .map(|r| run_restart(problem, sizes, params, r))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn run_all(
    problem: &Problem,
    sizes: &[usize],
    params: &AnnealParams,
    _threads: Option<usize>,
) -> Result<Vec<RestartResult>> {
    (0..params.restarts).map(|r| run_restart(problem, sizes, params, r)).collect()
}

fn merge(problem: &Problem, results: Vec<RestartResult>) -> Result<SearchOutcome> {
    let k = (problem.p() + 1) as f64;
    // min by loss, ties to the lower restart index
    let winner = results
        .iter()
        .enumerate()
        .fold(0, |w, (i, r)| if r.best_log_loss < results[w].best_log_loss { i } else { w });
    let mut trace = Vec::with_capacity(results.iter().map(|r| r.trace.len()).sum());
    let mut running = f64::INFINITY;
    let mut stats = SearchStats::default();
    for r in &results {
        for row in &r.trace {
            running = running.min(row.best_loss_root);
            trace.push(TraceRow {
                best_loss_root: running,
                ..*row
            });
        }
        stats.proposals += r.stats.proposals;
        stats.accepted += r.stats.accepted;
        stats.rejected_invalid += r.stats.rejected_invalid;
        stats.recomputes += r.stats.recomputes;
    }
    let median_uphill = results.first().and_then(|r| median(&r.uphill_steps));
    let w = &results[winner];
    let report = evaluate(problem, &w.best)?;
    let last_report = evaluate(problem, &w.last)?;
    debug_assert!(((report.log_loss - w.best_log_loss) / k).abs() < 1e-6);
    Ok(SearchOutcome {
        best: w.best.clone(),
        report,
        last: w.last.clone(),
        last_report,
        best_restart: w.restart,
        restart_log_losses: results.iter().map(|r| r.best_log_loss).collect(),
        trace,
        stats,
        median_uphill,
    })
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}
