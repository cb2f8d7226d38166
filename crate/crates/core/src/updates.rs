//! Rank-update maintenance of the criterion state under design moves.
//!
//! Every move removes some rows of `X1`/`G1`, adds others, and changes the
//! row sums of the plots it touches. With
//!
//! ```text
//! P1 = (removed f rows; added f rows; old plot sums; new plot sums)
//! D1 = sigma^-2 diag(-1.., +1.., +c1.., -c1..)     c1 = d / (1 + d n_i)
//! D2 = sigma^-4 diag(-1.., +1.., +c2.., -c2..)     c2 = (2d + d^2 n_i) / (1 + d n_i)^2
//! ```
//!
//! the information matrices move as `M1* = M1 + P1' D1 P1`,
//! `M2* = M2 + P2' D1 P2`, `M3* = M3 + P2' D2 P2`. Determinant and inverses
//! follow from
//!
//! ```text
//! |M + P'DP|      = |M| |D| |D^-1 + P M^-1 P'|
//! (M + P'DP)^-1   = M^-1 - M^-1 P' (D^-1 + P M^-1 P')^-1 P M^-1
//! ```
//!
//! The whole-plot exchange, interchange and subplot exchange moves all
//! produce this one delta shape. For an interchange between plots with
//! different whole-plot levels the moved rows change as well, so the rows
//! are carried alongside the plot sums; for plots sharing whole-plot levels
//! they cancel and are omitted.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::criterion::{state_for, CriterionState};
use crate::design::{SplitPlotDesign, VarianceSpec};
use crate::error::Result;
use crate::problem::Problem;

/// Accepted moves between periodic full recomputations.
pub const DEFAULT_REFRESH_INTERVAL: usize = 64;

/// Drift of `M2 M2^{-1}` from the identity that forces a refresh.
pub const DRIFT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Move {
    /// Replace the whole-plot levels of `plots[k]` by `wholes[k]`.
    WholePlotExchange {
        plots: Vec<usize>,
        wholes: Vec<Vec<usize>>,
    },
    /// Swap subplot `sub_a` of `plot_a` with subplot `sub_b` of `plot_b`.
    Interchange {
        plot_a: usize,
        sub_a: usize,
        plot_b: usize,
        sub_b: usize,
    },
    /// Replace subplots `subplots[k]` of `plot` by `replacements[k]`.
    SubplotExchange {
        plot: usize,
        subplots: Vec<usize>,
        replacements: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    WholePlotExchange,
    Interchange,
    SubplotExchange,
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoveKind::WholePlotExchange => "wp_exchange",
            MoveKind::Interchange => "interchange",
            MoveKind::SubplotExchange => "sp_exchange",
        })
    }
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::WholePlotExchange { .. } => MoveKind::WholePlotExchange,
            Move::Interchange { .. } => MoveKind::Interchange,
            Move::SubplotExchange { .. } => MoveKind::SubplotExchange,
        }
    }

    /// Applies the move in place without checking run uniqueness.
    pub fn apply(&self, design: &mut SplitPlotDesign) {
        let plots = design.plots_mut();
        match self {
            Move::WholePlotExchange { plots: idx, wholes } => {
                for (&i, w) in idx.iter().zip(wholes) {
                    plots[i].whole.clone_from(w);
                }
            }
            &Move::Interchange {
                plot_a,
                sub_a,
                plot_b,
                sub_b,
            } => {
                let ta = std::mem::take(&mut plots[plot_a].subplots[sub_a]);
                let tb = std::mem::replace(&mut plots[plot_b].subplots[sub_b], ta);
                plots[plot_a].subplots[sub_a] = tb;
            }
            Move::SubplotExchange {
                plot,
                subplots,
                replacements,
            } => {
                for (&j, t) in subplots.iter().zip(replacements) {
                    plots[*plot].subplots[j].clone_from(t);
                }
            }
        }
    }

    /// The move that undoes `self` when applied to the result of `self` on `before`.
    pub fn inverse(&self, before: &SplitPlotDesign) -> Move {
        let plots = before.plots();
        match self {
            Move::WholePlotExchange { plots: idx, .. } => Move::WholePlotExchange {
                plots: idx.clone(),
                wholes: idx.iter().map(|&i| plots[i].whole.clone()).collect(),
            },
            m @ Move::Interchange { .. } => m.clone(),
            Move::SubplotExchange { plot, subplots, .. } => Move::SubplotExchange {
                plot: *plot,
                subplots: subplots.clone(),
                replacements: subplots.iter().map(|&j| plots[*plot].subplots[j].clone()).collect(),
            },
        }
    }
}

/// The proposed design violates run uniqueness (or is otherwise malformed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoveRejected(pub String);

/// The rank-update core matrix is numerically singular; recompute instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateDegenerate;

/// A row of `X1` together with the matching row of `G1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowPair {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
}

/// Old and new row sums of one affected plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSumChange {
    pub plot: usize,
    pub old_x: DVector<f64>,
    pub new_x: DVector<f64>,
    pub old_g: DVector<f64>,
    pub new_g: DVector<f64>,
    pub n_i: usize,
    /// `d / (1 + d n_i)`.
    pub c1: f64,
    /// `(2d + d^2 n_i) / (1 + d n_i)^2`.
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveDelta {
    pub removed: Vec<RowPair>,
    pub added: Vec<RowPair>,
    pub plot_changes: Vec<PlotSumChange>,
}

/// `P1`, `D1`, `P2`, `D2` stacked as matrices with one update row each.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub p1: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub p2: DMatrix<f64>,
    pub d2: DVector<f64>,
}

impl MoveDelta {
    /// Stacks the delta into `(P1, D1, P2, D2)`. Plot-sum rows are dropped
    /// when `d = 0`, where their coefficients vanish.
    pub fn assemble(&self, var: &VarianceSpec) -> Assembled {
        let s2 = var.sigma_eps_sq;
        let s4 = s2 * s2;
        let with_sums = self.plot_changes.iter().any(|c| c.c1 != 0.0);
        let k = self.removed.len()
            + self.added.len()
            + if with_sums { 2 * self.plot_changes.len() } else { 0 };
        let cols = self
            .removed
            .first()
            .or(self.added.first())
            .map(|r| r.f.len())
            .or_else(|| self.plot_changes.first().map(|c| c.old_x.len()))
            .unwrap_or(0);
        let mut p1 = DMatrix::zeros(k, cols);
        let mut p2 = DMatrix::zeros(k, cols);
        let mut d1 = DVector::zeros(k);
        let mut d2 = DVector::zeros(k);
        let mut r = 0;
        let mut push = |f: &DVector<f64>, g: &DVector<f64>, a: f64, b: f64| {
            p1.row_mut(r).copy_from(&f.transpose());
            p2.row_mut(r).copy_from(&g.transpose());
            d1[r] = a;
            d2[r] = b;
            r += 1;
        };
        for row in &self.removed {
            push(&row.f, &row.g, -1.0 / s2, -1.0 / s4);
        }
        for row in &self.added {
            push(&row.f, &row.g, 1.0 / s2, 1.0 / s4);
        }
        if with_sums {
            for c in &self.plot_changes {
                push(&c.old_x, &c.old_g, c.c1 / s2, c.c2 / s4);
            }
            for c in &self.plot_changes {
                push(&c.new_x, &c.new_g, -c.c1 / s2, -c.c2 / s4);
            }
        }
        Assembled { p1, d1, p2, d2 }
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.added.is_empty() && self.plot_changes.is_empty()
    }
}

fn row_pair(problem: &Problem, whole: &[usize], sub: &[usize]) -> RowPair {
    let f = problem.f_row(whole, sub);
    let g = problem.g_of(&f);
    RowPair { f, g }
}

fn plot_change(
    problem: &Problem,
    state: &CriterionState,
    after: &SplitPlotDesign,
    plot: usize,
) -> PlotSumChange {
    let p = &after.plots()[plot];
    let mut new_x = DVector::zeros(problem.p() + 1);
    for t in &p.subplots {
        new_x += problem.f_row(&p.whole, t);
    }
    let new_g = problem.g_of(&new_x);
    let n_i = p.subplots.len();
    PlotSumChange {
        plot,
        old_x: state.x_sums[plot].clone(),
        new_x,
        old_g: state.g_sums[plot].clone(),
        new_g,
        n_i,
        c1: problem.var().inv_coef(n_i),
        c2: problem.var().inv_sq_coef(n_i),
    }
}

/// Applies `mv` to a copy of `design`, checks run uniqueness, and returns the
/// new design with its delta against `state`.
pub fn propose(
    problem: &Problem,
    design: &SplitPlotDesign,
    state: &CriterionState,
    mv: &Move,
) -> std::result::Result<(SplitPlotDesign, MoveDelta), MoveRejected> {
    check_indices(design, mv)?;
    let mut after = design.clone();
    mv.apply(&mut after);
    after
        .validate(problem.layout())
        .map_err(|e| MoveRejected(e.to_string()))?;
    let before = design.plots();
    let delta = match mv {
        Move::WholePlotExchange { plots, .. } => {
            let mut removed = Vec::new();
            let mut added = Vec::new();
            for &i in plots {
                for t in &before[i].subplots {
                    removed.push(row_pair(problem, &before[i].whole, t));
                }
            }
            for &i in plots {
                let p = &after.plots()[i];
                for t in &p.subplots {
                    added.push(row_pair(problem, &p.whole, t));
                }
            }
            MoveDelta {
                removed,
                added,
                plot_changes: plots.iter().map(|&i| plot_change(problem, state, &after, i)).collect(),
            }
        }
        &Move::Interchange {
            plot_a,
            sub_a,
            plot_b,
            sub_b,
        } => {
            let (wa, wb) = (&before[plot_a].whole, &before[plot_b].whole);
            let (ta, tb) = (&before[plot_a].subplots[sub_a], &before[plot_b].subplots[sub_b]);
            let (removed, added) = if wa == wb {
                (vec![], vec![])
            } else {
                (
                    vec![row_pair(problem, wa, ta), row_pair(problem, wb, tb)],
                    vec![row_pair(problem, wa, tb), row_pair(problem, wb, ta)],
                )
            };
            MoveDelta {
                removed,
                added,
                plot_changes: vec![
                    plot_change(problem, state, &after, plot_a),
                    plot_change(problem, state, &after, plot_b),
                ],
            }
        }
        Move::SubplotExchange {
            plot,
            subplots,
            replacements,
        } => {
            let w = &before[*plot].whole;
            MoveDelta {
                removed: subplots
                    .iter()
                    .map(|&j| row_pair(problem, w, &before[*plot].subplots[j]))
                    .collect(),
                added: replacements.iter().map(|t| row_pair(problem, w, t)).collect(),
                plot_changes: vec![plot_change(problem, state, &after, *plot)],
            }
        }
    };
    Ok((after, delta))
}

fn check_indices(design: &SplitPlotDesign, mv: &Move) -> std::result::Result<(), MoveRejected> {
    let b = design.b();
    let size = |i: usize| design.plots()[i].subplots.len();
    let ok = match mv {
        Move::WholePlotExchange { plots, wholes } => {
            plots.len() == wholes.len()
                && plots.iter().all(|&i| i < b)
                && (1..plots.len()).all(|k| !plots[..k].contains(&plots[k]))
        }
        &Move::Interchange {
            plot_a,
            sub_a,
            plot_b,
            sub_b,
        } => plot_a != plot_b && plot_a < b && plot_b < b && sub_a < size(plot_a) && sub_b < size(plot_b),
        Move::SubplotExchange {
            plot,
            subplots,
            replacements,
        } => {
            *plot < b
                && subplots.len() == replacements.len()
                && subplots.iter().all(|&j| j < size(*plot))
                && (1..subplots.len()).all(|k| !subplots[..k].contains(&subplots[k]))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(MoveRejected(format!("move indices out of range: {mv:?}")))
    }
}

/// Whole-plot exchange of `plots` to `wholes`.
pub fn delta_wp_exchange(
    problem: &Problem,
    design: &SplitPlotDesign,
    state: &CriterionState,
    plots: &[usize],
    wholes: &[Vec<usize>],
) -> std::result::Result<MoveDelta, MoveRejected> {
    let mv = Move::WholePlotExchange {
        plots: plots.to_vec(),
        wholes: wholes.to_vec(),
    };
    propose(problem, design, state, &mv).map(|(_, d)| d)
}

/// Swaps subplot `j` of plot `i` with subplot `k` of plot `l`.
pub fn delta_interchange(
    problem: &Problem,
    design: &SplitPlotDesign,
    state: &CriterionState,
    (i, j): (usize, usize),
    (l, k): (usize, usize),
) -> std::result::Result<MoveDelta, MoveRejected> {
    let mv = Move::Interchange {
        plot_a: i,
        sub_a: j,
        plot_b: l,
        sub_b: k,
    };
    propose(problem, design, state, &mv).map(|(_, d)| d)
}

/// Replaces subplots `subplots` of `plot` by `replacements`.
pub fn delta_sp_exchange(
    problem: &Problem,
    design: &SplitPlotDesign,
    state: &CriterionState,
    plot: usize,
    subplots: &[usize],
    replacements: &[Vec<usize>],
) -> std::result::Result<MoveDelta, MoveRejected> {
    let mv = Move::SubplotExchange {
        plot,
        subplots: subplots.to_vec(),
        replacements: replacements.to_vec(),
    };
    propose(problem, design, state, &mv).map(|(_, d)| d)
}

/// `log|det|` and sign of a square matrix by LU; `None` if numerically singular.
fn log_abs_det(m: DMatrix<f64>) -> Option<(f64, f64)> {
    let lu = m.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let scale = diag.amax();
    if !(scale > 0.0) || diag.iter().any(|v| v.abs() <= 1e-12 * scale) {
        return None;
    }
    let mut sign = lu.p().determinant::<f64>();
    let mut log = 0.0;
    for v in diag.iter() {
        log += v.abs().ln();
        if *v < 0.0 {
            sign = -sign;
        }
    }
    Some((log, sign))
}

/// `M^-1 - M^-1 P' C^-1 P M^-1` with core `C = D^-1 + P M^-1 P'`.
fn woodbury(
    m_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
    d: &DVector<f64>,
) -> std::result::Result<(DMatrix<f64>, DMatrix<f64>), UpdateDegenerate> {
    let q = p * m_inv;
    let mut core = &q * p.transpose();
    for i in 0..d.len() {
        core[(i, i)] += 1.0 / d[i];
    }
    let lu = core.clone().lu();
    let solved = lu.solve(&q).ok_or(UpdateDegenerate)?;
    let mut inv = m_inv - q.transpose() * solved;
    let t = inv.transpose();
    inv += t;
    inv *= 0.5;
    Ok((inv, core))
}

/// Updated state after `delta`. Fails with [`UpdateDegenerate`] when a core
/// matrix is singular or the updated `|M1|` is not positive; the caller then
/// recomputes from scratch.
pub fn apply_delta(
    state: &CriterionState,
    delta: &MoveDelta,
    var: &VarianceSpec,
) -> std::result::Result<CriterionState, UpdateDegenerate> {
    let a = delta.assemble(var);
    if a.d1.is_empty() {
        let mut next = state.clone();
        refresh_sums(&mut next, delta);
        return Ok(next);
    }

    let (m1_inv, core1) = woodbury(&state.m1_inv, &a.p1, &a.d1)?;
    let (log_core, sign_core) = log_abs_det(core1).ok_or(UpdateDegenerate)?;
    let mut log_d = 0.0;
    let mut sign_d = 1.0;
    for &v in a.d1.iter() {
        log_d += v.abs().ln();
        if v < 0.0 {
            sign_d = -sign_d;
        }
    }
    if sign_d * sign_core <= 0.0 {
        return Err(UpdateDegenerate);
    }
    let logdet_m1 = state.logdet_m1 + log_d + log_core;

    let (m2_inv, _) = woodbury(&state.m2_inv, &a.p2, &a.d1)?;
    let m2 = sym_update(&state.m2, &a.p2, &a.d1);
    let m3 = sym_update(&state.m3, &a.p2, &a.d2);
    let mut next = CriterionState {
        logdet_m1,
        m1_inv,
        m2,
        m2_inv,
        m3,
        x_sums: state.x_sums.clone(),
        g_sums: state.g_sums.clone(),
        plot_sizes: state.plot_sizes.clone(),
    };
    refresh_sums(&mut next, delta);
    Ok(next)
}

/// `M + P' diag(d) P`, kept exactly symmetric.
fn sym_update(m: &DMatrix<f64>, p: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = p.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let mut out = m + p.transpose() * scaled;
    let t = out.transpose();
    out += t;
    out *= 0.5;
    out
}

fn refresh_sums(state: &mut CriterionState, delta: &MoveDelta) {
    for c in &delta.plot_changes {
        state.x_sums[c.plot].clone_from(&c.new_x);
        state.g_sums[c.plot].clone_from(&c.new_g);
        state.plot_sizes[c.plot] = c.n_i;
    }
}

/// Recomputes every cached quantity from scratch.
pub fn refresh(problem: &Problem, design: &SplitPlotDesign) -> Result<CriterionState> {
    state_for(problem, design)
}

/// Relative deviation between an incremental and a recomputed state:
/// `(logdet, M2^-1, M3)` maxima, each relative to the recomputed magnitude.
pub fn state_deviation(a: &CriterionState, b: &CriterionState) -> (f64, f64, f64) {
    let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).abs().max() / y.abs().max().max(f64::MIN_POSITIVE);
    (
        (a.logdet_m1 - b.logdet_m1).abs() / b.logdet_m1.abs().max(1.0),
        rel(&a.m2_inv, &b.m2_inv),
        rel(&a.m3, &b.m3),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrasts::{Factor, FactorLayout, RequirementSet, Role};
    use crate::criterion::{loss, phi};
    use crate::design::WholePlot;
    use approx::assert_relative_eq;

    fn problem(d: f64) -> Problem {
        let layout = FactorLayout::new(vec![
            Factor::new("A", 2, Role::WholePlot),
            Factor::new("B", 3, Role::WholePlot),
            Factor::new("C", 2, Role::Subplot),
            Factor::new("D", 3, Role::Subplot),
        ])
        .unwrap();
        let req = RequirementSet::parse(&["x1", "x2L", "x3", "x4L", "x4Q", "x1*x3"], &layout).unwrap();
        Problem::new(layout, req, VarianceSpec::new(1.5, 1.5 * d).unwrap(), 1.0).unwrap()
    }

    fn design() -> SplitPlotDesign {
        let plots = vec![
            WholePlot {
                whole: vec![0, 0],
                subplots: vec![vec![0, 0], vec![1, 1], vec![0, 2], vec![1, 0]],
            },
            WholePlot {
                whole: vec![1, 2],
                subplots: vec![vec![1, 2], vec![0, 1], vec![1, 0]],
            },
            WholePlot {
                whole: vec![1, 0],
                subplots: vec![vec![0, 0], vec![1, 2], vec![0, 1]],
            },
            WholePlot {
                whole: vec![1, 0],
                subplots: vec![vec![1, 1], vec![0, 2]],
            },
        ];
        SplitPlotDesign::new_unchecked(plots)
    }

    fn check(pr: &Problem, d: &SplitPlotDesign, mv: &Move, tol: f64) -> CriterionState {
        let st = refresh(pr, d).unwrap();
        let (after, delta) = propose(pr, d, &st, mv).unwrap();
        let inc = apply_delta(&st, &delta, pr.var()).unwrap();
        let full = refresh(pr, &after).unwrap();
        let (a, b, c) = state_deviation(&inc, &full);
        assert!(a <= tol && b <= tol && c <= tol, "{mv:?}: {a} {b} {c}");
        let li = loss(&inc, pr.big_n(), 1.0, pr.var()).unwrap();
        let lf = loss(&full, pr.big_n(), 1.0, pr.var()).unwrap();
        assert_relative_eq!(li.loss(), lf.loss(), max_relative = 1e-8);
        inc
    }

    #[test]
    fn determinant_lemma_rank_one() {
        let k = 3;
        let state = CriterionState {
            logdet_m1: 0.0,
            m1_inv: DMatrix::identity(k, k),
            m2: DMatrix::identity(k, k),
            m2_inv: DMatrix::identity(k, k),
            m3: DMatrix::identity(k, k),
            x_sums: vec![],
            g_sums: vec![],
            plot_sizes: vec![],
        };
        let u = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let delta = MoveDelta {
            removed: vec![],
            added: vec![RowPair { f: u.clone(), g: u.clone() }],
            plot_changes: vec![],
        };
        let next = apply_delta(&state, &delta, &VarianceSpec::new(1.0, 0.0).unwrap()).unwrap();
        assert_relative_eq!(next.logdet_m1, (1.0 + u.dot(&u)).ln(), epsilon = 1e-14);
        let direct = (DMatrix::identity(k, k) + &u * u.transpose()).try_inverse().unwrap();
        assert_relative_eq!(next.m1_inv, direct, epsilon = 1e-14);
    }

    #[test]
    fn all_move_types_match_recompute() {
        for d in [0.0, 0.25, 1.0, 4.0] {
            let pr = problem(d);
            let des = design();
            check(
                &pr,
                &des,
                &Move::WholePlotExchange {
                    plots: vec![1],
                    wholes: vec![vec![0, 1]],
                },
                1e-8,
            );
            check(
                &pr,
                &des,
                &Move::WholePlotExchange {
                    plots: vec![2, 0],
                    wholes: vec![vec![1, 1], vec![0, 2]],
                },
                1e-8,
            );
            // different whole plots
            check(
                &pr,
                &des,
                &Move::Interchange {
                    plot_a: 0,
                    sub_a: 2,
                    plot_b: 1,
                    sub_b: 0,
                },
                1e-8,
            );
            check(
                &pr,
                &des,
                &Move::SubplotExchange {
                    plot: 0,
                    subplots: vec![0, 1, 3],
                    replacements: vec![vec![1, 2], vec![0, 1], vec![1, 1]],
                },
                1e-8,
            );
        }
    }

    #[test]
    fn interchange_with_shared_whole_plot_has_no_rows() {
        let pr = problem(1.0);
        let des = design();
        let st = refresh(&pr, &des).unwrap();
        let delta = delta_interchange(&pr, &des, &st, (2, 0), (3, 1)).unwrap();
        assert!(delta.removed.is_empty() && delta.added.is_empty());
        assert_eq!(delta.plot_changes.len(), 2);
        check(
            &pr,
            &des,
            &Move::Interchange {
                plot_a: 2,
                sub_a: 0,
                plot_b: 3,
                sub_b: 1,
            },
            1e-9,
        );
    }

    #[test]
    fn identity_moves_change_nothing() {
        let pr = problem(1.0);
        let des = design();
        let st = refresh(&pr, &des).unwrap();
        let same_w = Move::WholePlotExchange {
            plots: vec![1],
            wholes: vec![vec![1, 2]],
        };
        let same_t = Move::SubplotExchange {
            plot: 2,
            subplots: vec![1],
            replacements: vec![vec![1, 2]],
        };
        for mv in [same_w, same_t] {
            let (after, delta) = propose(&pr, &des, &st, &mv).unwrap();
            assert_eq!(after, des);
            let next = apply_delta(&st, &delta, pr.var()).unwrap();
            assert!((next.logdet_m1 - st.logdet_m1).abs() <= 1e-12);
            assert!((&next.m2_inv - &st.m2_inv).abs().max() <= 1e-12);
            assert!((&next.m3 - &st.m3).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn duplicate_runs_are_rejected() {
        let pr = problem(1.0);
        let des = design();
        let st = refresh(&pr, &des).unwrap();
        // plot 4 shares w with plot 3, which already holds (1, 2)
        assert!(delta_sp_exchange(&pr, &des, &st, 3, &[0], &[vec![1, 2]]).is_err());
        assert!(delta_wp_exchange(&pr, &des, &st, &[3], &[vec![0, 0]]).is_err());
        assert!(delta_interchange(&pr, &des, &st, (0, 0), (0, 1)).is_err());
    }

    #[test]
    fn move_then_inverse_restores() {
        let pr = problem(0.25);
        let des = design();
        let st = refresh(&pr, &des).unwrap();
        let mv = Move::SubplotExchange {
            plot: 1,
            subplots: vec![0, 2],
            replacements: vec![vec![0, 0], vec![1, 1]],
        };
        let (after, delta) = propose(&pr, &des, &st, &mv).unwrap();
        let mid = apply_delta(&st, &delta, pr.var()).unwrap();
        let back = mv.inverse(&des);
        let (restored, delta2) = propose(&pr, &after, &mid, &back).unwrap();
        assert_eq!(restored, des);
        let end = apply_delta(&mid, &delta2, pr.var()).unwrap();
        assert!((end.logdet_m1 - st.logdet_m1).abs() <= 1e-10);
        assert!((&end.m2_inv - &st.m2_inv).abs().max() <= 1e-10);
        assert!((&end.m3 - &st.m3).abs().max() <= 1e-10);
        assert!((phi(&end).unwrap() - phi(&st).unwrap()).abs() <= 1e-10);
    }
}
