//! The D-optimal minimax loss
//!
//! ```text
//! L_R = (1 + N alpha^2 phi_R) / pi_R
//! phi_R = lambda_max(M2^{-1} M3 - M2),   pi_R = |M1|
//! M1 = X1' S^-1 X1,  M2 = G1' S^-1 G1,  M3 = G1' S^-2 G1,  G1 = X1 V1^{-1/2}
//! ```
//!
//! `S^-1` and `S^-2` are never formed: each whole plot contributes
//! `X_i'X_i - c (X_i'1)(X_i'1)'` with the compound-symmetry coefficient `c`.
//! `pi_R` is carried as a log-determinant.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{ModelMatrices, SplitPlotDesign, VarianceSpec};
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Relative eigenvalue floor below which `M2` is treated as singular.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Cached information matrices of one design, maintained incrementally by
/// the [`updates`](crate::updates) engine.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionState {
    pub(crate) logdet_m1: f64,
    pub(crate) m1_inv: DMatrix<f64>,
    pub(crate) m2: DMatrix<f64>,
    pub(crate) m2_inv: DMatrix<f64>,
    pub(crate) m3: DMatrix<f64>,
    pub(crate) x_sums: Vec<DVector<f64>>,
    pub(crate) g_sums: Vec<DVector<f64>>,
    pub(crate) plot_sizes: Vec<usize>,
}

impl CriterionState {
    /// `log pi_R = log |M1|`.
    pub fn logdet_m1(&self) -> f64 {
        self.logdet_m1
    }

    pub fn m1_inv(&self) -> &DMatrix<f64> {
        &self.m1_inv
    }

    pub fn m2(&self) -> &DMatrix<f64> {
        &self.m2
    }

    pub fn m2_inv(&self) -> &DMatrix<f64> {
        &self.m2_inv
    }

    pub fn m3(&self) -> &DMatrix<f64> {
        &self.m3
    }

    /// `X_1i' 1` for every plot.
    pub fn x_sums(&self) -> &[DVector<f64>] {
        &self.x_sums
    }

    /// `G_1i' 1` for every plot.
    pub fn g_sums(&self) -> &[DVector<f64>] {
        &self.g_sums
    }

    pub fn plot_sizes(&self) -> &[usize] {
        &self.plot_sizes
    }

    /// Number of columns `1 + p`.
    pub fn dim(&self) -> usize {
        self.m2.nrows()
    }

    /// `max |M2 M2^{-1} - I|`, the drift of the maintained inverse.
    pub fn inverse_drift(&self) -> f64 {
        let k = self.dim();
        (&self.m2 * &self.m2_inv - DMatrix::<f64>::identity(k, k)).abs().max()
    }
}

/// Symmetric `A'A - sum_i c_i s_i s_i'` over plots.
fn plot_gram(
    a: &DMatrix<f64>,
    sums: &[DVector<f64>],
    coefs: impl Iterator<Item = f64>,
    scale: f64,
) -> DMatrix<f64> {
    let mut m = a.transpose() * a;
    for (s, c) in sums.iter().zip(coefs) {
        if c != 0.0 {
            m.syger(-c, s, s, 1.0);
        }
    }
    m.fill_upper_triangle_with_lower_triangle();
    m * scale
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Computes `log|M1|`, `M1^{-1}`, `M2`, `M2^{-1}`, `M3` and the plot sums from scratch.
///
/// Singular designs are reported with the columns (as `column j`) that carry
/// the null direction; [`state_for`] relabels them with term names.
pub fn compute_state(matrices: &ModelMatrices, var: &VarianceSpec) -> Result<CriterionState> {
    let x = &matrices.x1;
    let g = &matrices.g1;
    let sizes: Vec<usize> = matrices.plot_ranges.iter().map(|r| r.len()).collect();
    let x_sums: Vec<DVector<f64>> = matrices
        .plot_ranges
        .iter()
        .map(|r| x.rows(r.start, r.len()).row_sum().transpose())
        .collect();
    let g_sums: Vec<DVector<f64>> = matrices
        .plot_ranges
        .iter()
        .map(|r| g.rows(r.start, r.len()).row_sum().transpose())
        .collect();
    let s2 = var.sigma_eps_sq;
    let m1 = plot_gram(x, &x_sums, sizes.iter().map(|&n| var.inv_coef(n)), 1.0 / s2);
    let m2 = plot_gram(g, &g_sums, sizes.iter().map(|&n| var.inv_coef(n)), 1.0 / s2);
    let m3 = plot_gram(g, &g_sums, sizes.iter().map(|&n| var.inv_sq_coef(n)), 1.0 / (s2 * s2));

    check_positive_definite(&m2)?;
    let chol1 = m1.clone().cholesky().ok_or_else(|| singular_columns(&m2))?;
    let logdet_m1 = 2.0 * chol1.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut m1_inv = chol1.inverse();
    symmetrize(&mut m1_inv);
    let mut m2_inv = m2
        .clone()
        .cholesky()
        .ok_or_else(|| singular_columns(&m2))?
        .inverse();
    symmetrize(&mut m2_inv);

    Ok(CriterionState {
        logdet_m1,
        m1_inv,
        m2,
        m2_inv,
        m3,
        x_sums,
        g_sums,
        plot_sizes: sizes,
    })
}

fn check_positive_definite(m2: &DMatrix<f64>) -> Result<()> {
    let k = m2.nrows();
    let eig = SymmetricEigen::new(m2.clone());
    let floor = PD_TOLERANCE * m2.trace() / k as f64;
    if eig.eigenvalues.min() > floor && floor > 0.0 {
        Ok(())
    } else {
        Err(singular_columns(m2))
    }
}

/// Columns carrying the (near) null direction of `M2`.
fn singular_columns(m2: &DMatrix<f64>) -> Error {
    let eig = SymmetricEigen::new(m2.clone());
    let imin = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(imin);
    let top = v.amax();
    let terms = v
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > 0.1 * top)
        .map(|(j, _)| format!("column {j}"))
        .collect();
    Error::SingularDesign { terms }
}

/// [`compute_state`] for a design of `problem`, naming singular terms.
pub fn state_for(problem: &Problem, design: &SplitPlotDesign) -> Result<CriterionState> {
    let mm = problem.matrices(design)?;
    compute_state(&mm, problem.var()).map_err(|e| relabel(e, problem))
}

pub(crate) fn relabel(e: Error, problem: &Problem) -> Error {
    match e {
        Error::SingularDesign { terms } => {
            let labels = problem.requirement().labels(problem.layout());
            Error::SingularDesign {
                terms: terms
                    .into_iter()
                    .map(|t| {
                        t.strip_prefix("column ")
                            .and_then(|j| j.parse::<usize>().ok())
                            .and_then(|j| labels.get(j).cloned())
                            .unwrap_or(t)
                    })
                    .collect(),
            }
        }
        other => other,
    }
}

/// Inverse square root of a symmetric positive definite matrix.
fn inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let floor = PD_TOLERANCE * m.trace() / m.nrows() as f64;
    if !(eig.eigenvalues.min() > floor) {
        return Err(Error::CriterionUndefined("M2 is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `phi_R`, the largest eigenvalue of `M2^{-1} M3 - M2`, computed on the
/// similar symmetric matrix `M2^{-1/2} M3 M2^{-1/2} - M2`.
pub fn phi(state: &CriterionState) -> Result<f64> {
    let r = inv_sqrt(&state.m2)?;
    let mut s = &r * &state.m3 * &r - &state.m2;
    symmetrize(&mut s);
    Ok(SymmetricEigen::new(s).eigenvalues.max())
}

/// Loss and its parts for one design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub phi: f64,
    pub pi_root: f64,
    pub loss_root: f64,
    pub log_pi: f64,
    pub log_loss: f64,
    pub alpha: f64,
    pub d: f64,
    pub sigma_eps_sq: f64,
    pub p: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    pub b: usize,
}

impl LossReport {
    /// Raw `L_R`. May underflow for large `p`; prefer `log_loss`.
    pub fn loss(&self) -> f64 {
        self.log_loss.exp()
    }

    pub fn pi(&self) -> f64 {
        self.log_pi.exp()
    }
}

/// `log(1 + N alpha^2 phi) - log pi`.
pub fn log_loss_from(phi: f64, log_pi: f64, big_n: usize, alpha: f64) -> f64 {
    (big_n as f64 * alpha * alpha * phi).ln_1p() - log_pi
}

pub fn loss(
    state: &CriterionState,
    big_n: usize,
    alpha: f64,
    var: &VarianceSpec,
) -> Result<LossReport> {
    let phi = phi(state)?;
    let k = state.dim() as f64;
    let log_pi = state.logdet_m1;
    let log_loss = log_loss_from(phi, log_pi, big_n, alpha);
    Ok(LossReport {
        phi,
        pi_root: (log_pi / k).exp(),
        loss_root: (log_loss / k).exp(),
        log_pi,
        log_loss,
        alpha,
        d: var.d(),
        sigma_eps_sq: var.sigma_eps_sq,
        p: state.dim() - 1,
        big_n,
        n: state.plot_sizes.iter().sum(),
        b: state.plot_sizes.len(),
    })
}

/// Evaluates a design from scratch.
pub fn evaluate(problem: &Problem, design: &SplitPlotDesign) -> Result<LossReport> {
    let state = state_for(problem, design)?;
    loss(&state, problem.big_n(), problem.alpha(), problem.var())
}

/// Completely randomized (`d = 0`) loss through the smallest eigenvalue of
/// `V1^{-1/2} X1'X1 V1^{-1/2}`:
///
/// ```text
/// sigma^{2(p+1)} [1 + (N alpha^2 / sigma^2)(1 - lambda_min)] / |X1'X1|
/// ```
///
/// Returns the log of the loss.
pub fn log_loss_crd(
    matrices: &ModelMatrices,
    alpha: f64,
    sigma_eps_sq: f64,
    big_n: usize,
) -> Result<f64> {
    let xtx = matrices.x1.transpose() * &matrices.x1;
    let mut a = matrices.g1.transpose() * &matrices.g1;
    symmetrize(&mut a);
    check_positive_definite(&a)?;
    let lmin = SymmetricEigen::new(a).eigenvalues.min();
    let chol = xtx.cholesky().ok_or(Error::SingularDesign { terms: vec![] })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let k = matrices.x1.ncols() as f64;
    let bracket = (big_n as f64 * alpha * alpha / sigma_eps_sq * (1.0 - lmin)).ln_1p();
    Ok(k * sigma_eps_sq.ln() + bracket - logdet)
}

pub fn loss_crd(matrices: &ModelMatrices, alpha: f64, sigma_eps_sq: f64, big_n: usize) -> Result<f64> {
    log_loss_crd(matrices, alpha, sigma_eps_sq, big_n).map(f64::exp)
}

/// Loss of the model with contrasts rescaled by `C1 = diag(1, c_1, ..., c_p)`:
/// `X1 C1` with `V1` replaced by `C1 V1 C1`.
pub fn rescaled_loss(
    matrices: &ModelMatrices,
    scales: &[f64],
    var: &VarianceSpec,
    big_n: usize,
    alpha: f64,
) -> Result<LossReport> {
    if scales.len() != matrices.p() {
        return Err(Error::param(
            "scales",
            format!("expected {} constants, got {}", matrices.p(), scales.len()),
        ));
    }
    if let Some(&c) = scales.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidScale(c));
    }
    let c1 = DVector::from_iterator(scales.len() + 1, std::iter::once(1.0).chain(scales.iter().copied()));
    let mut x = matrices.x1.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col *= c1[j];
    }
    let v = matrices.v1.component_mul(&c1).component_mul(&c1);
    let mm = ModelMatrices::from_parts(x, v, matrices.plot_ranges.clone());
    let state = compute_state(&mm, var)?;
    loss(&state, big_n, alpha, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrasts::{Factor, FactorLayout, RequirementSet, Role};
    use crate::design::WholePlot;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dominant eigenvalue of a (possibly nonsymmetric) matrix with a real
    /// dominant spectrum, by shifted power iteration.
    fn power_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
        // Shift so the largest eigenvalue is also the largest in magnitude.
        let shift = a.abs().row_sum().max() + 1.0;
        let b = a + DMatrix::<f64>::identity(a.nrows(), a.nrows()) * shift;
        let mut v = DVector::from_fn(a.nrows(), |i, _| 1.0 + 0.1 * i as f64);
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let w = &b * &v;
            let next = w.dot(&v) / v.dot(&v);
            v = w.normalize();
            if (next - lambda).abs() < 1e-15 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda - shift
    }

    fn cube() -> Problem {
        let layout = FactorLayout::new(vec![
            Factor::new("A", 2, Role::WholePlot),
            Factor::new("B", 2, Role::Subplot),
            Factor::new("C", 2, Role::Subplot),
        ])
        .unwrap();
        let req = RequirementSet::parse(&["x1", "x2", "x3"], &layout).unwrap();
        Problem::new(layout, req, VarianceSpec::new(1.0, 0.0).unwrap(), 1.0).unwrap()
    }

    fn full_cube_design(problem: &Problem) -> SplitPlotDesign {
        let lay = problem.layout();
        let plots = lay
            .full_factorial()
            .into_iter()
            .map(|r| WholePlot {
                whole: vec![r[0]],
                subplots: vec![vec![r[1], r[2]]],
            })
            .collect();
        SplitPlotDesign::new(plots, lay).unwrap()
    }

    fn random_design(problem: &Problem, rng: &mut ChaCha8Rng, sizes: &[usize]) -> SplitPlotDesign {
        let lay = problem.layout();
        let whole = lay.combinations(lay.whole_plot_factors());
        let sub = lay.combinations(lay.subplot_factors());
        loop {
            let plots: Vec<WholePlot> = sizes
                .iter()
                .map(|&n| {
                    let mut idx: Vec<usize> = (0..sub.len()).collect();
                    for k in 0..n {
                        let j = rng.random_range(k..idx.len());
                        idx.swap(k, j);
                    }
                    WholePlot {
                        whole: whole[rng.random_range(0..whole.len())].clone(),
                        subplots: idx[..n].iter().map(|&j| sub[j].clone()).collect(),
                    }
                })
                .collect();
            if let Ok(d) = SplitPlotDesign::new(plots, lay) {
                if state_for(problem, &d).is_ok() {
                    return d;
                }
            }
        }
    }

    #[test]
    fn orthogonal_full_factorial() {
        let pr = cube();
        let d = full_cube_design(&pr);
        let st = state_for(&pr, &d).unwrap();
        assert_relative_eq!(st.logdet_m1, 4.0 * 8f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(st.m2, DMatrix::identity(4, 4), epsilon = 1e-12);
        assert_relative_eq!(st.m3, DMatrix::identity(4, 4), epsilon = 1e-12);
        assert!(phi(&st).unwrap().abs() < 1e-12);
    }

    #[test]
    fn reductions() {
        let pr = cube();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = random_design(&pr, &mut rng, &[2, 3, 2]);
            let mm = pr.matrices(&d).unwrap();
            for alpha in [0.0, 0.5, 1.0, 2.0] {
                for s2 in [1.0, 0.7] {
                    let var = VarianceSpec::new(s2, 0.0).unwrap();
                    let st = compute_state(&mm, &var).unwrap();
                    let rep = loss(&st, 8, alpha, &var).unwrap();
                    let crd = log_loss_crd(&mm, alpha, s2, 8).unwrap();
                    assert!((rep.log_loss - crd).abs() <= 1e-10);
                }
            }
            let var = VarianceSpec::with_ratio(1.5).unwrap();
            let st = compute_state(&mm, &var).unwrap();
            let rep = loss(&st, 8, 0.0, &var).unwrap();
            assert_relative_eq!(rep.loss(), 1.0 / rep.pi(), max_relative = 1e-12);
        }
    }

    #[test]
    fn crd_examples() {
        let pr = cube();
        let d = full_cube_design(&pr);
        let mm = pr.matrices(&d).unwrap();
        // lambda_min = 1, bracket collapses
        let l = loss_crd(&mm, 1.0, 1.0, 8).unwrap();
        assert_relative_eq!(l, 1.0 / 8f64.powi(4), max_relative = 1e-12);
        let l0 = loss_crd(&mm, 0.0, 2.0, 8).unwrap();
        assert_relative_eq!(l0, 2f64.powi(4) / 8f64.powi(4), max_relative = 1e-12);
    }

    #[test]
    fn eigenvalue_path_matches_power_iteration() {
        let pr = cube().with_var(VarianceSpec::with_ratio(1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = random_design(&pr, &mut rng, &[3, 2, 2]);
            let st = state_for(&pr, &d).unwrap();
            let ns = &st.m2_inv * &st.m3 - &st.m2;
            let pw = power_max_eigenvalue(&ns);
            let sym = phi(&st).unwrap();
            assert!((pw - sym).abs() <= 1e-8, "{pw} vs {sym}");
            assert!(sym >= -1e-9);
        }
    }

    #[test]
    fn consistency_identity_and_symmetry() {
        let pr = cube().with_var(VarianceSpec::new(0.8, 2.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = random_design(&pr, &mut rng, &[2, 2, 3]);
            let st = state_for(&pr, &d).unwrap();
            assert!((&st.m2 - st.m2.transpose()).abs().max() <= 1e-12);
            assert!((&st.m3 - st.m3.transpose()).abs().max() <= 1e-12);
            assert!(st.inverse_drift() <= 1e-8);
            let rep = loss(&st, 8, 1.3, pr.var()).unwrap();
            let lhs = rep.log_loss.exp() * rep.log_pi.exp();
            assert_relative_eq!(lhs, 1.0 + 8.0 * 1.69 * rep.phi, max_relative = 1e-12);
        }
    }

    #[test]
    fn rescaling() {
        let pr = cube().with_var(VarianceSpec::with_ratio(1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d = random_design(&pr, &mut rng, &[2, 2, 2]);
        let mm = pr.matrices(&d).unwrap();
        let base = loss(&compute_state(&mm, pr.var()).unwrap(), 8, 1.0, pr.var()).unwrap();
        let same = rescaled_loss(&mm, &[1.0; 3], pr.var(), 8, 1.0).unwrap();
        assert_relative_eq!(same.log_loss, base.log_loss, epsilon = 1e-12);
        for _ in 0..20 {
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..10.0)).collect();
            let r = rescaled_loss(&mm, &c, pr.var(), 8, 1.0).unwrap();
            let prod: f64 = c.iter().map(|v| v * v).product();
            assert_relative_eq!(r.loss() * prod, base.loss(), max_relative = 1e-10);
        }
        assert_eq!(
            rescaled_loss(&mm, &[1.0, -2.0, 1.0], pr.var(), 8, 1.0).unwrap_err(),
            Error::InvalidScale(-2.0)
        );
    }

    #[test]
    fn singular_design_names_terms() {
        let pr = cube();
        // x1 is constant over the design, so it is aliased with the intercept.
        let d = SplitPlotDesign::new(
            vec![WholePlot {
                whole: vec![0],
                subplots: vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]],
            }],
            pr.layout(),
        )
        .unwrap();
        match state_for(&pr, &d) {
            Err(Error::SingularDesign { terms }) => {
                assert!(terms.contains(&"x1".to_string()), "{terms:?}");
                assert!(terms.contains(&"intercept".to_string()));
            }
            other => panic!("expected singular design, got {other:?}"),
        }
    }
}
