//! Brute-force loss evaluation.
//!
//! Everything here works with the dense `n x n` covariance and the explicit
//! misspecification columns `X2`, so it shares no shortcuts with
//! [`criterion`](crate::criterion) or [`updates`](crate::updates).

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::contrasts::{build_h2, term_column, Complement};
use crate::criterion::{log_loss_from, LossReport};
use crate::design::SplitPlotDesign;
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Largest run count for dense `n x n` work.
pub const DENSE_GUARD: usize = 512;

/// The feasible set `{beta2 : beta2' V2 beta2 / N <= alpha^2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSpec {
    pub alpha: f64,
    pub v2: DVector<f64>,
    pub big_n: usize,
}

impl EllipsoidSpec {
    pub fn contains(&self, beta2: &DVector<f64>) -> bool {
        let q: f64 = beta2.iter().zip(self.v2.iter()).map(|(b, v)| v * b * b).sum();
        q / self.big_n as f64 <= self.alpha * self.alpha * (1.0 + 1e-12)
    }

    /// Maps a direction `u` to the boundary point `sqrt(N) alpha V2^{-1/2} u / |u|`.
    pub fn boundary_point(&self, u: &DVector<f64>) -> DVector<f64> {
        let scale = (self.big_n as f64).sqrt() * self.alpha / u.norm();
        DVector::from_iterator(u.len(), u.iter().zip(self.v2.iter()).map(|(x, v)| scale * x / v.sqrt()))
    }
}

/// `Sigma` for the design, assembled densely.
pub fn dense_sigma(problem: &Problem, design: &SplitPlotDesign) -> DMatrix<f64> {
    let n = design.n();
    let var = problem.var();
    let mut s = DMatrix::zeros(n, n);
    for r in design.plot_ranges() {
        for i in r.clone() {
            for j in r.clone() {
                s[(i, j)] = var.sigma_gamma_sq;
            }
        }
    }
    for i in 0..n {
        s[(i, i)] += var.sigma_eps_sq;
    }
    s
}

fn guard(design: &SplitPlotDesign) -> Result<()> {
    if design.n() > DENSE_GUARD {
        return Err(Error::Capacity {
            what: "n",
            limit: DENSE_GUARD,
            actual: design.n(),
        });
    }
    Ok(())
}

fn dense_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::CriterionUndefined("matrix is not positive definite".into()))
}

/// Iteration cap for the nonsymmetric eigenproblem.
const SCHUR_MAX_ITER: usize = 10_000;

/// Top eigenvalue of `M2^{-1} M3 - M2` through the similar symmetric matrix
/// `L^{-1} M3 L^{-T} - L'L` with `M2 = LL'`. Used when the QR iteration stalls.
fn cholesky_similar_max(m2: &DMatrix<f64>, m3: &DMatrix<f64>) -> Result<f64> {
    let l = m2
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign { terms: vec![] })?
        .unpack();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign { terms: vec![] })?;
    let s = &l_inv * m3 * l_inv.transpose() - l.transpose() * &l;
    let s = (&s + s.transpose()) * 0.5;
    Ok(s.symmetric_eigenvalues().max())
}

/// `X1` with rows in plot order.
fn dense_x1(problem: &Problem, design: &SplitPlotDesign) -> DMatrix<f64> {
    let k = problem.p() + 1;
    let mut x1 = DMatrix::zeros(design.n(), k);
    let mut r = 0;
    for plot in design.plots() {
        for t in &plot.subplots {
            x1.set_row(r, &problem.f_row(&plot.whole, t).transpose());
            r += 1;
        }
    }
    x1
}

/// Misspecification columns for the runs of `design`.
pub fn dense_x2(problem: &Problem, design: &SplitPlotDesign, complement: &Complement) -> Result<DMatrix<f64>> {
    let runs = design.runs(problem.layout());
    let mut x2 = DMatrix::zeros(runs.len(), complement.terms.len());
    for (i, run) in runs.iter().enumerate() {
        for (j, term) in complement.terms.iter().enumerate() {
            x2[(i, j)] = term_column(term, run, problem.contrasts())?;
        }
    }
    Ok(x2)
}

/// The closed-form loss evaluated with dense `Sigma^{-1}` and `Sigma^{-2} = (Sigma^{-1})^2`
/// and the nonsymmetric eigenproblem of `M2^{-1} M3 - M2`.
pub fn naive_loss(problem: &Problem, design: &SplitPlotDesign) -> Result<LossReport> {
    guard(design)?;
    design.validate(problem.layout())?;
    let si = dense_inverse(dense_sigma(problem, design))?;
    let si2 = &si * &si;
    let x1 = dense_x1(problem, design);
    let mut g1 = x1.clone();
    for (j, mut col) in g1.column_iter_mut().enumerate() {
        col /= problem.v1()[j].sqrt();
    }
    let m1 = x1.transpose() * &si * &x1;
    let m2 = g1.transpose() * &si * &g1;
    let m3 = g1.transpose() * &si2 * &g1;
    let m2_inv = m2
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign { terms: vec![] })?;
    let c = m2_inv * &m3 - &m2;
    let phi = match Schur::try_new(c, f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max),
        None => cholesky_similar_max(&m2, &m3)?,
    };
    let det = m1.determinant();
    if !(det > 0.0) {
        return Err(Error::SingularDesign { terms: vec![] });
    }
    let k = (problem.p() + 1) as f64;
    let log_pi = det.ln();
    let log_loss = log_loss_from(phi, log_pi, problem.big_n(), problem.alpha());
    Ok(LossReport {
        phi,
        pi_root: (log_pi / k).exp(),
        loss_root: (log_loss / k).exp(),
        log_pi,
        log_loss,
        alpha: problem.alpha(),
        d: problem.var().d(),
        sigma_eps_sq: problem.var().sigma_eps_sq,
        p: problem.p(),
        big_n: problem.big_n(),
        n: design.n(),
        b: design.b(),
    })
}

/// Dense pieces of the MSE: `cov = M1^{-1}` and the bias map
/// `A = M1^{-1} X1' Sigma^{-1} X2`, so that `bias = A beta2`.
#[derive(Debug, Clone)]
pub struct MseParts {
    pub ellipsoid: EllipsoidSpec,
    pub cov: DMatrix<f64>,
    pub bias_map: DMatrix<f64>,
    /// `X1' Sigma^{-1} X1`
    pub m1: DMatrix<f64>,
    /// `X2' Sigma^{-1} X1`
    pub cross: DMatrix<f64>,
}

impl MseParts {
    pub fn new(problem: &Problem, design: &SplitPlotDesign) -> Result<Self> {
        guard(design)?;
        design.validate(problem.layout())?;
        let complement = build_h2(problem.requirement(), problem.layout(), problem.contrasts())?;
        let x2 = dense_x2(problem, design, &complement)?;
        let si = dense_inverse(dense_sigma(problem, design))?;
        let x1 = dense_x1(problem, design);
        let m1 = x1.transpose() * &si * &x1;
        let cov = m1
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularDesign { terms: vec![] })?;
        let cross = x2.transpose() * &si * &x1;
        let bias_map = &cov * cross.transpose();
        Ok(MseParts {
            ellipsoid: EllipsoidSpec {
                alpha: problem.alpha(),
                v2: complement.v2,
                big_n: problem.big_n(),
            },
            cov,
            bias_map,
            m1,
            cross,
        })
    }

    /// `|cov + b b'|` with `b = A beta2`, evaluated as a plain determinant.
    pub fn mse_determinant(&self, beta2: &DVector<f64>) -> f64 {
        let b = &self.bias_map * beta2;
        (&self.cov + &b * b.transpose()).determinant()
    }
}

/// `|MSE(beta2)|` of the GLS estimator when the true model also contains `X2 beta2`.
pub fn mse_determinant(problem: &Problem, design: &SplitPlotDesign, beta2: &DVector<f64>) -> Result<f64> {
    let parts = MseParts::new(problem, design)?;
    if beta2.len() != parts.ellipsoid.v2.len() {
        return Err(Error::param(
            "beta2",
            format!("expected length {}, got {}", parts.ellipsoid.v2.len(), beta2.len()),
        ));
    }
    Ok(parts.mse_determinant(beta2))
}

/// Maximum of `|MSE|` over the ellipsoid and a maximizing `beta2`.
///
/// `|C + bb'| = |C|(1 + b'C^{-1}b)` turns the maximization into the top
/// eigenpair of `V2^{-1/2} X2' S^-1 X1 M1^{-1} X1' S^-1 X2 V2^{-1/2}`.
pub fn ellipsoid_max(problem: &Problem, design: &SplitPlotDesign) -> Result<(f64, DVector<f64>)> {
    let parts = MseParts::new(problem, design)?;
    let q = parts.ellipsoid.v2.len();
    let det_m1 = parts.m1.determinant();
    if !(det_m1 > 0.0) {
        return Err(Error::SingularDesign { terms: vec![] });
    }
    if q == 0 {
        return Ok((1.0 / det_m1, DVector::zeros(0)));
    }
    let mut w = parts.cross.clone();
    for (i, mut row) in w.row_iter_mut().enumerate() {
        row /= parts.ellipsoid.v2[i].sqrt();
    }
    let k = &w * &parts.cov * w.transpose();
    let eig = SymmetricEigen::new(k);
    let (top, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let big_n = problem.big_n() as f64;
    let alpha = problem.alpha();
    let value = (1.0 + big_n * alpha * alpha * lambda) / det_m1;
    let argmax = if alpha == 0.0 {
        DVector::zeros(q)
    } else {
        parts.ellipsoid.boundary_point(&eig.eigenvectors.column(top).into_owned())
    };
    Ok((value, argmax))
}

/// Largest `|MSE|` over the boundary points given by `directions`.
pub fn sampling_lower_bound_with(
    problem: &Problem,
    design: &SplitPlotDesign,
    directions: &[DVector<f64>],
) -> Result<f64> {
    let parts = MseParts::new(problem, design)?;
    Ok(directions
        .iter()
        .map(|u| {
            if problem.alpha() == 0.0 || u.norm() == 0.0 {
                parts.mse_determinant(&DVector::zeros(parts.ellipsoid.v2.len()))
            } else {
                parts.mse_determinant(&parts.ellipsoid.boundary_point(u))
            }
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest `|MSE|` over `samples` boundary points in uniformly random
/// directions (normalized Gaussian draws mapped through `V2^{-1/2}`).
pub fn sampling_lower_bound<R: Rng + ?Sized>(
    problem: &Problem,
    design: &SplitPlotDesign,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let parts = MseParts::new(problem, design)?;
    let q = parts.ellipsoid.v2.len();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples.max(1) {
        let beta2 = if problem.alpha() == 0.0 || q == 0 {
            DVector::zeros(q)
        } else {
            let u = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            parts.ellipsoid.boundary_point(&u)
        };
        best = best.max(parts.mse_determinant(&beta2));
    }
    Ok(best)
}
