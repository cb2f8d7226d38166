//! Split-plot designs, their model matrices and the compound-symmetry
//! covariance blocks.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrasts::{fill_model_row, ContrastSystem, FactorLayout, RequirementSet};
use crate::error::{Error, Result};

/// One whole plot: its whole-plot level combination and the subplot
/// combinations run inside it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WholePlot {
    pub whole: Vec<usize>,
    pub subplots: Vec<Vec<usize>>,
}

/// A split-plot design stored plot-major. All full runs `(w, t)` are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitPlotDesign {
    plots: Vec<WholePlot>,
}

impl SplitPlotDesign {
    pub fn new(plots: Vec<WholePlot>, layout: &FactorLayout) -> Result<Self> {
        let d = SplitPlotDesign { plots };
        d.validate(layout)?;
        Ok(d)
    }

    pub(crate) fn new_unchecked(plots: Vec<WholePlot>) -> Self {
        SplitPlotDesign { plots }
    }

    /// Checks shapes, level ranges and run uniqueness.
    pub fn validate(&self, layout: &FactorLayout) -> Result<()> {
        if self.plots.is_empty() {
            return Err(Error::MalformedDesign("design has no whole plots".into()));
        }
        let wf = layout.whole_plot_factors();
        let sf = layout.subplot_factors();
        let levels = |f: usize| layout.factors()[f].levels;
        for (i, plot) in self.plots.iter().enumerate() {
            if plot.subplots.is_empty() {
                return Err(Error::MalformedDesign(format!("plot {} has no subplots", i + 1)));
            }
            if plot.whole.len() != wf.len() || plot.whole.iter().zip(wf).any(|(&l, &f)| l >= levels(f)) {
                return Err(Error::MalformedDesign(format!(
                    "plot {} has an invalid whole-plot combination {:?}",
                    i + 1,
                    plot.whole
                )));
            }
            for (j, t) in plot.subplots.iter().enumerate() {
                if t.len() != sf.len() || t.iter().zip(sf).any(|(&l, &f)| l >= levels(f)) {
                    return Err(Error::MalformedDesign(format!(
                        "plot {}, subplot {} has an invalid subplot combination {:?}",
                        i + 1,
                        j + 1,
                        t
                    )));
                }
            }
        }
        self.check_unique()
    }

    pub(crate) fn check_unique(&self) -> Result<()> {
        let mut seen: HashMap<(&[usize], &[usize]), ()> = HashMap::with_capacity(self.n());
        for (i, plot) in self.plots.iter().enumerate() {
            for (j, t) in plot.subplots.iter().enumerate() {
                if seen.insert((&plot.whole, t), ()).is_some() {
                    return Err(Error::DuplicateRun {
                        plot: i + 1,
                        subplot: j + 1,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn plots(&self) -> &[WholePlot] {
        &self.plots
    }

    pub(crate) fn plots_mut(&mut self) -> &mut [WholePlot] {
        &mut self.plots
    }

    /// Number of whole plots `b`.
    pub fn b(&self) -> usize {
        self.plots.len()
    }

    /// Total number of runs `n`.
    pub fn n(&self) -> usize {
        self.plots.iter().map(|p| p.subplots.len()).sum()
    }

    pub fn plot_sizes(&self) -> Vec<usize> {
        self.plots.iter().map(|p| p.subplots.len()).collect()
    }

    /// Row ranges of each plot in plot-major order.
    pub fn plot_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.plots
            .iter()
            .map(|p| {
                let r = start..start + p.subplots.len();
                start = r.end;
                r
            })
            .collect()
    }

    /// Full runs in plot-major order.
    pub fn runs(&self, layout: &FactorLayout) -> Vec<Vec<usize>> {
        self.plots
            .iter()
            .flat_map(|p| p.subplots.iter().map(|t| layout.full_run(&p.whole, t)))
            .collect()
    }

    /// Writes the design as CSV: `plot,<whole-plot factors>,<subplot factors>`.
    pub fn to_csv(&self, layout: &FactorLayout) -> String {
        let mut out = String::from("plot");
        for &f in layout.whole_plot_factors().iter().chain(layout.subplot_factors()) {
            out.push(',');
            out.push_str(&layout.factors()[f].name);
        }
        out.push('\n');
        for (i, plot) in self.plots.iter().enumerate() {
            for t in &plot.subplots {
                write!(out, "{}", i + 1).unwrap();
                for (&f, &l) in layout.whole_plot_factors().iter().zip(&plot.whole) {
                    write!(out, ",{}", layout.level_label(f, l)).unwrap();
                }
                for (&f, &l) in layout.subplot_factors().iter().zip(t) {
                    write!(out, ",{}", layout.level_label(f, l)).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the CSV format written by [`SplitPlotDesign::to_csv`].
    pub fn from_csv(text: &str, layout: &FactorLayout) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::MalformedDesign("empty design file".into()))?;
        let order: Vec<usize> = layout
            .whole_plot_factors()
            .iter()
            .chain(layout.subplot_factors())
            .copied()
            .collect();
        let expected: Vec<&str> = std::iter::once("plot")
            .chain(order.iter().map(|&f| layout.factors()[f].name.as_str()))
            .collect();
        let got: Vec<&str> = header.split(',').map(str::trim).collect();
        if got != expected {
            return Err(Error::MalformedDesign(format!(
                "header `{header}` does not match expected `{}`",
                expected.join(",")
            )));
        }
        let m_w = layout.whole_plot_factors().len();
        let mut plots: Vec<Option<WholePlot>> = Vec::new();
        for (lineno, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != expected.len() {
                return Err(Error::MalformedDesign(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    expected.len(),
                    cells.len()
                )));
            }
            let plot: usize = cells[0].parse().ok().filter(|&p| p >= 1).ok_or_else(|| {
                Error::MalformedDesign(format!("line {}: bad plot number `{}`", lineno + 1, cells[0]))
            })?;
            let levels = order
                .iter()
                .zip(&cells[1..])
                .map(|(&f, c)| layout.parse_level(f, c))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::MalformedDesign(format!("line {}: {e}", lineno + 1)))?;
            let (w, t) = levels.split_at(m_w);
            if plots.len() < plot {
                plots.resize(plot, None);
            }
            match &mut plots[plot - 1] {
                slot @ None => {
                    *slot = Some(WholePlot {
                        whole: w.to_vec(),
                        subplots: vec![t.to_vec()],
                    })
                }
                Some(p) => {
                    if p.whole != w {
                        return Err(Error::MalformedDesign(format!(
                            "line {}: plot {plot} mixes whole-plot levels",
                            lineno + 1
                        )));
                    }
                    p.subplots.push(t.to_vec());
                }
            }
        }
        let plots = plots
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| Error::MalformedDesign(format!("plot {} has no runs", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        SplitPlotDesign::new(plots, layout)
    }
}

/// Error variances. `d = sigma_gamma_sq / sigma_eps_sq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub sigma_eps_sq: f64,
    pub sigma_gamma_sq: f64,
}

impl Default for VarianceSpec {
    fn default() -> Self {
        VarianceSpec {
            sigma_eps_sq: 1.0,
            sigma_gamma_sq: 1.0,
        }
    }
}

impl VarianceSpec {
    pub fn new(sigma_eps_sq: f64, sigma_gamma_sq: f64) -> Result<Self> {
        if !(sigma_eps_sq > 0.0 && sigma_eps_sq.is_finite()) {
            return Err(Error::param("sigma_eps_sq", "must be finite and > 0"));
        }
        if !(sigma_gamma_sq >= 0.0 && sigma_gamma_sq.is_finite()) {
            return Err(Error::param("sigma_gamma_sq", "must be finite and >= 0"));
        }
        Ok(VarianceSpec {
            sigma_eps_sq,
            sigma_gamma_sq,
        })
    }

    /// Variance spec with `sigma_eps_sq = 1` and the given ratio.
    pub fn with_ratio(d: f64) -> Result<Self> {
        VarianceSpec::new(1.0, d)
    }

    pub fn d(&self) -> f64 {
        self.sigma_gamma_sq / self.sigma_eps_sq
    }

    /// `d / (1 + d n_i)`, the off-diagonal coefficient of `sigma_eps^2 Sigma_i^{-1}`.
    pub fn inv_coef(&self, n_i: usize) -> f64 {
        let d = self.d();
        d / (1.0 + d * n_i as f64)
    }

    /// `(2d + d^2 n_i) / (1 + d n_i)^2`, the coefficient of `sigma_eps^4 Sigma_i^{-2}`.
    pub fn inv_sq_coef(&self, n_i: usize) -> f64 {
        let d = self.d();
        let n = n_i as f64;
        (2.0 * d + d * d * n) / ((1.0 + d * n) * (1.0 + d * n))
    }
}

/// `X1`, its column-scaled copy `G1 = X1 V1^{-1/2}`, and the plot row ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub x1: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    pub v1: DVector<f64>,
    pub plot_ranges: Vec<Range<usize>>,
}

impl ModelMatrices {
    /// Builds both matrices from an explicit `X1` and `V1` diagonal.
    pub fn from_parts(x1: DMatrix<f64>, v1: DVector<f64>, plot_ranges: Vec<Range<usize>>) -> Self {
        let mut g1 = x1.clone();
        for (j, mut col) in g1.column_iter_mut().enumerate() {
            col /= v1[j].sqrt();
        }
        ModelMatrices {
            x1,
            g1,
            v1,
            plot_ranges,
        }
    }

    pub fn p(&self) -> usize {
        self.x1.ncols() - 1
    }
}

pub fn build_model_matrices(
    design: &SplitPlotDesign,
    requirement: &RequirementSet,
    layout: &FactorLayout,
    contrasts: &ContrastSystem,
    v1: &DVector<f64>,
) -> Result<ModelMatrices> {
    design.validate(layout)?;
    let cols = requirement.p() + 1;
    let runs = design.runs(layout);
    let mut x1 = DMatrix::zeros(runs.len(), cols);
    let mut row = vec![0.0; cols];
    for (i, run) in runs.iter().enumerate() {
        fill_model_row(requirement.terms(), run, contrasts, &mut row);
        for (j, v) in row.iter().enumerate() {
            x1[(i, j)] = *v;
        }
    }
    Ok(ModelMatrices::from_parts(x1, v1.clone(), design.plot_ranges()))
}

/// `Sigma_i^{-1}` and `Sigma_i^{-2}` of one whole plot.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBlocks {
    pub inv: DMatrix<f64>,
    pub inv_sq: DMatrix<f64>,
}

pub fn sigma_inverse_blocks(design: &SplitPlotDesign, var: &VarianceSpec) -> Vec<SigmaBlocks> {
    let s2 = var.sigma_eps_sq;
    design
        .plot_sizes()
        .into_iter()
        .map(|n| {
            let ones = DMatrix::from_element(n, n, 1.0);
            let eye = DMatrix::<f64>::identity(n, n);
            SigmaBlocks {
                inv: (&eye - &ones * var.inv_coef(n)) / s2,
                inv_sq: (eye - ones * var.inv_sq_coef(n)) / (s2 * s2),
            }
        })
        .collect()
}

/// Generalized least squares fit of `y` under the block covariance.
#[derive(Debug, Clone)]
pub struct GlsFit {
    pub beta: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn glse_estimate(
    matrices: &ModelMatrices,
    var: &VarianceSpec,
    y: &DVector<f64>,
) -> Result<GlsFit> {
    let x = &matrices.x1;
    if y.len() != x.nrows() {
        return Err(Error::MalformedDesign(format!(
            "response has length {}, design has {} runs",
            y.len(),
            x.nrows()
        )));
    }
    let k = x.ncols();
    let mut info = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for range in &matrices.plot_ranges {
        let xi = x.rows(range.start, range.len());
        let yi = y.rows(range.start, range.len());
        let c = var.inv_coef(range.len());
        let sx: DVector<f64> = xi.row_sum().transpose();
        let sy = yi.sum();
        info += (xi.transpose() * xi - &sx * sx.transpose() * c) / var.sigma_eps_sq;
        rhs += (xi.transpose() * yi - &sx * (c * sy)) / var.sigma_eps_sq;
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::SingularDesign { terms: vec![] })?;
    Ok(GlsFit {
        beta: chol.solve(&rhs),
        cov: chol.inverse(),
    })
}
