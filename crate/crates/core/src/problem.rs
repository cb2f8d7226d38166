use nalgebra::DVector;

use crate::contrasts::{build_contrasts, fill_model_row, v1_diagonal, ContrastSystem, FactorLayout, RequirementSet};
use crate::design::{build_model_matrices, ModelMatrices, SplitPlotDesign, VarianceSpec};
use crate::error::{Error, Result};

/// Everything that stays fixed while designs are evaluated: the layout, its
/// contrasts, the requirement set, `V1`, the variances and `alpha`.
#[derive(Debug, Clone)]
pub struct Problem {
    layout: FactorLayout,
    contrasts: ContrastSystem,
    requirement: RequirementSet,
    v1: DVector<f64>,
    v1_inv_sqrt: DVector<f64>,
    var: VarianceSpec,
    alpha: f64,
}

impl Problem {
    pub fn new(
        layout: FactorLayout,
        requirement: RequirementSet,
        var: VarianceSpec,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", "must be finite and >= 0"));
        }
        if layout.whole_plot_factors().is_empty() && var.d() != 0.0 {
            return Err(Error::InvalidLayout(
                "a layout without whole-plot factors needs d = 0".into(),
            ));
        }
        let contrasts = build_contrasts(&layout);
        let v1 = v1_diagonal(&requirement, &layout, &contrasts);
        let v1_inv_sqrt = v1.map(|v| 1.0 / v.sqrt());
        Ok(Problem {
            layout,
            contrasts,
            requirement,
            v1,
            v1_inv_sqrt,
            var,
            alpha,
        })
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    pub fn contrasts(&self) -> &ContrastSystem {
        &self.contrasts
    }

    pub fn requirement(&self) -> &RequirementSet {
        &self.requirement
    }

    pub fn var(&self) -> &VarianceSpec {
        &self.var
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn v1(&self) -> &DVector<f64> {
        &self.v1
    }

    /// Number of requirement terms `p`.
    pub fn p(&self) -> usize {
        self.requirement.p()
    }

    /// Number of runs `N` of the full factorial.
    pub fn big_n(&self) -> usize {
        self.layout.run_count()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Problem::new(self.layout.clone(), self.requirement.clone(), self.var, alpha)
    }

    pub fn with_var(&self, var: VarianceSpec) -> Result<Self> {
        Problem::new(self.layout.clone(), self.requirement.clone(), var, self.alpha)
    }

    /// Row `f(w, t)` of `X1`.
    pub fn f_row(&self, whole: &[usize], sub: &[usize]) -> DVector<f64> {
        let run = self.layout.full_run(whole, sub);
        let mut row = DVector::zeros(self.p() + 1);
        fill_model_row(self.requirement.terms(), &run, &self.contrasts, row.as_mut_slice());
        row
    }

    /// Row `g(w, t) = V1^{-1/2} f(w, t)`.
    pub fn g_of(&self, f: &DVector<f64>) -> DVector<f64> {
        f.component_mul(&self.v1_inv_sqrt)
    }

    pub fn matrices(&self, design: &SplitPlotDesign) -> Result<ModelMatrices> {
        build_model_matrices(design, &self.requirement, &self.layout, &self.contrasts, &self.v1)
    }
}
