//! The two worked example problems and their reference designs.

use crate::annealer::AnnealParams;
use crate::contrasts::{Factor, FactorLayout, RequirementSet, Role};
use crate::design::{SplitPlotDesign, VarianceSpec};
use crate::error::Result;
use crate::problem::Problem;

/// A complete search problem.
#[derive(Debug, Clone)]
pub struct Example {
    pub layout: FactorLayout,
    pub requirement: Vec<String>,
    pub sizes: Vec<usize>,
    pub params: AnnealParams,
}

impl Example {
    pub fn problem(&self, var: VarianceSpec, alpha: f64) -> Result<Problem> {
        let req = RequirementSet::parse(&self.requirement, &self.layout)?;
        Problem::new(self.layout.clone(), req, var, alpha)
    }
}

/// Five two-level factors, two of them whole-plot; four whole plots of
/// sizes 4, 4, 4, 3.
pub fn example1() -> Example {
    let layout = FactorLayout::new(vec![
        Factor::new("F1", 2, Role::WholePlot),
        Factor::new("F2", 2, Role::WholePlot),
        Factor::new("F3", 2, Role::Subplot),
        Factor::new("F4", 2, Role::Subplot),
        Factor::new("F5", 2, Role::Subplot),
    ])
    .expect("static layout");
    Example {
        layout,
        requirement: ["x1", "x2", "x3", "x4", "x5", "x1*x2", "x1*x3"].map(String::from).to_vec(),
        sizes: vec![4, 4, 4, 3],
        params: AnnealParams::standard(3, vec![3; 4]),
    }
}

/// One two-level whole-plot factor and two three-level subplot factors;
/// four whole plots of sizes 2, 2, 3, 3.
pub fn example2() -> Example {
    let layout = FactorLayout::new(vec![
        Factor::new("F1", 2, Role::WholePlot),
        Factor::new("F2", 3, Role::Subplot),
        Factor::new("F3", 3, Role::Subplot),
    ])
    .expect("static layout");
    Example {
        layout,
        requirement: ["x1", "x2L", "x2Q", "x3L", "x3Q", "x1*x2L", "x1*x2Q", "x1*x3L", "x1*x3Q"]
            .map(String::from)
            .to_vec(),
        sizes: vec![2, 2, 3, 3],
        params: AnnealParams::standard(3, vec![2; 4]),
    }
}

pub fn example(k: u8) -> Option<Example> {
    match k {
        1 => Some(example1()),
        2 => Some(example2()),
        _ => None,
    }
}

/// Reference design "A" for example 1.
pub const EXAMPLE1_A: &str = "\
plot,F1,F2,F3,F4,F5
1,1,-1,1,1,1
1,1,-1,-1,-1,-1
1,1,-1,-1,-1,1
1,1,-1,1,1,-1
2,-1,1,1,1,-1
2,-1,1,1,-1,-1
2,-1,1,-1,1,1
2,-1,1,-1,-1,1
3,-1,-1,-1,-1,-1
3,-1,-1,1,-1,1
3,-1,-1,-1,1,-1
3,-1,-1,1,1,1
4,1,1,1,-1,-1
4,1,1,-1,1,1
4,1,1,-1,1,-1
";

/// Reference design "B" for example 1.
pub const EXAMPLE1_B: &str = "\
plot,F1,F2,F3,F4,F5
1,1,1,-1,1,1
1,1,1,1,-1,-1
1,1,1,1,1,-1
1,1,1,-1,-1,1
2,-1,-1,-1,-1,1
2,-1,-1,1,-1,-1
2,-1,-1,1,1,1
2,-1,-1,-1,1,-1
3,1,-1,-1,-1,-1
3,1,-1,1,-1,1
3,1,-1,-1,1,-1
3,1,-1,1,1,1
4,-1,1,-1,-1,1
4,-1,1,1,1,-1
4,-1,1,-1,1,-1
";

/// Reference design "A" for example 2.
pub const EXAMPLE2_A: &str = "\
plot,F1,F2,F3
1,-1,0,0
1,-1,1,1
2,1,0,2
2,1,0,1
3,-1,2,2
3,-1,2,0
3,-1,0,1
4,1,2,1
4,1,1,2
4,1,1,0
";

/// Reference design "B" for example 2.
pub const EXAMPLE2_B: &str = "\
plot,F1,F2,F3
1,-1,2,2
1,-1,1,1
2,1,2,0
2,1,0,2
3,-1,1,0
3,-1,0,2
3,-1,2,1
4,1,2,1
4,1,0,0
4,1,1,2
";

/// Parses a reference design against its example layout.
pub fn reference_design(example: &Example, csv: &str) -> Result<SplitPlotDesign> {
    SplitPlotDesign::from_csv(csv, &example.layout)
}
