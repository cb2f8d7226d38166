#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;
use robust_spd::annealer::initial_design;
use robust_spd::contrasts::all_terms;
use robust_spd::criterion::evaluate;
use robust_spd::{Factor, FactorLayout, Problem, RequirementSet, Role, SplitPlotDesign, VarianceSpec};

pub struct Instance {
    pub problem: Problem,
    pub design: SplitPlotDesign,
}

/// 2-3 factors with 2-4 levels (N <= 32), at least one factor of each role.
pub fn random_layout<R: Rng>(rng: &mut R) -> FactorLayout {
    loop {
        let m = rng.random_range(2..=3);
        let levels: Vec<usize> = (0..m).map(|_| rng.random_range(2..=4)).collect();
        if levels.iter().product::<usize>() > 32 {
            continue;
        }
        let factors = levels
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let role = match i {
                    0 => Role::WholePlot,
                    i if i == m - 1 => Role::Subplot,
                    _ if rng.random_bool(0.5) => Role::WholePlot,
                    _ => Role::Subplot,
                };
                Factor::new(format!("F{}", i + 1), s, role)
            })
            .collect();
        return FactorLayout::new(factors).unwrap();
    }
}

/// Random problem and nonsingular design with at most `max_n` runs.
pub fn random_instance<R: Rng>(rng: &mut R, var: VarianceSpec, alpha: f64, max_n: usize) -> Instance {
    loop {
        let layout = random_layout(rng);
        let e = layout.combinations(layout.subplot_factors()).len();
        let cap = max_n.min(layout.run_count());
        let b = rng.random_range(1..=4usize);
        let sizes: Vec<usize> = (0..b).map(|_| rng.random_range(1..=e.min(4))).collect();
        let n: usize = sizes.iter().sum();
        if n > cap || n < 3 {
            continue;
        }
        let pool: Vec<_> = all_terms(&layout).into_iter().filter(|t| !t.is_intercept()).collect();
        let p = rng.random_range(1..=pool.len().min(n - 1));
        let terms = sample(rng, pool.len(), p).into_iter().map(|i| pool[i].clone()).collect();
        let req = RequirementSet::new(terms, &layout).unwrap();
        let problem = Problem::new(layout, req, var, alpha).unwrap();
        let Ok(design) = initial_design(problem.layout(), &sizes, rng) else {
            continue;
        };
        if evaluate(&problem, &design).is_ok() {
            return Instance { problem, design };
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
