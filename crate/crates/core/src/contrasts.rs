//! Factor layouts, orthogonal polynomial contrasts and model terms.
//!
//! Every factor with `s` levels is coded by `s - 1` orthogonal polynomial
//! contrasts over the equally spaced scores `0..s`, each scaled so that the
//! mean of its squared entries is one. For two- and three-level factors this
//! gives the familiar codings `(-1, +1)`, `sqrt(3/2)(-1, 0, 1)` and
//! `sqrt(1/2)(1, -2, 1)`. Under this scaling the full factorial model matrix
//! `H` satisfies `H'H = N I`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest full factorial the oracle paths are willing to materialize.
pub const MATERIALIZE_GUARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    WholePlot,
    Subplot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: usize,
    pub role: Role,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: usize, role: Role) -> Self {
        Factor {
            name: name.into(),
            levels,
            role,
        }
    }
}

/// The factors of an experiment and their whole-plot/subplot roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorLayout {
    factors: Vec<Factor>,
    whole: Vec<usize>,
    sub: Vec<usize>,
}

impl FactorLayout {
    /// Validates level counts and roles. A layout without whole-plot factors
    /// is accepted here; it only makes sense for a completely randomized
    /// design (`d = 0`), which is checked when a problem is assembled.
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidLayout("no factors given".into()));
        }
        for f in &factors {
            if f.levels < 2 {
                return Err(Error::InvalidLayout(format!(
                    "factor {} has {} levels, need at least 2",
                    f.name, f.levels
                )));
            }
        }
        let whole: Vec<usize> = (0..factors.len())
            .filter(|&i| factors[i].role == Role::WholePlot)
            .collect();
        let sub: Vec<usize> = (0..factors.len())
            .filter(|&i| factors[i].role == Role::Subplot)
            .collect();
        if sub.is_empty() {
            return Err(Error::InvalidLayout("at least one subplot factor is required".into()));
        }
        let mut total: usize = 1;
        for f in &factors {
            total = total.checked_mul(f.levels).ok_or_else(|| {
                Error::InvalidLayout("full factorial size overflows".into())
            })?;
        }
        Ok(FactorLayout {
            factors,
            whole,
            sub,
        })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    pub fn whole_plot_factors(&self) -> &[usize] {
        &self.whole
    }

    pub fn subplot_factors(&self) -> &[usize] {
        &self.sub
    }

    /// Number of runs `N` of the full factorial.
    pub fn run_count(&self) -> usize {
        self.factors.iter().map(|f| f.levels).product()
    }

    /// Merges a whole-plot and a subplot level combination into a full run,
    /// ordered by factor index.
    pub fn full_run(&self, whole: &[usize], sub: &[usize]) -> Vec<usize> {
        let mut run = vec![0; self.m()];
        for (&f, &l) in self.whole.iter().zip(whole) {
            run[f] = l;
        }
        for (&f, &l) in self.sub.iter().zip(sub) {
            run[f] = l;
        }
        run
    }

    /// All level combinations of the given factors, last factor varying fastest.
    pub fn combinations(&self, factor_idx: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::with_capacity(factor_idx.len())];
        for &f in factor_idx {
            let s = self.factors[f].levels;
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..s).map(move |l| {
                        let mut v = prefix.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
        }
        out
    }

    pub fn full_factorial(&self) -> Vec<Vec<usize>> {
        let all: Vec<usize> = (0..self.m()).collect();
        self.combinations(&all)
    }

    /// Text label of a level: two-level factors use `-1`/`1`, others `0..s`.
    pub fn level_label(&self, factor: usize, level: usize) -> String {
        if self.factors[factor].levels == 2 {
            if level == 0 { "-1" } else { "1" }.to_string()
        } else {
            level.to_string()
        }
    }

    pub fn parse_level(&self, factor: usize, text: &str) -> Result<usize> {
        let f = &self.factors[factor];
        let t = text.trim();
        let bad = || {
            Error::MalformedDesign(format!(
                "level `{t}` is not valid for factor {} ({} levels)",
                f.name, f.levels
            ))
        };
        if f.levels == 2 {
            match t {
                "-1" => Ok(0),
                "1" | "+1" => Ok(1),
                _ => Err(bad()),
            }
        } else {
            let l: usize = t.parse().map_err(|_| bad())?;
            if l < f.levels {
                Ok(l)
            } else {
                Err(bad())
            }
        }
    }
}

/// Per-factor contrast tables: entry `(level, degree - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSystem {
    tables: Vec<DMatrix<f64>>,
}

impl ContrastSystem {
    pub fn table(&self, factor: usize) -> &DMatrix<f64> {
        &self.tables[factor]
    }

    #[inline]
    pub fn entry(&self, factor: usize, level: usize, degree: usize) -> f64 {
        self.tables[factor][(level, degree - 1)]
    }

    /// Mean of the squared entries of one contrast column.
    pub fn mean_square(&self, factor: usize, degree: usize) -> f64 {
        let col = self.tables[factor].column(degree - 1);
        col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64
    }
}

/// Orthogonal polynomial contrasts for every factor of the layout.
pub fn build_contrasts(layout: &FactorLayout) -> ContrastSystem {
    let tables = layout
        .factors()
        .iter()
        .map(|f| polynomial_contrasts(f.levels))
        .collect();
    ContrastSystem { tables }
}

/// Gram-Schmidt on `1, x, x^2, ...` over `x = 0..s`, dropping the constant and
/// scaling each column to unit mean square.
fn polynomial_contrasts(s: usize) -> DMatrix<f64> {
    // Centre the scores first; it keeps the Gram-Schmidt well conditioned.
    let centre = (s as f64 - 1.0) / 2.0;
    let x: Vec<f64> = (0..s).map(|i| i as f64 - centre).collect();
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(s, 1.0 / (s as f64).sqrt())];
    let mut out = DMatrix::zeros(s, s - 1);
    for k in 1..s {
        let mut v = DVector::from_iterator(s, x.iter().map(|xi| xi.powi(k as i32)));
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        v /= norm;
        basis.push(v.clone());
        out.set_column(k - 1, &(v * (s as f64).sqrt()));
    }
    out
}

/// A product of per-factor contrast components. The empty term is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    components: Vec<(usize, usize)>,
}

impl Term {
    pub fn intercept() -> Self {
        Term { components: vec![] }
    }

    /// Components are `(factor index, degree)`; factor indices must be distinct.
    pub fn new(mut components: Vec<(usize, usize)>) -> Result<Self> {
        components.sort_unstable();
        for w in components.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidTerm {
                    term: format!("{components:?}"),
                    reason: format!("factor x{} appears twice", w[0].0 + 1),
                });
            }
        }
        if components.iter().any(|&(_, k)| k == 0) {
            return Err(Error::InvalidTerm {
                term: format!("{components:?}"),
                reason: "component degree must be at least 1".into(),
            });
        }
        Ok(Term { components })
    }

    /// Parses `x1`, `x2Q`, `x1*x3L`, ... against a layout.
    pub fn parse(text: &str, layout: &FactorLayout) -> Result<Self> {
        let text = text.trim();
        let invalid = |reason: String| Error::InvalidTerm {
            term: text.to_string(),
            reason,
        };
        if text.is_empty() {
            return Err(invalid("empty term".into()));
        }
        let mut comps = Vec::new();
        for piece in text.split('*') {
            let piece = piece.trim();
            let rest = piece
                .strip_prefix('x')
                .or_else(|| piece.strip_prefix('X'))
                .ok_or_else(|| invalid(format!("`{piece}` does not start with x")))?;
            let digits_end = rest
                .find(|c: char| !c.is_ascii_digit())
                .unwrap_or(rest.len());
            let (digits, suffix) = rest.split_at(digits_end);
            let idx: usize = digits
                .parse()
                .map_err(|_| invalid(format!("`{piece}` has no factor number")))?;
            if idx == 0 || idx > layout.m() {
                return Err(Error::UnknownFactor(format!("x{idx}")));
            }
            let degree = match suffix {
                "" | "L" | "l" => 1,
                "Q" | "q" => 2,
                "C" | "c" => 3,
                s if s.starts_with('P') || s.starts_with('p') => s[1..]
                    .parse()
                    .map_err(|_| invalid(format!("bad degree suffix `{s}`")))?,
                s => return Err(invalid(format!("bad degree suffix `{s}`"))),
            };
            let levels = layout.factors()[idx - 1].levels;
            if degree == 0 || degree >= levels {
                return Err(invalid(format!(
                    "degree {degree} out of range for x{idx} ({levels} levels)"
                )));
            }
            comps.push((idx - 1, degree));
        }
        Term::new(comps).map_err(|e| match e {
            Error::InvalidTerm { reason, .. } => invalid(reason),
            other => other,
        })
    }

    pub fn components(&self) -> &[(usize, usize)] {
        &self.components
    }

    pub fn is_intercept(&self) -> bool {
        self.components.is_empty()
    }

    pub fn label(&self, layout: &FactorLayout) -> String {
        if self.is_intercept() {
            return "intercept".into();
        }
        self.components
            .iter()
            .map(|&(f, k)| {
                let suffix = if layout.factors()[f].levels == 2 {
                    String::new()
                } else {
                    match k {
                        1 => "L".into(),
                        2 => "Q".into(),
                        3 => "C".into(),
                        k => format!("P{k}"),
                    }
                };
                format!("x{}{}", f + 1, suffix)
            })
            .collect::<Vec<_>>()
            .join("*")
    }

    fn check(&self, layout: &FactorLayout) -> Result<()> {
        for &(f, k) in &self.components {
            if f >= layout.m() {
                return Err(Error::UnknownFactor(format!("x{}", f + 1)));
            }
            if k >= layout.factors()[f].levels {
                return Err(Error::InvalidTerm {
                    term: self.label(layout),
                    reason: format!("degree {k} out of range for x{}", f + 1),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_intercept() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|(i, k)| format!("x{}^{}", i + 1, k))
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// The `p` terms the experimenter wants to estimate. The intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementSet {
    terms: Vec<Term>,
}

impl RequirementSet {
    pub fn new(terms: Vec<Term>, layout: &FactorLayout) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if t.is_intercept() {
                return Err(Error::InvalidTerm {
                    term: "intercept".into(),
                    reason: "the intercept is implicit".into(),
                });
            }
            t.check(layout)?;
            if terms[..i].contains(t) {
                return Err(Error::InvalidTerm {
                    term: t.label(layout),
                    reason: "listed twice".into(),
                });
            }
        }
        if terms.len() + 1 > layout.run_count() {
            return Err(Error::InvalidTerm {
                term: String::new(),
                reason: format!(
                    "{} terms plus intercept exceed the {} runs of the full factorial",
                    terms.len(),
                    layout.run_count()
                ),
            });
        }
        Ok(RequirementSet { terms })
    }

    pub fn parse<S: AsRef<str>>(texts: &[S], layout: &FactorLayout) -> Result<Self> {
        let terms = texts
            .iter()
            .map(|t| Term::parse(t.as_ref(), layout))
            .collect::<Result<Vec<_>>>()?;
        RequirementSet::new(terms, layout)
    }

    /// Number of terms `p` (intercept excluded).
    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Intercept followed by the terms in the order given.
    pub fn labels(&self, layout: &FactorLayout) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.terms.iter().map(|t| t.label(layout)))
            .collect()
    }
}

/// Value of one model column at one run. Runs are full level vectors.
pub fn term_column(term: &Term, run: &[usize], contrasts: &ContrastSystem) -> Result<f64> {
    let mut v = 1.0;
    for &(f, k) in term.components() {
        let table = contrasts.tables.get(f).ok_or_else(|| Error::UnknownFactor(format!("x{}", f + 1)))?;
        if k == 0 || k >= table.nrows() {
            return Err(Error::InvalidTerm {
                term: term.to_string(),
                reason: format!("degree {k} out of range for x{}", f + 1),
            });
        }
        let level = *run.get(f).ok_or_else(|| {
            Error::MalformedDesign(format!("run has no level for factor x{}", f + 1))
        })?;
        if level >= table.nrows() {
            return Err(Error::MalformedDesign(format!(
                "level {level} out of range for factor x{}",
                f + 1
            )));
        }
        v *= table[(level, k - 1)];
    }
    Ok(v)
}

/// Fills `out` with `(1, h_1(run), ..., h_p(run))`. Terms are assumed validated.
pub(crate) fn fill_model_row(
    terms: &[Term],
    run: &[usize],
    contrasts: &ContrastSystem,
    out: &mut [f64],
) {
    out[0] = 1.0;
    for (slot, term) in out[1..].iter_mut().zip(terms) {
        *slot = term
            .components()
            .iter()
            .map(|&(f, k)| contrasts.entry(f, run[f], k))
            .product();
    }
}

/// Diagonal of `V1 = H1'H1`: `N` times the product of component mean squares.
pub fn v1_diagonal(
    requirement: &RequirementSet,
    layout: &FactorLayout,
    contrasts: &ContrastSystem,
) -> DVector<f64> {
    let n = layout.run_count() as f64;
    DVector::from_iterator(
        requirement.p() + 1,
        std::iter::once(n).chain(requirement.terms().iter().map(|t| {
            n * t
                .components()
                .iter()
                .map(|&(f, k)| contrasts.mean_square(f, k))
                .product::<f64>()
        })),
    )
}

/// Every term of the full factorial, intercept first.
pub fn all_terms(layout: &FactorLayout) -> Vec<Term> {
    let mut terms = vec![Term::intercept()];
    for degrees in layout.full_factorial() {
        // `degrees` runs over 0..s per factor; 0 means the factor is absent.
        let comps: Vec<(usize, usize)> = degrees
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(f, &k)| (f, k))
            .collect();
        if !comps.is_empty() {
            terms.push(Term { components: comps });
        }
    }
    terms
}

/// Evaluates the given terms at every run of the full factorial (`N x terms`).
pub fn materialize(
    terms: &[Term],
    layout: &FactorLayout,
    contrasts: &ContrastSystem,
) -> Result<DMatrix<f64>> {
    let n = layout.run_count();
    if n > MATERIALIZE_GUARD {
        return Err(Error::Capacity {
            what: "N",
            limit: MATERIALIZE_GUARD,
            actual: n,
        });
    }
    let runs = layout.full_factorial();
    let mut h = DMatrix::zeros(n, terms.len());
    for (i, run) in runs.iter().enumerate() {
        for (j, t) in terms.iter().enumerate() {
            h[(i, j)] = term_column(t, run, contrasts)?;
        }
    }
    Ok(h)
}

/// Terms outside the requirement set together with `H2` and the diagonal of `V2`.
#[derive(Debug, Clone)]
pub struct Complement {
    pub terms: Vec<Term>,
    pub h2: DMatrix<f64>,
    pub v2: DVector<f64>,
}

pub fn build_h2(
    requirement: &RequirementSet,
    layout: &FactorLayout,
    contrasts: &ContrastSystem,
) -> Result<Complement> {
    let n = layout.run_count();
    if n > MATERIALIZE_GUARD {
        return Err(Error::Capacity {
            what: "N",
            limit: MATERIALIZE_GUARD,
            actual: n,
        });
    }
    let terms: Vec<Term> = all_terms(layout)
        .into_iter()
        .filter(|t| !t.is_intercept() && !requirement.terms().contains(t))
        .collect();
    let h2 = materialize(&terms, layout, contrasts)?;
    let v2 = DVector::from_iterator(
        terms.len(),
        h2.column_iter().map(|c| c.norm_squared()),
    );
    Ok(Complement { terms, h2, v2 })
}
