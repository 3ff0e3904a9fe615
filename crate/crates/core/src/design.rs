//! Design-matrix construction: scenario selection, dummy coding,
//! interaction expansion, and standardization.
//!
//! Encoding is a fitted transform. [`encode_design`] learns everything from
//! the rows it is given (quantile edges in the recoded scenarios, column
//! means and scales, which constant columns to drop) and the resulting
//! [`DesignMatrix`] can replay the identical transform on held-out rows
//! with [`DesignMatrix::apply_to`], so evaluation data never leaks into the
//! encoding.
//!
//! Columns are grouped by originating variable: a nominal with `L` levels
//! contributes `L - 1` reference-coded indicator columns in one group, a
//! numeric contributes one column. [`expand_interactions`] adds a product
//! group for every unordered pair of main groups, multiplying the raw
//! (unstandardized) kept columns and standardizing afterwards. Groups are
//! kept even when all their columns drop out, so `k` main variables always
//! yield `k + k(k-1)/2` groups.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::{recode_quartiles, Dataset, Recoder};
use crate::error::{Error, Result};
use crate::glm::ScaleFrame;
use crate::schema::{Schema, VarKind, VarRole};

/// Which covariate pool a model run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Explanatory variables as declared.
    Original,
    /// Explanatory variables plus fixed-effect group indicators.
    OriginalVillage,
    /// Explanatory variables with `recode=` numerics converted to
    /// quantile classes.
    Recoded,
    /// Recoded variables plus fixed-effect group indicators.
    RecodedVillage,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Original,
        Scenario::OriginalVillage,
        Scenario::Recoded,
        Scenario::RecodedVillage,
    ];

    pub fn includes_fixed_effects(self) -> bool {
        matches!(self, Scenario::OriginalVillage | Scenario::RecodedVillage)
    }

    pub fn is_recoded(self) -> bool {
        matches!(self, Scenario::Recoded | Scenario::RecodedVillage)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Original => "original",
            Scenario::OriginalVillage => "original-village",
            Scenario::Recoded => "recoded",
            Scenario::RecodedVillage => "recoded-village",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "original" => Ok(Scenario::Original),
            "original-village" => Ok(Scenario::OriginalVillage),
            "recoded" => Ok(Scenario::Recoded),
            "recoded-village" => Ok(Scenario::RecodedVillage),
            other => Err(Error::Config(format!(
                "unknown scenario '{}' (expected original, original-village, recoded, recoded-village)",
                other
            ))),
        }
    }
}

/// Recipe for computing one design column from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnPlan {
    /// 1.0 where `var` equals `level`, else 0.0.
    Indicator { var: String, level: String },
    /// The numeric column itself.
    Numeric { var: String },
    /// Elementwise product of two plans.
    Product(Box<ColumnPlan>, Box<ColumnPlan>),
}

fn eval_plan(plan: &ColumnPlan, dataset: &Dataset) -> Result<Vec<f64>> {
    match plan {
        ColumnPlan::Indicator { var, level } => Ok(dataset
            .labels(var)?
            .iter()
            .map(|l| if l == level { 1.0 } else { 0.0 })
            .collect()),
        ColumnPlan::Numeric { var } => Ok(dataset.numbers(var)?.to_vec()),
        ColumnPlan::Product(a, b) => {
            let xa = eval_plan(a, dataset)?;
            let xb = eval_plan(b, dataset)?;
            Ok(xa.iter().zip(&xb).map(|(u, v)| u * v).collect())
        }
    }
}

/// What a group of columns represents.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    Main,
    Interaction { left: String, right: String },
}

/// A named block of consecutive design columns from one model term.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub kind: GroupKind,
    /// Range into the kept design columns; may be empty if every column
    /// of the term was dropped as constant.
    pub columns: Range<usize>,
}

/// A standardized design matrix together with the fitted transform that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    y: DVector<f64>,
    values: DMatrix<f64>,
    raw: DMatrix<f64>,
    column_names: Vec<String>,
    plans: Vec<ColumnPlan>,
    scales: Vec<(f64, f64)>,
    groups: Vec<Group>,
    dropped: Vec<String>,
    recoder: Recoder,
    scenario: Scenario,
}

struct Builder {
    n: usize,
    plans: Vec<ColumnPlan>,
    names: Vec<String>,
    raw: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    scales: Vec<(f64, f64)>,
    groups: Vec<Group>,
    dropped: Vec<String>,
}

/// Center and sample standard deviation (`n - 1`), or `None` for a column
/// that cannot be standardized (constant, or fewer than two rows).
fn column_stats(col: &[f64]) -> Option<(f64, f64)> {
    let n = col.len();
    if n < 2 {
        return None;
    }
    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return None;
    }
    let center = col.iter().sum::<f64>() / n as f64;
    let ss: f64 = col.iter().map(|&x| (x - center) * (x - center)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd <= 1e-12 * (1.0 + center.abs()) {
        return None;
    }
    Some((center, sd))
}

impl Builder {
    fn new(n: usize) -> Builder {
        Builder {
            n,
            plans: Vec::new(),
            names: Vec::new(),
            raw: Vec::new(),
            std: Vec::new(),
            scales: Vec::new(),
            groups: Vec::new(),
            dropped: Vec::new(),
        }
    }

    fn push_column(&mut self, plan: ColumnPlan, name: String, raw: Vec<f64>) {
        match column_stats(&raw) {
            Some((center, scale)) => {
                let std: Vec<f64> = raw.iter().map(|&x| (x - center) / scale).collect();
                self.plans.push(plan);
                self.names.push(name);
                self.raw.push(raw);
                self.std.push(std);
                self.scales.push((center, scale));
            }
            None => {
                log::debug!("dropping constant design column '{}'", name);
                self.dropped.push(name);
            }
        }
    }

    fn finish(self, y: DVector<f64>, recoder: Recoder, scenario: Scenario) -> DesignMatrix {
        let p = self.plans.len();
        let values = DMatrix::from_fn(self.n, p, |i, j| self.std[j][i]);
        let raw = DMatrix::from_fn(self.n, p, |i, j| self.raw[j][i]);
        DesignMatrix {
            y,
            values,
            raw,
            column_names: self.names,
            plans: self.plans,
            scales: self.scales,
            groups: self.groups,
            dropped: self.dropped,
            recoder,
            scenario,
        }
    }
}

fn var_included(role: VarRole, scenario: Scenario) -> bool {
    match role {
        VarRole::Explanatory => true,
        VarRole::FixedEffectGroup => scenario.includes_fixed_effects(),
        VarRole::Response | VarRole::LevelKey => false,
    }
}

/// Encodes the main-effect design for one scenario.
///
/// Recoded scenarios fit quantile edges on these rows first. Nominal
/// variables are reference-coded against their first declared level;
/// numeric variables pass through. Every kept column is standardized to
/// mean zero and unit sample standard deviation; constant columns are
/// dropped and recorded.
pub fn encode_design(dataset: &Dataset, scenario: Scenario) -> Result<DesignMatrix> {
    let (working, recoder) = if scenario.is_recoded() {
        recode_quartiles(dataset)?
    } else {
        (dataset.clone(), Recoder::empty())
    };
    let y = DVector::from_vec(working.response().to_vec());
    let mut b = Builder::new(working.n_rows());
    for v in working.schema().vars() {
        if !var_included(v.role, scenario) {
            continue;
        }
        let start = b.plans.len();
        match &v.kind {
            VarKind::Nominal { levels } => {
                for level in &levels[1..] {
                    let plan = ColumnPlan::Indicator {
                        var: v.name.clone(),
                        level: level.clone(),
                    };
                    let raw = eval_plan(&plan, &working)?;
                    b.push_column(plan, format!("{}={}", v.name, level), raw);
                }
            }
            VarKind::Discrete | VarKind::Continuous => {
                let plan = ColumnPlan::Numeric {
                    var: v.name.clone(),
                };
                let raw = eval_plan(&plan, &working)?;
                b.push_column(plan, v.name.clone(), raw);
            }
        }
        b.groups.push(Group {
            name: v.name.clone(),
            kind: GroupKind::Main,
            columns: start..b.plans.len(),
        });
    }
    Ok(b.finish(y, recoder, scenario))
}

/// Adds a product group for every unordered pair of main groups.
///
/// Products multiply the raw (pre-standardization) kept columns of the two
/// groups and are then standardized like any other column. Pair groups are
/// appended in lexicographic pair order and kept even when empty.
pub fn expand_interactions(design: &DesignMatrix) -> Result<DesignMatrix> {
    if design.is_expanded() {
        return Err(Error::Invalid(
            "design already contains interaction groups".to_string(),
        ));
    }
    let n = design.n();
    let mut b = Builder::new(n);
    b.plans = design.plans.clone();
    b.names = design.column_names.clone();
    b.scales = design.scales.clone();
    b.groups = design.groups.clone();
    b.dropped = design.dropped.clone();
    for j in 0..design.p() {
        b.raw.push(design.raw.column(j).iter().cloned().collect());
        b.std
            .push(design.values.column(j).iter().cloned().collect());
    }
    let mains = design.groups.clone();
    for i in 0..mains.len() {
        for j in (i + 1)..mains.len() {
            let start = b.plans.len();
            for a in mains[i].columns.clone() {
                for c in mains[j].columns.clone() {
                    let raw: Vec<f64> = (0..n)
                        .map(|r| design.raw[(r, a)] * design.raw[(r, c)])
                        .collect();
                    let plan = ColumnPlan::Product(
                        Box::new(design.plans[a].clone()),
                        Box::new(design.plans[c].clone()),
                    );
                    let name = format!("{}:{}", design.column_names[a], design.column_names[c]);
                    b.push_column(plan, name, raw);
                }
            }
            b.groups.push(Group {
                name: format!("{}:{}", mains[i].name, mains[j].name),
                kind: GroupKind::Interaction {
                    left: mains[i].name.clone(),
                    right: mains[j].name.clone(),
                },
                columns: start..b.plans.len(),
            });
        }
    }
    Ok(b.finish(design.y.clone(), design.recoder.clone(), design.scenario))
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Standardized design columns, one per kept plan.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Raw (pre-standardization) kept columns.
    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn recoder(&self) -> &Recoder {
        &self.recoder
    }

    pub fn is_expanded(&self) -> bool {
        self.groups
            .iter()
            .any(|g| matches!(g.kind, GroupKind::Interaction { .. }))
    }

    /// Per-column (center, scale) pairs in column order.
    pub fn scales(&self) -> &[(f64, f64)] {
        &self.scales
    }

    pub fn scale_frame(&self) -> ScaleFrame {
        ScaleFrame {
            centers: self.scales.iter().map(|&(c, _)| c).collect(),
            scales: self.scales.iter().map(|&(_, s)| s).collect(),
        }
    }

    /// The group index owning column `j`.
    pub fn group_of_column(&self, j: usize) -> usize {
        self.groups
            .iter()
            .position(|g| g.columns.contains(&j))
            .expect("every kept column belongs to a group")
    }

    /// Replays the fitted transform on new rows: same quantile edges, same
    /// column plans, same centers and scales. Returns the standardized
    /// matrix and the response.
    pub fn apply_to(&self, dataset: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let working = if self.recoder.is_empty() {
            dataset.clone()
        } else {
            self.recoder.apply(dataset)?
        };
        let n = working.n_rows();
        let mut m = DMatrix::zeros(n, self.plans.len());
        for (j, plan) in self.plans.iter().enumerate() {
            let col = eval_plan(plan, &working)?;
            let (center, scale) = self.scales[j];
            for i in 0..n {
                m[(i, j)] = (col[i] - center) / scale;
            }
        }
        let y = DVector::from_vec(working.response().to_vec());
        Ok((m, y))
    }
}

/// The scenario's group-name universe derived from the schema alone:
/// main variables in declaration order, then every unordered pair as
/// `left:right`. Data-independent, so presence matrices from different
/// folds always share this column set.
pub fn canonical_group_names(schema: &Schema, scenario: Scenario) -> Vec<String> {
    let mains: Vec<&str> = schema
        .vars()
        .iter()
        .filter(|v| var_included(v.role, scenario))
        .map(|v| v.name.as_str())
        .collect();
    let mut names: Vec<String> = mains.iter().map(|s| s.to_string()).collect();
    for i in 0..mains.len() {
        for j in (i + 1)..mains.len() {
            names.push(format!("{}:{}", mains[i], mains[j]));
        }
    }
    names
}
