//! Synthetic grouped count-survey generator.
//!
//! Produces datasets with the nested village / house / repeated-survey
//! layout: houses carry structural attributes, each survey visit carries
//! weather readings, and the count response is drawn from a Poisson model
//! whose linear predictor loads on a small set of true-support groups.
//! Effects are expressed on the standardized design columns, so a
//! coefficient of 0.4 means 0.4 per standard deviation regardless of the
//! raw column scale.

use crate::data::{ColumnData, Dataset};
use crate::design::{encode_design, expand_interactions, Scenario};
use crate::error::{Error, Result};
use crate::glm;
use crate::schema::{Schema, VarKind, VarRole, VariableSpec};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};

/// One true-support term: a design group name and its coefficient on the
/// standardized column scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportTerm {
    pub group: String,
    pub beta: f64,
}

impl SupportTerm {
    pub fn new(group: &str, beta: f64) -> SupportTerm {
        SupportTerm {
            group: group.to_string(),
            beta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub villages: usize,
    pub houses_per_village: usize,
    pub surveys_per_house: usize,
    /// Intercept of the log-rate model.
    pub intercept: f64,
    /// True support; every entry must name a single-column design group.
    pub effects: Vec<SupportTerm>,
    /// Standard deviation of per-village log-rate offsets.
    pub village_sd: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> SynthConfig {
        SynthConfig {
            villages: 9,
            houses_per_village: 4,
            surveys_per_house: 8,
            intercept: 1.2,
            effects: default_effects(),
            village_sd: 0.0,
            seed,
        }
    }
}

/// Two survey-level mains plus their interaction, at moderate sizes.
pub fn default_effects() -> Vec<SupportTerm> {
    vec![
        SupportTerm::new("temp_anomaly", 0.4),
        SupportTerm::new("rain_anomaly", 0.4),
        SupportTerm::new("temp_anomaly:rain_anomaly", 0.3),
    ]
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub intercept: f64,
    pub effects: Vec<SupportTerm>,
    /// Poisson rate used for each row, in row order.
    pub mu: Vec<f64>,
}

impl SynthOutput {
    pub fn true_groups(&self) -> Vec<&str> {
        self.effects.iter().map(|t| t.group.as_str()).collect()
    }

    /// Ground-truth description suitable for writing next to the data.
    pub fn render_truth(&self) -> String {
        let mut out = format!("intercept {}\n", self.intercept);
        for t in &self.effects {
            out.push_str(&format!("effect {} {}\n", t.group, t.beta));
        }
        out
    }
}

const BINARY_VARS: [&str; 10] = [
    "eaves",
    "thatched_roof",
    "open_walls",
    "window_screens",
    "bed_nets",
    "animals_inside",
    "cooking_inside",
    "water_storage",
    "vegetation_near",
    "stagnant_water",
];

/// The survey-style schema: a count response, a village fixed-effect
/// group, a house hold-out key, ten binary structure variables, and six
/// per-visit deviation readings measured against catchment norms (four
/// of them carrying quartile recode markers).
///
/// The deviation covariates are centered by construction. Interaction
/// columns are raw products, so a covariate with a large positive mean
/// would turn every product involving it into a near-copy of the other
/// factor; centered readings keep the expanded design identifiable.
pub fn survey_schema(villages: usize, houses_per_village: usize) -> Result<Schema> {
    let village_levels: Vec<String> = (1..=villages).map(|v| format!("v{}", v)).collect();
    let mut house_levels = Vec::with_capacity(villages * houses_per_village);
    for v in 1..=villages {
        for h in 1..=houses_per_village {
            house_levels.push(format!("v{}h{}", v, h));
        }
    }
    fn as_refs(xs: &[String]) -> Vec<&str> {
        xs.iter().map(|s| s.as_str()).collect()
    }

    let mut vars = vec![
        VariableSpec::numeric("anopheles", VarRole::Response, VarKind::Discrete),
        VariableSpec::nominal(
            "village",
            VarRole::FixedEffectGroup,
            &as_refs(&village_levels),
        ),
        VariableSpec::nominal("house", VarRole::LevelKey, &as_refs(&house_levels)),
    ];
    for name in BINARY_VARS {
        vars.push(VariableSpec::nominal(
            name,
            VarRole::Explanatory,
            &["no", "yes"],
        ));
    }
    for name in [
        "temp_anomaly",
        "humidity_anomaly",
        "rain_anomaly",
        "wind_anomaly",
    ] {
        vars.push(
            VariableSpec::numeric(name, VarRole::Explanatory, VarKind::Continuous).with_recode(4),
        );
    }
    for name in ["moon_index", "light_index"] {
        vars.push(VariableSpec::numeric(
            name,
            VarRole::Explanatory,
            VarKind::Continuous,
        ));
    }
    Schema::new(vars)
}

/// Draws a dataset from the configured model. The covariates are sampled
/// first, the design is encoded and standardized exactly as the fitting
/// pipeline would, and the response is then drawn from
/// `Poisson(exp(intercept + X_std beta + village offset))`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    if config.villages < 2 {
        return Err(Error::Config(
            "need at least 2 villages to form hold-out levels".to_string(),
        ));
    }
    if config.houses_per_village == 0 || config.surveys_per_house == 0 {
        return Err(Error::Config(
            "houses per village and surveys per house must be positive".to_string(),
        ));
    }
    if !config.intercept.is_finite() || !config.village_sd.is_finite() || config.village_sd < 0.0 {
        return Err(Error::Config("offsets must be finite".to_string()));
    }
    for t in &config.effects {
        if !t.beta.is_finite() {
            return Err(Error::Config(format!("effect {} is not finite", t.group)));
        }
    }

    let schema = survey_schema(config.villages, config.houses_per_village)?;
    let n = config.villages * config.houses_per_village * config.surveys_per_house;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut village_col = Vec::with_capacity(n);
    let mut house_col = Vec::with_capacity(n);
    let mut binary_cols: Vec<Vec<String>> = (0..BINARY_VARS.len())
        .map(|_| Vec::with_capacity(n))
        .collect();
    let mut readings: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(n)).collect();

    let reading_dists = [
        Normal::<f64>::new(0.0, 3.0).expect("positive sd"),
        Normal::<f64>::new(0.0, 8.0).expect("positive sd"),
        Normal::<f64>::new(0.0, 40.0).expect("positive sd"),
        Normal::<f64>::new(0.0, 2.0).expect("positive sd"),
        Normal::<f64>::new(0.0, 0.3).expect("positive sd"),
        Normal::<f64>::new(0.0, 1.0).expect("positive sd"),
    ];

    for v in 1..=config.villages {
        for h in 1..=config.houses_per_village {
            let house_binary: Vec<bool> = BINARY_VARS
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let p = if BINARY_VARS[i] == "eaves" || BINARY_VARS[i] == "stagnant_water" {
                        0.5
                    } else {
                        0.35
                    };
                    rng.gen_bool(p)
                })
                .collect();
            for _ in 0..config.surveys_per_house {
                village_col.push(format!("v{}", v));
                house_col.push(format!("v{}h{}", v, h));
                for (col, &b) in binary_cols.iter_mut().zip(&house_binary) {
                    col.push(if b {
                        "yes".to_string()
                    } else {
                        "no".to_string()
                    });
                }
                for (col, dist) in readings.iter_mut().zip(&reading_dists) {
                    col.push(dist.sample(&mut rng));
                }
            }
        }
    }

    let mut columns = vec![
        ColumnData::Numbers(vec![0.0; n]),
        ColumnData::Labels(village_col),
        ColumnData::Labels(house_col),
    ];
    for col in binary_cols {
        columns.push(ColumnData::Labels(col));
    }
    for col in readings {
        columns.push(ColumnData::Numbers(col));
    }

    let placeholder = Dataset::from_columns(schema.clone(), columns.clone())?;
    let design = expand_interactions(&encode_design(&placeholder, Scenario::Original)?)?;

    let mut eta = vec![config.intercept; n];
    for t in &config.effects {
        let group = design
            .groups()
            .iter()
            .find(|g| g.name == t.group)
            .ok_or_else(|| Error::Config(format!("effect {} is not a design group", t.group)))?;
        if group.columns.len() != 1 {
            return Err(Error::Config(format!(
                "effect {} spans {} columns; effects must name single-column groups",
                t.group,
                group.columns.len()
            )));
        }
        let j = group.columns.start;
        for (i, e) in eta.iter_mut().enumerate() {
            *e += t.beta * design.values()[(i, j)];
        }
    }
    if config.village_sd > 0.0 {
        let offsets = Normal::new(0.0, config.village_sd).expect("positive sd");
        let per_village: Vec<f64> = (0..config.villages)
            .map(|_| offsets.sample(&mut rng))
            .collect();
        let rows_per_village = config.houses_per_village * config.surveys_per_house;
        for (i, e) in eta.iter_mut().enumerate() {
            *e += per_village[i / rows_per_village];
        }
    }

    let mut mu = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for e in &eta {
        let rate = glm::eta_to_mu(*e);
        let draw: f64 = Poisson::new(rate)
            .map_err(|_| Error::Degenerate("nonpositive Poisson rate".to_string()))?
            .sample(&mut rng);
        mu.push(rate);
        y.push(draw);
    }
    columns[0] = ColumnData::Numbers(y);

    Ok(SynthOutput {
        dataset: Dataset::from_columns(schema, columns)?,
        intercept: config.intercept,
        effects: config.effects.clone(),
        mu,
    })
}
