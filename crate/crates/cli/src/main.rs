use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use lolo_dcv_core::metrics::aligned_summary_table;
use lolo_dcv_core::{
    backward_glm_baseline, build_folds, build_grid, cv_curve, default_min_ratio, deviance,
    emit_frequency_plot_data, emit_summary_table, encode_design, expand_interactions, fit_path,
    frequent_variables, generate, lambda_max, quality_summary, refit_cv_predictions, run_in_pool,
    run_lolo_dcv, select_lambda, Dataset, DcvConfig, Error, FrequentVariableSet, GroupKind,
    LambdaRule, PresenceMatrix, QualityReport, Result, Scenario, Schema, SynthConfig, VarRole,
};

#[derive(Parser)]
#[command(
    name = "lolo-dcv",
    version,
    about = "Penalized Poisson count models with level-aware double cross-validation"
)]
struct Cli {
    /// Flat key=value file supplying flag defaults; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// CSV data file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Variable schema file.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// original | original-village | recoded | recoded-village.
    #[arg(long)]
    scenario: Option<String>,
    /// Grouping variable for hold-out folds; defaults to the schema's
    /// level-key variable.
    #[arg(long)]
    level_key: Option<String>,
    /// Fold count (inner folds for dcv).
    #[arg(long)]
    folds: Option<usize>,
    /// Number of penalty grid points.
    #[arg(long)]
    grid_count: Option<usize>,
    /// Smallest grid value as a fraction of the largest.
    #[arg(long)]
    grid_min_ratio: Option<f64>,
    /// Frequent-variable threshold in percent.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses the default pool.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a scenario design and report its groups.
    Expand {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Cross-validated penalty curve on the full data.
    Cv {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Leave-one-level-out double cross-validation.
    Dcv {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Backward-eliminated Poisson GLM reference model.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        /// Interaction whitelist, e.g. eaves:stagnant_water,temp_anomaly:rain_anomaly.
        #[arg(long)]
        interactions: Option<String>,
        /// Likelihood-ratio elimination threshold.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Draw a synthetic grouped count survey.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        villages: Option<usize>,
        #[arg(long)]
        houses_per_village: Option<usize>,
        #[arg(long)]
        surveys_per_house: Option<usize>,
        #[arg(long)]
        intercept: Option<f64>,
        #[arg(long)]
        village_sd: Option<f64>,
    },
    /// Summaries from stored prediction and presence files.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Prediction file; defaults to <out>/predictions.csv.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Presence matrix for the minimum rule; defaults to
        /// <out>/presence_min.csv.
        #[arg(long)]
        presence_min: Option<PathBuf>,
        /// Presence matrix for the one-standard-error rule; defaults to
        /// <out>/presence_1se.csv.
        #[arg(long)]
        presence_1se: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LOLO_DCV_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::exit(if e.is_input_error() { 2 } else { 3 });
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Expand { common } => cmd_expand(&settings.resolve(&common)?),
        Command::Cv { common } => cmd_cv(&settings.resolve(&common)?),
        Command::Dcv { common } => cmd_dcv(&settings.resolve(&common)?),
        Command::Baseline {
            common,
            interactions,
            alpha,
        } => {
            let interactions = settings.merge(interactions, "interactions")?;
            let alpha = settings.merge(alpha, "alpha")?.unwrap_or(0.05);
            cmd_baseline(&settings.resolve(&common)?, interactions.as_deref(), alpha)
        }
        Command::Synth {
            common,
            villages,
            houses_per_village,
            surveys_per_house,
            intercept,
            village_sd,
        } => {
            let mut config = SynthConfig::new(settings.merge(common.seed, "seed")?.unwrap_or(0));
            if let Some(v) = settings.merge(villages, "villages")? {
                config.villages = v;
            }
            if let Some(v) = settings.merge(houses_per_village, "houses-per-village")? {
                config.houses_per_village = v;
            }
            if let Some(v) = settings.merge(surveys_per_house, "surveys-per-house")? {
                config.surveys_per_house = v;
            }
            if let Some(v) = settings.merge(intercept, "intercept")? {
                config.intercept = v;
            }
            if let Some(v) = settings.merge(village_sd, "village-sd")? {
                config.village_sd = v;
            }
            cmd_synth(&config, &settings.out_dir(&common)?)
        }
        Command::Report {
            common,
            predictions,
            presence_min,
            presence_1se,
        } => {
            let out = settings.out_dir(&common)?;
            let threshold = settings
                .merge(common.threshold, "threshold")?
                .unwrap_or(80.0);
            cmd_report(
                &predictions.unwrap_or_else(|| out.join("predictions.csv")),
                &presence_min.unwrap_or_else(|| out.join("presence_min.csv")),
                &presence_1se.unwrap_or_else(|| out.join("presence_1se.csv")),
                threshold,
                &out,
            )
        }
    }
}

struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings> {
        let mut map = BTreeMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p)?;
            for (ln, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("config line {}: expected key=value", ln + 1))
                })?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings { map })
    }

    /// The flag value when given, else the config-file value, else none.
    fn merge<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.map.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {}: {}", key, e))),
            None => Ok(None),
        }
    }

    fn out_dir(&self, common: &CommonArgs) -> Result<PathBuf> {
        Ok(self
            .merge(common.out.clone(), "out")?
            .unwrap_or_else(|| PathBuf::from("lolo-dcv-out")))
    }

    fn resolve(&self, common: &CommonArgs) -> Result<Job> {
        let input = self
            .merge(common.input.clone(), "input")?
            .ok_or_else(|| Error::Config("missing --input".to_string()))?;
        let schema_path = self
            .merge(common.schema.clone(), "schema")?
            .ok_or_else(|| Error::Config("missing --schema".to_string()))?;
        let scenario = match self.merge(common.scenario.clone(), "scenario")? {
            Some(s) => s.parse::<Scenario>()?,
            None => Scenario::Original,
        };
        let schema = Schema::parse(&fs::read_to_string(&schema_path)?)?;
        let dataset = lolo_dcv_core::load_dataset(&input, &schema)?;

        let mut config = DcvConfig::new(scenario);
        config.level_key = self.merge(common.level_key.clone(), "level-key")?;
        if let Some(v) = self.merge(common.folds, "folds")? {
            config.inner_folds = v;
        }
        if let Some(v) = self.merge(common.grid_count, "grid-count")? {
            config.grid_count = v;
        }
        config.grid_min_ratio = self.merge(common.grid_min_ratio, "grid-min-ratio")?;
        if let Some(v) = self.merge(common.threshold, "threshold")? {
            config.threshold = v;
        }
        if let Some(v) = self.merge(common.seed, "seed")? {
            config.seed = v;
        }
        if let Some(v) = self.merge(common.jobs, "jobs")? {
            config.jobs = v;
        }
        Ok(Job {
            dataset,
            config,
            out: self.out_dir(common)?,
        })
    }
}

struct Job {
    dataset: Dataset,
    config: DcvConfig,
    out: PathBuf,
}

impl Job {
    /// The fold grouping variable: the explicit override, else the
    /// schema's level-key variable.
    fn level_key(&self) -> Option<String> {
        self.config.level_key.clone().or_else(|| {
            self.dataset
                .schema()
                .vars()
                .iter()
                .find(|v| v.role == VarRole::LevelKey)
                .map(|v| v.name.clone())
        })
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_expand(job: &Job) -> Result<()> {
    let design = expand_interactions(&encode_design(&job.dataset, job.config.scenario)?)?;
    let mut table = String::from("group,kind,n_columns,columns\n");
    for g in design.groups() {
        let kind = match &g.kind {
            GroupKind::Main => "main",
            GroupKind::Interaction { .. } => "interaction",
        };
        let cols: Vec<&str> = design.column_names()[g.columns.clone()]
            .iter()
            .map(|s| s.as_str())
            .collect();
        table.push_str(&format!(
            "{},{},{},{}\n",
            g.name,
            kind,
            g.columns.len(),
            cols.join("|")
        ));
    }
    write_atomic(&job.out.join("design_groups.csv"), &table)?;
    println!(
        "scenario {}: {} rows, {} groups, {} kept columns, {} dropped",
        job.config.scenario,
        design.n(),
        design.groups().len(),
        design.p(),
        design.dropped().len()
    );
    println!("wrote {}", job.out.join("design_groups.csv").display());
    Ok(())
}

fn cmd_cv(job: &Job) -> Result<()> {
    let design = expand_interactions(&encode_design(&job.dataset, job.config.scenario)?)?;
    let anchor = lambda_max(design.values(), design.y());
    let ratio = job
        .config
        .grid_min_ratio
        .unwrap_or_else(|| default_min_ratio(design.n(), design.p()));
    let grid = build_grid(anchor, job.config.grid_count, ratio)?;
    let folds = build_folds(
        &job.dataset,
        job.level_key().as_deref(),
        job.config.inner_folds,
        job.config.seed,
    )?;
    let curve = run_in_pool(job.config.jobs, || {
        cv_curve(design.values(), design.y(), &grid, &folds)
    })?;
    let selection = select_lambda(&curve)?;
    let path = fit_path(design.values(), design.y(), &grid)?;
    write_atomic(
        &job.out.join("path.csv"),
        &path.render_trajectories(design.groups()),
    )?;

    let active_groups: Vec<usize> = path
        .coefficients
        .iter()
        .map(|c| {
            design
                .groups()
                .iter()
                .filter(|g| g.columns.clone().any(|j| c.slopes[j] != 0.0))
                .count()
        })
        .collect();
    let mut out = String::from("lambda,mean_score,score_se,n_active\n");
    for (i, n_active) in active_groups.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            grid.values[i], curve.mean[i], curve.se[i], n_active
        ));
    }
    out.push_str(&format!(
        "# lambda_min {}\n# lambda_1se {}\n",
        selection.lambda_min, selection.lambda_1se
    ));
    write_atomic(&job.out.join("cv_curve.csv"), &out)?;
    let summary = format!(
        "lambda_min {} (index {})\nlambda_1se {} (index {})\nfolds_used {}\nfolds_skipped {}\n",
        selection.lambda_min,
        selection.min_index,
        selection.lambda_1se,
        selection.one_se_index,
        folds.n_folds() - curve.skipped.len(),
        curve.skipped.len()
    );
    write_atomic(&job.out.join("selection.txt"), &summary)?;
    print!("{}", summary);
    Ok(())
}

fn hold_out_report(y: &[f64], predictions: &[f64], label: &str) -> Result<QualityReport> {
    let dev = deviance(
        &DVector::from_column_slice(y),
        &DVector::from_column_slice(predictions),
    );
    quality_summary(y, predictions, dev, label)
}

fn frequent_names(set: &FrequentVariableSet) -> Vec<String> {
    set.members.iter().map(|(g, _)| g.clone()).collect()
}

fn render_frequent(sets: &[&FrequentVariableSet]) -> String {
    let mut out = String::new();
    for set in sets {
        out.push_str(&format!(
            "{} at s={} ({} groups)\n",
            set.lambda_rule,
            set.threshold,
            set.members.len()
        ));
        for (g, f) in &set.members {
            out.push_str(&format!("  {} {}\n", g, f));
        }
    }
    out
}

fn cmd_dcv(job: &Job) -> Result<()> {
    let result = run_lolo_dcv(&job.dataset, &job.config)?;
    for (name, text) in result.render_files() {
        write_atomic(&job.out.join(&name), &text)?;
    }

    let s = job.config.threshold;
    let freq_min = frequent_variables(&result.presence_min, LambdaRule::Min, s)?;
    let freq_1se = frequent_variables(&result.presence_1se, LambdaRule::OneSe, s)?;
    let refit_min = refit_cv_predictions(&job.dataset, &job.config, &frequent_names(&freq_min))?;
    let refit_1se = refit_cv_predictions(&job.dataset, &job.config, &frequent_names(&freq_1se))?;

    let reports = vec![
        hold_out_report(&result.y, &result.predictions_min, "LOLO-DCV (lambda.min)")?,
        hold_out_report(&result.y, &result.predictions_1se, "LOLO-DCV (lambda.1se)")?,
        hold_out_report(
            &result.y,
            &refit_min,
            &format!("FREQ{}-GLM (lambda.min)", s.round() as i64),
        )?,
        hold_out_report(
            &result.y,
            &refit_1se,
            &format!("FREQ{}-GLM (lambda.1se)", s.round() as i64),
        )?,
    ];
    write_atomic(&job.out.join("summary.txt"), &emit_summary_table(&reports))?;
    write_atomic(
        &job.out.join("summary_aligned.txt"),
        &aligned_summary_table(&reports),
    )?;
    write_atomic(
        &job.out.join("frequency_min.csv"),
        &emit_frequency_plot_data(&result.presence_min),
    )?;
    write_atomic(
        &job.out.join("frequency_1se.csv"),
        &emit_frequency_plot_data(&result.presence_1se),
    )?;
    write_atomic(
        &job.out.join("frequent_variables.txt"),
        &render_frequent(&[&freq_min, &freq_1se]),
    )?;

    println!(
        "{} outer folds ({} failed), {} rows",
        result.fold_records.len(),
        result.n_failed_folds,
        result.y.len()
    );
    print!("{}", aligned_summary_table(&reports));
    println!("outputs in {}", job.out.display());
    Ok(())
}

fn parse_interactions(raw: Option<&str>) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    if let Some(raw) = raw {
        for part in raw.split(',').filter(|p| !p.trim().is_empty()) {
            let (a, b) = part.trim().split_once(':').ok_or_else(|| {
                Error::Config(format!("interaction {} is not of the form a:b", part))
            })?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
    }
    Ok(pairs)
}

fn cmd_baseline(job: &Job, interactions: Option<&str>, alpha: f64) -> Result<()> {
    let pairs = parse_interactions(interactions)?;
    let baseline = backward_glm_baseline(&job.dataset, &job.config, &pairs, alpha)?;
    let y = job.dataset.response();
    let report = hold_out_report(y, &baseline.predictions, "B-GLM")?;

    let mut text = format!(
        "alpha {}\nkept terms ({}):\n",
        baseline.alpha,
        baseline.terms.len()
    );
    for t in &baseline.terms {
        text.push_str(&format!("  {}\n", t));
    }
    text.push_str("eliminated (in order, with p-values):\n");
    for (t, p) in &baseline.eliminated {
        text.push_str(&format!("  {} {}\n", t, p));
    }
    write_atomic(&job.out.join("baseline.txt"), &text)?;

    let mut preds = String::from("row,y,predicted\n");
    for (i, (yi, pi)) in y.iter().zip(&baseline.predictions).enumerate() {
        preds.push_str(&format!("{},{},{}\n", i, yi, pi));
    }
    write_atomic(&job.out.join("baseline_predictions.csv"), &preds)?;
    write_atomic(
        &job.out.join("baseline_summary.txt"),
        &emit_summary_table(std::slice::from_ref(&report)),
    )?;
    print!("{}", aligned_summary_table(&[report]));
    println!("outputs in {}", job.out.display());
    Ok(())
}

fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<()> {
    let drawn = generate(config)?;
    write_atomic(&out.join("data.csv"), &drawn.dataset.render_csv())?;
    write_atomic(&out.join("schema.txt"), &drawn.dataset.schema().render())?;
    write_atomic(&out.join("truth.txt"), &drawn.render_truth())?;
    println!(
        "wrote {} rows ({} villages x {} houses x {} surveys) to {}",
        drawn.dataset.n_rows(),
        config.villages,
        config.houses_per_village,
        config.surveys_per_house,
        out.display()
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut y = Vec::new();
    let mut pred_min = Vec::new();
    let mut pred_1se = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::Parse {
                row: ln + 1,
                column: "predictions".to_string(),
                message: format!("expected 5 fields, got {}", cells.len()),
            });
        }
        let number = |i: usize| -> Result<f64> {
            cells[i].parse().map_err(|_| Error::Parse {
                row: ln + 1,
                column: format!("field {}", i + 1),
                message: format!("{} is not a number", cells[i]),
            })
        };
        y.push(number(2)?);
        pred_min.push(number(3)?);
        pred_1se.push(number(4)?);
    }
    if y.is_empty() {
        return Err(Error::Invalid(format!("{} holds no rows", path.display())));
    }
    Ok((y, pred_min, pred_1se))
}

fn read_presence(path: &Path) -> Result<PresenceMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))?
        .1;
    let group_names: Vec<String> = header.split(',').skip(1).map(|s| s.to_string()).collect();
    let mut fold_labels = Vec::new();
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let mut cells = line.split(',');
        fold_labels.push(cells.next().unwrap_or_default().to_string());
        let row: Result<Vec<bool>> = cells
            .map(|c| match c {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    row: ln + 1,
                    column: "presence".to_string(),
                    message: format!("{} is not 0/1", other),
                }),
            })
            .collect();
        let row = row?;
        if row.len() != group_names.len() {
            return Err(Error::Parse {
                row: ln + 1,
                column: "presence".to_string(),
                message: format!("expected {} cells, got {}", group_names.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok(PresenceMatrix {
        group_names,
        fold_labels,
        rows,
    })
}

fn cmd_report(
    predictions: &Path,
    presence_min: &Path,
    presence_1se: &Path,
    threshold: f64,
    out: &Path,
) -> Result<()> {
    let (y, pred_min, pred_1se) = read_predictions(predictions)?;
    let mut reports = vec![
        hold_out_report(&y, &pred_min, "LOLO-DCV (lambda.min)")?,
        hold_out_report(&y, &pred_1se, "LOLO-DCV (lambda.1se)")?,
    ];

    let mut frequent_text = String::new();
    for (path, rule, plot_name) in [
        (presence_min, LambdaRule::Min, "frequency_min.csv"),
        (presence_1se, LambdaRule::OneSe, "frequency_1se.csv"),
    ] {
        if !path.exists() {
            log::warn!("presence file {} not found; skipping", path.display());
            continue;
        }
        let presence = read_presence(path)?;
        write_atomic(&out.join(plot_name), &emit_frequency_plot_data(&presence))?;
        let set = frequent_variables(&presence, rule, threshold)?;
        frequent_text.push_str(&render_frequent(&[&set]));
    }
    if !frequent_text.is_empty() {
        write_atomic(&out.join("frequent_variables.txt"), &frequent_text)?;
    }

    reports.truncate(2);
    write_atomic(&out.join("summary.txt"), &emit_summary_table(&reports))?;
    write_atomic(
        &out.join("summary_aligned.txt"),
        &aligned_summary_table(&reports),
    )?;
    print!("{}", aligned_summary_table(&reports));
    println!("outputs in {}", out.display());
    Ok(())
}
