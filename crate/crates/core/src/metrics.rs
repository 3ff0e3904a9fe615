//! Prediction-quality criteria, frequent-variable extraction, and summary
//! tables.
//!
//! A prediction counts as correct when it lands within half a count of
//! the observation, endpoints included; prediction power is the
//! percentage of correct predictions. The summary table reports, in fixed
//! column order: method, mean prediction, deviance, the square root of
//! the deviance (reported verbatim as `Std`), mean absolute error, and
//! prediction power. An optional mean squared error column (`Quadratic
//! risk (extra)`) can be carried alongside; it is additional to the six
//! standard columns and labeled as such.

use crate::dcv::PresenceMatrix;
use crate::error::{Error, Result};

/// Which cross-validation penalty rule a result refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    Min,
    OneSe,
}

impl std::fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LambdaRule::Min => "lambda.min",
            LambdaRule::OneSe => "lambda.1se",
        })
    }
}

/// One row of the prediction-quality summary.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub method: String,
    /// Mean of the predictions.
    pub mean: f64,
    /// Hold-out deviance of the assembled prediction vector.
    pub deviance: f64,
    /// `sqrt(deviance)`, reported verbatim.
    pub std: f64,
    /// Mean absolute error.
    pub absolute_risk: f64,
    /// Percentage of observations predicted within half a count.
    pub prediction_power: f64,
    /// Mean squared error; an extra criterion outside the six standard
    /// columns, shown only when present.
    pub quadratic_risk: Option<f64>,
}

/// Elementwise indicator of `|y_i - yhat_i| <= 0.5`, endpoints inclusive.
pub fn prediction_accuracy(y: &[f64], yhat: &[f64]) -> Vec<u8> {
    assert_eq!(y.len(), yhat.len(), "prediction vectors differ in length");
    y.iter()
        .zip(yhat)
        .map(|(yi, pi)| u8::from((yi - pi).abs() <= 0.5))
        .collect()
}

/// Builds a summary row from hold-out predictions and their deviance.
pub fn quality_summary(
    y: &[f64],
    yhat: &[f64],
    deviance: f64,
    label: &str,
) -> Result<QualityReport> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Invalid(
            "cannot summarize zero predictions".to_string(),
        ));
    }
    if yhat.len() != n {
        return Err(Error::Invalid(format!(
            "{} observations but {} predictions",
            n,
            yhat.len()
        )));
    }
    if deviance.is_nan() || deviance < 0.0 {
        return Err(Error::Invalid(format!(
            "deviance must be nonnegative, got {}",
            deviance
        )));
    }
    let nf = n as f64;
    let hits = prediction_accuracy(y, yhat)
        .iter()
        .filter(|&&h| h == 1)
        .count();
    Ok(QualityReport {
        method: label.to_string(),
        mean: yhat.iter().sum::<f64>() / nf,
        deviance,
        std: deviance.sqrt(),
        absolute_risk: y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf,
        prediction_power: 100.0 / nf * hits as f64,
        quadratic_risk: Some(
            y.iter()
                .zip(yhat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / nf,
        ),
    })
}

/// Variable groups whose selection frequency across outer folds meets a
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentVariableSet {
    pub lambda_rule: LambdaRule,
    /// Inclusive percentage threshold.
    pub threshold: f64,
    /// `(group name, frequency%)` pairs meeting the threshold, in
    /// presence-matrix column order.
    pub members: Vec<(String, f64)>,
}

impl FrequentVariableSet {
    pub fn contains(&self, name: &str) -> bool {
        self.members.iter().any(|(g, _)| g == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.members.iter().map(|(g, _)| g.as_str()).collect()
    }
}

/// Groups present in at least `s` percent of outer folds (inclusive).
pub fn frequent_variables(
    presence: &PresenceMatrix,
    lambda_rule: LambdaRule,
    s: f64,
) -> Result<FrequentVariableSet> {
    if presence.rows.is_empty() {
        return Err(Error::Invalid(
            "presence matrix has no fold rows".to_string(),
        ));
    }
    if !(1.0..=100.0).contains(&s) {
        return Err(Error::Config(format!(
            "frequency threshold must lie in [1, 100], got {}",
            s
        )));
    }
    let members = presence
        .group_names
        .iter()
        .enumerate()
        .map(|(j, g)| (g.clone(), presence.frequency(j)))
        .filter(|(_, f)| *f >= s)
        .collect();
    Ok(FrequentVariableSet {
        lambda_rule,
        threshold: s,
        members,
    })
}

/// Rounds half-up to two decimals and renders without trailing noise.
fn cell(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

const TABLE_HEADER: &str = "Method & Mean & Deviance & Std & Absolute risk & Prediction Power (%)";

/// Renders summary rows in the fixed column order, `&`-delimited, values
/// rounded half-up to two decimals. A `Quadratic risk (extra)` column is
/// appended only when some report carries one.
pub fn emit_summary_table(reports: &[QualityReport]) -> String {
    let with_quadratic = reports.iter().any(|r| r.quadratic_risk.is_some());
    let mut out = String::from(TABLE_HEADER);
    if with_quadratic {
        out.push_str(" & Quadratic risk (extra)");
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{} & {} & {} & {} & {} & {}",
            r.method,
            cell(r.mean),
            cell(r.deviance),
            cell(r.std),
            cell(r.absolute_risk),
            cell(r.prediction_power)
        ));
        if with_quadratic {
            match r.quadratic_risk {
                Some(q) => out.push_str(&format!(" & {}", cell(q))),
                None => out.push_str(" & -"),
            }
        }
        out.push('\n');
    }
    out
}

/// The same table space-aligned for terminal display.
pub fn aligned_summary_table(reports: &[QualityReport]) -> String {
    let delimited = emit_summary_table(reports);
    let rows: Vec<Vec<String>> = delimited
        .lines()
        .map(|l| l.split(" & ").map(|c| c.to_string()).collect())
        .collect();
    let columns = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in &rows {
        for (i, c) in row.iter().enumerate() {
            widths[i] = widths[i].max(c.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        for (i, c) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{:<width$}", c, width = widths[i]));
            } else {
                out.push_str(&format!("{:>width$}", c, width = widths[i]));
            }
        }
        out.push('\n');
    }
    out
}

/// Frequency of every group as `group,frequency` records, sorted by
/// descending frequency with alphabetical tie-break.
pub fn emit_frequency_plot_data(presence: &PresenceMatrix) -> String {
    let mut rows: Vec<(String, f64)> = presence
        .group_names
        .iter()
        .enumerate()
        .map(|(j, g)| (g.clone(), presence.frequency(j)))
        .collect();
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut out = String::from("group,frequency\n");
    for (g, f) in rows {
        out.push_str(&format!("{},{}\n", g, f));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn presence(names: &[&str], rows: &[&[bool]]) -> PresenceMatrix {
        PresenceMatrix {
            group_names: names.iter().map(|s| s.to_string()).collect(),
            fold_labels: (0..rows.len()).map(|i| format!("f{}", i)).collect(),
            rows: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn accuracy_boundaries_are_inclusive() {
        assert_eq!(prediction_accuracy(&[3.0], &[3.5]), vec![1]);
        assert_eq!(prediction_accuracy(&[3.0], &[3.51]), vec![0]);
        assert_eq!(prediction_accuracy(&[3.0], &[2.5]), vec![1]);
        assert_eq!(
            prediction_accuracy(&[0.0, 2.0, 5.0], &[0.4, 2.6, 5.0]),
            vec![1, 0, 1]
        );
    }

    #[test]
    fn quality_summary_hand_example() {
        let r = quality_summary(&[1.0, 1.0], &[1.4, 2.0], 3.0, "demo").unwrap();
        assert_abs_diff_eq!(r.prediction_power, 50.0);
        assert_abs_diff_eq!(r.absolute_risk, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(r.std * r.std, r.deviance, epsilon = 1e-10);
        assert_abs_diff_eq!(
            r.quadratic_risk.unwrap(),
            (0.16 + 1.0) / 2.0,
            epsilon = 1e-12
        );
        assert!(quality_summary(&[], &[], 0.0, "x").is_err());
        assert!(quality_summary(&[1.0], &[1.0], -0.1, "x").is_err());
        assert!(quality_summary(&[1.0], &[1.0, 2.0], 0.0, "x").is_err());
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let y = [0.0, 3.0, 1.0, 7.0];
        let r = quality_summary(&y, &y, 0.0, "exact").unwrap();
        assert_eq!(r.prediction_power, 100.0);
        assert_eq!(r.absolute_risk, 0.0);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn table_reproduces_the_reference_row() {
        let row = QualityReport {
            method: "B-GLM".to_string(),
            mean: 3.75,
            deviance: 62.29,
            std: 62.29f64.sqrt(),
            absolute_risk: 3.88,
            prediction_power: 73.53,
            quadratic_risk: None,
        };
        let table = emit_summary_table(&[row]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(
            lines[0],
            "Method & Mean & Deviance & Std & Absolute risk & Prediction Power (%)"
        );
        assert_eq!(lines[1], "B-GLM & 3.75 & 62.29 & 7.89 & 3.88 & 73.53");
    }

    #[test]
    fn quadratic_risk_gets_its_own_labeled_column() {
        let r = quality_summary(&[1.0, 2.0], &[1.0, 2.0], 0.0, "m").unwrap();
        let table = emit_summary_table(&[r]);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].ends_with("& Quadratic risk (extra)"));
        assert!(lines[1].ends_with("& 0.00"));
    }

    #[test]
    fn table_round_trips_to_two_decimals() {
        let reports = vec![
            quality_summary(&[1.0, 4.0, 2.0], &[0.8, 4.4, 2.5], 5.1234, "a").unwrap(),
            quality_summary(&[0.0, 1.0, 3.0], &[0.2, 1.9, 2.4], 2.0, "b").unwrap(),
        ];
        let table = emit_summary_table(&reports);
        for (line, r) in table.lines().skip(1).zip(&reports) {
            let cells: Vec<&str> = line.split(" & ").collect();
            assert_eq!(cells[0], r.method);
            let parsed: Vec<f64> = cells[1..6].iter().map(|c| c.parse().unwrap()).collect();
            for (got, want) in parsed.iter().zip([
                r.mean,
                r.deviance,
                r.std,
                r.absolute_risk,
                r.prediction_power,
            ]) {
                assert!((got - want).abs() <= 0.005 + 1e-12);
            }
        }
    }

    #[test]
    fn frequency_thresholds_are_inclusive() {
        let rows: Vec<Vec<bool>> = (0..9).map(|i| vec![i < 7]).collect();
        let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = presence(&["g"], &refs);
        assert_abs_diff_eq!(m.frequency(0), 700.0 / 9.0, epsilon = 1e-12);
        assert!(!frequent_variables(&m, LambdaRule::Min, 78.0)
            .unwrap()
            .contains("g"));
        assert!(frequent_variables(&m, LambdaRule::Min, 77.0)
            .unwrap()
            .contains("g"));
        assert!(frequent_variables(&m, LambdaRule::Min, 0.5).is_err());
        assert!(frequent_variables(&m, LambdaRule::Min, 100.5).is_err());
    }

    #[test]
    fn all_zero_presence_is_always_empty() {
        let m = presence(&["a", "b"], &[&[false, false], &[false, false]]);
        for s in [1.0, 50.0, 100.0] {
            assert!(frequent_variables(&m, LambdaRule::OneSe, s)
                .unwrap()
                .members
                .is_empty());
        }
    }

    #[test]
    fn plot_data_sorts_by_frequency_then_name() {
        let m = presence(
            &["bee", "ant", "cat"],
            &[
                &[true, true, false],
                &[true, true, true],
                &[false, true, false],
            ],
        );
        let out = emit_frequency_plot_data(&m);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "group,frequency");
        assert_eq!(lines[1], "ant,100");
        assert!(lines[2].starts_with("bee,66.66666666666667"));
        assert!(lines[3].starts_with("cat,33.33333333333333"));
    }

    proptest! {
        #[test]
        fn power_counting_equals_mean_of_indicators(
            pairs in proptest::collection::vec((0u32..20, -2.0f64..22.0), 1..60)
        ) {
            let y: Vec<f64> = pairs.iter().map(|(a, _)| *a as f64).collect();
            let yhat: Vec<f64> = pairs.iter().map(|(_, b)| *b).collect();
            let report = quality_summary(&y, &yhat, 1.0, "p").unwrap();
            let indicators = prediction_accuracy(&y, &yhat);
            let via_mean =
                100.0 * indicators.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
            let via_count = report.prediction_power;
            prop_assert_eq!(via_count, 100.0 / y.len() as f64
                * indicators.iter().filter(|&&v| v == 1).count() as f64);
            prop_assert!((via_mean - via_count).abs() < 1e-9);
        }

        #[test]
        fn frequent_sets_shrink_as_the_threshold_rises(
            grid in proptest::collection::vec(proptest::collection::vec(proptest::bool::ANY, 4), 1..12),
            s1 in 1.0f64..100.0,
            s2 in 1.0f64..100.0,
        ) {
            let names = ["a", "b", "c", "d"];
            let refs: Vec<&[bool]> = grid.iter().map(|r| r.as_slice()).collect();
            let m = presence(&names, &refs);
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let big = frequent_variables(&m, LambdaRule::Min, lo).unwrap();
            let small = frequent_variables(&m, LambdaRule::Min, hi).unwrap();
            for (g, _) in &small.members {
                prop_assert!(big.contains(g), "{} at s={} missing at s={}", g, hi, lo);
            }
        }
    }
}
