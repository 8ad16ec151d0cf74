//! Report documents and comparison tables.
//!
//! A [`TrainingReport`] is written as one JSON object:
//!
//! | field                   | meaning                                     |
//! |-------------------------|---------------------------------------------|
//! | `config_hash`           | SHA-256 of the canonical configuration text |
//! | `regime_report`         | counts, retained activations and metrics    |
//! | `initial_val_precision` | validation Precision@threshold before training |
//! | `initial_val_loss`      | validation loss before training             |
//! | `final_val_loss`        | validation loss after training              |
//!
//! `regime_report` holds `regime`, `trainable_params`, `total_params`,
//! `trainable_fraction`, `adapter_params`, `retained_activations` and
//! `metrics` (`steps`, `initial_loss`, `final_loss`, `loss_curve`,
//! `precision_at_05`), or `null` metrics for accounting-only rows.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::accounting::RegimeReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config_hash: String,
    pub regime_report: RegimeReport,
    pub initial_val_precision: f64,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
}

impl TrainingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }
}

pub const TABLE_HEADER: &str =
    "label,regime,trainable_params,total_params,trainable_fraction,adapter_params,retained_activations,retained_vs_first,precision_at_05";

/// One comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub report: RegimeReport,
}

/// Comma-separated table; the memory ratio is relative to the first row.
pub fn to_csv(rows: &[Row]) -> String {
    let base = rows.first().map_or(1, |r| r.report.retained_activations.max(1)) as f64;
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let p = &r.report;
        let prec = p
            .metrics
            .as_ref()
            .map_or(String::new(), |m| format!("{}", m.precision_at_05));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6},{}",
            r.label,
            p.regime,
            p.trainable_params,
            p.total_params,
            p.trainable_fraction,
            p.adapter_params,
            p.retained_activations,
            p.retained_activations as f64 / base,
            prec
        )
        .expect("writing to a String");
    }
    out
}

/// Fixed-width text rendering of the same table.
pub fn to_text(rows: &[Row]) -> String {
    let base = rows.first().map_or(1, |r| r.report.retained_activations.max(1)) as f64;
    let mut out = format!(
        "{:<28} {:<22} {:>10} {:>9} {:>12} {:>8} {:>8}\n",
        "label", "regime", "trainable", "fraction", "retained", "mem/1st", "P@0.5"
    );
    for r in rows {
        let p = &r.report;
        let prec = p
            .metrics
            .as_ref()
            .map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m.precision_at_05));
        writeln!(
            out,
            "{:<28} {:<22} {:>10} {:>8.4}% {:>12} {:>8.3} {:>8}",
            r.label,
            p.regime.name(),
            p.trainable_params,
            100.0 * p.trainable_fraction,
            p.retained_activations,
            p.retained_activations as f64 / base,
            prec
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::TaskMetrics;
    use crate::regime::RegimeKind;

    fn report() -> TrainingReport {
        TrainingReport {
            config_hash: "ab".repeat(32),
            regime_report: RegimeReport {
                regime: RegimeKind::SideM2ist,
                trainable_params: 10,
                total_params: 30,
                trainable_fraction: 1.0 / 3.0,
                adapter_params: 4,
                retained_activations: 123,
                metrics: Some(TaskMetrics {
                    steps: 3,
                    initial_loss: 0.1 + 0.2,
                    final_loss: 1e-300,
                    loss_curve: vec![0.3, std::f64::consts::PI],
                    precision_at_05: 0.25,
                }),
            },
            initial_val_precision: 0.0,
            initial_val_loss: 2.5,
            final_val_loss: 1.0 / 7.0,
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = report();
        let back = TrainingReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), r.to_json());
        assert!(TrainingReport::from_json("{").is_err());
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let rows = vec![
            Row { label: "a".into(), report: report().regime_report },
            Row { label: "b".into(), report: report().regime_report },
        ];
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().contains(",1.000000,"));
        assert!(to_text(&rows).contains("side_m2ist"));
    }
}
