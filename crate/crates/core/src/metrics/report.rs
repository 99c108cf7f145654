use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Units reported for pose and gaze errors. The upstream tables do not state
/// them; the magnitudes they report only make sense in radians.
pub const ANGLE_UNITS: &str = "radians (assumed)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub race_pct: f64,
    pub gender_pct: f64,
    pub age_abs_diff_mean: f64,
    pub age_abs_diff_std: f64,
    pub expression_pct: f64,
}

/// Both columns are reported; there is no combined score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalColumns {
    pub original: f64,
    pub anonymized: f64,
}

/// Pre-computed quality / aesthetics scores, averaged per side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityColumns {
    pub original_quality: Option<f64>,
    pub original_aesthetics: Option<f64>,
    pub anonymized_quality: Option<f64>,
    pub anonymized_aesthetics: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub anonymized: usize,
    pub anonymization_failures: usize,
    pub detection_failures: usize,
}

impl Counts {
    pub fn is_consistent(&self) -> bool {
        self.anonymized + self.anonymization_failures + self.detection_failures == self.total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub angle_units: String,
    pub re_at_1: Option<f64>,
    pub pose_mae: Option<f64>,
    pub gaze_mae: Option<f64>,
    pub expression_retention: Option<f64>,
    pub temporal_consistency: Option<TemporalColumns>,
    pub attributes: Option<AttributeTable>,
    pub quality: Option<QualityColumns>,
    pub counts: Counts,
}

impl Default for EvalReport {
    fn default() -> Self {
        Self {
            schema_version: 1,
            angle_units: ANGLE_UNITS.to_owned(),
            re_at_1: None,
            pose_mae: None,
            gaze_mae: None,
            expression_retention: None,
            temporal_consistency: None,
            attributes: None,
            quality: None,
            counts: Counts::default(),
        }
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "–".to_owned(), |v| format!("{v:.digits$}"))
}

impl EvalReport {
    /// Markdown rendering laid out like the usual re-identification,
    /// quality, pose/gaze and attribute-preservation tables.
    pub fn to_markdown(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Evaluation report\n");

        let _ = writeln!(s, "## Re-identification\n");
        let _ = writeln!(s, "| Encoding | Re@1 ↓ |\n|---|---|");
        let _ = writeln!(s, "| {label} | {} |\n", cell(self.re_at_1, 3));

        if let Some(q) = &self.quality {
            let _ = writeln!(s, "## Quality\n");
            let _ = writeln!(s, "| Encoding | Qual ↑ | Aes ↑ |\n|---|---|---|");
            let _ = writeln!(s, "| GT | {} | {} |", cell(q.original_quality, 3), cell(q.original_aesthetics, 3));
            let _ = writeln!(s, "| {label} | {} | {} |\n", cell(q.anonymized_quality, 3), cell(q.anonymized_aesthetics, 3));
        }

        if let Some(t) = &self.temporal_consistency {
            let _ = writeln!(s, "## Temporal identity consistency\n");
            let _ = writeln!(s, "| GT id_pres ↓ | {label} id_pres ↓ |\n|---|---|");
            let _ = writeln!(s, "| {:.3} | {:.3} |\n", t.original, t.anonymized);
        }

        let _ = writeln!(s, "## Pose and gaze preservation ({})\n", self.angle_units);
        let _ = writeln!(s, "| Encoding | Pose ↓ | Gaze ↓ |\n|---|---|---|");
        let _ = writeln!(s, "| {label} | {} | {} |\n", cell(self.pose_mae, 3), cell(self.gaze_mae, 3));

        if let Some(e) = self.expression_retention {
            let _ = writeln!(s, "Expression retention: {e:.3}\n");
        }

        let c = &self.counts;
        let _ = writeln!(s, "## Anonymization statistics\n");
        let _ = writeln!(s, "| Metric | {label} |\n|---|---|");
        let _ = writeln!(s, "| Total images | {} |", c.total);
        let _ = writeln!(s, "| Successfully anonymized | {} |", c.anonymized);
        let _ = writeln!(s, "| Anonymization failures | {} |", c.anonymization_failures);
        let _ = writeln!(s, "| Face detection failures | {} |", c.detection_failures);
        if let Some(a) = &self.attributes {
            let _ = writeln!(s, "| Race (%) | {:.1} |", a.race_pct);
            let _ = writeln!(s, "| Gender (%) | {:.1} |", a.gender_pct);
            let _ = writeln!(s, "| Age (mean ± std) | ({:.2}, {:.2}) |", a.age_abs_diff_mean, a.age_abs_diff_std);
            let _ = writeln!(s, "| Expression (%) | {:.1} |", a.expression_pct);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_layout_for_reference_magnitudes() {
        let report = EvalReport {
            attributes: Some(AttributeTable {
                race_pct: 79.5,
                gender_pct: 99.4,
                age_abs_diff_mean: 1.87,
                age_abs_diff_std: 4.23,
                expression_pct: 74.7,
            }),
            counts: Counts { total: 30000, anonymized: 29997, anonymization_failures: 3, detection_failures: 0 },
            re_at_1: Some(0.041),
            ..Default::default()
        };
        assert!(report.counts.is_consistent());
        let md = report.to_markdown("anonpipe");
        assert!(md.contains("| Race (%) | 79.5 |"));
        assert!(md.contains("| Age (mean ± std) | (1.87, 4.23) |"));
        assert!(md.contains("| Successfully anonymized | 29997 |"));
        assert!(md.contains("| anonpipe | 0.041 |"));
        assert!(md.contains("radians (assumed)"));
    }
}
