//! The final report and its CSV tables.
//!
//! The report is assembled only from stage artifacts and the ledger, and
//! carries no timestamps, so a rerun over a warm cache reproduces it byte
//! for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    overall_average, report_ratio, write_projection_csv, AlignmentTable, GeometryReport,
};
use crate::interpret::DescriptionCandidate;
use crate::pipeline::{write_json, Run, Stage};
use crate::scoring::ScoreBreakdown;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub budget: Option<u64>,
    pub ledger_dispatched_total: u64,
    pub dispatched_by_endpoint: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRow {
    pub text: String,
    pub alpha: f64,
    pub breakdown: ScoreBreakdown,
}

/// Sampler quality triple: BERTScore against the source prototype, label
/// consistency and Self-BLEU of the samples. All values lie in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub bertscore_f1: f64,
    pub label_consistency: f64,
    pub self_bleu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub prototypes: Vec<PrototypeRow>,
    pub truncated: bool,
    pub samples: usize,
    pub consistency: f64,
    pub sampler_consistency: f64,
    pub diversity: DiversityReport,
    pub objective: f64,
    pub descriptions: Vec<DescriptionCandidate>,
    pub duplicate_collapse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    #[serde(flatten)]
    pub report: GeometryReport,
    /// `ratio_r` at two decimals, empty when undefined.
    pub ratio_display: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForensicsReport {
    pub metadata: RunMetadata,
    pub labels: BTreeMap<String, LabelReport>,
    pub degraded: BTreeMap<String, String>,
    /// Mean per-label consistency over usable labels.
    pub average_consistency: Option<f64>,
    pub geometry: Vec<GeometryRow>,
    pub geometry_skipped: Option<String>,
    pub alignment: Option<AlignmentTable>,
    pub centroid_warnings: Vec<String>,
}

pub fn build_report(run: &Run) -> Result<ForensicsReport> {
    let selection = run.load_selection()?;
    let samples = run.load_samples()?;
    let geometry = run.load_geometry()?;
    let descriptions = run.load_descriptions()?;
    let alignment = run.load_alignment()?;
    let keep = run.config.interpret.keep;

    let mut degraded = selection.sets.degraded.clone();
    degraded.extend(samples.degraded.clone());
    degraded.extend(descriptions.degraded.clone());

    let mut labels = BTreeMap::new();
    for (label, set) in &selection.sets.ok {
        let (Some(eval), Some(desc)) = (samples.ok.get(label), descriptions.ok.get(label)) else {
            continue;
        };
        labels.insert(
            label.clone(),
            LabelReport {
                prototypes: set
                    .members
                    .iter()
                    .map(|m| PrototypeRow {
                        text: m.text.clone(),
                        alpha: m.radius.alpha_star,
                        breakdown: m.breakdown,
                    })
                    .collect(),
                truncated: set.truncated,
                samples: eval.samples.len(),
                consistency: eval.consistency,
                sampler_consistency: eval.sampler_consistency,
                diversity: DiversityReport {
                    bertscore_f1: eval.bertscore_f1,
                    label_consistency: eval.consistency,
                    self_bleu: eval.self_bleu,
                },
                objective: eval.objective,
                descriptions: desc.ranked.iter().take(keep).cloned().collect(),
                duplicate_collapse: desc.proposals.duplicate_collapse,
            },
        );
    }
    let consistencies: Vec<f64> = labels.values().map(|l| l.consistency).collect();
    let snapshot = run.client.ledger_snapshot();
    Ok(ForensicsReport {
        metadata: RunMetadata {
            seed: run.meta.seed,
            config_hash: run.meta.config_hash.clone(),
            budget: snapshot.budget,
            ledger_dispatched_total: snapshot.dispatched_total,
            dispatched_by_endpoint: snapshot.dispatched,
        },
        labels,
        degraded,
        average_consistency: overall_average(&consistencies),
        geometry: geometry
            .reports
            .into_iter()
            .map(|r| GeometryRow {
                ratio_display: r.ratio_r.map(report_ratio).unwrap_or_default(),
                report: r,
            })
            .collect(),
        geometry_skipped: geometry.skipped,
        alignment,
        centroid_warnings: selection.centroid_warnings,
    })
}

pub const TABLE1: &str = "table1_consistency.csv";
pub const TABLE2: &str = "table2_descriptions.csv";
pub const TABLE3: &str = "table3_geometry.csv";
pub const TABLE4: &str = "table4_sampler.csv";
pub const TABLE6: &str = "table6_alignment.csv";
pub const PROJECTION: &str = "projection.csv";

#[derive(Serialize)]
struct ConsistencyRow<'a> {
    label: &'a str,
    samples: usize,
    consistency: f64,
}

#[derive(Serialize)]
struct DescriptionRow<'a> {
    label: &'a str,
    rank: usize,
    description: &'a str,
    hit_rate: f64,
}

#[derive(Serialize)]
struct GeometryCsvRow<'a> {
    encoder: &'a str,
    d_intra: f64,
    d_inter: f64,
    r: Option<f64>,
    r_display: &'a str,
}

#[derive(Serialize)]
struct SamplerRow<'a> {
    label: &'a str,
    bertscore_f1: f64,
    consistency: f64,
    self_bleu: f64,
    sampler_consistency: f64,
}

#[derive(Serialize)]
struct AlignmentCsvRow<'a> {
    target_label: &'a str,
    reference_model: &'a str,
    closest_label: &'a str,
    similarity: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and every CSV table into `dir`.
pub fn write_report(report: &ForensicsReport, dir: &Path) -> Result<()> {
    write_json(&dir.join(Stage::Report.artifact()), report)?;

    let mut t1: Vec<ConsistencyRow> = report
        .labels
        .iter()
        .map(|(l, r)| ConsistencyRow {
            label: l,
            samples: r.samples,
            consistency: r.consistency,
        })
        .collect();
    if let Some(avg) = report.average_consistency {
        t1.push(ConsistencyRow {
            label: "average",
            samples: report.labels.values().map(|r| r.samples).sum(),
            consistency: avg,
        });
    }
    write_rows(&dir.join(TABLE1), t1, &["label", "samples", "consistency"])?;

    let t2 = report.labels.iter().flat_map(|(l, r)| {
        r.descriptions.iter().enumerate().map(move |(i, d)| DescriptionRow {
            label: l,
            rank: i + 1,
            description: &d.text,
            hit_rate: d.hit_rate,
        })
    });
    write_rows(&dir.join(TABLE2), t2, &["label", "rank", "description", "hit_rate"])?;

    let t3 = report.geometry.iter().map(|g| GeometryCsvRow {
        encoder: &g.report.encoder_id,
        d_intra: g.report.d_intra,
        d_inter: g.report.d_inter,
        r: g.report.ratio_r,
        r_display: &g.ratio_display,
    });
    write_rows(&dir.join(TABLE3), t3, &["encoder", "d_intra", "d_inter", "r", "r_display"])?;

    let t4 = report.labels.iter().map(|(l, r)| SamplerRow {
        label: l,
        bertscore_f1: r.diversity.bertscore_f1,
        consistency: r.diversity.label_consistency,
        self_bleu: r.diversity.self_bleu,
        sampler_consistency: r.sampler_consistency,
    });
    write_rows(
        &dir.join(TABLE4),
        t4,
        &["label", "bertscore_f1", "consistency", "self_bleu", "sampler_consistency"],
    )?;

    let t6 = report.alignment.iter().flat_map(|a| {
        a.rows.iter().map(|r| AlignmentCsvRow {
            target_label: &r.target_label,
            reference_model: &r.reference_model,
            closest_label: &r.closest_label,
            similarity: r.similarity,
        })
    });
    write_rows(
        &dir.join(TABLE6),
        t6,
        &["target_label", "reference_model", "closest_label", "similarity"],
    )?;
    Ok(())
}

/// Writes `projection.csv` from the geometry artifact when a projection exists.
pub fn write_projection(run: &Run) -> Result<bool> {
    match run.load_geometry()?.projection {
        Some(p) => {
            write_projection_csv(&p, &run.path(PROJECTION))?;
            Ok(true)
        }
        None => Ok(false),
    }
}
