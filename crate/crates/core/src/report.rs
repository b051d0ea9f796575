//! JSON run reports and flat CSV side outputs.

use serde::{Deserialize, Serialize};

use crate::aggregate::Aggregation;
use crate::bounds::BoundReport;
use crate::optimize::{IterationRecord, OptimizerConfig};
use crate::protocol::{Accuracies, SubsampleReport, TtcvReport};
use crate::sim::SweepRow;

pub const FORMAT_VERSION: &str = "ensemble-pac-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWeight {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub weight: f64,
}

/// Both bounds at the reported weights, raw and clipped to 1, and the
/// accuracy-style guarantees `1 − clipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub delta: f64,
    pub n: usize,
    pub tandem_raw: f64,
    pub tandem_clipped: f64,
    pub tandem_vacuous: bool,
    pub tandem_lambda: f64,
    pub first_order_raw: f64,
    pub first_order_clipped: f64,
    pub first_order_vacuous: bool,
    pub first_order_lambda: f64,
    pub guarantee: f64,
    pub first_order_guarantee: f64,
}

impl BoundSummary {
    pub fn new(tandem: &BoundReport, first_order: &BoundReport) -> Self {
        BoundSummary {
            delta: tandem.delta,
            n: tandem.n,
            tandem_raw: tandem.raw_value,
            tandem_clipped: tandem.value,
            tandem_vacuous: tandem.vacuous,
            tandem_lambda: tandem.lambda,
            first_order_raw: first_order.raw_value,
            first_order_clipped: first_order.value,
            first_order_vacuous: first_order.vacuous,
            first_order_lambda: first_order.lambda,
            guarantee: tandem.guarantee(),
            first_order_guarantee: first_order.guarantee(),
        }
    }
}

/// Effective configuration of a run, echoed for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: String,
    pub delta: f64,
    /// `tandem`, `first-order`, `uniform` or `fixed`.
    pub weighting: String,
    pub aggregations: Vec<Aggregation>,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub ttcv: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample_members: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample_repeats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: String,
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub members: Vec<MemberWeight>,
    pub rho: Vec<f64>,
    /// `λ` of the bound the weights were chosen for.
    pub lambda: f64,
    pub kl: f64,
    pub bounds: BoundSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracies: Option<Accuracies>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<TtcvReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleReport>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per repeat of a subsampling run.
pub fn subsample_csv(report: &SubsampleReport) -> String {
    let mut out = String::from("repeat,members,accuracy_mv,accuracy_avg,tandem_bound,first_order_bound\n");
    for r in &report.repeats {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.repeat,
            r.members.join(";"),
            r.accuracy.mv,
            opt(r.accuracy.avg),
            r.tandem_bound,
            r.first_order_bound
        ));
    }
    out
}

/// Cancellation-of-errors table: `M,p,exact,hoeffding,mc,stderr`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("M,p,exact,hoeffding,mc,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.members,
            r.error_rate,
            r.exact,
            opt(r.hoeffding),
            r.mc,
            r.std_error
        ));
    }
    out
}
