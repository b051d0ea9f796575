//! Ensemble prediction sets, labels, hold-out masks and priors, plus the
//! manifest format they are loaded from.
//!
//! A manifest is a JSON document pointing at one CSV file per member:
//!
//! ```json
//! {
//!   "num_classes": 2,
//!   "mode": "prob",
//!   "labels": "labels.csv",
//!   "members": [
//!     { "id": "a", "predictions": "a.csv", "mask": "a_mask.csv" },
//!     { "id": "b", "predictions": "b.csv" }
//!   ],
//!   "prior": "uniform"
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Masks
//! default to all-true and the prior to uniform.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the row sums of probability predictions.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Tolerance on the total mass of weight vectors.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Smallest and largest admissible trade-off parameter.
pub const LAMBDA_MIN: f64 = 1e-9;
pub const LAMBDA_MAX: f64 = 2.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// One row of `K` class probabilities per example.
    Prob,
    /// One predicted class index per example.
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemberPredictions {
    /// Row-major `n × K` matrix.
    Probabilities(Vec<f64>),
    Labels(Vec<usize>),
}

impl MemberPredictions {
    pub fn mode(&self) -> PredictionMode {
        match self {
            MemberPredictions::Probabilities(_) => PredictionMode::Prob,
            MemberPredictions::Labels(_) => PredictionMode::Hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: String,
    /// Optional grouping tag (e.g. the training run a checkpoint came from).
    /// Carried into reports, never used by the algorithms.
    pub run_id: Option<String>,
    pub predictions: MemberPredictions,
}

impl Member {
    pub fn probabilities(id: impl Into<String>, rows: Vec<f64>) -> Self {
        Member {
            id: id.into(),
            run_id: None,
            predictions: MemberPredictions::Probabilities(rows),
        }
    }

    pub fn hard(id: impl Into<String>, labels: Vec<usize>) -> Self {
        Member {
            id: id.into(),
            run_id: None,
            predictions: MemberPredictions::Labels(labels),
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Per-member predictions over a shared example index.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    num_classes: usize,
    num_examples: usize,
    members: Vec<Member>,
}

impl PredictionSet {
    /// Builds a set and checks every member-level invariant.
    pub fn new(num_classes: usize, members: Vec<Member>) -> Result<Self> {
        let num_examples = members
            .first()
            .map(|m| match &m.predictions {
                MemberPredictions::Probabilities(rows) => rows.len() / num_classes.max(1),
                MemberPredictions::Labels(labels) => labels.len(),
            })
            .unwrap_or(0);
        let set = Self::new_unchecked(num_classes, num_examples, members);
        let violations = set.violations();
        if violations.is_empty() {
            Ok(set)
        } else {
            Err(Error::Invalid(violations))
        }
    }

    /// Builds a set without any checks. Use [`validate`] to inspect it.
    pub fn new_unchecked(num_classes: usize, num_examples: usize, members: Vec<Member>) -> Self {
        PredictionSet {
            num_classes,
            num_examples,
            members,
        }
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn member_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id.as_str()).collect()
    }

    /// Mode of the set; `None` for an empty set.
    pub fn mode(&self) -> Option<PredictionMode> {
        self.members.first().map(|m| m.predictions.mode())
    }

    /// Probability row of `member` for example `t`, `None` in hard mode.
    pub fn row(&self, member: usize, t: usize) -> Option<&[f64]> {
        match &self.members[member].predictions {
            MemberPredictions::Probabilities(rows) => {
                let k = self.num_classes;
                Some(&rows[t * k..(t + 1) * k])
            }
            MemberPredictions::Labels(_) => None,
        }
    }

    /// Hard prediction of `member` on example `t` (argmax in probability mode).
    pub fn predicted_class(&self, member: usize, t: usize) -> usize {
        match &self.members[member].predictions {
            MemberPredictions::Probabilities(_) => argmax(self.row(member, t).unwrap()),
            MemberPredictions::Labels(labels) => labels[t],
        }
    }

    pub fn select_members(&self, indices: &[usize]) -> PredictionSet {
        PredictionSet {
            num_classes: self.num_classes,
            num_examples: self.num_examples,
            members: indices.iter().map(|&i| self.members[i].clone()).collect(),
        }
    }

    pub fn select_examples(&self, indices: &[usize]) -> PredictionSet {
        let k = self.num_classes;
        let members = self
            .members
            .iter()
            .map(|m| {
                let predictions = match &m.predictions {
                    MemberPredictions::Probabilities(rows) => MemberPredictions::Probabilities(
                        indices
                            .iter()
                            .flat_map(|&t| rows[t * k..(t + 1) * k].iter().copied())
                            .collect(),
                    ),
                    MemberPredictions::Labels(labels) => {
                        MemberPredictions::Labels(indices.iter().map(|&t| labels[t]).collect())
                    }
                };
                Member {
                    id: m.id.clone(),
                    run_id: m.run_id.clone(),
                    predictions,
                }
            })
            .collect();
        PredictionSet {
            num_classes: k,
            num_examples: indices.len(),
            members,
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.members.is_empty() {
            out.push(Violation::NoMembers);
        }
        if self.num_examples == 0 {
            out.push(Violation::NoExamples);
        }
        if self.num_classes < 2 {
            out.push(Violation::TooFewClasses(self.num_classes));
        }
        let mut seen = HashSet::new();
        let mode = self.mode();
        let k = self.num_classes;
        for m in &self.members {
            if !seen.insert(m.id.as_str()) {
                out.push(Violation::DuplicateId(m.id.clone()));
            }
            if Some(m.predictions.mode()) != mode {
                out.push(Violation::MixedModes {
                    member: m.id.clone(),
                });
            }
            match &m.predictions {
                MemberPredictions::Probabilities(rows) => {
                    let expected = self.num_examples * k;
                    if k == 0 || rows.len() != expected {
                        out.push(Violation::PredictionLength {
                            member: m.id.clone(),
                            expected: self.num_examples,
                            found: rows.len().checked_div(k).unwrap_or(0),
                        });
                        continue;
                    }
                    for (t, row) in rows.chunks_exact(k).enumerate() {
                        if let Some((class, &value)) = row
                            .iter()
                            .enumerate()
                            .find(|(_, v)| !(0.0..=1.0).contains(*v))
                        {
                            out.push(Violation::ScoreOutOfRange {
                                member: m.id.clone(),
                                row: t,
                                class,
                                value,
                            });
                        }
                        let sum: f64 = row.iter().sum();
                        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                            out.push(Violation::RowNormalization {
                                member: m.id.clone(),
                                row: t,
                                sum,
                            });
                        }
                    }
                }
                MemberPredictions::Labels(labels) => {
                    if labels.len() != self.num_examples {
                        out.push(Violation::PredictionLength {
                            member: m.id.clone(),
                            expected: self.num_examples,
                            found: labels.len(),
                        });
                    }
                    for (t, &c) in labels.iter().enumerate() {
                        if c >= k {
                            out.push(Violation::PredictedClassOutOfRange {
                                member: m.id.clone(),
                                row: t,
                                value: c,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// True class of every example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelVector(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&t| self.0[t]).collect())
    }
}

impl std::ops::Index<usize> for LabelVector {
    type Output = usize;

    fn index(&self, t: usize) -> &usize {
        &self.0[t]
    }
}

/// Which examples may be used to estimate each member's losses, e.g. its
/// out-of-bag set under bagging. Pairwise overlaps are the conjunction of
/// two member masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMask {
    masks: Vec<Vec<bool>>,
}

impl OverlapMask {
    pub fn new(masks: Vec<Vec<bool>>) -> Self {
        OverlapMask { masks }
    }

    pub fn full(num_members: usize, num_examples: usize) -> Self {
        OverlapMask {
            masks: vec![vec![true; num_examples]; num_members],
        }
    }

    pub fn num_members(&self) -> usize {
        self.masks.len()
    }

    pub fn member(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    /// `n_i = |D_i|`.
    pub fn member_count(&self, i: usize) -> usize {
        self.masks[i].iter().filter(|&&b| b).count()
    }

    /// `n_ij = |D_i ∩ D_j|`.
    pub fn pair_count(&self, i: usize, j: usize) -> usize {
        self.masks[i]
            .iter()
            .zip(&self.masks[j])
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn is_full(&self) -> bool {
        self.masks.iter().all(|m| m.iter().all(|&b| b))
    }

    pub fn select_members(&self, indices: &[usize]) -> OverlapMask {
        OverlapMask {
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
        }
    }

    pub fn select_examples(&self, indices: &[usize]) -> OverlapMask {
        OverlapMask {
            masks: self
                .masks
                .iter()
                .map(|m| indices.iter().map(|&t| m[t]).collect())
                .collect(),
        }
    }
}

/// Uniform probability vector of length `m`.
pub fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Checks that `rho` is a probability vector within [`SIMPLEX_TOLERANCE`].
pub fn check_simplex(rho: &[f64]) -> Result<()> {
    if rho.is_empty() {
        return Err(Error::NotOnSimplex("empty vector".into()));
    }
    if let Some((i, &v)) = rho.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NotOnSimplex(format!("entry {i} is {v}")));
    }
    let sum: f64 = rho.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::NotOnSimplex(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Checks strict positivity and unit mass of a prior.
pub fn check_prior(pi: &[f64]) -> Result<()> {
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositivePrior { index, value });
    }
    check_simplex(pi)
}

/// Posterior weights `rho`, prior `pi` and trade-off `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDistribution {
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
    pub lambda: f64,
}

impl WeightDistribution {
    /// Validates both vectors. `lambda` must lie in (0, 2) and is clamped
    /// into `[LAMBDA_MIN, LAMBDA_MAX]`.
    pub fn new(rho: Vec<f64>, pi: Vec<f64>, lambda: f64) -> Result<Self> {
        if rho.len() != pi.len() {
            return Err(Error::WeightLength {
                expected: pi.len(),
                found: rho.len(),
            });
        }
        check_simplex(&rho)?;
        check_prior(&pi)?;
        if !(lambda > 0.0 && lambda < 2.0) {
            return Err(Error::LambdaOutOfRange(lambda));
        }
        Ok(WeightDistribution {
            rho,
            pi,
            lambda: lambda.clamp(LAMBDA_MIN, LAMBDA_MAX),
        })
    }

    pub fn uniform(m: usize, lambda: f64) -> Result<Self> {
        Self::new(uniform(m), uniform(m), lambda)
    }
}

/// A finding from [`validate`], carrying its location.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoMembers,
    NoExamples,
    TooFewClasses(usize),
    DuplicateId(String),
    MixedModes { member: String },
    PredictionLength { member: String, expected: usize, found: usize },
    RowWidth { member: String, row: usize, expected: usize, found: usize },
    RowNormalization { member: String, row: usize, sum: f64 },
    ScoreOutOfRange { member: String, row: usize, class: usize, value: f64 },
    PredictedClassOutOfRange { member: String, row: usize, value: usize },
    LabelLength { expected: usize, found: usize },
    LabelOutOfRange { row: usize, value: usize, num_classes: usize },
    MaskCount { expected: usize, found: usize },
    MaskLength { member: String, expected: usize, found: usize },
    EmptyHoldout { member: String },
    PriorLength { expected: usize, found: usize },
    PriorNonPositive { member: String, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoMembers => write!(f, "ensemble has no members"),
            NoExamples => write!(f, "ensemble has no examples"),
            TooFewClasses(k) => write!(f, "num_classes must be at least 2, got {k}"),
            DuplicateId(id) => write!(f, "duplicate member id {id:?}"),
            MixedModes { member } => write!(f, "member {member:?}: prediction mode differs from the rest"),
            PredictionLength { member, expected, found } => write!(
                f,
                "member {member:?}: dimension mismatch, {found} prediction rows but {expected} labels"
            ),
            RowWidth { member, row, expected, found } => write!(
                f,
                "member {member:?}, row {row}: expected {expected} class scores, found {found}"
            ),
            RowNormalization { member, row, sum } => write!(
                f,
                "member {member:?}, row {row}: probabilities sum to {sum}, not 1"
            ),
            ScoreOutOfRange { member, row, class, value } => write!(
                f,
                "member {member:?}, row {row}: score {value} for class {class} is outside [0, 1]"
            ),
            PredictedClassOutOfRange { member, row, value } => write!(
                f,
                "member {member:?}, row {row}: predicted class {value} is out of range"
            ),
            LabelLength { expected, found } => {
                write!(f, "labels: dimension mismatch, {found} labels for {expected} examples")
            }
            LabelOutOfRange { row, value, num_classes } => write!(
                f,
                "labels, row {row}: class {value} is not below num_classes = {num_classes}"
            ),
            MaskCount { expected, found } => {
                write!(f, "mask: {found} member masks for {expected} members")
            }
            MaskLength { member, expected, found } => write!(
                f,
                "member {member:?}: mask has {found} entries, expected {expected}"
            ),
            EmptyHoldout { member } => write!(f, "member {member:?}: empty hold-out set"),
            PriorLength { expected, found } => {
                write!(f, "prior: {found} weights for {expected} members")
            }
            PriorNonPositive { member, value } => {
                write!(f, "prior weight {value} of member {member:?} is not positive")
            }
        }
    }
}

/// Lists every invariant violated by the three objects; empty iff consistent.
pub fn validate(set: &PredictionSet, labels: &LabelVector, mask: &OverlapMask) -> Vec<Violation> {
    let mut out = set.violations();
    if labels.len() != set.num_examples() {
        out.push(Violation::LabelLength {
            expected: set.num_examples(),
            found: labels.len(),
        });
    }
    for (row, &value) in labels.as_slice().iter().enumerate() {
        if value >= set.num_classes() {
            out.push(Violation::LabelOutOfRange {
                row,
                value,
                num_classes: set.num_classes(),
            });
        }
    }
    if mask.num_members() != set.num_members() {
        out.push(Violation::MaskCount {
            expected: set.num_members(),
            found: mask.num_members(),
        });
        return out;
    }
    for (i, m) in set.members().iter().enumerate() {
        if mask.member(i).len() != set.num_examples() {
            out.push(Violation::MaskLength {
                member: m.id.clone(),
                expected: set.num_examples(),
                found: mask.member(i).len(),
            });
        } else if mask.member_count(i) == 0 {
            out.push(Violation::EmptyHoldout {
                member: m.id.clone(),
            });
        }
    }
    out
}

/// Everything one manifest describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub set: PredictionSet,
    pub labels: LabelVector,
    pub mask: OverlapMask,
    pub prior: Vec<f64>,
}

impl Ensemble {
    /// Full masks and a uniform prior.
    pub fn new(set: PredictionSet, labels: LabelVector) -> Result<Self> {
        let mask = OverlapMask::full(set.num_members(), set.num_examples());
        let prior = uniform(set.num_members());
        Self::with_mask(set, labels, mask, prior)
    }

    pub fn with_mask(
        set: PredictionSet,
        labels: LabelVector,
        mask: OverlapMask,
        prior: Vec<f64>,
    ) -> Result<Self> {
        let mut violations = validate(&set, &labels, &mask);
        violations.extend(prior_violations(&set, &prior));
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(Ensemble {
            set,
            labels,
            mask,
            prior,
        })
    }

    pub fn num_members(&self) -> usize {
        self.set.num_members()
    }

    pub fn num_examples(&self) -> usize {
        self.set.num_examples()
    }

    /// Restriction to a subset of examples. Masks are restricted too and may
    /// become empty for some member, which later shows up as an overlap error.
    pub fn select_examples(&self, indices: &[usize]) -> Ensemble {
        Ensemble {
            set: self.set.select_examples(indices),
            labels: self.labels.select(indices),
            mask: self.mask.select_examples(indices),
            prior: self.prior.clone(),
        }
    }

    /// Restriction to a subset of members; the prior is renormalized.
    pub fn select_members(&self, indices: &[usize]) -> Ensemble {
        let prior: Vec<f64> = indices.iter().map(|&i| self.prior[i]).collect();
        Ensemble {
            set: self.set.select_members(indices),
            labels: self.labels.clone(),
            mask: self.mask.select_members(indices),
            prior: normalize(&prior),
        }
    }
}

fn prior_violations(set: &PredictionSet, prior: &[f64]) -> Vec<Violation> {
    if prior.len() != set.num_members() {
        return vec![Violation::PriorLength {
            expected: set.num_members(),
            found: prior.len(),
        }];
    }
    let mut out: Vec<Violation> = set
        .members()
        .iter()
        .zip(prior)
        .filter(|(_, &v)| !(v > 0.0))
        .map(|(m, &value)| Violation::PriorNonPositive {
            member: m.id.clone(),
            value,
        })
        .collect();
    if out.is_empty() && check_simplex(prior).is_err() {
        out.push(Violation::PriorLength {
            expected: set.num_members(),
            found: prior.len(),
        });
    }
    out
}

pub(crate) fn normalize(v: &[f64]) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter().map(|x| x / sum).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub labels: PathBuf,
    pub members: Vec<ManifestMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
    pub mode: PredictionMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMember {
    pub id: String,
    pub predictions: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(out.len() + 1, |p| p.line() as usize);
        out.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {field:?}"),
    })
}

fn read_column<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>> {
    read_records(path)?
        .into_iter()
        .map(|(line, fields)| {
            if fields.len() != 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected one value, found {}", fields.len()),
                });
            }
            parse_field(path, line, &fields[0])
        })
        .collect()
}

/// Reads a one-value-per-line file of decimals (weights, priors).
pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    read_column(path)
}

fn read_probabilities(path: &Path, member: &str, k: usize) -> Result<Vec<f64>> {
    let mut rows = Vec::new();
    for (row, (line, fields)) in read_records(path)?.into_iter().enumerate() {
        if fields.len() != k {
            return Err(Error::Invalid(vec![Violation::RowWidth {
                member: member.to_owned(),
                row,
                expected: k,
                found: fields.len(),
            }]));
        }
        for f in &fields {
            rows.push(parse_field::<f64>(path, line, f)?);
        }
    }
    Ok(rows)
}

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    read_records(path)?
        .into_iter()
        .map(|(line, fields)| match fields.as_slice() {
            [v] if v == "1" => Ok(true),
            [v] if v == "0" => Ok(false),
            _ => Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "mask entries must be 0 or 1".into(),
            }),
        })
        .collect()
}

/// Loads and validates the ensemble described by a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);

    let labels = LabelVector::new(read_column(&resolve(&manifest.labels))?);
    let n = labels.len();
    let k = manifest.num_classes;

    let mut members = Vec::with_capacity(manifest.members.len());
    let mut masks = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let file = resolve(&entry.predictions);
        let predictions = match manifest.mode {
            PredictionMode::Prob => {
                MemberPredictions::Probabilities(read_probabilities(&file, &entry.id, k)?)
            }
            PredictionMode::Hard => MemberPredictions::Labels(read_column(&file)?),
        };
        members.push(Member {
            id: entry.id.clone(),
            run_id: entry.run_id.clone(),
            predictions,
        });
        masks.push(match &entry.mask {
            Some(m) => read_mask(&resolve(m))?,
            None => vec![true; n],
        });
    }
    let set = PredictionSet::new_unchecked(k, n, members);

    let prior = match manifest.prior.as_deref() {
        None | Some("uniform") => uniform(set.num_members()),
        Some(p) => {
            let raw = read_weights(&resolve(Path::new(p)))?;
            if let Some(v) = raw.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                let member = set
                    .members()
                    .get(v.0)
                    .map_or_else(|| v.0.to_string(), |m| m.id.clone());
                return Err(Error::Invalid(vec![Violation::PriorNonPositive {
                    member,
                    value: *v.1,
                }]));
            }
            let sum: f64 = raw.iter().sum();
            if (sum - 1.0).abs() <= SIMPLEX_TOLERANCE {
                raw
            } else {
                normalize(&raw)
            }
        }
    };

    Ensemble::with_mask(set, labels, OverlapMask::new(masks), prior)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an ensemble into `dir` as `manifest.json` plus CSV files and
/// returns the manifest path. Decimals use the shortest representation that
/// parses back to the same `f64`, so reloading is bit-exact.
pub fn write_manifest(dir: impl AsRef<Path>, ensemble: &Ensemble) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let set = &ensemble.set;
    let k = set.num_classes();

    let mut labels = String::new();
    for &y in ensemble.labels.as_slice() {
        labels.push_str(&format!("{y}\n"));
    }
    write_file(&dir.join("labels.csv"), &labels)?;

    let mut entries = Vec::new();
    for (i, m) in set.members().iter().enumerate() {
        let file = format!("member_{i}.csv");
        let mut body = String::new();
        match &m.predictions {
            MemberPredictions::Probabilities(rows) => {
                for row in rows.chunks_exact(k) {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                    body.push_str(&cells.join(","));
                    body.push('\n');
                }
            }
            MemberPredictions::Labels(labels) => {
                for c in labels {
                    body.push_str(&format!("{c}\n"));
                }
            }
        }
        write_file(&dir.join(&file), &body)?;

        let mask = ensemble.mask.member(i);
        let mask_file = if mask.iter().all(|&b| b) {
            None
        } else {
            let name = format!("member_{i}_mask.csv");
            let body: String = mask.iter().map(|&b| if b { "1\n" } else { "0\n" }).collect();
            write_file(&dir.join(&name), &body)?;
            Some(PathBuf::from(name))
        };
        entries.push(ManifestMember {
            id: m.id.clone(),
            predictions: PathBuf::from(file),
            mask: mask_file,
            run_id: m.run_id.clone(),
        });
    }

    let uniform_prior = ensemble
        .prior
        .iter()
        .all(|&p| p == 1.0 / set.num_members() as f64);
    let prior = if uniform_prior {
        "uniform".to_owned()
    } else {
        let body: String = ensemble.prior.iter().map(|p| format!("{p}\n")).collect();
        write_file(&dir.join("prior.csv"), &body)?;
        "prior.csv".to_owned()
    };

    let manifest = Manifest {
        num_classes: k,
        labels: PathBuf::from("labels.csv"),
        members: entries,
        prior: Some(prior),
        mode: set.mode().unwrap_or(PredictionMode::Prob),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, &(json + "\n"))?;
    Ok(path)
}
