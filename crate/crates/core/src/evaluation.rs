//! Gated IFC/GP/IC scoring, per-setting reports, error breakdowns.
//!
//! A trial scores three 0/1 marks: the flight condition was interpreted
//! correctly (IFC), the right procedure came back (GP), and its index is right
//! (IC). Each mark is gated on the one before it, so `ic <= gp <= ifc` always.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manual::{is_condition_code, Corpus, SectionNumber, Severity};
use crate::pipeline::{
    context_from_panel, respond, InputSetting, PerceptionProvider, PipelineError, ProcedureResponse,
};
use crate::retrieval::Index;
use crate::situation::{DisplayKind, FlightCondition};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("record {record}: {reason}")]
    DatasetSyntax { record: usize, reason: String },
    #[error("sample `{0}` is inconsistent: NORMAL class, missing procedure and missing index must coincide")]
    InconsistentSample(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("no samples to evaluate")]
    EmptySamples,
    #[error("no settings requested")]
    EmptySettings,
    #[error("trial `{0}` violates the score gate ic <= gp <= ifc")]
    GateViolation(String),
    #[error("sample `{id}`: {source}")]
    Pipeline {
        id: String,
        #[source]
        source: Box<PipelineError>,
    },
}

impl EvaluationError {
    pub fn code(&self) -> &'static str {
        match self {
            EvaluationError::DatasetSyntax { .. } => "DatasetSyntaxError",
            EvaluationError::InconsistentSample(_) => "InconsistentSample",
            EvaluationError::DuplicateSample(_) => "DuplicateSample",
            EvaluationError::EmptySamples => "EmptySamples",
            EvaluationError::EmptySettings => "EmptySettings",
            EvaluationError::GateViolation(_) => "GateViolation",
            EvaluationError::Pipeline { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorStage {
    Ifc,
    Gp,
    Ic,
}

impl ErrorStage {
    pub const ALL: [ErrorStage; 3] = [ErrorStage::Ifc, ErrorStage::Gp, ErrorStage::Ic];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorStage::Ifc => "IFC",
            ErrorStage::Gp => "GP",
            ErrorStage::Ic => "IC",
        }
    }
}

impl fmt::Display for ErrorStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IFC" => Ok(ErrorStage::Ifc),
            "GP" => Ok(ErrorStage::Gp),
            "IC" => Ok(ErrorStage::Ic),
            _ => Err(format!("unknown error stage `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    IncompleteImageAnalysis,
    MisleadingInstruction,
    InsufficientContext,
    ImageClarity,
    ModelRecognitionError,
    ModelSearchError,
    NonexistentContent,
    SituationAnalysisError,
    UnnumberedSourceFile,
    BroadTitleOnly,
}

impl ErrorCategory {
    pub fn legal_for(self, stage: ErrorStage) -> bool {
        use ErrorCategory::*;
        match stage {
            ErrorStage::Ifc => matches!(
                self,
                IncompleteImageAnalysis
                    | MisleadingInstruction
                    | InsufficientContext
                    | ImageClarity
                    | ModelRecognitionError
            ),
            ErrorStage::Gp => matches!(
                self,
                ModelSearchError
                    | InsufficientContext
                    | NonexistentContent
                    | SituationAnalysisError
            ),
            ErrorStage::Ic => matches!(
                self,
                UnnumberedSourceFile
                    | BroadTitleOnly
                    | SituationAnalysisError
                    | InsufficientContext
            ),
        }
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCategory::*;
        match self {
            IncompleteImageAnalysis => "INCOMPLETE_IMAGE_ANALYSIS",
            MisleadingInstruction => "MISLEADING_INSTRUCTION",
            InsufficientContext => "INSUFFICIENT_CONTEXT",
            ImageClarity => "IMAGE_CLARITY",
            ModelRecognitionError => "MODEL_RECOGNITION_ERROR",
            ModelSearchError => "MODEL_SEARCH_ERROR",
            NonexistentContent => "NONEXISTENT_CONTENT",
            SituationAnalysisError => "SITUATION_ANALYSIS_ERROR",
            UnnumberedSourceFile => "UNNUMBERED_SOURCE_FILE",
            BroadTitleOnly => "BROAD_TITLE_ONLY",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Analyst-assigned cause of a failed trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawErrorLabel")]
pub struct ErrorLabel {
    stage: ErrorStage,
    category: ErrorCategory,
}

#[derive(Deserialize)]
struct RawErrorLabel {
    stage: ErrorStage,
    category: ErrorCategory,
}

impl TryFrom<RawErrorLabel> for ErrorLabel {
    type Error = String;

    fn try_from(raw: RawErrorLabel) -> Result<Self, Self::Error> {
        ErrorLabel::new(raw.stage, raw.category)
    }
}

impl ErrorLabel {
    pub fn new(stage: ErrorStage, category: ErrorCategory) -> Result<Self, String> {
        if category.legal_for(stage) {
            Ok(Self { stage, category })
        } else {
            Err(format!("category {category} is not a {stage} error"))
        }
    }

    pub fn stage(&self) -> ErrorStage {
        self.stage
    }

    pub fn category(&self) -> ErrorCategory {
        self.category
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedIndex {
    pub section: SectionNumber,
    pub page: u32,
}

/// One annotated evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: String,
    pub display: DisplayKind,
    pub panel: String,
    pub instruction: String,
    pub expected_condition: FlightCondition,
    pub expected_procedure_id: Option<String>,
    pub expected_index: Option<ExpectedIndex>,
    pub error_label: Option<ErrorLabel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    display: String,
    panel: String,
    instruction: String,
    expected_class: String,
    expected_labels: Vec<String>,
    expected_procedure_id: Option<String>,
    expected_section: Option<String>,
    expected_page: Option<u32>,
    error_label: Option<ErrorLabel>,
}

impl SampleRecord {
    fn into_sample(self, record: usize) -> Result<Sample, EvaluationError> {
        let syntax = |reason: String| EvaluationError::DatasetSyntax { record, reason };
        if self.id.trim().is_empty() {
            return Err(syntax("empty id".into()));
        }
        let display: DisplayKind = self.display.parse().map_err(syntax)?;
        let class: Severity = self.expected_class.parse().map_err(syntax)?;
        let mut labels = self.expected_labels;
        if let Some(bad) = labels.iter().find(|l| !is_condition_code(l)) {
            return Err(syntax(format!(
                "label `{bad}` is not an uppercase condition code"
            )));
        }
        labels.sort();
        labels.dedup();
        let section = self
            .expected_section
            .map(|s| s.parse::<SectionNumber>())
            .transpose()
            .map_err(syntax)?;
        if self.expected_page == Some(0) {
            return Err(syntax("page must be positive".into()));
        }

        let normal = class == Severity::Normal;
        let consistent = normal == labels.is_empty()
            && normal == self.expected_procedure_id.is_none()
            && normal == section.is_none()
            && normal == self.expected_page.is_none();
        if !consistent {
            return Err(EvaluationError::InconsistentSample(self.id));
        }
        let expected_index = section
            .zip(self.expected_page)
            .map(|(section, page)| ExpectedIndex { section, page });
        Ok(Sample {
            id: self.id,
            display,
            panel: self.panel,
            instruction: self.instruction,
            expected_condition: FlightCondition {
                class,
                labels,
                matched_rules: Vec::new(),
            },
            expected_procedure_id: self.expected_procedure_id,
            expected_index,
            error_label: self.error_label,
        })
    }
}

/// Parse a JSON Lines dataset. Blank lines are skipped.
pub fn load_dataset(text: &str) -> Result<Vec<Sample>, EvaluationError> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = i + 1;
        let raw: SampleRecord =
            serde_json::from_str(line).map_err(|e| EvaluationError::DatasetSyntax {
                record,
                reason: e.to_string(),
            })?;
        let sample = raw.into_sample(record)?;
        if !seen.insert(sample.id.clone()) {
            return Err(EvaluationError::DuplicateSample(sample.id));
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Gated 0/1 marks for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TrialScore {
    ifc: u8,
    gp: u8,
    ic: u8,
}

impl TrialScore {
    /// Apply the gate to raw per-stage outcomes.
    pub fn gated(ifc: bool, gp: bool, ic: bool) -> Self {
        let ifc = ifc as u8;
        let gp = ifc * gp as u8;
        let ic = gp * ic as u8;
        Self { ifc, gp, ic }
    }

    /// Accept already-gated marks, rejecting anything that breaks the gate.
    pub fn from_marks(ifc: u8, gp: u8, ic: u8) -> Option<Self> {
        (ifc <= 1 && ic <= gp && gp <= ifc).then_some(Self { ifc, gp, ic })
    }

    pub fn ifc(self) -> u8 {
        self.ifc
    }

    pub fn gp(self) -> u8 {
        self.gp
    }

    pub fn ic(self) -> u8 {
        self.ic
    }

    pub fn is_perfect(self) -> bool {
        self.ic == 1
    }

    /// Stage at which the trial first failed.
    pub fn failed_stage(self) -> Option<ErrorStage> {
        if self.ifc == 0 {
            Some(ErrorStage::Ifc)
        } else if self.gp == 0 {
            Some(ErrorStage::Gp)
        } else if self.ic == 0 {
            Some(ErrorStage::Ic)
        } else {
            None
        }
    }
}

/// Score a response against its sample.
pub fn score_trial(response: &ProcedureResponse, sample: &Sample) -> TrialScore {
    let expected = &sample.expected_condition;
    let ifc = response.condition.class == expected.class
        && response.condition.label_set() == expected.label_set();
    let (gp, ic) = if expected.is_normal() {
        (response.hits.is_empty(), true)
    } else {
        let gp = response.top_procedure() == sample.expected_procedure_id.as_deref();
        let ic = match (&response.citation, &sample.expected_index) {
            (Some(c), Some(e)) => c.section_number == e.section && c.page == e.page,
            _ => false,
        };
        (gp, ic)
    };
    TrialScore::gated(ifc, gp, ic)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub sample_id: String,
    pub score: TrialScore,
    pub error_label: Option<ErrorLabel>,
}

/// Aggregate of one setting's trials. Counts are exact; accuracies derive from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SettingReport {
    pub setting: InputSetting,
    pub n: usize,
    pub ifc_count: usize,
    pub gp_count: usize,
    pub ic_count: usize,
    pub per_trial: Vec<TrialRecord>,
}

impl SettingReport {
    pub fn from_trials(
        setting: InputSetting,
        per_trial: Vec<TrialRecord>,
    ) -> Result<Self, EvaluationError> {
        if per_trial.is_empty() {
            return Err(EvaluationError::EmptySamples);
        }
        let sum = |f: fn(TrialScore) -> u8| per_trial.iter().map(|t| f(t.score) as usize).sum();
        let report = Self {
            setting,
            n: per_trial.len(),
            ifc_count: sum(TrialScore::ifc),
            gp_count: sum(TrialScore::gp),
            ic_count: sum(TrialScore::ic),
            per_trial,
        };
        assert!(
            report.ic_count <= report.gp_count && report.gp_count <= report.ifc_count,
            "aggregate gate violated"
        );
        Ok(report)
    }

    pub fn ifc_acc(&self) -> f64 {
        self.ifc_count as f64 / self.n as f64
    }

    pub fn gp_acc(&self) -> f64 {
        self.gp_count as f64 / self.n as f64
    }

    pub fn ic_acc(&self) -> f64 {
        self.ic_count as f64 / self.n as f64
    }

    /// `"94% 86% 72%"`
    pub fn percent_row(&self) -> String {
        format!(
            "{} {} {}",
            format_percent(self.ifc_count, self.n),
            format_percent(self.gp_count, self.n),
            format_percent(self.ic_count, self.n)
        )
    }

    /// `"47/50 43/50 36/50"`
    pub fn count_row(&self) -> String {
        format!(
            "{}/{n} {}/{n} {}/{n}",
            self.ifc_count,
            self.gp_count,
            self.ic_count,
            n = self.n
        )
    }
}

/// `count / n` as a percentage rounded half-up to one decimal, without a
/// trailing `.0`. Integer arithmetic, so 181/200 prints `90.5%`.
pub fn format_percent(count: usize, n: usize) -> String {
    assert!(n > 0, "percentage of an empty set");
    let tenths = (count as u128 * 2000 + n as u128) / (2 * n as u128);
    if tenths.is_multiple_of(10) {
        format!("{}%", tenths / 10)
    } else {
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

/// Plain-text accuracy table, one row per report.
pub fn render_table(reports: &[SettingReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.setting.table_label().len())
        .chain(["Input".len()])
        .max()
        .unwrap_or(0);
    let mut out = format!("{:<width$}  IFC GP IC\n", "Input");
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {}  ({})\n",
            r.setting.table_label(),
            r.percent_row(),
            r.count_row()
        ));
    }
    out
}

fn trial_for(
    sample: &Sample,
    setting: InputSetting,
    provider: &dyn PerceptionProvider,
    index: &Index,
    corpus: &Corpus,
) -> Result<TrialRecord, EvaluationError> {
    let instruction = setting
        .uses_instruction()
        .then_some(sample.instruction.as_str());
    let pipeline = |source| EvaluationError::Pipeline {
        id: sample.id.clone(),
        source: Box::new(source),
    };
    let ctx = context_from_panel(setting, &sample.panel, sample.display, instruction)
        .map_err(pipeline)?;
    let (score, auto_label) = match respond(&ctx, provider, index, corpus) {
        Ok(response) => (score_trial(&response, sample), None),
        Err(PipelineError::Provider { .. }) => (
            TrialScore::gated(false, false, false),
            Some(ErrorLabel {
                stage: ErrorStage::Ifc,
                category: ErrorCategory::ModelRecognitionError,
            }),
        ),
        Err(PipelineError::GroundingViolation { condition, .. }) => {
            let expected = &sample.expected_condition;
            let ifc =
                condition.class == expected.class && condition.label_set() == expected.label_set();
            let label = ifc.then_some(ErrorLabel {
                stage: ErrorStage::Gp,
                category: ErrorCategory::NonexistentContent,
            });
            (TrialScore::gated(ifc, false, false), label)
        }
        Err(e) => return Err(pipeline(e)),
    };
    let error_label = match score.failed_stage() {
        None => None,
        Some(stage) => auto_label.or(sample.error_label.filter(|l| l.stage == stage)),
    };
    Ok(TrialRecord {
        sample_id: sample.id.clone(),
        score,
        error_label,
    })
}

/// Run every sample through the pipeline under one setting. Samples run in
/// parallel; the report keeps dataset order.
pub fn evaluate(
    samples: &[Sample],
    setting: InputSetting,
    provider: &dyn PerceptionProvider,
    index: &Index,
    corpus: &Corpus,
) -> Result<SettingReport, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptySamples);
    }
    let trials = samples
        .par_iter()
        .map(|s| trial_for(s, setting, provider, index, corpus))
        .collect::<Result<Vec<_>, _>>()?;
    SettingReport::from_trials(setting, trials)
}

pub fn ablation(
    samples: &[Sample],
    settings: &[InputSetting],
    provider: &dyn PerceptionProvider,
    index: &Index,
    corpus: &Corpus,
) -> Result<Vec<SettingReport>, EvaluationError> {
    if settings.is_empty() {
        return Err(EvaluationError::EmptySettings);
    }
    settings
        .iter()
        .map(|&s| evaluate(samples, s, provider, index, corpus))
        .collect()
}

/// Failures at one stage grouped by analyst label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBreakdown {
    pub stage: ErrorStage,
    pub counts: BTreeMap<ErrorCategory, usize>,
    /// Failures at this stage without a matching label; excluded from percentages.
    pub unlabeled: Vec<String>,
}

impl ErrorBreakdown {
    pub fn labeled_total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty() && self.unlabeled.is_empty()
    }

    pub fn percentage(&self, category: ErrorCategory) -> f64 {
        let total = self.labeled_total();
        if total == 0 {
            return 0.0;
        }
        100.0 * *self.counts.get(&category).unwrap_or(&0) as f64 / total as f64
    }

    pub fn percentages(&self) -> BTreeMap<ErrorCategory, f64> {
        self.counts
            .keys()
            .map(|&c| (c, self.percentage(c)))
            .collect()
    }

    /// One line per category, largest first: `INCOMPLETE_IMAGE_ANALYSIS 8/19 42.11%`.
    pub fn render(&self) -> String {
        let total = self.labeled_total();
        let mut rows: Vec<_> = self.counts.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut out = format!("{} errors ({total} labeled)\n", self.stage);
        for (category, count) in rows {
            out.push_str(&format!(
                "  {category} {count}/{total} {:.2}%\n",
                self.percentage(*category)
            ));
        }
        if !self.unlabeled.is_empty() {
            out.push_str(&format!("  unlabeled: {}\n", self.unlabeled.join(", ")));
        }
        out
    }
}

pub fn error_breakdown(report: &SettingReport, stage: ErrorStage) -> ErrorBreakdown {
    let mut counts = BTreeMap::new();
    let mut unlabeled = Vec::new();
    for trial in &report.per_trial {
        if trial.score.failed_stage() != Some(stage) {
            continue;
        }
        match trial.error_label {
            Some(label) if label.stage == stage => *counts.entry(label.category).or_insert(0) += 1,
            _ => unlabeled.push(trial.sample_id.clone()),
        }
    }
    ErrorBreakdown {
        stage,
        counts,
        unlabeled,
    }
}

/// One per-trial score line; the format written by `write_trial_records` and
/// read back for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub setting: InputSetting,
    pub sample_id: String,
    pub ifc: u8,
    pub gp: u8,
    pub ic: u8,
    pub error_label: Option<ErrorLabel>,
}

pub fn load_replay(text: &str) -> Result<Vec<ReplayRecord>, EvaluationError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| EvaluationError::DatasetSyntax {
                record: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Rebuild reports from recorded scores, one per setting in first-seen order.
pub fn replay_reports(records: &[ReplayRecord]) -> Result<Vec<SettingReport>, EvaluationError> {
    let mut order: Vec<InputSetting> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<TrialRecord>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert((r.setting, r.sample_id.as_str())) {
            return Err(EvaluationError::DuplicateSample(r.sample_id.clone()));
        }
        let score = TrialScore::from_marks(r.ifc, r.gp, r.ic)
            .ok_or_else(|| EvaluationError::GateViolation(r.sample_id.clone()))?;
        let slot = match order.iter().position(|&s| s == r.setting) {
            Some(i) => i,
            None => {
                order.push(r.setting);
                order.len() - 1
            }
        };
        groups.entry(slot).or_default().push(TrialRecord {
            sample_id: r.sample_id.clone(),
            score,
            error_label: r.error_label,
        });
    }
    groups
        .into_iter()
        .map(|(slot, trials)| SettingReport::from_trials(order[slot], trials))
        .collect()
}

/// Per-trial records as JSON Lines, replayable with [`load_replay`].
pub fn write_trial_records(reports: &[SettingReport]) -> String {
    let mut out = String::new();
    for report in reports {
        for t in &report.per_trial {
            let record = ReplayRecord {
                setting: report.setting,
                sample_id: t.sample_id.clone(),
                ifc: t.score.ifc,
                gp: t.score.gp,
                ic: t.score.ic,
                error_label: t.error_label,
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
