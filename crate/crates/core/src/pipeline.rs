//! Interpret, search, cite.
//!
//! A [`QueryContext`] carries exactly the evidence its [`InputSetting`] allows.
//! A [`PerceptionProvider`] turns it into a [`FlightCondition`]; retrieval
//! always runs through the local [`Index`], and the returned excerpt is always
//! a verbatim slice of the cited manual.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manual::{Corpus, ManualError, Severity, SourceIndex};
use crate::retrieval::{build_index, tokenize, Index, RankParams, RankedHit, RetrievalError};
use crate::situation::{
    classify, load_rules, parse_panel_text, render_panel, rule_vocabulary, ConditionRule,
    DisplayKind, FlightCondition, InstrumentSnapshot, SituationError,
};

/// Candidate hits retrieved per query; the first one is cited.
pub const CANDIDATE_HITS: usize = 5;

pub const NO_ANOMALY: &str = "no anomaly detected";
pub const NO_MATCHING_PROCEDURE: &str = "no matching procedure in the corpus";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", try_from = "String")]
pub enum InputSetting {
    SnapshotOnly,
    SnapshotPlusInstruction,
    OcrPlusInstruction,
}

impl InputSetting {
    pub const ALL: [InputSetting; 3] = [
        InputSetting::SnapshotOnly,
        InputSetting::SnapshotPlusInstruction,
        InputSetting::OcrPlusInstruction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputSetting::SnapshotOnly => "SNAPSHOT_ONLY",
            InputSetting::SnapshotPlusInstruction => "SNAPSHOT_PLUS_INSTRUCTION",
            InputSetting::OcrPlusInstruction => "OCR_PLUS_INSTRUCTION",
        }
    }

    /// Row label used in accuracy tables.
    pub fn table_label(self) -> &'static str {
        match self {
            InputSetting::SnapshotOnly => "Image",
            InputSetting::SnapshotPlusInstruction => "Image + Pilot's Instruction",
            InputSetting::OcrPlusInstruction => "OCR + Pilot's Instruction",
        }
    }

    pub fn uses_instruction(self) -> bool {
        self != InputSetting::SnapshotOnly
    }
}

impl fmt::Display for InputSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for InputSetting {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl FromStr for InputSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "SNAPSHOT_ONLY" | "IMAGE" => Ok(InputSetting::SnapshotOnly),
            "SNAPSHOT_PLUS_INSTRUCTION" | "IMAGE_INSTRUCTION" => {
                Ok(InputSetting::SnapshotPlusInstruction)
            }
            "OCR_PLUS_INSTRUCTION" | "OCR_INSTRUCTION" => Ok(InputSetting::OcrPlusInstruction),
            _ => Err(format!("unknown input setting `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhraseologyTag {
    EcamActions,
    ClearStatus,
    FreeText,
}

const PHRASEOLOGY: &[(&[&str], PhraseologyTag)] = &[
    (&["ecam", "actions"], PhraseologyTag::EcamActions),
    (&["ecam", "action"], PhraseologyTag::EcamActions),
    (&["clear", "status"], PhraseologyTag::ClearStatus),
];

impl PhraseologyTag {
    /// Standard call contained in an instruction, or `FreeText`.
    pub fn detect(text: &str) -> Self {
        let tokens = tokenize(text);
        PHRASEOLOGY
            .iter()
            .find(|(phrase, _)| tokens.windows(phrase.len()).any(|w| w == *phrase))
            .map_or(PhraseologyTag::FreeText, |(_, tag)| *tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotInstruction {
    pub text: String,
    pub phraseology_tag: Option<PhraseologyTag>,
}

impl PilotInstruction {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tag = PhraseologyTag::detect(&text);
        Self {
            text,
            phraseology_tag: Some(tag),
        }
    }
}

/// Panel text as delivered by character recognition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrInput {
    pub text: String,
    pub display: DisplayKind,
}

/// Evidence for one query. Only [`build_query`] constructs these.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryContext {
    setting: InputSetting,
    snapshot: Option<InstrumentSnapshot>,
    ocr: Option<OcrInput>,
    instruction: Option<PilotInstruction>,
}

impl QueryContext {
    pub fn setting(&self) -> InputSetting {
        self.setting
    }

    pub fn snapshot(&self) -> Option<&InstrumentSnapshot> {
        self.snapshot.as_ref()
    }

    pub fn ocr(&self) -> Option<&OcrInput> {
        self.ocr.as_ref()
    }

    pub fn instruction(&self) -> Option<&PilotInstruction> {
        self.instruction.as_ref()
    }

    /// Display the evidence came from.
    pub fn display(&self) -> DisplayKind {
        match (&self.snapshot, &self.ocr) {
            (Some(s), _) => s.display,
            (None, Some(o)) => o.display,
            (None, None) => unreachable!("build_query guarantees one panel input"),
        }
    }

    /// Panel evidence as dump text.
    pub fn panel_text(&self) -> String {
        match (&self.snapshot, &self.ocr) {
            (Some(s), _) => render_panel(s),
            (None, Some(o)) => o.text.clone(),
            (None, None) => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputField {
    Snapshot,
    OcrText,
    Instruction,
}

impl fmt::Display for InputField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputField::Snapshot => "snapshot",
            InputField::OcrText => "ocr_text",
            InputField::Instruction => "instruction",
        })
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("provider returned label `{0}` outside the condition vocabulary")]
    Label(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider reply: {0}")]
    Reply(String),
    #[error(transparent)]
    Situation(#[from] SituationError),
}

impl ProviderError {
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Timeout(_) => "Timeout",
            ProviderError::Label(_) => "ProviderLabelError",
            ProviderError::Transport(_) => "TransportError",
            ProviderError::Reply(_) => "ProviderReplyError",
            ProviderError::Situation(e) => e.code(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{setting} requires {field}")]
    MissingInput {
        setting: InputSetting,
        field: InputField,
    },
    #[error("{setting} does not accept {field}")]
    ExtraneousInput {
        setting: InputSetting,
        field: InputField,
    },
    #[error("provider `{provider}` quoted text that is not in the corpus")]
    GroundingViolation {
        provider: String,
        condition: Box<FlightCondition>,
        quoted: String,
    },
    #[error("provider `{provider}`: {source}")]
    Provider {
        provider: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Manual(#[from] ManualError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Situation(#[from] SituationError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::MissingInput { .. } => "MissingInput",
            PipelineError::ExtraneousInput { .. } => "ExtraneousInput",
            PipelineError::GroundingViolation { .. } => "GroundingViolation",
            PipelineError::Provider { source, .. } => source.code(),
            PipelineError::Manual(e) => e.code(),
            PipelineError::Retrieval(e) => e.code(),
            PipelineError::Situation(e) => e.code(),
        }
    }

    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PipelineError::MissingInput { .. } | PipelineError::ExtraneousInput { .. }
        )
    }
}

/// Check the inputs against the setting's presence rules.
pub fn build_query(
    setting: InputSetting,
    snapshot: Option<InstrumentSnapshot>,
    ocr: Option<OcrInput>,
    instruction: Option<PilotInstruction>,
) -> Result<QueryContext, PipelineError> {
    use InputField::*;
    let missing = |field| PipelineError::MissingInput { setting, field };
    let extraneous = |field| PipelineError::ExtraneousInput { setting, field };

    let instruction = instruction.filter(|i| !i.text.trim().is_empty());
    match setting {
        InputSetting::SnapshotOnly => {
            if snapshot.is_none() {
                return Err(missing(Snapshot));
            }
            if ocr.is_some() {
                return Err(extraneous(OcrText));
            }
            if instruction.is_some() {
                return Err(extraneous(Instruction));
            }
        }
        InputSetting::SnapshotPlusInstruction => {
            if snapshot.is_none() {
                return Err(missing(Snapshot));
            }
            if instruction.is_none() {
                return Err(missing(Instruction));
            }
            if ocr.is_some() {
                return Err(extraneous(OcrText));
            }
        }
        InputSetting::OcrPlusInstruction => {
            if ocr.is_none() {
                return Err(missing(OcrText));
            }
            if instruction.is_none() {
                return Err(missing(Instruction));
            }
            if snapshot.is_some() {
                return Err(extraneous(Snapshot));
            }
        }
    }
    Ok(QueryContext {
        setting,
        snapshot,
        ocr,
        instruction,
    })
}

/// What a provider saw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perception {
    pub condition: FlightCondition,
    /// Procedure text the provider claims to quote; checked against the corpus.
    pub quoted_text: Option<String>,
}

impl From<FlightCondition> for Perception {
    fn from(condition: FlightCondition) -> Self {
        Self {
            condition,
            quoted_text: None,
        }
    }
}

pub trait PerceptionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn analyze(&self, ctx: &QueryContext) -> Result<Perception, ProviderError>;
}

/// Deterministic provider backed by a condition rule set.
#[derive(Debug, Clone)]
pub struct RuleBasedProvider {
    rules: Arc<Vec<ConditionRule>>,
}

impl RuleBasedProvider {
    pub fn new(rules: Vec<ConditionRule>) -> Self {
        Self {
            rules: Arc::new(rules),
        }
    }

    pub fn rules(&self) -> &[ConditionRule] {
        &self.rules
    }
}

impl PerceptionProvider for RuleBasedProvider {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn analyze(&self, ctx: &QueryContext) -> Result<Perception, ProviderError> {
        let condition = match (ctx.snapshot(), ctx.ocr()) {
            (Some(snapshot), _) => classify(snapshot, &self.rules)?,
            (None, Some(ocr)) => {
                let reading = parse_panel_text(&ocr.text, ocr.display);
                classify(&reading.snapshot, &self.rules)?
            }
            (None, None) => FlightCondition::normal(),
        };
        Ok(condition.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureResponse {
    pub condition: FlightCondition,
    pub hits: Vec<RankedHit>,
    pub excerpt: String,
    pub citation: Option<SourceIndex>,
    pub provider: String,
    pub advisory: Option<String>,
}

impl ProcedureResponse {
    pub fn top_procedure(&self) -> Option<&str> {
        self.hits.first().map(|h| h.procedure_id.as_str())
    }
}

/// Query terms for a condition and optional instruction.
pub fn query_terms(
    condition: &FlightCondition,
    instruction: Option<&PilotInstruction>,
) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let instruction_tokens = instruction.map(|i| tokenize(&i.text)).unwrap_or_default();
    let label_tokens = condition.labels.iter().flat_map(|l| tokenize(l));
    instruction_tokens
        .into_iter()
        .chain(label_tokens)
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Run one query end to end.
pub fn respond(
    ctx: &QueryContext,
    provider: &dyn PerceptionProvider,
    index: &Index,
    corpus: &Corpus,
) -> Result<ProcedureResponse, PipelineError> {
    let perception = provider
        .analyze(ctx)
        .map_err(|source| PipelineError::Provider {
            provider: provider.name().to_string(),
            source,
        })?;
    let condition = perception.condition;
    if let Some(quoted) = perception.quoted_text {
        if !corpus.contains_text(&quoted) {
            return Err(PipelineError::GroundingViolation {
                provider: provider.name().to_string(),
                condition: Box::new(condition),
                quoted,
            });
        }
    }

    let mut response = ProcedureResponse {
        condition,
        hits: Vec::new(),
        excerpt: String::new(),
        citation: None,
        provider: provider.name().to_string(),
        advisory: None,
    };
    if response.condition.is_normal() {
        response.advisory = Some(NO_ANOMALY.to_string());
        return Ok(response);
    }

    let terms = query_terms(&response.condition, ctx.instruction());
    let tags: BTreeSet<String> = response.condition.labels.iter().cloned().collect();
    response.hits = index.search(&terms, &tags, CANDIDATE_HITS);
    match response.hits.first() {
        Some(top) => {
            response.excerpt = corpus.verbatim_excerpt(&top.source)?.to_string();
            response.citation = Some(top.source.clone());
        }
        None => response.advisory = Some(NO_MATCHING_PROCEDURE.to_string()),
    }
    Ok(response)
}

/// Endpoint settings for a remote multimodal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

/// Environment variable holding the bearer token for the external provider.
pub const PROVIDER_TOKEN_ENV: &str = "VCOP_PROVIDER_TOKEN";

#[derive(Debug, Serialize)]
struct ProviderRequest<'a> {
    panel: String,
    display: DisplayKind,
    instruction: Option<&'a str>,
    vocabulary: &'a BTreeSet<String>,
}

/// Provider that delegates interpretation to a remote model over HTTP.
///
/// The request is a JSON object `{panel, display, instruction, vocabulary}`.
/// The reply's first non-blank line is `CLASS LABEL1 LABEL2 ...`; any further
/// text is taken as quoted procedure text and must appear in the corpus.
pub struct ExternalProvider {
    config: EndpointConfig,
    vocabulary: BTreeSet<String>,
    token: Option<String>,
    agent: ureq::Agent,
}

pub fn external_provider(config: EndpointConfig, vocabulary: BTreeSet<String>) -> ExternalProvider {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    ExternalProvider {
        token: std::env::var(PROVIDER_TOKEN_ENV)
            .ok()
            .filter(|t| !t.is_empty()),
        config,
        vocabulary,
        agent,
    }
}

impl ExternalProvider {
    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms)
    }

    fn map_transport(&self, e: ureq::Error) -> ProviderError {
        match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout(self.timeout()),
            other => ProviderError::Transport(other.to_string()),
        }
    }
}

impl PerceptionProvider for ExternalProvider {
    fn name(&self) -> &str {
        "external"
    }

    fn analyze(&self, ctx: &QueryContext) -> Result<Perception, ProviderError> {
        let body = ProviderRequest {
            panel: ctx.panel_text(),
            display: ctx.display(),
            instruction: ctx.instruction().map(|i| i.text.as_str()),
            vocabulary: &self.vocabulary,
        };
        let body =
            serde_json::to_string(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let mut request = self
            .agent
            .post(&self.config.base_url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut reply = request
            .send(body.as_str())
            .map_err(|e| self.map_transport(e))?;
        let status = reply.status();
        let text = reply
            .body_mut()
            .read_to_string()
            .map_err(|e| self.map_transport(e))?;
        if !status.is_success() {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        parse_provider_reply(&text, &self.vocabulary)
    }
}

/// Parse a `CLASS LABEL...` reply, rejecting labels outside the vocabulary.
pub fn parse_provider_reply(
    text: &str,
    vocabulary: &BTreeSet<String>,
) -> Result<Perception, ProviderError> {
    let mut lines = text.lines().skip_while(|l| l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| ProviderError::Reply("empty reply".into()))?;
    let mut words = head.split_whitespace();
    let class: Severity = words
        .next()
        .unwrap_or_default()
        .parse()
        .map_err(ProviderError::Reply)?;
    let mut labels: Vec<String> = Vec::new();
    for word in words {
        if !vocabulary.contains(word) {
            return Err(ProviderError::Label(word.to_string()));
        }
        if !labels.iter().any(|l| l == word) {
            labels.push(word.to_string());
        }
    }
    if (class == Severity::Normal) != labels.is_empty() {
        return Err(ProviderError::Reply(format!(
            "class {class} inconsistent with {} label(s)",
            labels.len()
        )));
    }
    labels.sort();
    let quoted: Vec<&str> = lines.collect();
    let quoted = quoted.join("\n");
    let quoted = quoted.trim_matches('\n');
    let matched_rules = if labels.is_empty() {
        Vec::new()
    } else {
        vec!["external".to_string()]
    };
    Ok(Perception {
        condition: FlightCondition {
            class,
            labels,
            matched_rules,
        },
        quoted_text: (!quoted.trim().is_empty()).then(|| quoted.to_string()),
    })
}

/// Corpus, index and provider bundled for repeated queries.
#[derive(Clone)]
pub struct Engine {
    corpus: Arc<Corpus>,
    index: Arc<Index>,
    rules: Arc<Vec<ConditionRule>>,
    provider: Arc<dyn PerceptionProvider>,
}

impl Engine {
    pub fn new(corpus: Corpus, rules: Vec<ConditionRule>) -> Result<Self, PipelineError> {
        let index = build_index(&corpus, RankParams::default())?;
        let provider = Arc::new(RuleBasedProvider::new(rules.clone()));
        Ok(Self {
            corpus: Arc::new(corpus),
            index: Arc::new(index),
            rules: Arc::new(rules),
            provider,
        })
    }

    /// Engine over the bundled corpus and rules with the rule-based provider.
    pub fn bundled() -> Self {
        let corpus = crate::bundled::corpus();
        let rules = crate::bundled::rules();
        Self::new(corpus, rules).expect("bundled corpus indexes")
    }

    pub fn from_texts<I, S>(manuals: I, rules: &str) -> Result<Self, PipelineError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let corpus = Corpus::parse(manuals)?;
        let rules = load_rules(rules)?;
        Self::new(corpus, rules)
    }

    pub fn with_provider(mut self, provider: Arc<dyn PerceptionProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn rules(&self) -> &[ConditionRule] {
        &self.rules
    }

    pub fn provider(&self) -> &dyn PerceptionProvider {
        self.provider.as_ref()
    }

    /// Labels a provider may emit: rule labels plus corpus tags.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut v = rule_vocabulary(&self.rules);
        v.extend(self.corpus.tag_vocabulary());
        v
    }

    pub fn respond(&self, ctx: &QueryContext) -> Result<ProcedureResponse, PipelineError> {
        respond(ctx, self.provider.as_ref(), &self.index, &self.corpus)
    }

    /// Build a context from panel text the way the CLI and service do: snapshot
    /// settings read the panel into a snapshot, the OCR setting passes it through.
    pub fn query_from_panel(
        &self,
        setting: InputSetting,
        panel: &str,
        display: DisplayKind,
        instruction: Option<&str>,
    ) -> Result<QueryContext, PipelineError> {
        context_from_panel(setting, panel, display, instruction)
    }
}

pub fn context_from_panel(
    setting: InputSetting,
    panel: &str,
    display: DisplayKind,
    instruction: Option<&str>,
) -> Result<QueryContext, PipelineError> {
    let instruction = instruction.map(PilotInstruction::new);
    match setting {
        InputSetting::OcrPlusInstruction => build_query(
            setting,
            None,
            Some(OcrInput {
                text: panel.to_string(),
                display,
            }),
            instruction,
        ),
        _ => {
            let snapshot = parse_panel_text(panel, display).snapshot;
            build_query(setting, Some(snapshot), None, instruction)
        }
    }
}
