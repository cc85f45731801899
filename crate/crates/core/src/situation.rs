//! Instrument snapshots and rule-based flight-condition classification.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manual::{is_condition_code, Severity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SituationError {
    #[error("rule `{rule}` compares `{parameter}` in {expected} but the panel reads {actual}")]
    UnitMismatch {
        rule: String,
        parameter: String,
        expected: String,
        actual: String,
    },
    #[error("panel line {0} could not be read")]
    PanelSyntax(usize),
    #[error("rule file line {line}: {reason}")]
    RuleSyntax { line: usize, reason: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
}

impl SituationError {
    pub fn code(&self) -> &'static str {
        match self {
            SituationError::UnitMismatch { .. } => "UnitMismatch",
            SituationError::PanelSyntax(_) => "PanelSyntaxError",
            SituationError::RuleSyntax { .. } => "RuleSyntaxError",
            SituationError::DuplicateRuleId(_) => "DuplicateRuleId",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", try_from = "String")]
pub enum DisplayKind {
    EngineWarning,
    PrimaryFlight,
    Systems,
}

impl DisplayKind {
    pub const ALL: [DisplayKind; 3] = [
        DisplayKind::EngineWarning,
        DisplayKind::PrimaryFlight,
        DisplayKind::Systems,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DisplayKind::EngineWarning => "ENGINE_WARNING",
            DisplayKind::PrimaryFlight => "PRIMARY_FLIGHT",
            DisplayKind::Systems => "SYSTEMS",
        }
    }
}

impl fmt::Display for DisplayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for DisplayKind {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl FromStr for DisplayKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "ENGINE_WARNING" | "EWD" => Ok(DisplayKind::EngineWarning),
            "PRIMARY_FLIGHT" | "PFD" => Ok(DisplayKind::PrimaryFlight),
            "SYSTEMS" | "SD" => Ok(DisplayKind::Systems),
            _ => Err(format!("unknown display kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningSeverity {
    Advisory,
    CautionAmber,
    WarningRed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningMessage {
    pub text: String,
    pub severity: WarningSeverity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub value: f64,
    pub unit: String,
}

/// State of one cockpit display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSnapshot {
    pub display: DisplayKind,
    pub parameters: BTreeMap<String, Reading>,
    pub warnings: Vec<WarningMessage>,
    pub flags: BTreeSet<String>,
}

impl InstrumentSnapshot {
    pub fn new(display: DisplayKind) -> Self {
        Self {
            display,
            parameters: BTreeMap::new(),
            warnings: Vec::new(),
            flags: BTreeSet::new(),
        }
    }

    pub fn with_parameter(mut self, name: &str, value: f64, unit: &str) -> Self {
        self.parameters.insert(
            name.to_string(),
            Reading {
                value,
                unit: unit.to_string(),
            },
        );
        self
    }

    pub fn with_warning(mut self, severity: WarningSeverity, text: &str) -> Self {
        self.warnings.push(WarningMessage {
            text: text.to_ascii_uppercase(),
            severity,
        });
        self
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        self.flags.insert(flag.to_ascii_uppercase());
        self
    }
}

/// Panel-dump text for a snapshot; parses back to an equal snapshot.
pub fn render_panel(snapshot: &InstrumentSnapshot) -> String {
    let mut lines = Vec::new();
    for (name, r) in &snapshot.parameters {
        lines.push(format!("{name}={} {}", r.value, r.unit));
    }
    for w in &snapshot.warnings {
        let marker = match w.severity {
            WarningSeverity::WarningRed => "! ",
            WarningSeverity::CautionAmber => "* ",
            WarningSeverity::Advisory => "",
        };
        lines.push(format!("{marker}{}", w.text));
    }
    for flag in &snapshot.flags {
        lines.push(format!("#FLAG {flag}"));
    }
    lines.join("\n")
}

/// A panel line that could not be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Erratum {
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelReading {
    pub snapshot: InstrumentSnapshot,
    pub errata: Vec<Erratum>,
}

impl PanelReading {
    /// Fails on the first unreadable line instead of collecting errata.
    pub fn into_strict(self) -> Result<InstrumentSnapshot, SituationError> {
        match self.errata.first() {
            Some(e) => Err(SituationError::PanelSyntax(e.line)),
            None => Ok(self.snapshot),
        }
    }
}

/// Read a panel dump. Unreadable lines go to `errata`; the parse itself never fails.
///
/// Line forms: `NAME=VALUE UNIT`, `! TEXT` (red), `* TEXT` (amber), `TEXT`
/// (advisory, uppercase only), `#FLAG NAME`. Blank lines and `//` comments
/// are skipped.
pub fn parse_panel_text(ocr_text: &str, display: DisplayKind) -> PanelReading {
    let mut snapshot = InstrumentSnapshot::new(display);
    let mut errata = Vec::new();
    for (idx, raw) in ocr_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        if !read_panel_line(line, &mut snapshot) {
            errata.push(Erratum {
                line: idx + 1,
                text: raw.to_string(),
            });
        }
    }
    PanelReading { snapshot, errata }
}

fn read_panel_line(line: &str, snapshot: &mut InstrumentSnapshot) -> bool {
    if let Some(rest) = line.strip_prefix('#') {
        let Some(name) = rest.strip_prefix("FLAG") else {
            return false;
        };
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return false;
        }
        snapshot.flags.insert(name.to_ascii_uppercase());
        return true;
    }
    let marked = match line.as_bytes()[0] {
        b'!' => Some(WarningSeverity::WarningRed),
        b'*' => Some(WarningSeverity::CautionAmber),
        _ => None,
    };
    if let Some(severity) = marked {
        let text = line[1..].trim();
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_graphic() || b == b' ') {
            return false;
        }
        snapshot.warnings.push(WarningMessage {
            text: text.to_ascii_uppercase(),
            severity,
        });
        return true;
    }
    if let Some((name, rest)) = line.split_once('=') {
        let name = name.trim();
        if !is_parameter_name(name) || snapshot.parameters.contains_key(name) {
            return false;
        }
        let mut parts = rest.split_whitespace();
        let (Some(value), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
            return false;
        };
        let Ok(value) = value.parse::<f64>() else {
            return false;
        };
        if !value.is_finite() || !unit.bytes().all(|b| b.is_ascii_graphic()) {
            return false;
        }
        snapshot.parameters.insert(
            name.to_string(),
            Reading {
                value,
                unit: unit.to_string(),
            },
        );
        return true;
    }
    if is_advisory_text(line) {
        snapshot.warnings.push(WarningMessage {
            text: line.to_string(),
            severity: WarningSeverity::Advisory,
        });
        return true;
    }
    false
}

fn is_parameter_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

// Unmarked lines are only accepted when they look like a printed memo; lowercase
// or non-ASCII text is treated as recognition noise.
fn is_advisory_text(s: &str) -> bool {
    s.bytes().any(|b| b.is_ascii_uppercase())
        && s.bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b" ./-()+:&,'".contains(&b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Eq => value == threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "=",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
        }
    }
}

impl FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "<" => Ok(Comparator::Lt),
            "<=" | "≤" => Ok(Comparator::Le),
            "=" | "==" => Ok(Comparator::Eq),
            ">=" | "≥" => Ok(Comparator::Ge),
            ">" => Ok(Comparator::Gt),
            other => Err(format!("unknown comparator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPredicate {
    pub name: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRule {
    pub id: String,
    pub priority: i64,
    pub display: Option<DisplayKind>,
    pub warning_pattern: Option<String>,
    pub parameter: Option<ParameterPredicate>,
    pub label: String,
    pub class: Severity,
}

/// Interpreted state of the aircraft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightCondition {
    pub class: Severity,
    pub labels: Vec<String>,
    pub matched_rules: Vec<String>,
}

impl FlightCondition {
    pub fn normal() -> Self {
        Self {
            class: Severity::Normal,
            labels: Vec::new(),
            matched_rules: Vec::new(),
        }
    }

    pub fn is_normal(&self) -> bool {
        self.class == Severity::Normal
    }

    pub fn label_set(&self) -> BTreeSet<&str> {
        self.labels.iter().map(String::as_str).collect()
    }
}

impl fmt::Display for FlightCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            write!(f, "{}", self.class)
        } else {
            write!(f, "{} [{}]", self.class, self.labels.join(", "))
        }
    }
}

/// Evaluate every rule against the snapshot; the class is the most severe match.
pub fn classify(
    snapshot: &InstrumentSnapshot,
    rules: &[ConditionRule],
) -> Result<FlightCondition, SituationError> {
    let mut ids = HashSet::new();
    for rule in rules {
        if !ids.insert(rule.id.as_str()) {
            return Err(SituationError::DuplicateRuleId(rule.id.clone()));
        }
    }

    let mut class = Severity::Normal;
    let mut best_priority: HashMap<&str, i64> = HashMap::new();
    let mut matched_rules = Vec::new();
    for rule in rules {
        if rule.display.is_some_and(|d| d != snapshot.display) {
            continue;
        }
        let warning_ok = rule.warning_pattern.as_ref().map(|pattern| {
            let pattern = pattern.to_ascii_uppercase();
            snapshot.warnings.iter().any(|w| w.text.contains(&pattern))
        });
        let parameter_ok = match &rule.parameter {
            None => None,
            Some(pred) => Some(match snapshot.parameters.get(&pred.name) {
                None => false,
                Some(reading) if reading.unit != pred.unit => {
                    return Err(SituationError::UnitMismatch {
                        rule: rule.id.clone(),
                        parameter: pred.name.clone(),
                        expected: pred.unit.clone(),
                        actual: reading.unit.clone(),
                    });
                }
                Some(reading) => pred.comparator.holds(reading.value, pred.threshold),
            }),
        };
        let fired = match (warning_ok, parameter_ok) {
            (None, None) => false,
            (w, p) => w.unwrap_or(true) && p.unwrap_or(true),
        };
        if !fired {
            continue;
        }
        class = class.max(rule.class);
        matched_rules.push(rule.id.clone());
        let best = best_priority
            .entry(rule.label.as_str())
            .or_insert(rule.priority);
        *best = (*best).max(rule.priority);
    }

    let mut labels: Vec<(&str, i64)> = best_priority.into_iter().collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(FlightCondition {
        class,
        labels: labels.into_iter().map(|(l, _)| l.to_string()).collect(),
        matched_rules,
    })
}

/// Labels any rule can emit.
pub fn rule_vocabulary(rules: &[ConditionRule]) -> BTreeSet<String> {
    rules.iter().map(|r| r.label.clone()).collect()
}

/// Parse a rule file:
///
/// ```text
/// RULE <id> <priority> [DISPLAY=<kind>] [WARN~"<substring>"] [PARAM <name> <op> <value> <unit>] => <CLASS> <LABEL>
/// ```
pub fn load_rules(text: &str) -> Result<Vec<ConditionRule>, SituationError> {
    let mut rules = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") || line.starts_with('#') {
            continue;
        }
        let rule = parse_rule(line).map_err(|reason| SituationError::RuleSyntax {
            line: idx + 1,
            reason,
        })?;
        if !ids.insert(rule.id.clone()) {
            return Err(SituationError::DuplicateRuleId(rule.id));
        }
        rules.push(rule);
    }
    Ok(rules)
}

fn parse_rule(line: &str) -> Result<ConditionRule, String> {
    let (lhs, rhs) = line
        .rsplit_once("=>")
        .ok_or("missing `=> <CLASS> <LABEL>`")?;
    let mut out = rhs.split_whitespace();
    let (Some(class), Some(label), None) = (out.next(), out.next(), out.next()) else {
        return Err("expected `=> <CLASS> <LABEL>`".into());
    };
    let class: Severity = class.parse()?;
    if class == Severity::Normal {
        return Err("rules must emit NON_NORMAL or EMERGENCY".into());
    }
    if !is_condition_code(label) {
        return Err(format!(
            "label `{label}` must be an uppercase condition code"
        ));
    }

    let tokens = lex_rule(lhs)?;
    let mut it = tokens.iter().map(String::as_str);
    if it.next() != Some("RULE") {
        return Err("line must start with RULE".into());
    }
    let id = it.next().ok_or("missing rule id")?;
    let priority: i64 = it
        .next()
        .ok_or("missing priority")?
        .parse()
        .map_err(|_| "priority must be an integer".to_string())?;

    let mut display = None;
    let mut warning_pattern = None;
    let mut parameter = None;
    while let Some(tok) = it.next() {
        if let Some(kind) = tok.strip_prefix("DISPLAY=") {
            if display.replace(kind.parse::<DisplayKind>()?).is_some() {
                return Err("DISPLAY given twice".into());
            }
        } else if let Some(quoted) = tok.strip_prefix("WARN~") {
            let inner = quoted
                .strip_prefix('"')
                .and_then(|q| q.strip_suffix('"'))
                .filter(|q| !q.is_empty())
                .ok_or("WARN~ needs a non-empty quoted substring")?;
            if warning_pattern
                .replace(inner.to_ascii_uppercase())
                .is_some()
            {
                return Err("WARN~ given twice".into());
            }
        } else if tok == "PARAM" {
            let mut next = |what: &str| it.next().ok_or(format!("PARAM missing {what}"));
            let name = next("name")?.to_string();
            let comparator: Comparator = next("comparator")?.parse()?;
            let threshold: f64 = next("value")?
                .parse()
                .map_err(|_| "PARAM value must be a number".to_string())?;
            let unit = next("unit")?.to_string();
            if !threshold.is_finite() {
                return Err("PARAM value must be finite".into());
            }
            let pred = ParameterPredicate {
                name,
                comparator,
                threshold,
                unit,
            };
            if parameter.replace(pred).is_some() {
                return Err("PARAM given twice".into());
            }
        } else {
            return Err(format!("unexpected `{tok}`"));
        }
    }
    if warning_pattern.is_none() && parameter.is_none() {
        return Err("a rule needs WARN~ or PARAM".into());
    }
    Ok(ConditionRule {
        id: id.to_string(),
        priority,
        display,
        warning_pattern,
        parameter,
        label: label.to_string(),
        class,
    })
}

// Whitespace-separated tokens; double-quoted runs stay inside their token.
fn lex_rule(s: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in s.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            c if c.is_whitespace() && !quoted => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(id: &str, pattern: &str, class: Severity, label: &str, priority: i64) -> ConditionRule {
        ConditionRule {
            id: id.into(),
            priority,
            display: None,
            warning_pattern: Some(pattern.into()),
            parameter: None,
            label: label.into(),
            class,
        }
    }

    #[test]
    fn no_match_is_normal() {
        let snap =
            InstrumentSnapshot::new(DisplayKind::EngineWarning).with_parameter("N1", 84.0, "%");
        let rules = vec![rule(
            "R1",
            "ENG 1 FAIL",
            Severity::Emergency,
            "ENG_1_FAIL",
            1,
        )];
        assert_eq!(classify(&snap, &rules).unwrap(), FlightCondition::normal());
    }

    #[test]
    fn single_warning_rule() {
        let snap = InstrumentSnapshot::new(DisplayKind::EngineWarning)
            .with_warning(WarningSeverity::WarningRed, "ENG 1 FAIL");
        let rules = vec![rule(
            "R1",
            "ENG 1 FAIL",
            Severity::Emergency,
            "ENG_1_FAIL",
            1,
        )];
        let c = classify(&snap, &rules).unwrap();
        assert_eq!(c.class, Severity::Emergency);
        assert_eq!(c.labels, ["ENG_1_FAIL"]);
        assert_eq!(c.matched_rules, ["R1"]);
    }

    #[test]
    fn most_severe_class_wins_and_labels_are_ordered() {
        let snap = InstrumentSnapshot::new(DisplayKind::EngineWarning)
            .with_warning(WarningSeverity::WarningRed, "ENG 1 FIRE")
            .with_warning(WarningSeverity::CautionAmber, "ENG 1 OIL LO PR");
        let rules = vec![
            rule(
                "OIL",
                "OIL LO PR",
                Severity::NonNormal,
                "ENG_1_OIL_LO_PR",
                60,
            ),
            rule("FIRE", "ENG 1 FIRE", Severity::Emergency, "ENG_1_FIRE", 100),
            rule("FIRE_B", "FIRE", Severity::Emergency, "B_FIRE", 100),
        ];
        let c = classify(&snap, &rules).unwrap();
        assert_eq!(c.class, Severity::Emergency);
        assert_eq!(c.labels, ["B_FIRE", "ENG_1_FIRE", "ENG_1_OIL_LO_PR"]);
        assert_eq!(c.matched_rules, ["OIL", "FIRE", "FIRE_B"]);
    }

    #[test]
    fn parameter_predicates_and_units() {
        let snap =
            InstrumentSnapshot::new(DisplayKind::Systems).with_parameter("CAB_ALT", 11000.0, "FT");
        let rules =
            load_rules("RULE CAB 105 PARAM CAB_ALT > 9550 FT => EMERGENCY CAB_PR_EXCESS_ALT")
                .unwrap();
        assert_eq!(
            classify(&snap, &rules).unwrap().labels,
            ["CAB_PR_EXCESS_ALT"]
        );

        let metres =
            InstrumentSnapshot::new(DisplayKind::Systems).with_parameter("CAB_ALT", 3300.0, "M");
        assert!(matches!(
            classify(&metres, &rules),
            Err(SituationError::UnitMismatch { .. })
        ));
    }

    #[test]
    fn display_restriction() {
        let rules = load_rules("RULE S 1 DISPLAY=PRIMARY_FLIGHT WARN~\"STALL\" => EMERGENCY STALL")
            .unwrap();
        let pfd = InstrumentSnapshot::new(DisplayKind::PrimaryFlight)
            .with_warning(WarningSeverity::WarningRed, "STALL");
        let ewd = InstrumentSnapshot::new(DisplayKind::EngineWarning)
            .with_warning(WarningSeverity::CautionAmber, "ENG 1 STALL");
        assert_eq!(classify(&pfd, &rules).unwrap().class, Severity::Emergency);
        assert!(classify(&ewd, &rules).unwrap().is_normal());
    }

    #[test]
    fn both_clauses_must_hold() {
        let rules =
            load_rules("RULE R 1 WARN~\"OIL\" PARAM OIL_PRESS_1 < 13 PSI => NON_NORMAL OIL")
                .unwrap();
        let only_warning = InstrumentSnapshot::new(DisplayKind::EngineWarning)
            .with_parameter("OIL_PRESS_1", 40.0, "PSI")
            .with_warning(WarningSeverity::CautionAmber, "ENG 1 OIL LO PR");
        assert!(classify(&only_warning, &rules).unwrap().is_normal());
        let both = only_warning.with_parameter("OIL_PRESS_1", 9.0, "PSI");
        assert!(!classify(&both, &rules).unwrap().is_normal());
    }

    #[test]
    fn panel_dump_grammar() {
        let r = parse_panel_text("N1=0 %\n! ENG 1 FAIL", DisplayKind::EngineWarning);
        assert!(r.errata.is_empty());
        let s = &r.snapshot;
        assert_eq!(
            s.parameters["N1"],
            Reading {
                value: 0.0,
                unit: "%".into()
            }
        );
        assert_eq!(
            s.warnings,
            [WarningMessage {
                text: "ENG 1 FAIL".into(),
                severity: WarningSeverity::WarningRed
            }]
        );

        let empty = parse_panel_text("", DisplayKind::Systems);
        assert!(empty.snapshot.parameters.is_empty() && empty.snapshot.warnings.is_empty());

        let noisy = parse_panel_text(
            "garbage≠≠\nN1=3 %\n* eng 2 oil lo pr\n#FLAG gear_down",
            DisplayKind::EngineWarning,
        );
        assert_eq!(
            noisy.errata,
            [Erratum {
                line: 1,
                text: "garbage≠≠".into()
            }]
        );
        assert_eq!(noisy.snapshot.warnings[0].text, "ENG 2 OIL LO PR");
        assert_eq!(
            noisy.snapshot.warnings[0].severity,
            WarningSeverity::CautionAmber
        );
        assert!(noisy.snapshot.flags.contains("GEAR_DOWN"));
        assert_eq!(
            noisy.into_strict().unwrap_err(),
            SituationError::PanelSyntax(1)
        );
    }

    #[test]
    fn panel_rejects_malformed_parameters() {
        for line in [
            "N1=",
            "N1=abc %",
            "N1=3",
            "N1=3 % extra",
            "=3 %",
            "N1=inf %",
            "SEAT belts",
        ] {
            let r = parse_panel_text(line, DisplayKind::EngineWarning);
            assert_eq!(r.errata.len(), 1, "{line}");
        }
        let dup = parse_panel_text("N1=3 %\nN1=4 %", DisplayKind::EngineWarning);
        assert_eq!(dup.errata.len(), 1);
        assert_eq!(dup.snapshot.parameters["N1"].value, 3.0);
    }

    #[test]
    fn rule_file_errors() {
        assert!(load_rules("").unwrap().is_empty());
        let dup = "RULE A 1 WARN~\"X\" => EMERGENCY X\nRULE A 2 WARN~\"Y\" => EMERGENCY Y";
        assert_eq!(
            load_rules(dup).unwrap_err(),
            SituationError::DuplicateRuleId("A".into())
        );
        for (text, line) in [
            ("RULE A 1 => EMERGENCY X", 1),
            ("\nRULE A x WARN~\"X\" => EMERGENCY X", 2),
            ("RULE A 1 WARN~\"X\" => NORMAL X", 1),
            ("RULE A 1 WARN~\"X\" => EMERGENCY lower", 1),
            ("RULE A 1 WARN~\"X => EMERGENCY X", 1),
            ("RULE A 1 PARAM N1 ~ 3 % => EMERGENCY X", 1),
            ("RULE A 1 DISPLAY=COCKPIT WARN~\"X\" => EMERGENCY X", 1),
            ("RULEZ A 1 WARN~\"X\" => EMERGENCY X", 1),
        ] {
            match load_rules(text) {
                Err(SituationError::RuleSyntax { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn rule_clauses_parse() {
        let rules = load_rules(
            "RULE EWD 7 DISPLAY=ENGINE_WARNING WARN~\"ENG 1 OIL LO PR\" PARAM OIL_PRESS_1 <= 13 PSI => NON_NORMAL ENG_1_OIL_LO_PR",
        )
        .unwrap();
        let r = &rules[0];
        assert_eq!(r.display, Some(DisplayKind::EngineWarning));
        assert_eq!(r.warning_pattern.as_deref(), Some("ENG 1 OIL LO PR"));
        let p = r.parameter.as_ref().unwrap();
        assert_eq!(
            (p.name.as_str(), p.comparator, p.threshold, p.unit.as_str()),
            ("OIL_PRESS_1", Comparator::Le, 13.0, "PSI")
        );
        assert_eq!(r.priority, 7);
    }

    #[test]
    fn render_parse_round_trip() {
        let s = InstrumentSnapshot::new(DisplayKind::Systems)
            .with_parameter("HYD_G_PRESS", 0.0, "PSI")
            .with_parameter("CAB_ALT", 9550.5, "FT")
            .with_warning(WarningSeverity::CautionAmber, "HYD G SYS LO PR")
            .with_warning(WarningSeverity::Advisory, "SEAT BELTS")
            .with_flag("PARK_BRK");
        let r = parse_panel_text(&render_panel(&s), DisplayKind::Systems);
        assert!(r.errata.is_empty());
        assert_eq!(r.snapshot, s);
    }
}
