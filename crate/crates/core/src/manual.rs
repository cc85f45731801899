//! Quick-reference handbook markup.
//!
//! A manual is a line-oriented text document:
//!
//! ```text
//! #MANUAL QRH A320 Quick Reference Handbook
//! #CHAPTER 1 Emergency Procedures
//! #SECTION 1.1 Engine @3
//! #PROCEDURE ENG1_FIRE EMERGENCY ENG 1 FIRE
//! #TAGS ENG_1_FIRE
//! THRUST LEVER 1 .......... IDLE
//! #IF ENG 1 FIRE AFTER 30 S
//!   AGENT 2 .......... DISCH
//! #ENDIF
//! #END
//! ```
//!
//! Every parsed [`Procedure`] carries a [`SourceIndex`] pointing at the
//! `#PROCEDURE` .. `#END` line span of the original text, so the text returned
//! to a pilot is always a byte-exact slice of the document it was cited from.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between challenge and response on a step line.
pub const STEP_SEPARATOR: &str = " .......... ";

const INDENT: &str = "  ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManualError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("page numbers decrease at section {0}")]
    PageOrder(String),
    #[error("procedure `{0}` is not inside a numbered section")]
    MissingIndex(String),
    #[error("source index does not resolve: {0}")]
    UnresolvedIndex(String),
}

impl ManualError {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            ManualError::Syntax { .. } => "SyntaxError",
            ManualError::DuplicateId(_) => "DuplicateId",
            ManualError::PageOrder(_) => "PageOrderError",
            ManualError::MissingIndex(_) => "MissingIndex",
            ManualError::UnresolvedIndex(_) => "UnresolvedIndex",
        }
    }

    fn syntax(line: usize, reason: impl Into<String>) -> Self {
        ManualError::Syntax {
            line,
            reason: reason.into(),
        }
    }
}

/// Procedure severity, also used as the class of an interpreted flight condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Normal,
    NonNormal,
    Emergency,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Normal => "NORMAL",
            Severity::NonNormal => "NON_NORMAL",
            Severity::Emergency => "EMERGENCY",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NORMAL" => Ok(Severity::Normal),
            "NON_NORMAL" => Ok(Severity::NonNormal),
            "EMERGENCY" => Ok(Severity::Emergency),
            other => Err(format!("unknown severity `{other}`")),
        }
    }
}

/// Dotted section number `c.s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SectionNumber {
    pub chapter: u32,
    pub section: u32,
}

impl SectionNumber {
    pub fn new(chapter: u32, section: u32) -> Self {
        Self { chapter, section }
    }
}

impl fmt::Display for SectionNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.chapter, self.section)
    }
}

impl FromStr for SectionNumber {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, n) = s
            .split_once('.')
            .ok_or_else(|| format!("section number `{s}` is not of the form c.s"))?;
        let parse = |part: &str| -> Result<u32, String> {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("section number `{s}` is not of the form c.s"));
            }
            match part.parse::<u32>() {
                Ok(0) | Err(_) => Err(format!("section number `{s}` must use positive integers")),
                Ok(v) => Ok(v),
            }
        };
        Ok(SectionNumber::new(parse(c)?, parse(n)?))
    }
}

impl TryFrom<String> for SectionNumber {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SectionNumber> for String {
    fn from(value: SectionNumber) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceIndex {
    pub manual_id: String,
    pub section_number: SectionNumber,
    pub page: u32,
    pub line_start: usize,
    pub line_end: usize,
}

impl fmt::Display for SourceIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} section {}, page {} (lines {}-{})",
            self.manual_id, self.section_number, self.page, self.line_start, self.line_end
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistStep {
    pub ordinal: u32,
    pub challenge: String,
    pub response: String,
    pub nesting: u32,
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Procedure {
    pub id: String,
    pub title: String,
    pub severity: Severity,
    pub condition_tags: BTreeSet<String>,
    pub steps: Vec<ChecklistStep>,
    pub source: SourceIndex,
}

impl Procedure {
    /// Equality that ignores where the procedure sat in its source file.
    pub fn content_eq(&self, other: &Procedure) -> bool {
        self.id == other.id
            && self.title == other.title
            && self.severity == other.severity
            && self.condition_tags == other.condition_tags
            && self.steps == other.steps
            && self.source.manual_id == other.source.manual_id
            && self.source.section_number == other.source.section_number
            && self.source.page == other.source.page
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub number: SectionNumber,
    pub title: String,
    pub page: u32,
    pub procedures: Vec<Procedure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chapter {
    pub number: u32,
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manual {
    pub id: String,
    pub title: String,
    pub chapters: Vec<Chapter>,
}

impl Manual {
    pub fn procedures(&self) -> impl Iterator<Item = &Procedure> {
        self.chapters
            .iter()
            .flat_map(|c| c.sections.iter())
            .flat_map(|s| s.procedures.iter())
    }

    pub fn sections(&self) -> impl Iterator<Item = &Section> {
        self.chapters.iter().flat_map(|c| c.sections.iter())
    }

    pub fn section(&self, number: SectionNumber) -> Option<&Section> {
        self.sections().find(|s| s.number == number)
    }

    /// Structural equality ignoring source line spans.
    pub fn content_eq(&self, other: &Manual) -> bool {
        if self.id != other.id || self.title != other.title {
            return false;
        }
        if self.chapters.len() != other.chapters.len() {
            return false;
        }
        self.chapters.iter().zip(&other.chapters).all(|(a, b)| {
            a.number == b.number
                && a.title == b.title
                && a.sections.len() == b.sections.len()
                && a.sections.iter().zip(&b.sections).all(|(x, y)| {
                    x.number == y.number
                        && x.title == y.title
                        && x.page == y.page
                        && x.procedures.len() == y.procedures.len()
                        && x.procedures
                            .iter()
                            .zip(&y.procedures)
                            .all(|(p, q)| p.content_eq(q))
                })
        })
    }
}

/// A parsed manual together with the text it was parsed from.
#[derive(Debug, Clone)]
pub struct Document {
    manual: Manual,
    text: Arc<str>,
    // byte offset of the start of each line
    line_starts: Vec<usize>,
}

impl Document {
    pub fn parse(text: impl Into<String>) -> Result<Self, ManualError> {
        let text: Arc<str> = Arc::from(text.into());
        let manual = Parser::default().run(&text)?;
        let line_starts = line_starts(&text);
        Ok(Self {
            manual,
            text,
            line_starts,
        })
    }

    pub fn manual(&self) -> &Manual {
        &self.manual
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    /// Lines `start..=end` (1-based) without the final line break.
    pub fn lines(&self, start: usize, end: usize) -> Option<&str> {
        if start == 0 || start > end || end > self.line_starts.len() {
            return None;
        }
        let from = self.line_starts[start - 1];
        let to = self
            .line_starts
            .get(end)
            .copied()
            .unwrap_or(self.text.len());
        let slice = &self.text[from..to];
        let slice = slice.strip_suffix('\n').unwrap_or(slice);
        Some(slice.strip_suffix('\r').unwrap_or(slice))
    }
}

fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
    if text.ends_with('\n') {
        starts.pop();
    }
    starts
}

/// Parse a manual from markup text.
pub fn parse_manual(text: &str) -> Result<Manual, ManualError> {
    Parser::default().run(text)
}

#[derive(Default)]
struct Parser {
    manual: Option<Manual>,
    current_section: bool,
    last_page: u32,
    ids: HashSet<String>,
    open: Option<OpenProcedure>,
}

struct OpenProcedure {
    id: String,
    title: String,
    severity: Severity,
    tags: BTreeSet<String>,
    steps: Vec<ChecklistStep>,
    guard: Option<String>,
    line_start: usize,
}

impl Parser {
    fn run(mut self, text: &str) -> Result<Manual, ManualError> {
        let mut last_line = 1;
        for (idx, raw) in text.split('\n').enumerate() {
            let lineno = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("//") {
                continue;
            }
            last_line = lineno;
            if self.manual.is_none() {
                self.header(lineno, trimmed)?;
            } else if self.open.is_some() {
                self.procedure_line(lineno, line, trimmed)?;
            } else {
                self.structure_line(lineno, trimmed)?;
            }
        }
        if let Some(open) = &self.open {
            return Err(ManualError::syntax(
                last_line,
                format!("procedure `{}` is not closed with #END", open.id),
            ));
        }
        self.manual
            .ok_or_else(|| ManualError::syntax(1, "missing #MANUAL header"))
    }

    fn header(&mut self, lineno: usize, line: &str) -> Result<(), ManualError> {
        let (directive, rest) = split_directive(line);
        if directive != "#MANUAL" {
            return Err(ManualError::syntax(lineno, "missing #MANUAL header"));
        }
        let (id, title) = split_word(rest);
        if !is_ident(id) {
            return Err(ManualError::syntax(lineno, "#MANUAL needs an id"));
        }
        if title.is_empty() {
            return Err(ManualError::syntax(lineno, "#MANUAL needs a title"));
        }
        self.manual = Some(Manual {
            id: id.to_string(),
            title: title.to_string(),
            chapters: Vec::new(),
        });
        Ok(())
    }

    fn manual_mut(&mut self) -> &mut Manual {
        self.manual.as_mut().expect("header parsed")
    }

    fn structure_line(&mut self, lineno: usize, line: &str) -> Result<(), ManualError> {
        let (directive, rest) = split_directive(line);
        match directive {
            "#CHAPTER" => self.chapter(lineno, rest),
            "#SECTION" => self.section(lineno, rest),
            "#PROCEDURE" => self.open_procedure(lineno, rest),
            "#MANUAL" => Err(ManualError::syntax(lineno, "duplicate #MANUAL header")),
            d if d.starts_with('#') => Err(ManualError::syntax(
                lineno,
                format!("unexpected {d} outside a procedure"),
            )),
            _ => Err(ManualError::syntax(lineno, "step line outside a procedure")),
        }
    }

    fn chapter(&mut self, lineno: usize, rest: &str) -> Result<(), ManualError> {
        let (num, title) = split_word(rest);
        let number = parse_positive(num)
            .ok_or_else(|| ManualError::syntax(lineno, format!("bad chapter number `{num}`")))?;
        if title.is_empty() {
            return Err(ManualError::syntax(lineno, "#CHAPTER needs a title"));
        }
        let manual = self.manual_mut();
        if let Some(prev) = manual.chapters.last() {
            if number <= prev.number {
                return Err(ManualError::syntax(
                    lineno,
                    format!("chapter {number} does not follow chapter {}", prev.number),
                ));
            }
        }
        manual.chapters.push(Chapter {
            number,
            title: title.to_string(),
            sections: Vec::new(),
        });
        self.current_section = false;
        Ok(())
    }

    fn section(&mut self, lineno: usize, rest: &str) -> Result<(), ManualError> {
        let (num, tail) = split_word(rest);
        let number: SectionNumber = num
            .parse()
            .map_err(|e: String| ManualError::syntax(lineno, e))?;
        let (title, page) = match tail.rsplit_once(char::is_whitespace) {
            Some((title, page)) => (title.trim(), page),
            None => ("", tail),
        };
        let page = page
            .strip_prefix('@')
            .and_then(parse_positive)
            .ok_or_else(|| ManualError::syntax(lineno, "#SECTION must end with @<page>"))?;
        if title.is_empty() {
            return Err(ManualError::syntax(lineno, "#SECTION needs a title"));
        }
        let last_page = self.last_page;
        let chapter = self
            .manual_mut()
            .chapters
            .last_mut()
            .ok_or_else(|| ManualError::syntax(lineno, "#SECTION before any #CHAPTER"))?;
        if number.chapter != chapter.number {
            return Err(ManualError::syntax(
                lineno,
                format!("section {number} is not in chapter {}", chapter.number),
            ));
        }
        if let Some(prev) = chapter.sections.last() {
            if number.section <= prev.number.section {
                return Err(ManualError::syntax(
                    lineno,
                    format!("section {number} does not follow section {}", prev.number),
                ));
            }
        }
        if page < last_page {
            return Err(ManualError::PageOrder(number.to_string()));
        }
        chapter.sections.push(Section {
            number,
            title: title.to_string(),
            page,
            procedures: Vec::new(),
        });
        self.last_page = page;
        self.current_section = true;
        Ok(())
    }

    fn open_procedure(&mut self, lineno: usize, rest: &str) -> Result<(), ManualError> {
        let (id, tail) = split_word(rest);
        if !is_ident(id) {
            return Err(ManualError::syntax(lineno, "#PROCEDURE needs an id"));
        }
        let (severity, title) = split_word(tail);
        let severity: Severity = severity
            .parse()
            .map_err(|e: String| ManualError::syntax(lineno, e))?;
        if title.is_empty() {
            return Err(ManualError::syntax(lineno, "#PROCEDURE needs a title"));
        }
        if !self.current_section {
            return Err(ManualError::MissingIndex(id.to_string()));
        }
        if !self.ids.insert(id.to_string()) {
            return Err(ManualError::DuplicateId(id.to_string()));
        }
        self.open = Some(OpenProcedure {
            id: id.to_string(),
            title: title.to_string(),
            severity,
            tags: BTreeSet::new(),
            steps: Vec::new(),
            guard: None,
            line_start: lineno,
        });
        Ok(())
    }

    fn procedure_line(
        &mut self,
        lineno: usize,
        line: &str,
        trimmed: &str,
    ) -> Result<(), ManualError> {
        if trimmed.starts_with('#') {
            let (directive, rest) = split_directive(trimmed);
            let open = self.open.as_mut().expect("open procedure");
            return match directive {
                "#TAGS" => {
                    for tag in rest.split(',') {
                        let tag = tag.trim().to_ascii_uppercase();
                        if !is_condition_code(&tag) {
                            return Err(ManualError::syntax(
                                lineno,
                                format!("bad condition tag `{tag}`"),
                            ));
                        }
                        open.tags.insert(tag);
                    }
                    Ok(())
                }
                "#IF" => {
                    if open.guard.is_some() {
                        return Err(ManualError::syntax(lineno, "nested #IF"));
                    }
                    if rest.is_empty() {
                        return Err(ManualError::syntax(lineno, "#IF needs a condition"));
                    }
                    open.guard = Some(rest.to_string());
                    Ok(())
                }
                "#ENDIF" => {
                    if open.guard.take().is_none() {
                        return Err(ManualError::syntax(lineno, "#ENDIF without #IF"));
                    }
                    Ok(())
                }
                "#END" => self.close_procedure(lineno),
                other => Err(ManualError::syntax(
                    lineno,
                    format!("unexpected {other} inside procedure `{}`", open.id),
                )),
            };
        }
        let open = self.open.as_mut().expect("open procedure");
        let step = parse_step(lineno, line, open)?;
        open.steps.push(step);
        Ok(())
    }

    fn close_procedure(&mut self, lineno: usize) -> Result<(), ManualError> {
        let open = self.open.take().expect("open procedure");
        if open.guard.is_some() {
            return Err(ManualError::syntax(lineno, "#END inside an open #IF block"));
        }
        if open.steps.is_empty() {
            return Err(ManualError::syntax(
                lineno,
                format!("procedure `{}` has no steps", open.id),
            ));
        }
        let manual = self.manual.as_mut().expect("header parsed");
        let manual_id = manual.id.clone();
        let section = manual
            .chapters
            .last_mut()
            .and_then(|c| c.sections.last_mut())
            .expect("current section");
        let source = SourceIndex {
            manual_id,
            section_number: section.number,
            page: section.page,
            line_start: open.line_start,
            line_end: lineno,
        };
        section.procedures.push(Procedure {
            id: open.id,
            title: open.title,
            severity: open.severity,
            condition_tags: open.tags,
            steps: open.steps,
            source,
        });
        Ok(())
    }
}

fn parse_step(
    lineno: usize,
    line: &str,
    open: &OpenProcedure,
) -> Result<ChecklistStep, ManualError> {
    let body = line.trim_end();
    let content = body.trim_start_matches(' ');
    let spaces = body.len() - content.len();
    if content.starts_with('\t') {
        return Err(ManualError::syntax(
            lineno,
            "tabs are not allowed for nesting",
        ));
    }
    if !spaces.is_multiple_of(INDENT.len()) {
        return Err(ManualError::syntax(
            lineno,
            "nesting must use two spaces per level",
        ));
    }
    let nesting = (spaces / INDENT.len()) as u32;
    let max = open.steps.last().map_or(0, |s| s.nesting + 1);
    if nesting > max {
        return Err(ManualError::syntax(
            lineno,
            "step nested more than one level deeper",
        ));
    }
    let (challenge, response) = content.split_once(STEP_SEPARATOR).ok_or_else(|| {
        ManualError::syntax(lineno, "step must be `<challenge> .......... <response>`")
    })?;
    let (challenge, response) = (challenge.trim(), response.trim());
    if challenge.is_empty() || response.is_empty() {
        return Err(ManualError::syntax(
            lineno,
            "step needs both challenge and response",
        ));
    }
    Ok(ChecklistStep {
        ordinal: open.steps.len() as u32 + 1,
        challenge: challenge.to_string(),
        response: response.to_string(),
        nesting,
        guard: open.guard.clone(),
    })
}

fn split_directive(line: &str) -> (&str, &str) {
    split_word(line)
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim();
    match s.split_once(char::is_whitespace) {
        Some((head, tail)) => (head, tail.trim()),
        None => (s, ""),
    }
}

fn parse_positive(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|&v| v > 0)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('#')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Condition codes are uppercase ASCII letters, digits and underscores.
pub fn is_condition_code(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
}

/// Canonical markup for one procedure block, `#PROCEDURE` through `#END`.
pub fn render_procedure(p: &Procedure) -> String {
    let mut out = format!("#PROCEDURE {} {} {}\n", p.id, p.severity, p.title);
    if !p.condition_tags.is_empty() {
        let tags: Vec<&str> = p.condition_tags.iter().map(String::as_str).collect();
        out.push_str(&format!("#TAGS {}\n", tags.join(", ")));
    }
    let mut guard: Option<&str> = None;
    for step in &p.steps {
        let next = step.guard.as_deref();
        if next != guard {
            if guard.is_some() {
                out.push_str("#ENDIF\n");
            }
            if let Some(g) = next {
                out.push_str(&format!("#IF {g}\n"));
            }
            guard = next;
        }
        out.push_str(&render_step(step));
        out.push('\n');
    }
    if guard.is_some() {
        out.push_str("#ENDIF\n");
    }
    out.push_str("#END\n");
    out
}

/// One step line, e.g. `THRUST LEVERS .......... IDLE`.
pub fn render_step(step: &ChecklistStep) -> String {
    format!(
        "{}{}{}{}",
        INDENT.repeat(step.nesting as usize),
        step.challenge,
        STEP_SEPARATOR,
        step.response
    )
}

/// Canonical markup for a whole manual.
pub fn render_manual(m: &Manual) -> String {
    let mut out = format!("#MANUAL {} {}\n", m.id, m.title);
    for chapter in &m.chapters {
        out.push_str(&format!(
            "\n#CHAPTER {} {}\n",
            chapter.number, chapter.title
        ));
        for section in &chapter.sections {
            out.push_str(&format!(
                "\n#SECTION {} {} @{}\n",
                section.number, section.title, section.page
            ));
            for p in &section.procedures {
                out.push('\n');
                out.push_str(&render_procedure(p));
            }
        }
    }
    out
}

/// A set of parsed manuals with lookup by procedure id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    // first occurrence wins; duplicates are reported by `validate`
    by_id: HashMap<String, (usize, SourceIndex)>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let mut by_id = HashMap::new();
        for (i, doc) in documents.iter().enumerate() {
            for p in doc.manual.procedures() {
                by_id
                    .entry(p.id.clone())
                    .or_insert_with(|| (i, p.source.clone()));
            }
        }
        Self { documents, by_id }
    }

    pub fn parse<I, S>(texts: I) -> Result<Self, ManualError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let docs = texts
            .into_iter()
            .map(Document::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(docs))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn manuals(&self) -> impl Iterator<Item = &Manual> {
        self.documents.iter().map(|d| &d.manual)
    }

    pub fn procedures(&self) -> impl Iterator<Item = &Procedure> {
        self.manuals().flat_map(|m| m.procedures())
    }

    pub fn procedure_count(&self) -> usize {
        self.procedures().count()
    }

    pub fn procedure(&self, id: &str) -> Option<&Procedure> {
        let (doc, _) = self.by_id.get(id)?;
        self.documents[*doc]
            .manual
            .procedures()
            .find(|p| p.id == id)
    }

    pub fn document(&self, manual_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.manual.id == manual_id)
    }

    /// The exact source lines an index points at.
    pub fn verbatim_excerpt(&self, index: &SourceIndex) -> Result<&str, ManualError> {
        let unresolved = || ManualError::UnresolvedIndex(index.to_string());
        let doc = self.document(&index.manual_id).ok_or_else(unresolved)?;
        let section = doc
            .manual
            .section(index.section_number)
            .ok_or_else(unresolved)?;
        if section.page != index.page {
            return Err(unresolved());
        }
        doc.lines(index.line_start, index.line_end)
            .ok_or_else(unresolved)
    }

    /// True when `text` occurs byte-for-byte in some document.
    pub fn contains_text(&self, text: &str) -> bool {
        !text.is_empty() && self.documents.iter().any(|d| d.text.contains(text))
    }

    /// Union of all condition tags in the corpus.
    pub fn tag_vocabulary(&self) -> BTreeSet<String> {
        self.procedures()
            .flat_map(|p| p.condition_tags.iter().cloned())
            .collect()
    }

    pub fn validate(&self) -> ValidationReport {
        let manuals: Vec<&Manual> = self.manuals().collect();
        let mut report = validate_manuals(&manuals);
        for p in self.procedures() {
            if self.verbatim_excerpt(&p.source).is_err() {
                report.push(Finding::UnreachableSection {
                    procedure_id: p.id.clone(),
                    section: p.source.section_number.to_string(),
                });
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Finding {
    DuplicateManualId {
        id: String,
    },
    DuplicateId {
        id: String,
        manuals: Vec<String>,
    },
    EmptyTags {
        procedure_id: String,
    },
    EmptySteps {
        procedure_id: String,
    },
    BadOrdinals {
        procedure_id: String,
    },
    ChapterOrder {
        manual: String,
        chapter: u32,
    },
    SectionOrder {
        manual: String,
        section: String,
    },
    PageOrder {
        manual: String,
        section: String,
    },
    UnreachableSection {
        procedure_id: String,
        section: String,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateManualId { id } => write!(f, "duplicate manual id `{id}`"),
            Finding::DuplicateId { id, manuals } => {
                write!(f, "duplicate procedure id `{id}` in {}", manuals.join(", "))
            }
            Finding::EmptyTags { procedure_id } => {
                write!(f, "procedure `{procedure_id}` has no condition tags")
            }
            Finding::EmptySteps { procedure_id } => {
                write!(f, "procedure `{procedure_id}` has no steps")
            }
            Finding::BadOrdinals { procedure_id } => {
                write!(
                    f,
                    "procedure `{procedure_id}` has non-sequential step ordinals"
                )
            }
            Finding::ChapterOrder { manual, chapter } => {
                write!(f, "{manual}: chapter {chapter} out of order")
            }
            Finding::SectionOrder { manual, section } => {
                write!(f, "{manual}: section {section} out of order")
            }
            Finding::PageOrder { manual, section } => {
                write!(f, "{manual}: page decreases at section {section}")
            }
            Finding::UnreachableSection {
                procedure_id,
                section,
            } => write!(
                f,
                "procedure `{procedure_id}` cites section {section}, which does not resolve"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, finding: Finding) {
        self.findings.push(finding);
    }
}

/// Model-level checks over manuals that may not have come from the parser.
pub fn validate_manuals(manuals: &[&Manual]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut manual_ids = HashSet::new();
    for m in manuals {
        if !manual_ids.insert(m.id.as_str()) {
            report.push(Finding::DuplicateManualId { id: m.id.clone() });
        }
    }

    let mut owners: HashMap<&str, Vec<String>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for m in manuals {
        for p in m.procedures() {
            let entry = owners.entry(p.id.as_str()).or_default();
            if entry.is_empty() {
                order.push(p.id.as_str());
            }
            entry.push(m.id.clone());
        }
    }
    for id in order {
        let manuals = &owners[id];
        if manuals.len() > 1 {
            report.push(Finding::DuplicateId {
                id: id.to_string(),
                manuals: manuals.clone(),
            });
        }
    }

    for m in manuals {
        let mut last_chapter = 0;
        let mut last_page = 0;
        for chapter in &m.chapters {
            if chapter.number <= last_chapter {
                report.push(Finding::ChapterOrder {
                    manual: m.id.clone(),
                    chapter: chapter.number,
                });
            }
            last_chapter = chapter.number;
            let mut last_section = 0;
            for section in &chapter.sections {
                if section.number.chapter != chapter.number
                    || section.number.section <= last_section
                {
                    report.push(Finding::SectionOrder {
                        manual: m.id.clone(),
                        section: section.number.to_string(),
                    });
                }
                last_section = section.number.section;
                if section.page < last_page {
                    report.push(Finding::PageOrder {
                        manual: m.id.clone(),
                        section: section.number.to_string(),
                    });
                }
                last_page = section.page;
                for p in &section.procedures {
                    if p.condition_tags.is_empty() {
                        report.push(Finding::EmptyTags {
                            procedure_id: p.id.clone(),
                        });
                    }
                    if p.steps.is_empty() {
                        report.push(Finding::EmptySteps {
                            procedure_id: p.id.clone(),
                        });
                    }
                    let sequential = p
                        .steps
                        .iter()
                        .enumerate()
                        .all(|(i, s)| s.ordinal as usize == i + 1);
                    if !sequential {
                        report.push(Finding::BadOrdinals {
                            procedure_id: p.id.clone(),
                        });
                    }
                    if p.source.manual_id != m.id
                        || p.source.section_number != section.number
                        || p.source.page != section.page
                        || p.source.line_start > p.source.line_end
                    {
                        report.push(Finding::UnreachableSection {
                            procedure_id: p.id.clone(),
                            section: p.source.section_number.to_string(),
                        });
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = "\
#MANUAL QRH Quick Reference Handbook
#CHAPTER 1 Emergency
#SECTION 1.1 Engine @4
#PROCEDURE DUAL_ENG_FAIL EMERGENCY ENG DUAL FAILURE
EMER ELEC PWR .......... MAN ON
ENG MODE SEL .......... IGN
THRUST LEVERS .......... IDLE
#END
";

    #[test]
    fn empty_input_is_missing_header() {
        assert_eq!(
            parse_manual("").unwrap_err(),
            ManualError::syntax(1, "missing #MANUAL header")
        );
    }

    #[test]
    fn minimal_fixture() {
        let doc = Document::parse(MINIMAL).unwrap();
        let m = doc.manual();
        let procs: Vec<_> = m.procedures().collect();
        assert_eq!(procs.len(), 1);
        let p = procs[0];
        assert_eq!(p.id, "DUAL_ENG_FAIL");
        assert_eq!(p.severity, Severity::Emergency);
        assert_eq!(p.steps.len(), 3);
        assert_eq!(p.source.page, 4);
        assert_eq!(p.source.section_number, SectionNumber::new(1, 1));
        // #PROCEDURE is the 4th line, #END the 8th
        assert_eq!((p.source.line_start, p.source.line_end), (4, 8));
        let ordinals: Vec<u32> = p.steps.iter().map(|s| s.ordinal).collect();
        assert_eq!(ordinals, vec![1, 2, 3]);
    }

    #[test]
    fn excerpt_is_the_procedure_block() {
        let corpus = Corpus::parse([MINIMAL]).unwrap();
        let p = corpus.procedure("DUAL_ENG_FAIL").unwrap();
        let excerpt = corpus.verbatim_excerpt(&p.source).unwrap();
        let expected: Vec<&str> = MINIMAL.lines().skip(3).take(5).collect();
        assert_eq!(excerpt, expected.join("\n"));
        assert!(MINIMAL.contains(excerpt));
    }

    #[test]
    fn excerpt_out_of_range_is_unresolved() {
        let corpus = Corpus::parse([MINIMAL]).unwrap();
        let mut idx = corpus.procedure("DUAL_ENG_FAIL").unwrap().source.clone();
        idx.line_end = 99;
        assert!(matches!(
            corpus.verbatim_excerpt(&idx),
            Err(ManualError::UnresolvedIndex(_))
        ));
        let mut idx = corpus.procedure("DUAL_ENG_FAIL").unwrap().source.clone();
        idx.manual_id = "FCOM".into();
        assert!(corpus.verbatim_excerpt(&idx).is_err());
    }

    #[test]
    fn duplicate_procedure_id() {
        let text = "#MANUAL QRH Q\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n\
#PROCEDURE ENG1_FIRE EMERGENCY A\nX .......... Y\n#END\n\
#PROCEDURE ENG1_FIRE EMERGENCY B\nX .......... Y\n#END\n";
        assert_eq!(
            parse_manual(text).unwrap_err(),
            ManualError::DuplicateId("ENG1_FIRE".into())
        );
    }

    #[test]
    fn decreasing_pages_are_rejected() {
        let text = "#MANUAL QRH Q\n#CHAPTER 1 C\n#SECTION 1.1 S @5\n#SECTION 1.2 T @3\n";
        assert_eq!(
            parse_manual(text).unwrap_err(),
            ManualError::PageOrder("1.2".into())
        );
    }

    #[test]
    fn procedure_without_section() {
        let text = "#MANUAL QRH Q\n#CHAPTER 1 C\n#PROCEDURE P1 NORMAL T\nA .......... B\n#END\n";
        assert_eq!(
            parse_manual(text).unwrap_err(),
            ManualError::MissingIndex("P1".into())
        );
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let cases = [
            ("#CHAPTER 1 C\n", 1),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 2.1 S @1\n", 3),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S\n", 3),
            ("#MANUAL Q T\n#CHAPTER 2 C\n#CHAPTER 1 D\n", 3),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\nno separator\n#END\n", 5),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\n   A .......... B\n#END\n", 5),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\n#END\n", 5),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\nA .......... B\n", 5),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\n#IF X\nA .......... B\n#END\n", 7),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P BAD T\n", 4),
            ("#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\n#TAGS ENG-1\n", 5),
        ];
        for (text, line) in cases {
            match parse_manual(text) {
                Err(ManualError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: expected syntax error, got {other:?}"),
            }
        }
    }

    #[test]
    fn tags_are_uppercased() {
        let text = "#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NON_NORMAL T\n#TAGS eng_1_fail, Hyd_G\nA .......... B\n#END\n";
        let m = parse_manual(text).unwrap();
        let p = m.procedures().next().unwrap();
        let tags: Vec<&str> = p.condition_tags.iter().map(String::as_str).collect();
        assert_eq!(tags, ["ENG_1_FAIL", "HYD_G"]);
    }

    #[test]
    fn dot_fill_rendering() {
        let step = ChecklistStep {
            ordinal: 1,
            challenge: "THRUST LEVERS".into(),
            response: "IDLE".into(),
            nesting: 0,
            guard: None,
        };
        assert_eq!(render_step(&step), "THRUST LEVERS .......... IDLE");
    }

    #[test]
    fn nested_guarded_steps_round_trip() {
        let text = "\
#MANUAL Q T
#CHAPTER 1 C
#SECTION 1.1 S @1
#PROCEDURE P EMERGENCY T
#TAGS A
ONE .......... X
#IF NO RELIGHT
  TWO .......... Y
    THREE .......... Z
#ENDIF
#IF DAMAGE
  FOUR .......... W
#ENDIF
FIVE .......... V
#END
";
        let m = parse_manual(text).unwrap();
        let p = m.procedures().next().unwrap();
        let rendered = render_procedure(p);
        let before: Vec<(u32, Option<&str>)> = p
            .steps
            .iter()
            .map(|s| (s.nesting, s.guard.as_deref()))
            .collect();
        assert_eq!(
            before,
            [
                (0, None),
                (1, Some("NO RELIGHT")),
                (2, Some("NO RELIGHT")),
                (1, Some("DAMAGE")),
                (0, None)
            ]
        );
        assert!(rendered
            .contains("#IF NO RELIGHT\n  TWO .......... Y\n    THREE .......... Z\n#ENDIF\n"));
        let reparsed = parse_manual(&format!(
            "#MANUAL Q T\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n{rendered}"
        ))
        .unwrap();
        assert!(reparsed.procedures().next().unwrap().content_eq(p));
    }

    #[test]
    fn validate_reports_empty_tags_and_duplicates() {
        let corpus = Corpus::parse([MINIMAL]).unwrap();
        assert_eq!(
            corpus.validate().findings,
            vec![Finding::EmptyTags {
                procedure_id: "DUAL_ENG_FAIL".into()
            }]
        );

        let a = "#MANUAL QRH Q\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P1 NORMAL T\n#TAGS X\nA .......... B\n#END\n";
        let b = "#MANUAL FCOM F\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P1 NORMAL T\n#TAGS X\nA .......... B\n#END\n";
        let corpus = Corpus::parse([a, b]).unwrap();
        assert_eq!(
            corpus.validate().findings,
            vec![Finding::DuplicateId {
                id: "P1".into(),
                manuals: vec!["QRH".into(), "FCOM".into()]
            }]
        );
    }

    #[test]
    fn crlf_input() {
        let text = MINIMAL.replace('\n', "\r\n");
        let corpus = Corpus::parse([text.clone()]).unwrap();
        let p = corpus.procedure("DUAL_ENG_FAIL").unwrap();
        assert_eq!(p.steps[0].response, "MAN ON");
        let excerpt = corpus.verbatim_excerpt(&p.source).unwrap();
        assert!(text.contains(excerpt));
        assert!(excerpt.starts_with("#PROCEDURE"));
    }
}
