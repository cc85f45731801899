//! Quick-access flight procedures: parse checklist manuals, interpret panel
//! state, retrieve the applicable procedure verbatim with its citation, and
//! score the whole loop against an annotated dataset.

pub mod cli;
pub mod config;
pub mod evaluation;
pub mod manual;
pub mod pipeline;
pub mod retrieval;
pub mod service;
pub mod situation;

pub use manual::{Corpus, Manual, Procedure, Severity, SourceIndex};
pub use pipeline::{Engine, InputSetting, ProcedureResponse};
pub use situation::{DisplayKind, FlightCondition, InstrumentSnapshot};

/// Data compiled into the binary: the sample corpus, rule set and dataset.
pub mod bundled {
    use crate::evaluation::{load_dataset, load_replay, ReplayRecord, Sample};
    use crate::manual::Corpus;
    use crate::situation::{load_rules, ConditionRule};

    pub const QRH: &str = include_str!("../data/qrh-a320.qrh");
    pub const SOP: &str = include_str!("../data/sop-a320.qrh");
    pub const RULES: &str = include_str!("../data/rules.txt");
    pub const DATASET: &str = include_str!("../data/dataset.jsonl");
    pub const REPLAY_ABLATION: &str = include_str!("../data/replay/ablation.jsonl");
    pub const REPLAY_BREAKDOWN: &str = include_str!("../data/replay/breakdown.jsonl");

    pub const MANUALS: [(&str, &str); 2] = [("qrh-a320.qrh", QRH), ("sop-a320.qrh", SOP)];

    pub fn corpus() -> Corpus {
        Corpus::parse([QRH, SOP]).expect("bundled manuals parse")
    }

    pub fn rules() -> Vec<ConditionRule> {
        load_rules(RULES).expect("bundled rules parse")
    }

    pub fn dataset() -> Vec<Sample> {
        load_dataset(DATASET).expect("bundled dataset loads")
    }

    pub fn replay_ablation() -> Vec<ReplayRecord> {
        load_replay(REPLAY_ABLATION).expect("bundled replay loads")
    }

    pub fn replay_breakdown() -> Vec<ReplayRecord> {
        load_replay(REPLAY_BREAKDOWN).expect("bundled replay loads")
    }
}
