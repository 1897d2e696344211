use gapsvt::{Answer, Branch, CostLedger, Execution, Mechanism, OutputSequence, Side};
use serde::{Deserialize, Serialize};

/// One answer as emitted in a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerRecord {
    Gap {
        gap: f64,
        branch: Branch,
    },
    /// Adaptive runs report a negative answer as `(bot, 0)`.
    BotGap {
        bot: bool,
        gap: f64,
    },
    Bot {
        bot: bool,
    },
    Top {
        top: bool,
    },
}

impl AnswerRecord {
    pub fn new(mechanism: Mechanism, answer: &Answer) -> Self {
        match *answer {
            Answer::Bot if mechanism == Mechanism::AdaptiveGap => AnswerRecord::BotGap { bot: true, gap: 0.0 },
            Answer::Bot => AnswerRecord::Bot { bot: true },
            Answer::Top => AnswerRecord::Top { top: true },
            Answer::TopGap { gap, branch } => AnswerRecord::Gap { gap, branch },
        }
    }

    pub fn answer(&self) -> Answer {
        match *self {
            AnswerRecord::Gap { gap, branch } => Answer::TopGap { gap, branch },
            AnswerRecord::BotGap { .. } | AnswerRecord::Bot { .. } => Answer::Bot,
            AnswerRecord::Top { .. } => Answer::Top,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub cost: f64,
    pub first: usize,
    pub second: usize,
}

impl From<&CostLedger> for LedgerRecord {
    fn from(l: &CostLedger) -> Self {
        Self { cost: l.running_cost, first: l.first_count, second: l.second_count }
    }
}

/// One line of `gapsvt run` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mechanism: Mechanism,
    /// Absent when the tape was injected from a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub side: Side,
    pub answers: Vec<AnswerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<LedgerRecord>,
    pub consumed: usize,
}

impl RunRecord {
    pub fn new(mechanism: Mechanism, seed: Option<u64>, side: Side, exec: &Execution) -> Self {
        Self {
            mechanism,
            seed,
            side,
            answers: exec.output.answers.iter().map(|a| AnswerRecord::new(mechanism, a)).collect(),
            ledger: exec.ledger.as_ref().map(LedgerRecord::from),
            consumed: exec.consumed,
        }
    }

    pub fn output(&self) -> OutputSequence {
        OutputSequence::new(self.answers.iter().map(AnswerRecord::answer).collect())
    }

    pub fn to_text(&self) -> String {
        let mut line = format!("{} side={}", self.mechanism, self.side);
        if let Some(seed) = self.seed {
            line += &format!(" seed={seed}");
        }
        line += &format!(": {}", self.output());
        if let Some(l) = &self.ledger {
            line += &format!(" (cost {})", l.cost);
        }
        line
    }
}
