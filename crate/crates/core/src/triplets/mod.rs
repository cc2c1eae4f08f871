//! Triplet odd-one-out trials and judgments.
//!
//! A [`TripletTrial`] is an ordered triple of stimuli; presentation order is
//! part of its identity because external agents show positional bias. A
//! [`Judgment`] records which member was chosen as the odd one out and in
//! which slot it was shown. Joining trials with judgments yields
//! [`Observation`]s, the unit consumed by embedding training and RSM
//! construction.

mod agent;
mod bias;
mod io;
mod oracle;
mod prompt;
mod sampling;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::StimulusId;
use crate::error::{Error, Result};

pub use agent::{
    Agent, AgentError, AgentHarness, AgentRequest, CollectionReport, FailedTrial, HarnessConfig,
    OracleAgent,
};
pub use bias::{position_bias, PositionBias};
pub use io::{
    join_observations, read_judgments, read_trials, write_judgments, write_trials, JsonlBatchWriter,
};
pub use oracle::{
    feature_oracle, judge_all, rating_oracle, CosineOracle, FeatureOracle, FeatureTable, TieRule,
};
pub use prompt::{
    caption_choices, frame_rate, parse_response, render_prompt, Prompt, PromptMode, Segment,
    CAPTION_INSTRUCTION, VIDEO_INSTRUCTION, VIDEO_QUESTION,
};
pub use sampling::{
    count_trials, sample_trials, sample_validation_trials, SampleCounts, TrialSampler,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletTrial {
    pub trial_id: u64,
    members: [StimulusId; 3],
}

impl TripletTrial {
    pub fn new(trial_id: u64, members: [StimulusId; 3]) -> Result<Self> {
        let [a, b, c] = members;
        if a == b || a == c || b == c {
            return Err(Error::InvalidArgument(format!(
                "trial {trial_id} repeats a stimulus: ({a}, {b}, {c})"
            )));
        }
        Ok(Self { trial_id, members })
    }

    pub fn members(&self) -> [StimulusId; 3] {
        self.members
    }

    pub fn contains(&self, id: StimulusId) -> bool {
        self.members.contains(&id)
    }

    pub fn position_of(&self, id: StimulusId) -> Option<Position> {
        self.members.iter().position(|&m| m == id).map(Position::from_slot)
    }

    pub fn at(&self, position: Position) -> StimulusId {
        self.members[position.slot()]
    }
}

/// Presentation slot of a trial member; serialized as 1, 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    First,
    Second,
    Third,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::First, Position::Second, Position::Third];

    /// Zero-based slot index.
    pub fn slot(self) -> usize {
        match self {
            Position::First => 0,
            Position::Second => 1,
            Position::Third => 2,
        }
    }

    pub fn from_slot(slot: usize) -> Self {
        match slot {
            0 => Position::First,
            1 => Position::Second,
            2 => Position::Third,
            _ => panic!("slot {slot} out of range"),
        }
    }

    /// One-based index as shown to agents ("Video2").
    pub fn number(self) -> u8 {
        self.slot() as u8 + 1
    }

    pub fn from_number(n: u64) -> Option<Self> {
        match n {
            1..=3 => Some(Self::from_slot(n as usize - 1)),
            _ => None,
        }
    }
}

impl Serialize for Position {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for Position {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u64::deserialize(d)?;
        Position::from_number(n)
            .ok_or_else(|| serde::de::Error::custom(format!("position must be 1, 2 or 3, got {n}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSource {
    RatingOracle,
    FeatureOracle,
    ExternalAgent,
}

impl fmt::Display for JudgmentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JudgmentSource::RatingOracle => "rating_oracle",
            JudgmentSource::FeatureOracle => "feature_oracle",
            JudgmentSource::ExternalAgent => "external_agent",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Judgment {
    pub trial_id: u64,
    pub odd: StimulusId,
    pub position: Position,
    pub source: JudgmentSource,
}

impl Judgment {
    /// Builds a judgment naming `odd`, deriving its position from the trial.
    pub fn for_trial(trial: &TripletTrial, odd: StimulusId, source: JudgmentSource) -> Result<Self> {
        let position = trial.position_of(odd).ok_or_else(|| {
            Error::InvalidArgument(format!("stimulus {odd} is not in trial {}", trial.trial_id))
        })?;
        Ok(Self { trial_id: trial.trial_id, odd, position, source })
    }
}

/// A trial joined with its observed odd-one-out choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub trial_id: u64,
    pub members: [StimulusId; 3],
    pub odd: StimulusId,
}

impl Observation {
    pub fn new(trial: &TripletTrial, odd: StimulusId) -> Result<Self> {
        if !trial.contains(odd) {
            return Err(Error::InvalidArgument(format!(
                "odd stimulus {odd} is not a member of trial {}",
                trial.trial_id
            )));
        }
        Ok(Self { trial_id: trial.trial_id, members: trial.members(), odd })
    }

    /// The two members judged most similar (ordered as presented).
    pub fn similar_pair(&self) -> (StimulusId, StimulusId) {
        let mut rest = self.members.iter().copied().filter(|&m| m != self.odd);
        (rest.next().unwrap(), rest.next().unwrap())
    }

    pub fn contains_pair(&self, a: StimulusId, b: StimulusId) -> bool {
        self.members.contains(&a) && self.members.contains(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_members_rejected() {
        assert!(TripletTrial::new(0, [StimulusId(1), StimulusId(1), StimulusId(2)]).is_err());
    }

    #[test]
    fn judgment_position_tracks_slot() {
        let t = TripletTrial::new(7, [StimulusId(5), StimulusId(2), StimulusId(9)]).unwrap();
        let j = Judgment::for_trial(&t, StimulusId(9), JudgmentSource::RatingOracle).unwrap();
        assert_eq!(j.position, Position::Third);
        assert!(Judgment::for_trial(&t, StimulusId(3), JudgmentSource::RatingOracle).is_err());
    }

    #[test]
    fn position_serializes_as_number() {
        let j = Judgment {
            trial_id: 3,
            odd: StimulusId(4),
            position: Position::Second,
            source: JudgmentSource::ExternalAgent,
        };
        let s = serde_json::to_string(&j).unwrap();
        assert_eq!(s, r#"{"trial_id":3,"odd":4,"position":2,"source":"external_agent"}"#);
        let back: Judgment = serde_json::from_str(&s).unwrap();
        assert_eq!(back, j);
        assert!(serde_json::from_str::<Judgment>(
            r#"{"trial_id":3,"odd":4,"position":4,"source":"external_agent"}"#
        )
        .is_err());
    }

    #[test]
    fn similar_pair_excludes_odd() {
        let t = TripletTrial::new(0, [StimulusId(3), StimulusId(1), StimulusId(2)]).unwrap();
        let o = Observation::new(&t, StimulusId(1)).unwrap();
        assert_eq!(o.similar_pair(), (StimulusId(3), StimulusId(2)));
    }
}
