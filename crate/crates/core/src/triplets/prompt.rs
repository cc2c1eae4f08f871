//! Prompt templates for generative agents and extraction of their answers.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Judgment, JudgmentSource, Position, TripletTrial};
use crate::corpus::{CaptionSet, StimulusId};
use crate::error::{Error, Result};

/// Opening text for the interleaved text–video–text prompt.
pub const VIDEO_INSTRUCTION: &str = "Now we need to perform a role-playing task. Your role is an expert in analyzing the emotions conveyed in videos. Firstly, please describe the content and your evoked emotional response of each of these videos individually.";

/// Closing text for the interleaved prompt, sent after the three videos.
pub const VIDEO_QUESTION: &str = "Then, tell me Which clip evokes an emotional response that is noticeably different from the other two? (The answer format is \"Video+ID is noticeably different from the other two\") Explain the reason for this difference. /n Precautions: 1. You should focus your judgement on the emotional tone, never be influenced by the video index or location when making judgments. 2. Assume you are an emotional judgment expert with the ability to feel specific emotions for each video. Do not provide ambiguous answers. Never be influenced by the video index or location when making judgments.  3. You are not given additional constraints as to the strategy you should use.";

/// Instruction for text-only agents; captions follow as a second input.
pub const CAPTION_INSTRUCTION: &str = "Now we need to perform a role-playing task. Your role is an expert in analyzing the emotions conveyed in videos, each video is replaced by its corresponding textual description. /n Firstly, please describe your evoked emotional response of each of these videos individually. Then, tell me Which video evokes an emotional response that is noticeably different from the other two? Never be influenced by the video index when making judgments. (The answer format is \"Video+ID is noticeably different from the other two.\")  Explain the reason for this difference. /n Precautions: 1. You should focus your judgement on the emotional tone, never be influenced by the video index when making judgments. /n 2. Assume you are an emotional judgment expert with the ability to feel specific emotions for each video. Do not provide ambiguous answers. Never be influenced by the video index when making judgments.  /n 3. You are not given additional constraints as to the strategy you should use.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    VideoInterleaved,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Text(String),
    /// The three clips, in presentation order.
    Videos([StimulusId; 3]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub segments: Vec<Segment>,
    /// Stimuli referenced by the prompt, in presentation order.
    pub media: [StimulusId; 3],
    /// Caption index used for each member in caption mode.
    pub caption_choice: Option<[usize; 3]>,
}

impl Prompt {
    /// Flattened text view; video inputs appear as `{[Video_1], [Video_2], [Video_3]}`.
    pub fn text(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.clone(),
                Segment::Videos(_) => "{[Video_1], [Video_2], [Video_3]}".to_string(),
            })
            .collect();
        parts.join("\n")
    }
}

/// Caption index (out of `n_captions`) for each trial member.
pub fn caption_choices(seed: u64, trial_id: u64, n_captions: usize) -> [usize; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial_id.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    [0; 3].map(|_| rng.random_range(0..n_captions))
}

pub fn render_prompt(
    trial: &TripletTrial,
    mode: PromptMode,
    captions: Option<&CaptionSet>,
    seed: u64,
) -> Result<Prompt> {
    let members = trial.members();
    match mode {
        PromptMode::VideoInterleaved => Ok(Prompt {
            segments: vec![
                Segment::Text(VIDEO_INSTRUCTION.to_string()),
                Segment::Videos(members),
                Segment::Text(VIDEO_QUESTION.to_string()),
            ],
            media: members,
            caption_choice: None,
        }),
        PromptMode::Caption => {
            let captions = captions.ok_or_else(|| {
                Error::InvalidArgument("caption mode requires a caption set".into())
            })?;
            let mut texts = Vec::with_capacity(3);
            for m in members {
                let c = captions
                    .get(m)
                    .ok_or_else(|| Error::InvalidArgument(format!("no captions for stimulus {m}")))?;
                texts.push(c);
            }
            let choice = caption_choices(seed, trial.trial_id, texts[0].len());
            let listing = format!(
                "{{[Video_1: {}], [Video_2: {}], [Video_3: {}]}}",
                texts[0][choice[0]], texts[1][choice[1]], texts[2][choice[2]]
            );
            Ok(Prompt {
                segments: vec![Segment::Text(CAPTION_INSTRUCTION.to_string()), Segment::Text(listing)],
                media: members,
                caption_choice: Some(choice),
            })
        }
    }
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)video\s*[_+#]?\s*(\d+)\W{0,4}\s*is\s+noticeably\s+different").unwrap()
    })
}

/// Extracts the chosen video from an agent reply.
///
/// The reply must contain the key phrase with a single distinct video index
/// in 1..=3; repeated mentions of the same index collapse to one judgment.
pub fn parse_response(text: &str, trial: &TripletTrial) -> Result<Judgment> {
    let mut found: Vec<u64> = Vec::new();
    for cap in answer_pattern().captures_iter(text) {
        let n: u64 = cap[1].parse().unwrap_or(u64::MAX);
        if !found.contains(&n) {
            found.push(n);
        }
    }
    match found.as_slice() {
        [] => Err(Error::Parse("key phrase `noticeably different` with a video index not found".into())),
        [n] => {
            let pos = Position::from_number(*n)
                .ok_or_else(|| Error::Parse(format!("video index {n} outside 1..=3")))?;
            Judgment::for_trial(trial, trial.at(pos), JudgmentSource::ExternalAgent)
        }
        many => Err(Error::Parse(format!("conflicting video indices {many:?}"))),
    }
}

/// Frame sampling rate (frames per second) for a clip of `duration` seconds.
pub fn frame_rate(duration: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    Ok(if duration <= 5.0 {
        2.0
    } else if duration <= 15.0 {
        1.0
    } else if duration <= 20.0 {
        0.5
    } else {
        0.2
    })
}
