//! Request/response contract for external judging agents.
//!
//! Transport is abstract: an [`Agent`] receives a rendered prompt with its
//! media references and returns reply text. The [`AgentHarness`] renders
//! prompts, dispatches them in parallel, parses replies and re-dispatches
//! trials whose replies fail to parse, up to a retry budget.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use super::oracle::CosineOracle;
use super::prompt::{parse_response, render_prompt, Prompt, PromptMode};
use super::{Judgment, TripletTrial};
use crate::corpus::CaptionSet;

#[derive(Debug, Clone)]
pub struct AgentRequest {
    pub trial_id: u64,
    pub prompt: Prompt,
    pub timeout: Duration,
    pub attempt: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("unparseable reply: {0}")]
    Unparseable(String),
}

pub trait Agent: Sync {
    fn respond(&self, request: &AgentRequest) -> Result<String, AgentError>;
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub mode: PromptMode,
    /// Additional attempts after the first.
    pub retries: u32,
    pub timeout: Duration,
    pub prompt_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::VideoInterleaved,
            retries: 2,
            timeout: Duration::from_secs(120),
            prompt_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailedTrial {
    pub trial_id: u64,
    pub attempts: u32,
    pub last_error: AgentError,
}

#[derive(Debug, Clone, Default)]
pub struct CollectionReport {
    /// One judgment per successfully parsed trial, in input order.
    pub judgments: Vec<Judgment>,
    pub failed: Vec<FailedTrial>,
}

pub struct AgentHarness<'a, A: Agent> {
    pub agent: &'a A,
    pub captions: Option<&'a CaptionSet>,
    pub config: HarnessConfig,
}

impl<A: Agent> AgentHarness<'_, A> {
    fn run_one(&self, trial: &TripletTrial) -> Result<Judgment, FailedTrial> {
        let prompt = render_prompt(trial, self.config.mode, self.captions, self.config.prompt_seed)
            .map_err(|e| FailedTrial {
                trial_id: trial.trial_id,
                attempts: 0,
                last_error: AgentError::Transport(e.to_string()),
            })?;
        let mut last_error = AgentError::Timeout;
        let attempts = self.config.retries + 1;
        for attempt in 0..attempts {
            let request = AgentRequest {
                trial_id: trial.trial_id,
                prompt: prompt.clone(),
                timeout: self.config.timeout,
                attempt,
            };
            let started = Instant::now();
            let reply = self.agent.respond(&request);
            if started.elapsed() > self.config.timeout {
                last_error = AgentError::Timeout;
                continue;
            }
            match reply {
                Ok(text) => match parse_response(&text, trial) {
                    Ok(j) => return Ok(j),
                    Err(e) => last_error = AgentError::Unparseable(e.to_string()),
                },
                Err(e) => last_error = e,
            }
        }
        Err(FailedTrial { trial_id: trial.trial_id, attempts, last_error })
    }

    /// Collects judgments for every trial. Each trial id yields at most one
    /// judgment; trials that exhaust their retries are reported as failed.
    pub fn collect(&self, trials: &[TripletTrial]) -> CollectionReport {
        let results: Vec<Result<Judgment, FailedTrial>> =
            trials.par_iter().map(|t| self.run_one(t)).collect();
        let mut report = CollectionReport::default();
        for r in results {
            match r {
                Ok(j) => report.judgments.push(j),
                Err(f) => report.failed.push(f),
            }
        }
        report
    }
}

/// Mock agent that answers as the rating oracle would, in the expected
/// answer format.
pub struct OracleAgent {
    pub oracle: CosineOracle,
}

impl Agent for OracleAgent {
    fn respond(&self, request: &AgentRequest) -> Result<String, AgentError> {
        let trial = TripletTrial::new(request.trial_id, request.prompt.media)
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let j = self.oracle.judge(&trial).map_err(|e| AgentError::Transport(e.to_string()))?;
        Ok(format!(
            "Video{} is noticeably different from the other two. Its emotional tone stands apart.",
            j.position.number()
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StimulusId;
    use crate::triplets::{sample_trials, JudgmentSource, TieRule};
    use ndarray::Array2;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        calls: AtomicU32,
    }

    impl Agent for Flaky {
        fn respond(&self, req: &AgentRequest) -> Result<String, AgentError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if req.attempt == 0 {
                Ok("I cannot decide".into())
            } else {
                Ok("Video3 is noticeably different from the other two".into())
            }
        }
    }

    struct Silent;

    impl Agent for Silent {
        fn respond(&self, _: &AgentRequest) -> Result<String, AgentError> {
            Err(AgentError::Transport("connection refused".into()))
        }
    }

    struct Slow;

    impl Agent for Slow {
        fn respond(&self, _: &AgentRequest) -> Result<String, AgentError> {
            std::thread::sleep(Duration::from_millis(20));
            Ok("Video1 is noticeably different from the other two".into())
        }
    }

    fn one_trial() -> Vec<TripletTrial> {
        vec![TripletTrial::new(0, [StimulusId(4), StimulusId(5), StimulusId(6)]).unwrap()]
    }

    #[test]
    fn unparseable_reply_is_redispatched() {
        let agent = Flaky { calls: AtomicU32::new(0) };
        let h = AgentHarness { agent: &agent, captions: None, config: HarnessConfig::default() };
        let r = h.collect(&one_trial());
        assert_eq!(r.judgments.len(), 1);
        assert_eq!(r.judgments[0].odd, StimulusId(6));
        assert_eq!(agent.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn exhausted_retries_reported() {
        let cfg = HarnessConfig { retries: 3, ..HarnessConfig::default() };
        let h = AgentHarness { agent: &Silent, captions: None, config: cfg };
        let r = h.collect(&one_trial());
        assert!(r.judgments.is_empty());
        assert_eq!(r.failed[0].attempts, 4);
        assert!(matches!(r.failed[0].last_error, AgentError::Transport(_)));
    }

    #[test]
    fn slow_replies_time_out() {
        let cfg = HarnessConfig { retries: 0, timeout: Duration::from_millis(1), ..HarnessConfig::default() };
        let h = AgentHarness { agent: &Slow, captions: None, config: cfg };
        let r = h.collect(&one_trial());
        assert_eq!(r.failed[0].last_error, AgentError::Timeout);
    }

    #[test]
    fn oracle_agent_round_trip_matches_oracle() {
        let n = 25;
        let values = Array2::from_shape_fn((n, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.5);
        let oracle = CosineOracle::from_rows(&values, TieRule::LowestIndexPair).unwrap();
        let trials = sample_trials(n, 2, 5).unwrap();
        let agent = OracleAgent { oracle: oracle.clone() };
        let h = AgentHarness { agent: &agent, captions: None, config: HarnessConfig::default() };
        let report = h.collect(&trials);
        assert!(report.failed.is_empty());
        for (t, j) in trials.iter().zip(&report.judgments) {
            let expect = oracle.judge(t).unwrap();
            assert_eq!(j.trial_id, expect.trial_id);
            assert_eq!(j.odd, expect.odd);
            assert_eq!(j.position, expect.position);
            assert_eq!(j.source, JudgmentSource::ExternalAgent);
        }
    }
}
