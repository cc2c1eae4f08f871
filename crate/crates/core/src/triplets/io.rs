use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::Serialize;

use super::{Judgment, Observation, TripletTrial};
use crate::error::{Error, Result};

/// Buffers JSONL records and flushes them to the sink in fixed-size batches.
pub struct JsonlBatchWriter<W: Write> {
    sink: W,
    batch_size: usize,
    buf: Vec<u8>,
    pending: usize,
    written: u64,
}

impl<W: Write> JsonlBatchWriter<W> {
    pub fn new(sink: W, batch_size: usize) -> Self {
        Self { sink, batch_size: batch_size.max(1), buf: Vec::new(), pending: 0, written: 0 }
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.buf, record)?;
        self.buf.push(b'\n');
        self.pending += 1;
        if self.pending >= self.batch_size {
            self.flush_batch()?;
        }
        Ok(())
    }

    fn flush_batch(&mut self) -> Result<()> {
        self.sink.write_all(&self.buf)?;
        self.written += self.pending as u64;
        self.buf.clear();
        self.pending = 0;
        Ok(())
    }

    /// Flushes the final partial batch and returns the record count.
    pub fn finish(mut self) -> Result<u64> {
        self.flush_batch()?;
        self.sink.flush()?;
        Ok(self.written)
    }
}

pub fn write_trials<W: Write>(
    sink: W,
    trials: impl IntoIterator<Item = TripletTrial>,
    batch_size: usize,
) -> Result<u64> {
    let mut w = JsonlBatchWriter::new(sink, batch_size);
    for t in trials {
        w.push(&t)?;
    }
    w.finish()
}

pub fn write_judgments<W: Write>(sink: W, judgments: &[Judgment]) -> Result<u64> {
    let mut w = JsonlBatchWriter::new(sink, 4096);
    for j in judgments {
        w.push(j)?;
    }
    w.finish()
}

fn read_jsonl<R: Read, T: serde::de::DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Ingest { line: n as u64 + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trials<R: Read>(reader: R) -> Result<Vec<TripletTrial>> {
    let raw: Vec<TripletTrial> = read_jsonl(reader)?;
    raw.into_iter()
        .map(|t| TripletTrial::new(t.trial_id, t.members()))
        .collect()
}

pub fn read_judgments<R: Read>(reader: R) -> Result<Vec<Judgment>> {
    read_jsonl(reader)
}

/// Joins judgments to their trials. Each judgment must name a known trial,
/// its odd member and position must agree with the trial, and each trial id
/// may be judged at most once.
pub fn join_observations(trials: &[TripletTrial], judgments: &[Judgment]) -> Result<Vec<Observation>> {
    let index: HashMap<u64, &TripletTrial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let mut seen = HashMap::with_capacity(judgments.len());
    let mut out = Vec::with_capacity(judgments.len());
    for j in judgments {
        let trial = index
            .get(&j.trial_id)
            .ok_or_else(|| Error::Schema(format!("judgment for unknown trial {}", j.trial_id)))?;
        if trial.position_of(j.odd) != Some(j.position) {
            return Err(Error::Schema(format!(
                "trial {}: odd {} does not sit at position {}",
                j.trial_id,
                j.odd,
                j.position.number()
            )));
        }
        if seen.insert(j.trial_id, ()).is_some() {
            return Err(Error::Schema(format!("trial {} judged more than once", j.trial_id)));
        }
        out.push(Observation::new(trial, j.odd)?);
    }
    Ok(out)
}
