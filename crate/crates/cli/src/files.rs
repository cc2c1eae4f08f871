//! Small file helpers shared by subcommands and the pipeline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use affect_geometry::triplets::{join_observations, read_judgments, read_trials};
use affect_geometry::{Error, Observation, Result, StimulusId};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_observations(trials: &Path, judgments: &Path) -> Result<Vec<Observation>> {
    let t = read_trials(open(trials)?)?;
    let j = read_judgments(open(judgments)?)?;
    join_observations(&t, &j)
}

/// Comma-separated values, e.g. `10,20,30`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| Error::InvalidArgument(format!("bad list item {p:?}: {e}"))))
        .collect()
}

/// A subset given inline (`0,3,7`), as a range (`0..66`), or as a file with
/// one stimulus id per line.
pub fn parse_subset(s: &str) -> Result<Vec<StimulusId>> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad range {s:?}")))?;
        let hi: usize = b.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad range {s:?}")))?;
        return Ok((lo..hi).map(StimulusId).collect());
    }
    let path = Path::new(s);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                l.trim().parse().map(StimulusId).map_err(|e| Error::Ingest {
                    line: n as u64 + 1,
                    message: format!("{}: {e}", l.trim()),
                })
            })
            .collect();
    }
    Ok(parse_list::<usize>(s)?.into_iter().map(StimulusId).collect())
}
