use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::EngineTag;
use super::AgentAction;
use crate::error::{Error, Result};
use crate::io::{write_container, ContainerReader};

/// Everything one episode produced. Emissions are global sums, row-major by
/// year, and run through the look-ahead so they cover `H + U` years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub engine: EngineTag,
    pub scenario: String,
    pub seed: u64,
    pub first_year: i32,
    pub n_gases: usize,
    pub actions: Vec<Vec<AgentAction>>,
    pub rewards: Vec<Vec<f64>>,
    pub emissions: Vec<f64>,
    pub dt: Vec<f64>,
}

impl EpisodeRecord {
    pub fn empty(engine: EngineTag, scenario: &str, seed: u64, first_year: i32, n_gases: usize) -> Self {
        EpisodeRecord {
            engine,
            scenario: scenario.to_string(),
            seed,
            first_year,
            n_gases,
            actions: Vec::new(),
            rewards: Vec::new(),
            emissions: Vec::new(),
            dt: Vec::new(),
        }
    }

    pub(crate) fn push_year(&mut self, actions: &[AgentAction], rewards: &[f64], global: &[f64], dt: f64) {
        self.actions.push(actions.to_vec());
        self.rewards.push(rewards.to_vec());
        self.push_rollout(global, dt);
    }

    pub(crate) fn push_rollout(&mut self, global: &[f64], dt: f64) {
        self.emissions.extend_from_slice(global);
        self.dt.push(dt);
    }

    pub fn n_years(&self) -> usize {
        self.dt.len()
    }

    pub fn emission_row(&self, t: usize) -> &[f64] {
        &self.emissions[t * self.n_gases..(t + 1) * self.n_gases]
    }

    /// Undiscounted per-agent episode return.
    pub fn returns(&self) -> Vec<f64> {
        let n = self.rewards.first().map_or(0, Vec::len);
        (0..n).map(|i| self.rewards.iter().map(|r| r[i]).sum()).collect()
    }
}

pub const TRAJECTORY_KIND: &str = "trajectories";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEpisode {
    pub episode: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStoreHeader {
    pub engine: EngineTag,
    pub scenario: String,
    pub first_year: i32,
    pub n_years: usize,
    pub n_gases: usize,
    pub episodes: Vec<StoredEpisode>,
}

impl TrajectoryStoreHeader {
    fn stride(&self) -> usize {
        self.n_years * (self.n_gases + 1)
    }
}

/// Emission and ΔT traces of sampled training episodes, kept for replay
/// through the simulator afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    pub header: TrajectoryStoreHeader,
    values: Vec<f64>,
}

impl TrajectoryStore {
    pub fn new(engine: EngineTag, scenario: &str, first_year: i32, n_years: usize, n_gases: usize) -> Self {
        TrajectoryStore {
            header: TrajectoryStoreHeader {
                engine,
                scenario: scenario.to_string(),
                first_year,
                n_years,
                n_gases,
                episodes: Vec::new(),
            },
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.header.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.header.episodes.is_empty()
    }

    pub fn push(&mut self, episode: u64, record: &EpisodeRecord) -> Result<()> {
        let h = &self.header;
        if record.n_gases != h.n_gases || record.n_years() != h.n_years || record.first_year != h.first_year {
            return Err(Error::Shape {
                what: "stored episode years",
                expected: h.n_years,
                got: record.n_years(),
            });
        }
        self.values.extend_from_slice(&record.emissions);
        self.values.extend_from_slice(&record.dt);
        self.header.episodes.push(StoredEpisode {
            episode,
            seed: record.seed,
        });
        Ok(())
    }

    /// Global emissions (`n_years × G`) and the ΔT trace of entry `i`.
    pub fn get(&self, i: usize) -> (&[f64], &[f64]) {
        let s = self.header.stride();
        let e = self.header.n_years * self.header.n_gases;
        let block = &self.values[i * s..(i + 1) * s];
        (&block[..e], &block[e..])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_container(path, TRAJECTORY_KIND, &self.header, &self.values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = ContainerReader::<TrajectoryStoreHeader>::open(path, TRAJECTORY_KIND)?;
        if reader.n_values != (reader.header.stride() * reader.header.episodes.len()) as u64 {
            return Err(Error::format(path, "payload size does not match the episode count"));
        }
        let (header, values) = reader.read_all()?;
        Ok(TrajectoryStore { header, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip() {
        let mut rec = EpisodeRecord::empty(EngineTag::Gru, "x", 7, 2016, 2);
        rec.push_year(&[AgentAction::NONE], &[-1.0], &[1.0, 2.0], 0.5);
        rec.push_rollout(&[3.0, 4.0], 0.6);
        let mut store = TrajectoryStore::new(EngineTag::Gru, "x", 2016, 2, 2);
        store.push(4, &rec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        store.write(&p).unwrap();
        let back = TrajectoryStore::read(&p).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.get(0), (&[1.0, 2.0, 3.0, 4.0][..], &[0.5, 0.6][..]));
        let short = EpisodeRecord::empty(EngineTag::Gru, "x", 7, 2016, 2);
        assert!(store.push(5, &short).is_err());
    }
}
