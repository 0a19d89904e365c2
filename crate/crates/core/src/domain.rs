//! Polls, contests and the dataset they live in.
//!
//! Shares are two-party Republican fractions throughout. Time is measured in
//! whole days before the election, so `t = 0` is election day.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContestId(pub String);

impl ContestId {
    pub fn for_race(state: &str, year: i32) -> Self {
        ContestId(format!("{state}-{year}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ContestId {
    fn from(s: &str) -> Self {
        ContestId(s.to_string())
    }
}

/// One survey observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poll {
    pub contest_id: ContestId,
    /// Days before the election.
    pub t: u32,
    /// Two-party Republican share.
    pub y: f64,
    /// Two-party sample size.
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pollster: Option<String>,
}

impl Poll {
    pub fn new(contest_id: impl Into<ContestId>, t: u32, y: f64, n: u64) -> Result<Self> {
        let poll = Poll {
            contest_id: contest_id.into(),
            t,
            y,
            n,
            pollster: None,
        };
        poll.validate()?;
        Ok(poll)
    }

    pub fn with_pollster(mut self, pollster: impl Into<String>) -> Self {
        self.pollster = Some(pollster.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.y) {
            return Err(Error::InvalidPoll(format!(
                "share {} outside [0, 1] in {}",
                self.y, self.contest_id
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidPoll(format!(
                "zero sample size in {}",
                self.contest_id
            )));
        }
        Ok(())
    }
}

impl From<String> for ContestId {
    fn from(s: String) -> Self {
        ContestId(s)
    }
}

/// A state-year race and its realized two-party result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionContest {
    pub contest_id: ContestId,
    pub state: String,
    pub year: i32,
    /// Realized two-party Republican vote share.
    pub v: f64,
}

impl ElectionContest {
    pub fn new(state: impl Into<String>, year: i32, v: f64) -> Result<Self> {
        let state = state.into();
        let contest = ElectionContest {
            contest_id: ContestId::for_race(&state, year),
            state,
            year,
            v,
        };
        contest.validate()?;
        Ok(contest)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.v < 1.0) {
            return Err(Error::InvalidDataset(format!(
                "result {} for {} must lie strictly inside (0, 1)",
                self.v, self.contest_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PollDataset {
    pub contests: Vec<ElectionContest>,
    pub polls: Vec<Poll>,
}

impl PollDataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(contests: Vec<ElectionContest>, polls: Vec<Poll>) -> Result<Self> {
        let ds = PollDataset { contests, polls };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut races = BTreeSet::new();
        for c in &self.contests {
            c.validate()?;
            if !ids.insert(&c.contest_id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate contest id {}",
                    c.contest_id
                )));
            }
            if !races.insert((&c.state, c.year)) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate state-year pair {} {}",
                    c.state, c.year
                )));
            }
        }
        for p in &self.polls {
            p.validate()?;
            if !ids.contains(&p.contest_id) {
                return Err(Error::InvalidDataset(format!(
                    "poll refers to unknown contest {}",
                    p.contest_id
                )));
            }
        }
        Ok(())
    }

    pub fn contest_index(&self) -> BTreeMap<&ContestId, usize> {
        self.contests
            .iter()
            .enumerate()
            .map(|(i, c)| (&c.contest_id, i))
            .collect()
    }

    /// Polls grouped by contest position, preserving dataset order.
    pub fn polls_by_contest(&self) -> Vec<Vec<&Poll>> {
        let index = self.contest_index();
        let mut grouped = vec![Vec::new(); self.contests.len()];
        for p in &self.polls {
            if let Some(&i) = index.get(&p.contest_id) {
                grouped[i].push(p);
            }
        }
        grouped
    }

    /// Largest poll day per contest (0 for contests without polls).
    pub fn max_days(&self) -> Vec<u32> {
        self.polls_by_contest()
            .iter()
            .map(|ps| ps.iter().map(|p| p.t).max().unwrap_or(0))
            .collect()
    }

    /// Keeps only contests from `year` together with their polls.
    pub fn restrict_to_year(&self, year: i32) -> PollDataset {
        let contests: Vec<_> = self
            .contests
            .iter()
            .filter(|c| c.year == year)
            .cloned()
            .collect();
        let keep: BTreeSet<_> = contests.iter().map(|c| c.contest_id.clone()).collect();
        let polls = self
            .polls
            .iter()
            .filter(|p| keep.contains(&p.contest_id))
            .cloned()
            .collect();
        PollDataset { contests, polls }
    }

    pub fn poll_counts_by_year(&self) -> BTreeMap<i32, usize> {
        let years: BTreeMap<_, _> = self
            .contests
            .iter()
            .map(|c| (&c.contest_id, c.year))
            .collect();
        let mut counts = BTreeMap::new();
        for p in &self.polls {
            if let Some(&y) = years.get(&p.contest_id) {
                *counts.entry(y).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Inclusion window: polls with `t <= cutoff` enter the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub cutoff: u32,
}

impl WindowConfig {
    pub fn new(cutoff: u32) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidConfig("window cutoff must be at least 1 day".into()));
        }
        Ok(WindowConfig { cutoff })
    }
}

/// Returns a copy holding exactly the polls with `t <= cutoff`. Every contest
/// is kept, even when it ends up with no polls.
pub fn filter_window(dataset: &PollDataset, window: WindowConfig) -> PollDataset {
    PollDataset {
        contests: dataset.contests.clone(),
        polls: dataset
            .polls
            .iter()
            .filter(|p| p.t <= window.cutoff)
            .cloned()
            .collect(),
    }
}

/// Republican share of the two-party total.
pub fn two_party_share(rep: f64, dem: f64) -> Result<f64> {
    if !(rep >= 0.0 && dem >= 0.0) {
        return Err(Error::InvalidPoll(format!(
            "negative support ({rep}, {dem})"
        )));
    }
    let total = rep + dem;
    if total <= 0.0 {
        return Err(Error::InvalidPoll("no two-party support".into()));
    }
    Ok(rep / total)
}
