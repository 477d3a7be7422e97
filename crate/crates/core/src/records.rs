//! Data model shared by every stage: event records, trajectories and the
//! per-dataset location tables.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// Which of the two datasets a record, trajectory or location belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    /// Transit smart-card taps.
    Transport,
    /// Phone-network events (calls, texts).
    Communication,
}

impl DatasetTag {
    pub fn short(self) -> &'static str {
        match self {
            DatasetTag::Transport => "T",
            DatasetTag::Communication => "C",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" | "transport" => Ok(DatasetTag::Transport),
            "C" | "c" | "comm" | "communication" => Ok(DatasetTag::Communication),
            other => Err(Error::Config(format!("unknown dataset tag `{other}`"))),
        }
    }
}

/// Start/end marker of a transit tap. Phone records carry `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TripFlag {
    Start,
    End,
    None,
}

impl TripFlag {
    pub fn symbol(self) -> &'static str {
        match self {
            TripFlag::Start => "S",
            TripFlag::End => "E",
            TripFlag::None => "-",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "S" => Some(TripFlag::Start),
            "E" => Some(TripFlag::End),
            "-" | "" => Some(TripFlag::None),
            _ => None,
        }
    }
}

/// Dense ordinal of a location inside its [`LocationTable`].
///
/// Ordinals follow the lexicographic order of the location ids, so comparing
/// ordinals is the same as comparing ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationIdx(pub u32);

impl LocationIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One timestamped, located observation of a user.
///
/// The derived ordering (time, then location, then flag) is the canonical
/// record order inside a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventRecord {
    pub timestamp: Timestamp,
    pub location: LocationIdx,
    pub flag: TripFlag,
}

impl EventRecord {
    pub fn new(timestamp: Timestamp, location: LocationIdx, flag: TripFlag) -> Self {
        Self {
            timestamp,
            location,
            flag,
        }
    }
}

/// All records of one user in one dataset, in canonical time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub user_id: String,
    pub records: Vec<EventRecord>,
}

impl Trajectory {
    /// Builds a trajectory, sorting the records into canonical order.
    pub fn new(user_id: impl Into<String>, mut records: Vec<EventRecord>) -> Self {
        records.sort_unstable();
        Self {
            user_id: user_id.into(),
            records,
        }
    }

    /// Number of records (the user's activity in this dataset).
    pub fn activity(&self) -> usize {
        self.records.len()
    }

    pub fn is_sorted(&self) -> bool {
        self.records.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Planar coordinates of every location of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTable {
    tag: DatasetTag,
    ids: Vec<String>,
    points: Vec<Point>,
    lookup: HashMap<String, LocationIdx>,
}

impl LocationTable {
    /// Builds a table from `(id, point)` entries. Entries are re-ordered by id.
    pub fn new(tag: DatasetTag, mut entries: Vec<(String, Point)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateLocation(w[0].0.clone()));
        }
        if let Some((id, p)) = entries.iter().find(|(_, p)| !p.is_finite()) {
            return Err(Error::InvalidCoordinate(format!("location `{id}` at {p:?}")));
        }
        let lookup = entries
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), LocationIdx(i as u32)))
            .collect();
        let (ids, points) = entries.into_iter().unzip();
        Ok(Self {
            tag,
            ids,
            points,
            lookup,
        })
    }

    pub fn tag(&self) -> DatasetTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, idx: LocationIdx) -> &str {
        &self.ids[idx.index()]
    }

    pub fn point(&self, idx: LocationIdx) -> Point {
        self.points[idx.index()]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lookup(&self, id: &str) -> Option<LocationIdx> {
        self.lookup.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LocationIdx, &str, Point)> + '_ {
        self.ids
            .iter()
            .zip(&self.points)
            .enumerate()
            .map(|(i, (id, p))| (LocationIdx(i as u32), id.as_str(), *p))
    }
}

/// Half-open study window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Self { start, end }
    }

    pub fn unbounded() -> Self {
        Self {
            start: Timestamp::MIN,
            end: Timestamp::MAX,
        }
    }

    #[inline]
    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self::unbounded()
    }
}

/// One dataset after ingestion: trajectories sorted by user id plus the
/// location table the records point into.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tag: DatasetTag,
    pub trajectories: Vec<Trajectory>,
    pub locations: LocationTable,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_records(&self) -> usize {
        self.trajectories.iter().map(Trajectory::activity).sum()
    }

    pub fn activities(&self) -> Vec<usize> {
        self.trajectories.iter().map(Trajectory::activity).collect()
    }

    pub fn user_ordinal(&self, user_id: &str) -> Option<usize> {
        self.trajectories
            .binary_search_by(|t| t.user_id.as_str().cmp(user_id))
            .ok()
    }

    /// Keeps only records inside `window`. Users left without records are
    /// retained with an empty trajectory so that ordinals stay stable.
    pub fn restrict(&self, window: TimeWindow) -> Dataset {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory {
                user_id: t.user_id.clone(),
                records: t
                    .records
                    .iter()
                    .copied()
                    .filter(|r| window.contains(r.timestamp))
                    .collect(),
            })
            .collect();
        Dataset {
            tag: self.tag,
            trajectories,
            locations: self.locations.clone(),
        }
    }
}
