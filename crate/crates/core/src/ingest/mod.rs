//! Datasets: items, user profiles and interaction events, plus the parsers
//! and preprocessing rules that produce them.

mod lastfm;
mod movielens;
mod preprocess;
mod region;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::StableHasher;

pub use lastfm::{parse_lastfm, SkipReport};
pub use movielens::{parse_movielens, MOVIELENS_AGE_BUCKETS, MOVIELENS_OCCUPATIONS};
pub use preprocess::{preprocess, PreprocessRules};
pub use region::{derive_region, Region};
pub use store::{read_store, write_store, StoreManifest};

pub const ATTR_GENDER: &str = "gender";
pub const ATTR_AGE: &str = "age";
pub const ATTR_OCCUPATION: &str = "occupation";
pub const ATTR_COUNTRY: &str = "country";
pub const ATTR_REGION: &str = "region";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("preprocessing removed every user")]
    EmptyAfterPreprocess,
    #[error("canonical store: {0}")]
    Store(String),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Movies,
    Music,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Movies => "movies",
            Domain::Music => "music",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "movies" | "movie" => Ok(Domain::Movies),
            "music" => Ok(Domain::Music),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: Option<i64>,
    pub weight: u32,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp: None,
            weight: 1,
        }
    }
}

/// An immutable, validated dataset.
///
/// Items and users are addressed either by their opaque string id or by
/// their dense position (`u32`) in [`Dataset::items`] / [`Dataset::users`];
/// the positional form is what case generation works with.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    domain: Domain,
    preprocessing: Vec<String>,
    items: Vec<Item>,
    users: Vec<UserProfile>,
    interactions: Vec<Interaction>,
    item_pos: HashMap<String, u32>,
    user_pos: HashMap<String, u32>,
    // per user: (item position, summed event weight), sorted by item position
    user_items: Vec<Vec<(u32, u64)>>,
    // per item: user positions that interacted with it, ascending
    item_users: Vec<Vec<u32>>,
    fingerprint: OnceLock<String>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.domain == other.domain
            && self.preprocessing == other.preprocessing
            && self.items == other.items
            && self.users == other.users
            && self.interactions == other.interactions
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        items: Vec<Item>,
        users: Vec<UserProfile>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        Self::with_preprocessing(name, domain, Vec::new(), items, users, interactions)
    }

    pub(crate) fn with_preprocessing(
        name: impl Into<String>,
        domain: Domain,
        preprocessing: Vec<String>,
        items: Vec<Item>,
        users: Vec<UserProfile>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let mut item_pos = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.title.trim().is_empty() {
                return Err(IngestError::Invalid(format!(
                    "item `{}` has an empty title",
                    item.item_id
                )));
            }
            if item_pos.insert(item.item_id.clone(), i as u32).is_some() {
                return Err(IngestError::Invalid(format!(
                    "duplicate item id `{}`",
                    item.item_id
                )));
            }
        }
        let mut user_pos = HashMap::with_capacity(users.len());
        for (u, user) in users.iter().enumerate() {
            if user_pos.insert(user.user_id.clone(), u as u32).is_some() {
                return Err(IngestError::Invalid(format!(
                    "duplicate user id `{}`",
                    user.user_id
                )));
            }
        }

        let mut per_user: Vec<HashMap<u32, u64>> = vec![HashMap::new(); users.len()];
        for ev in &interactions {
            if ev.weight == 0 {
                return Err(IngestError::Invalid(format!(
                    "interaction ({}, {}) has weight 0",
                    ev.user_id, ev.item_id
                )));
            }
            let u = *user_pos.get(&ev.user_id).ok_or_else(|| {
                IngestError::Invalid(format!("interaction references unknown user `{}`", ev.user_id))
            })?;
            let i = *item_pos.get(&ev.item_id).ok_or_else(|| {
                IngestError::Invalid(format!("interaction references unknown item `{}`", ev.item_id))
            })?;
            *per_user[u as usize].entry(i).or_insert(0) += u64::from(ev.weight);
        }

        let mut item_users = vec![Vec::new(); items.len()];
        let user_items: Vec<Vec<(u32, u64)>> = per_user
            .into_iter()
            .enumerate()
            .map(|(u, m)| {
                let mut v: Vec<(u32, u64)> = m.into_iter().collect();
                v.sort_unstable();
                for &(i, _) in &v {
                    item_users[i as usize].push(u as u32);
                }
                v
            })
            .collect();

        Ok(Dataset {
            name: name.into(),
            domain,
            preprocessing,
            items,
            users,
            interactions,
            item_pos,
            user_pos,
            user_items,
            item_users,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Preprocessing steps applied so far, in order.
    pub fn preprocessing(&self) -> &[String] {
        &self.preprocessing
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn item_position(&self, item_id: &str) -> Option<u32> {
        self.item_pos.get(item_id).copied()
    }

    pub fn user_position(&self, user_id: &str) -> Option<u32> {
        self.user_pos.get(user_id).copied()
    }

    /// `(item position, summed weight)` pairs for one user, sorted by item.
    pub fn user_item_weights(&self, user: u32) -> &[(u32, u64)] {
        &self.user_items[user as usize]
    }

    /// Users (by position) that interacted with an item, ascending.
    pub fn item_user_positions(&self, item: u32) -> &[u32] {
        &self.item_users[item as usize]
    }

    pub fn per_user_items(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.users
            .iter()
            .zip(&self.user_items)
            .map(|(user, items)| {
                let set = items
                    .iter()
                    .map(|&(i, _)| self.items[i as usize].item_id.clone())
                    .collect();
                (user.user_id.clone(), set)
            })
            .collect()
    }

    /// Total event weight per item over the whole dataset, by item position.
    pub fn item_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.items.len()];
        for items in &self.user_items {
            for &(i, w) in items {
                totals[i as usize] += w;
            }
        }
        totals
    }

    /// Total event weight per user, by user position.
    pub fn user_totals(&self) -> Vec<u64> {
        self.user_items
            .iter()
            .map(|v| v.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    pub fn attribute_names(&self) -> BTreeSet<&str> {
        self.users
            .iter()
            .flat_map(|u| u.attributes.keys().map(String::as_str))
            .collect()
    }

    pub fn attribute_values(&self, attribute: &str) -> BTreeSet<&str> {
        self.users
            .iter()
            .filter_map(|u| u.attributes.get(attribute).map(String::as_str))
            .collect()
    }

    /// Content hash over domain, preprocessing history and all records.
    /// The display name is deliberately excluded.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = StableHasher::new()
                .str(self.domain.as_str())
                .u64(self.preprocessing.len() as u64);
            for step in &self.preprocessing {
                h = h.str(step);
            }
            h = h.u64(self.items.len() as u64);
            for item in &self.items {
                h = h.str(&item.item_id).str(&item.title);
            }
            h = h.u64(self.users.len() as u64);
            for user in &self.users {
                h = h.str(&user.user_id).u64(user.attributes.len() as u64);
                for (k, v) in &user.attributes {
                    h = h.str(k).str(v);
                }
            }
            h = h.u64(self.interactions.len() as u64);
            for ev in &self.interactions {
                h = h
                    .str(&ev.user_id)
                    .str(&ev.item_id)
                    .u64(ev.timestamp.map_or(u64::MAX, |t| t as u64))
                    .u64(u64::from(ev.weight));
            }
            h.finish_hex()
        })
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Decodes file bytes as UTF-8, falling back to ISO-8859-1 (the MovieLens
/// encoding) when they are not valid UTF-8.
pub(crate) fn decode_text(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    }
}
