//! Proxy keys (attribute bindings that define a user group) and the proxy
//! settings of an experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, Domain, ATTR_AGE, ATTR_COUNTRY, ATTR_GENDER, ATTR_OCCUPATION, ATTR_REGION};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate proxy setting `{0}`")]
    DuplicateSetting(String),
    #[error("setting `{setting}` lists attribute `{attribute}` twice")]
    DuplicateAttribute { setting: String, attribute: String },
    #[error("setting `{setting}` uses attribute `{attribute}` absent from the dataset")]
    UnknownAttribute { setting: String, attribute: String },
    #[error("no proxy setting named `{0}`")]
    UnknownSetting(String),
}

/// Attribute bindings a user must match. The empty key matches everyone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProxyKey {
    pub bindings: BTreeMap<String, String>,
}

impl ProxyKey {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        ProxyKey {
            bindings: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, attribute: &str) -> Option<&str> {
        self.bindings.get(attribute).map(String::as_str)
    }

    pub fn matches(&self, attributes: &BTreeMap<String, String>) -> bool {
        self.bindings
            .iter()
            .all(|(k, v)| attributes.get(k) == Some(v))
    }

    /// Returns a copy with one more binding.
    pub fn with(&self, attribute: impl Into<String>, value: impl Into<String>) -> Self {
        let mut key = self.clone();
        key.bindings.insert(attribute.into(), value.into());
        key
    }
}

/// `age=25-34;gender=F`, or `none` for the empty key.
impl fmt::Display for ProxyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bindings.is_empty() {
            return f.write_str("none");
        }
        let mut first = true;
        for (k, v) in &self.bindings {
            if !first {
                f.write_str(";")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySetting {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl ProxySetting {
    pub fn new(name: &str, attributes: &[&str]) -> Self {
        ProxySetting {
            name: name.to_string(),
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySchema {
    pub settings: Vec<ProxySetting>,
}

impl ProxySchema {
    /// NoProxy, Age, Gender, Occupation, All.
    pub fn movies() -> Self {
        ProxySchema {
            settings: vec![
                ProxySetting::new("NoProxy", &[]),
                ProxySetting::new("Age", &[ATTR_AGE]),
                ProxySetting::new("Gender", &[ATTR_GENDER]),
                ProxySetting::new("Occupation", &[ATTR_OCCUPATION]),
                ProxySetting::new("All", &[ATTR_AGE, ATTR_GENDER, ATTR_OCCUPATION]),
            ],
        }
    }

    /// NoProxy, Country, Continent, Gender, Gen&Conti.
    pub fn music() -> Self {
        ProxySchema {
            settings: vec![
                ProxySetting::new("NoProxy", &[]),
                ProxySetting::new("Country", &[ATTR_COUNTRY]),
                ProxySetting::new("Continent", &[ATTR_REGION]),
                ProxySetting::new("Gender", &[ATTR_GENDER]),
                ProxySetting::new("Gen&Conti", &[ATTR_GENDER, ATTR_REGION]),
            ],
        }
    }

    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Movies => Self::movies(),
            Domain::Music => Self::music(),
        }
    }

    pub fn setting(&self, name: &str) -> Result<&ProxySetting, SchemaError> {
        self.settings
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| SchemaError::UnknownSetting(name.to_string()))
    }

    /// Checks name uniqueness and, when a dataset is given, that every
    /// attribute occurs in it.
    pub fn validate(&self, dataset: Option<&Dataset>) -> Result<(), SchemaError> {
        let mut names = BTreeSet::new();
        let known = dataset.map(|d| d.attribute_names());
        for s in &self.settings {
            if !names.insert(s.name.as_str()) {
                return Err(SchemaError::DuplicateSetting(s.name.clone()));
            }
            let mut seen = BTreeSet::new();
            for a in &s.attributes {
                if !seen.insert(a) {
                    return Err(SchemaError::DuplicateAttribute {
                        setting: s.name.clone(),
                        attribute: a.clone(),
                    });
                }
                if let Some(known) = &known {
                    if !known.contains(a.as_str()) {
                        return Err(SchemaError::UnknownAttribute {
                            setting: s.name.clone(),
                            attribute: a.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Positions of the users matching `key`, ascending.
pub fn group_user_positions(dataset: &Dataset, key: &ProxyKey) -> Vec<u32> {
    dataset
        .users()
        .iter()
        .enumerate()
        .filter(|(_, u)| key.matches(&u.attributes))
        .map(|(i, _)| i as u32)
        .collect()
}

pub fn group_users(dataset: &Dataset, key: &ProxyKey) -> BTreeSet<String> {
    dataset
        .users()
        .iter()
        .filter(|u| key.matches(&u.attributes))
        .map(|u| u.user_id.clone())
        .collect()
}

/// Concrete keys for one setting: every attribute-value combination held
/// by at least one user, in lexicographic order.
pub fn setting_keys(dataset: &Dataset, setting: &ProxySetting) -> Vec<ProxyKey> {
    if setting.attributes.is_empty() {
        return vec![ProxyKey::empty()];
    }
    let combos: BTreeSet<ProxyKey> = dataset
        .users()
        .iter()
        .filter_map(|u| {
            let pairs: Option<Vec<(String, String)>> = setting
                .attributes
                .iter()
                .map(|a| u.attributes.get(a).map(|v| (a.clone(), v.clone())))
                .collect();
            pairs.map(ProxyKey::from_pairs)
        })
        .collect();
    combos.into_iter().collect()
}

pub fn enumerate_settings(schema: &ProxySchema, dataset: &Dataset) -> Vec<(String, Vec<ProxyKey>)> {
    schema
        .settings
        .iter()
        .map(|s| (s.name.clone(), setting_keys(dataset, s)))
        .collect()
}
