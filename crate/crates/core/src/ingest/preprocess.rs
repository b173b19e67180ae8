use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    derive_region, Dataset, IngestError, Region, Result, UserProfile, ATTR_AGE, ATTR_COUNTRY,
    ATTR_GENDER, ATTR_OCCUPATION, ATTR_REGION,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSizeRule {
    pub attributes: Vec<String>,
    pub min_users: usize,
}

/// User-level filters. An all-default value is the identity.
///
/// Steps run in a fixed order: region derivation, value drops, region
/// filter, activity filter, then a single group-size pass over whoever is
/// left. Users lacking any attribute a step needs are removed by that step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessRules {
    pub drop_values: Vec<AttributeValue>,
    pub min_group_size: Option<GroupSizeRule>,
    pub derive_region: bool,
    pub allowed_regions: Option<Vec<String>>,
    pub min_interactions: Option<u64>,
}

impl PreprocessRules {
    pub fn none() -> Self {
        Self::default()
    }

    /// Drop occupation `other`; keep (age, gender, occupation) groups of at least 30 users.
    pub fn movies() -> Self {
        PreprocessRules {
            drop_values: vec![AttributeValue {
                attribute: ATTR_OCCUPATION.to_string(),
                value: "other".to_string(),
            }],
            min_group_size: Some(GroupSizeRule {
                attributes: vec![ATTR_AGE.into(), ATTR_GENDER.into(), ATTR_OCCUPATION.into()],
                min_users: 30,
            }),
            ..Self::default()
        }
    }

    /// Derive region; keep the four retained regions and users with at least 5,000 events.
    pub fn music() -> Self {
        PreprocessRules {
            derive_region: true,
            allowed_regions: Some(Region::RETAINED.iter().map(|r| r.as_str().to_string()).collect()),
            min_interactions: Some(5_000),
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Human-readable summary, recorded in the dataset's preprocessing history.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.derive_region {
            parts.push("derive region".to_string());
        }
        for dv in &self.drop_values {
            parts.push(format!("drop {}={}", dv.attribute, dv.value));
        }
        if let Some(allowed) = &self.allowed_regions {
            parts.push(format!("region in [{}]", allowed.join(", ")));
        }
        if let Some(n) = self.min_interactions {
            parts.push(format!("events >= {n}"));
        }
        if let Some(g) = &self.min_group_size {
            parts.push(format!("group({}) >= {}", g.attributes.join(","), g.min_users));
        }
        parts.join("; ")
    }
}

/// Applies `rules` and returns the filtered dataset. Interactions of removed
/// users go with them; the item inventory is kept whole.
pub fn preprocess(dataset: &Dataset, rules: &PreprocessRules) -> Result<Dataset> {
    if rules.is_identity() {
        return Ok(dataset.clone());
    }

    let mut users: Vec<UserProfile> = dataset.users().to_vec();
    if rules.derive_region {
        for u in &mut users {
            let region = u
                .attributes
                .get(ATTR_COUNTRY)
                .map(|c| derive_region(c))
                .unwrap_or(Region::Other);
            u.attributes
                .insert(ATTR_REGION.to_string(), region.as_str().to_string());
        }
    }

    let totals = dataset.user_totals();
    let mut keep: Vec<bool> = users
        .iter()
        .enumerate()
        .map(|(pos, u)| {
            let dropped = rules
                .drop_values
                .iter()
                .any(|dv| u.attributes.get(&dv.attribute) == Some(&dv.value));
            let region_ok = rules.allowed_regions.as_ref().is_none_or(|allowed| {
                u.attributes
                    .get(ATTR_REGION)
                    .is_some_and(|r| allowed.iter().any(|a| a == r))
            });
            let active = rules.min_interactions.is_none_or(|n| totals[pos] >= n);
            !dropped && region_ok && active
        })
        .collect();

    if let Some(rule) = &rules.min_group_size {
        let group_of = |u: &UserProfile| -> Option<Vec<String>> {
            rule.attributes
                .iter()
                .map(|a| u.attributes.get(a).cloned())
                .collect()
        };
        let mut sizes: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (u, _) in users.iter().zip(&keep).filter(|(_, k)| **k) {
            if let Some(g) = group_of(u) {
                *sizes.entry(g).or_default() += 1;
            }
        }
        for (u, k) in users.iter().zip(keep.iter_mut()) {
            if *k {
                *k = group_of(u).is_some_and(|g| sizes[&g] >= rule.min_users);
            }
        }
    }

    let survivors: Vec<UserProfile> = users
        .into_iter()
        .zip(&keep)
        .filter_map(|(u, k)| k.then_some(u))
        .collect();
    if survivors.is_empty() {
        return Err(IngestError::EmptyAfterPreprocess);
    }
    let alive: HashSet<&str> = survivors.iter().map(|u| u.user_id.as_str()).collect();
    let interactions = dataset
        .interactions()
        .iter()
        .filter(|ev| alive.contains(ev.user_id.as_str()))
        .cloned()
        .collect();

    let mut history = dataset.preprocessing().to_vec();
    let step = rules.describe();
    if !history.contains(&step) {
        history.push(step);
    }
    Dataset::with_preprocessing(
        dataset.name(),
        dataset.domain(),
        history,
        dataset.items().to_vec(),
        survivors,
        interactions,
    )
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{item, user};
    use super::super::{Domain, Interaction};
    use super::*;

    fn movie_users(group: (&str, &str, &str), n: usize, prefix: &str) -> Vec<UserProfile> {
        (0..n)
            .map(|i| {
                user(
                    &format!("{prefix}{i}"),
                    &[("age", group.0), ("gender", group.1), ("occupation", group.2)],
                )
            })
            .collect()
    }

    fn movies_fixture() -> Dataset {
        let mut users = movie_users(("25-34", "F", "writer"), 30, "a");
        users.extend(movie_users(("18-24", "M", "artist"), 29, "b"));
        users.extend(movie_users(("35-44", "M", "other"), 40, "c"));
        let interactions = users
            .iter()
            .map(|u| Interaction::new(u.user_id.clone(), "m1"))
            .collect();
        Dataset::new(
            "fx",
            Domain::Movies,
            vec![item("m1"), item("m2")],
            users,
            interactions,
        )
        .unwrap()
    }

    #[test]
    fn movie_groups_below_30_are_removed() {
        let d = preprocess(&movies_fixture(), &PreprocessRules::movies()).unwrap();
        assert_eq!(d.users().len(), 30);
        assert!(d.users().iter().all(|u| u.user_id.starts_with('a')));
        assert_eq!(d.interactions().len(), 30);
        // inventory untouched, including the never-played m2
        assert_eq!(d.items().len(), 2);
    }

    #[test]
    fn music_activity_threshold_is_inclusive() {
        let users = vec![
            user("u4999", &[("country", "Germany")]),
            user("u5000", &[("country", "Germany")]),
            user("ujp", &[("country", "Japan")]),
        ];
        let mut interactions = Vec::new();
        for (u, n) in [("u4999", 4_999), ("u5000", 5_000), ("ujp", 6_000)] {
            interactions.extend((0..n).map(|_| Interaction::new(u, "t1")));
        }
        let d = Dataset::new("fx", Domain::Music, vec![item("t1")], users, interactions).unwrap();
        let out = preprocess(&d, &PreprocessRules::music()).unwrap();
        let ids: Vec<&str> = out.users().iter().map(|u| u.user_id.as_str()).collect();
        assert_eq!(ids, vec!["u5000"]);
        assert_eq!(out.users()[0].attributes["region"], "Europe");
        assert_eq!(out.interactions().len(), 5_000);
    }

    #[test]
    fn identity_rules_return_identical_dataset() {
        let d = movies_fixture();
        assert_eq!(preprocess(&d, &PreprocessRules::none()).unwrap(), d);
    }

    #[test]
    fn idempotent() {
        let once = preprocess(&movies_fixture(), &PreprocessRules::movies()).unwrap();
        let twice = preprocess(&once, &PreprocessRules::movies()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_result_is_an_error() {
        let mut rules = PreprocessRules::movies();
        rules.min_group_size.as_mut().unwrap().min_users = 1_000;
        assert!(matches!(
            preprocess(&movies_fixture(), &rules),
            Err(IngestError::EmptyAfterPreprocess)
        ));
    }

    #[test]
    fn survivors_form_groups_of_at_least_30() {
        let d = preprocess(&movies_fixture(), &PreprocessRules::movies()).unwrap();
        let mut sizes: BTreeMap<Vec<&String>, usize> = BTreeMap::new();
        for u in d.users() {
            *sizes.entry(u.attributes.values().collect()).or_default() += 1;
        }
        assert!(sizes.values().all(|&n| n >= 30));
    }
}
