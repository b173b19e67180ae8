//! Synthetic populations with known behavior distributions.
//!
//! Three regimes: `weakest` (one global distribution), `average` (one
//! distribution per full proxy-value combination) and `strongest` (a
//! per-user mixture of the proxy distribution and an individual draw).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{ProxyKey, ProxySchema, ProxySetting};
use crate::hashing::derive_seed;
use crate::ingest::{Dataset, Domain, IngestError, Interaction, Item, UserProfile};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] IngestError),
    #[error("ground truth {path}: {message}")]
    Sidecar { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthCase {
    Weakest,
    Average,
    Strongest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub case: SynthCase,
    pub n_users: usize,
    pub n_items: usize,
    pub events_per_user: usize,
    /// Attribute name → number of categorical values.
    #[serde(default)]
    pub attributes: BTreeMap<String, usize>,
    pub alpha: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Weight of a uniform component mixed into every drawn distribution.
    #[serde(default)]
    pub uniform_mix: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_domain")]
    pub domain: Domain,
}

fn default_domain() -> Domain {
    Domain::Movies
}

impl SynthSpec {
    pub fn new(case: SynthCase, n_users: usize, n_items: usize, events_per_user: usize) -> Self {
        SynthSpec {
            case,
            n_users,
            n_items,
            events_per_user,
            attributes: BTreeMap::new(),
            alpha: 1.0,
            lambda: 0.0,
            uniform_mix: 0.0,
            seed: 0,
            domain: Domain::Movies,
        }
    }

    pub fn attribute(mut self, name: &str, values: usize) -> Self {
        self.attributes.insert(name.to_string(), values);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.events_per_user == 0 {
            return bad("n_users, n_items and events_per_user must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a positive finite number");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.uniform_mix) {
            return bad("uniform_mix must lie in [0, 1)");
        }
        if self.case != SynthCase::Strongest && self.lambda != 0.0 {
            return bad("lambda only applies to the strongest case");
        }
        if self.case != SynthCase::Weakest && self.attributes.is_empty() {
            return bad("average and strongest cases need at least one attribute");
        }
        if let Some((a, _)) = self.attributes.iter().find(|(_, &n)| n == 0) {
            return Err(SynthError::Invalid(format!("attribute {a} has no values")));
        }
        Ok(())
    }

    /// NoProxy, one setting per attribute, and All when there are several.
    pub fn schema(&self) -> ProxySchema {
        let mut settings = vec![ProxySetting::new("NoProxy", &[])];
        for a in self.attributes.keys() {
            settings.push(ProxySetting::new(a, &[a.as_str()]));
        }
        if self.attributes.len() > 1 {
            let all: Vec<&str> = self.attributes.keys().map(String::as_str).collect();
            settings.push(ProxySetting::new("All", &all));
        }
        ProxySchema { settings }
    }
}

pub fn attribute_value(attribute: &str, index: usize) -> String {
    format!("{attribute}-{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTruth {
    pub key: ProxyKey,
    pub n_users: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub probs: Vec<f64>,
}

/// Every distribution the generator sampled from, indexed like `item_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub case: SynthCase,
    pub item_ids: Vec<String>,
    /// Population mixture of the user distributions.
    pub global: Vec<f64>,
    /// Proxy-level distributions, one per observed full combination.
    pub per_proxy: Vec<ProxyTruth>,
    /// Individual distributions; present for the strongest case.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_user: Vec<UserTruth>,
}

impl GroundTruth {
    /// Proxy-level distribution of the users matching `key`: the user-count
    /// weighted mixture of every full combination consistent with it.
    pub fn group_distribution(&self, key: &ProxyKey) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.item_ids.len()];
        let mut total = 0usize;
        for p in &self.per_proxy {
            if key.bindings.iter().all(|(a, v)| p.key.get(a) == Some(v.as_str())) {
                for (s, &q) in acc.iter_mut().zip(&p.probs) {
                    *s += q * p.n_users as f64;
                }
                total += p.n_users;
            }
        }
        if total == 0 {
            return None;
        }
        acc.iter_mut().for_each(|s| *s /= total as f64);
        Some(acc)
    }

    pub fn item_index(&self) -> BTreeMap<&str, usize> {
        self.item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let text = serde_json::to_string(self).expect("ground truth serializes");
        fs::write(path, text).map_err(|e| SynthError::Sidecar {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<GroundTruth, SynthError> {
        let err = |message: String| SynthError::Sidecar {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Symmetric Dirichlet draw. Components are sampled as log-gammas
/// (`ln G(α+1) + ln U / α`) so very small α does not underflow to zeros.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("alpha is positive");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Builds the synthetic dataset and its ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth), SynthError> {
    spec.validate()?;
    let item_ids: Vec<String> = (0..spec.n_items).map(|i| format!("i{i}")).collect();
    let items: Vec<Item> = item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| Item {
            item_id: id.clone(),
            title: format!("Item {i}"),
        })
        .collect();

    let mut attr_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let users: Vec<UserProfile> = (0..spec.n_users)
        .map(|u| UserProfile {
            user_id: format!("u{u}"),
            attributes: spec
                .attributes
                .iter()
                .map(|(a, &n)| (a.clone(), attribute_value(a, attr_rng.random_range(0..n))))
                .collect(),
        })
        .collect();

    let mut keys: BTreeMap<ProxyKey, usize> = BTreeMap::new();
    let user_keys: Vec<ProxyKey> = users
        .iter()
        .map(|u| {
            let key = match spec.case {
                SynthCase::Weakest => ProxyKey::empty(),
                _ => ProxyKey {
                    bindings: u.attributes.clone(),
                },
            };
            *keys.entry(key.clone()).or_default() += 1;
            key
        })
        .collect();

    let n_items = spec.n_items as f64;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let d = sample_dirichlet(rng, spec.alpha, spec.n_items);
        if spec.uniform_mix == 0.0 {
            return d;
        }
        d.into_iter()
            .map(|p| (1.0 - spec.uniform_mix) * p + spec.uniform_mix / n_items)
            .collect()
    };
    // Proxy draws are keyed by the combination itself so they do not shift
    // when the observed population changes.
    let proxy_probs: BTreeMap<ProxyKey, Vec<f64>> = keys
        .keys()
        .map(|k| {
            let seed = derive_seed(spec.seed, &[2, crate::hashing::hash_str(&k.to_string())]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (k.clone(), draw(&mut rng))
        })
        .collect();

    let per_user: Vec<Vec<f64>> = user_keys
        .par_iter()
        .enumerate()
        .map(|(u, key)| {
            let base = &proxy_probs[key];
            if spec.case != SynthCase::Strongest || spec.lambda == 0.0 {
                return base.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3, u as u64]));
            let own = draw(&mut rng);
            base.iter()
                .zip(&own)
                .map(|(&p, &o)| (1.0 - spec.lambda) * p + spec.lambda * o)
                .collect()
        })
        .collect();

    let interactions: Vec<Interaction> = per_user
        .par_iter()
        .enumerate()
        .flat_map_iter(|(u, probs)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[4, u as u64]));
            let dist = WeightedIndex::new(probs).expect("valid distribution");
            let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
            for _ in 0..spec.events_per_user {
                *counts.entry(dist.sample(&mut rng)).or_default() += 1;
            }
            counts.into_iter().map(move |(i, w)| Interaction {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                timestamp: None,
                weight: w,
            })
        })
        .collect();

    let n = spec.n_users as f64;
    let mut global = vec![0.0; spec.n_items];
    for probs in &per_user {
        for (g, p) in global.iter_mut().zip(probs) {
            *g += p / n;
        }
    }
    let truth = GroundTruth {
        case: spec.case,
        item_ids,
        global,
        per_proxy: keys
            .into_iter()
            .map(|(key, n_users)| ProxyTruth {
                probs: proxy_probs[&key].clone(),
                key,
                n_users,
            })
            .collect(),
        per_user: if spec.case == SynthCase::Strongest {
            users
                .iter()
                .zip(per_user)
                .map(|(u, probs)| UserTruth {
                    user_id: u.user_id.clone(),
                    probs,
                })
                .collect()
        } else {
            Vec::new()
        },
    };
    let name = format!("synth-{}", serde_json::to_value(spec.case).expect("case").as_str().unwrap_or("case"));
    let dataset = Dataset::new(name, spec.domain, items, users, interactions)?;
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn rows_are_distributions() {
        let spec = SynthSpec {
            alpha: 0.05,
            lambda: 0.5,
            ..SynthSpec::new(SynthCase::Strongest, 60, 40, 30).attribute("gender", 2).attribute("age", 3)
        };
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(ds.users().len(), 60);
        let rows = std::iter::once(&truth.global)
            .chain(truth.per_proxy.iter().map(|p| &p.probs))
            .chain(truth.per_user.iter().map(|u| &u.probs));
        for r in rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
        assert_eq!(truth.per_proxy.iter().map(|p| p.n_users).sum::<usize>(), 60);
        let total: u64 = ds.interactions().iter().map(|i| i.weight as u64).sum();
        assert_eq!(total, 60 * 30);
    }

    #[test]
    fn tiny_alpha_does_not_underflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_dirichlet(&mut rng, 1e-3, 100);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|p| p.is_finite()));
        // nearly all mass sits on very few items
        assert!(d.iter().copied().fold(0.0, f64::max) > 0.5);
    }

    #[test]
    fn weakest_with_huge_alpha_is_uniform() {
        let spec = SynthSpec {
            alpha: 1e6,
            seed: 3,
            ..SynthSpec::new(SynthCase::Weakest, 1000, 20, 1000)
        };
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(truth.per_proxy.len(), 1);
        let totals = ds.item_totals();
        let n: u64 = totals.iter().sum();
        assert_eq!(n, 1_000_000);
        let freqs: Vec<f64> = totals.iter().map(|&t| t as f64 / n as f64).collect();
        assert!(tv(&freqs, &[0.05; 20]) <= 0.01);
    }

    #[test]
    fn average_groups_differ_and_converge() {
        let spec = SynthSpec {
            alpha: 0.5,
            seed: 9,
            ..SynthSpec::new(SynthCase::Average, 400, 10, 500).attribute("gender", 2)
        };
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(truth.per_proxy.len(), 2);
        assert!(tv(&truth.per_proxy[0].probs, &truth.per_proxy[1].probs) > 0.05);
        for p in &truth.per_proxy {
            let users = crate::cohort::group_user_positions(&ds, &p.key);
            let mut counts = [0u64; 10];
            for &u in &users {
                for &(i, w) in ds.user_item_weights(u) {
                    counts[i as usize] += w;
                }
            }
            let n: u64 = counts.iter().sum();
            // Pearson chi-square against the true distribution, 9 degrees of
            // freedom; 27.88 is the 0.999 quantile
            let chi2: f64 = counts
                .iter()
                .zip(&p.probs)
                .filter(|(_, &q)| q * n as f64 >= 5.0)
                .map(|(&c, &q)| {
                    let e = q * n as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi2 < 27.88, "chi2 {chi2}");
        }
    }

    #[test]
    fn strongest_without_individual_weight_equals_average() {
        let base = SynthSpec {
            alpha: 0.3,
            seed: 11,
            ..SynthSpec::new(SynthCase::Average, 50, 30, 20).attribute("gender", 2)
        };
        let strong = SynthSpec {
            case: SynthCase::Strongest,
            ..base.clone()
        };
        let (da, ta) = generate(&base).unwrap();
        let (ds, ts) = generate(&strong).unwrap();
        assert_eq!(da.interactions(), ds.interactions());
        assert_eq!(ta.per_proxy, ts.per_proxy);
        for u in &ts.per_user {
            let key = ProxyKey {
                bindings: ds.users()[ds.user_position(&u.user_id).unwrap() as usize].attributes.clone(),
            };
            let group = ts.group_distribution(&key).unwrap();
            assert!(tv(&u.probs, &group) < 1e-12);
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let spec = SynthSpec {
            alpha: 0.2,
            lambda: 0.8,
            seed: 5,
            ..SynthSpec::new(SynthCase::Strongest, 80, 25, 15).attribute("region", 4)
        };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(ta, tb);
        let other = SynthSpec { seed: 6, ..spec };
        assert_ne!(generate(&other).unwrap().0.fingerprint(), a.fingerprint());
    }

    #[test]
    fn uniform_mix_sets_a_floor() {
        let spec = SynthSpec {
            alpha: 0.001,
            uniform_mix: 0.1,
            ..SynthSpec::new(SynthCase::Average, 20, 50, 10).attribute("gender", 2)
        };
        let (_, truth) = generate(&spec).unwrap();
        for p in &truth.per_proxy {
            assert!(p.probs.iter().all(|&q| q >= 0.1 / 50.0 - 1e-15));
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let bad = SynthSpec { uniform_mix: 1.0, ..spec };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(SynthSpec::new(SynthCase::Average, 10, 10, 10).validate().is_err());
        let s = SynthSpec { lambda: 0.3, ..SynthSpec::new(SynthCase::Weakest, 10, 10, 10) };
        assert!(s.validate().is_err());
        let s = SynthSpec { alpha: 0.0, ..SynthSpec::new(SynthCase::Weakest, 10, 10, 10) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let spec = SynthSpec { lambda: 0.4, ..SynthSpec::new(SynthCase::Strongest, 10, 5, 5).attribute("gender", 2) };
        let (_, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.json");
        truth.write(&p).unwrap();
        assert_eq!(GroundTruth::read(&p).unwrap(), truth);
    }

    #[test]
    fn schema_covers_attributes() {
        let s = SynthSpec::new(SynthCase::Average, 1, 1, 1).attribute("gender", 2).attribute("age", 3).schema();
        let names: Vec<&str> = s.settings.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["NoProxy", "age", "gender", "All"]);
    }
}
