//! Canonical on-disk store: `items.tsv`, `users.tsv`, `interactions.tsv`
//! (UTF-8, header row, tab-delimited) plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, IngestError, Interaction, Item, Result, UserProfile};

const FORMAT: &str = "proxyscope-store/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format: String,
    pub name: String,
    pub domain: Domain,
    pub preprocessing: Vec<String>,
    pub fingerprint: String,
    pub items: usize,
    pub users: usize,
    pub interactions: usize,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> IngestError {
    IngestError::Store(format!("{}: {e}", path.display()))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(BufWriter::new(file)))
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)
        .map_err(|e| store_err(path, e))
}

pub fn write_store(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<StoreManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;

    let path = dir.join("items.tsv");
    let mut w = tsv_writer(&path)?;
    w.write_record(["item_id", "title"]).map_err(|e| store_err(&path, e))?;
    for item in dataset.items() {
        w.write_record([&item.item_id, &item.title])
            .map_err(|e| store_err(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(&path, e))?;

    let path = dir.join("users.tsv");
    let attrs: Vec<&str> = dataset.attribute_names().into_iter().collect();
    let mut w = tsv_writer(&path)?;
    let mut header = vec!["user_id"];
    header.extend(&attrs);
    w.write_record(&header).map_err(|e| store_err(&path, e))?;
    for user in dataset.users() {
        let mut row = vec![user.user_id.as_str()];
        row.extend(
            attrs
                .iter()
                .map(|a| user.attributes.get(*a).map_or("", String::as_str)),
        );
        w.write_record(&row).map_err(|e| store_err(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(&path, e))?;

    let path = dir.join("interactions.tsv");
    let mut w = tsv_writer(&path)?;
    w.write_record(["user_id", "item_id", "timestamp", "weight"])
        .map_err(|e| store_err(&path, e))?;
    for ev in dataset.interactions() {
        let ts = ev.timestamp.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([&ev.user_id, &ev.item_id, &ts, &ev.weight.to_string()])
            .map_err(|e| store_err(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(&path, e))?;

    let manifest = StoreManifest {
        format: FORMAT.to_string(),
        name: dataset.name().to_string(),
        domain: dataset.domain(),
        preprocessing: dataset.preprocessing().to_vec(),
        fingerprint: dataset.fingerprint().to_string(),
        items: dataset.items().len(),
        users: dataset.users().len(),
        interactions: dataset.interactions().len(),
    };
    let path = dir.join("manifest.json");
    let mut f = File::create(&path).map_err(|e| IngestError::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| store_err(&path, e))?;
    f.write_all(b"\n").map_err(|e| IngestError::io(&path, e))?;
    Ok(manifest)
}

/// Loads a store and checks its content against the manifest fingerprint.
pub fn read_store(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(IngestError::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
    let manifest: StoreManifest = serde_json::from_str(&text).map_err(|e| store_err(&path, e))?;
    if manifest.format != FORMAT {
        return Err(store_err(&path, format!("unsupported format `{}`", manifest.format)));
    }

    let path = dir.join("items.tsv");
    let mut items = Vec::with_capacity(manifest.items);
    for rec in tsv_reader(&path)?.records() {
        let rec = rec.map_err(|e| store_err(&path, e))?;
        if rec.len() != 2 {
            return Err(store_err(&path, format!("row {:?} has {} fields", rec.position(), rec.len())));
        }
        items.push(Item {
            item_id: rec[0].to_string(),
            title: rec[1].to_string(),
        });
    }

    let path = dir.join("users.tsv");
    let mut rdr = tsv_reader(&path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| store_err(&path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("user_id") {
        return Err(store_err(&path, "first column must be user_id"));
    }
    let mut users = Vec::with_capacity(manifest.users);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| store_err(&path, e))?;
        let attributes: BTreeMap<String, String> = header[1..]
            .iter()
            .zip(rec.iter().skip(1))
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect();
        users.push(UserProfile {
            user_id: rec[0].to_string(),
            attributes,
        });
    }

    let path = dir.join("interactions.tsv");
    let mut interactions = Vec::with_capacity(manifest.interactions);
    for rec in tsv_reader(&path)?.records() {
        let rec = rec.map_err(|e| store_err(&path, e))?;
        if rec.len() != 4 {
            return Err(store_err(&path, format!("row {:?} has {} fields", rec.position(), rec.len())));
        }
        let timestamp = match &rec[2] {
            "" => None,
            t => Some(t.parse().map_err(|e| store_err(&path, e))?),
        };
        interactions.push(Interaction {
            user_id: rec[0].to_string(),
            item_id: rec[1].to_string(),
            timestamp,
            weight: rec[3].parse().map_err(|e| store_err(&path, e))?,
        });
    }

    let dataset = Dataset::with_preprocessing(
        manifest.name.clone(),
        manifest.domain,
        manifest.preprocessing.clone(),
        items,
        users,
        interactions,
    )?;
    if dataset.fingerprint() != manifest.fingerprint {
        return Err(IngestError::Store(format!(
            "{}: content fingerprint {} does not match manifest {}",
            dir.display(),
            dataset.fingerprint(),
            manifest.fingerprint
        )));
    }
    Ok(dataset)
}


#[cfg(test)]
mod tests {
    use super::super::fixtures::user;
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        Dataset::new(
            "sample",
            Domain::Music,
            vec![
                Item {
                    item_id: "t1".into(),
                    title: "Tab\there \"quoted\" - ok".into(),
                },
                Item {
                    item_id: "t2".into(),
                    title: "Line\nbreak".into(),
                },
            ],
            vec![user("u1", &[("gender", "F")]), user("u2", &[("country", "Peru")])],
            vec![
                Interaction {
                    user_id: "u1".into(),
                    item_id: "t2".into(),
                    timestamp: Some(-5),
                    weight: 3,
                },
                Interaction::new("u2", "t1"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let d = sample();
        let manifest = write_store(&d, tmp.path()).unwrap();
        assert_eq!(manifest.fingerprint, d.fingerprint());
        let back = read_store(tmp.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.fingerprint(), d.fingerprint());
    }

    #[test]
    fn tampered_store_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_store(&sample(), tmp.path()).unwrap();
        let p = tmp.path().join("interactions.tsv");
        let text = std::fs::read_to_string(&p).unwrap().replace("\t3\n", "\t4\n");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_store(tmp.path()), Err(IngestError::Store(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn arbitrary_titles_and_attributes_round_trip(
            titles in proptest::collection::vec("[^\u{0}]{1,12}", 1..6),
            attrs in proptest::collection::vec(("[a-z]{1,4}", "[A-Za-z \t,\"]{1,6}"), 0..4),
            ts in proptest::option::of(any::<i64>()),
        ) {
            let items: Vec<Item> = titles
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.trim().is_empty())
                .map(|(i, t)| Item { item_id: format!("i{i}"), title: t.clone() })
                .collect();
            prop_assume!(!items.is_empty());
            let profile = UserProfile {
                user_id: "u".into(),
                attributes: attrs.into_iter().collect(),
            };
            let ev = Interaction { user_id: "u".into(), item_id: items[0].item_id.clone(), timestamp: ts, weight: 2 };
            let d = Dataset::new("p", Domain::Movies, items, vec![profile], vec![ev]).unwrap();
            let tmp = tempfile::tempdir().unwrap();
            write_store(&d, tmp.path()).unwrap();
            prop_assert_eq!(read_store(tmp.path()).unwrap(), d);
        }
    }
}
