//! Last.fm-1K: the tab-separated play log and `userid-profile.tsv`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::DateTime;

use super::{
    decode_text, Dataset, Domain, IngestError, Interaction, Item, Result, UserProfile, ATTR_AGE,
    ATTR_COUNTRY, ATTR_GENDER,
};

const LOG_FILE: &str = "userid-timestamp-artid-artname-traid-traname.tsv";
const PROFILE_FILE: &str = "userid-profile.tsv";

/// Rows dropped during parsing, with their 1-based line numbers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub file: String,
    pub entries: Vec<(usize, String)>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `file:line<TAB>reason` line per skipped row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (line, reason) in &self.entries {
            let _ = writeln!(out, "{}:{}\t{}", self.file, line, reason);
        }
        out
    }
}

fn locate(dir: &Path, exact: &str, want_profile: bool) -> Result<PathBuf> {
    let direct = dir.join(exact);
    if direct.is_file() {
        return Ok(direct);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".tsv") && name.contains("profile") == want_profile
        })
        .collect();
    found.sort();
    found.into_iter().next().ok_or(IngestError::MissingFile(direct))
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses a Last.fm-1K directory.
///
/// Every play event becomes one interaction of weight 1 (repeat plays stay
/// separate). Items are `(artist, track)` pairs titled `"Artist - Track"`,
/// with ids assigned in first-seen order. Events with an empty track name are
/// dropped and listed in the returned [`SkipReport`].
pub fn parse_lastfm(dir: impl AsRef<Path>) -> Result<(Dataset, SkipReport)> {
    let dir = dir.as_ref();
    let profile_path = locate(dir, PROFILE_FILE, true)?;
    let log_path = locate(dir, LOG_FILE, false)?;
    let profile_label = file_label(&profile_path);
    let log_label = file_label(&log_path);

    let profile_txt = decode_text(
        std::fs::read(&profile_path).map_err(|e| IngestError::io(&profile_path, e))?,
    );
    let mut users = Vec::new();
    let mut user_seen: HashSet<String> = HashSet::new();
    for (i, line) in profile_txt.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            return Err(malformed(
                &profile_label,
                i + 1,
                format!("expected at least 4 tab-separated fields, found {}", f.len()),
            ));
        }
        let mut attributes = BTreeMap::new();
        match f[1].trim() {
            "" => {}
            "m" | "M" => {
                attributes.insert(ATTR_GENDER.to_string(), "M".to_string());
            }
            "f" | "F" => {
                attributes.insert(ATTR_GENDER.to_string(), "F".to_string());
            }
            other => {
                return Err(malformed(&profile_label, i + 1, format!("unknown gender `{other}`")))
            }
        }
        if !f[2].trim().is_empty() {
            attributes.insert(ATTR_AGE.to_string(), f[2].trim().to_string());
        }
        if !f[3].trim().is_empty() {
            attributes.insert(ATTR_COUNTRY.to_string(), f[3].trim().to_string());
        }
        let user_id = f[0].trim().to_string();
        user_seen.insert(user_id.clone());
        users.push(UserProfile {
            user_id,
            attributes,
        });
    }

    let log_txt = decode_text(std::fs::read(&log_path).map_err(|e| IngestError::io(&log_path, e))?);
    let mut skipped = SkipReport {
        file: log_label.clone(),
        entries: Vec::new(),
    };
    let mut items = Vec::new();
    let mut item_ids: HashMap<(String, String), String> = HashMap::new();
    let mut interactions = Vec::new();
    for (i, line) in log_txt.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(malformed(
                &log_label,
                i + 1,
                format!("expected 6 tab-separated fields, found {}", f.len()),
            ));
        }
        let track = f[5].trim();
        if track.is_empty() {
            skipped.entries.push((i + 1, "empty track name".to_string()));
            continue;
        }
        let artist = f[3].trim();
        let ts = DateTime::parse_from_rfc3339(f[1].trim())
            .map_err(|e| malformed(&log_label, i + 1, format!("bad timestamp `{}`: {e}", f[1])))?
            .timestamp();
        let key = (artist.to_string(), track.to_string());
        let item_id = match item_ids.get(&key) {
            Some(id) => id.clone(),
            None => {
                let id = format!("t{}", items.len() + 1);
                let title = if artist.is_empty() {
                    track.to_string()
                } else {
                    format!("{artist} - {track}")
                };
                items.push(Item {
                    item_id: id.clone(),
                    title,
                });
                item_ids.insert(key, id.clone());
                id
            }
        };
        let user_id = f[0].trim();
        if user_seen.insert(user_id.to_string()) {
            // listener absent from the profile file: keep, without attributes
            users.push(UserProfile {
                user_id: user_id.to_string(),
                attributes: BTreeMap::new(),
            });
        }
        interactions.push(Interaction {
            user_id: user_id.to_string(),
            item_id,
            timestamp: Some(ts),
            weight: 1,
        });
    }

    let dataset = Dataset::new("lastfm-1k", Domain::Music, items, users, interactions)?;
    Ok((dataset, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const PROFILE: &str = "#id\tgender\tage\tcountry\tregistered\n\
user_000001\tm\t\tJapan\tAug 13, 2006\n\
user_000002\tf\t25\tGermany\tFeb 24, 2006\n";

    fn setup(log: &str) -> tempfile::TempDir {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(PROFILE_FILE), PROFILE).unwrap();
        fs::write(tmp.path().join(LOG_FILE), log).unwrap();
        tmp
    }

    #[test]
    fn singleton_log() {
        let tmp = setup("user_000001\t2009-05-04T23:08:57Z\tf1b1\tDeep Dish\t\tFuck Me Im Famous\n");
        let (d, skipped) = parse_lastfm(tmp.path()).unwrap();
        assert_eq!(d.interactions().len(), 1);
        assert_eq!(d.items().len(), 1);
        assert_eq!(d.items()[0].title, "Deep Dish - Fuck Me Im Famous");
        assert!(skipped.is_empty());
        assert_eq!(d.users().len(), 2);
        assert_eq!(d.users()[0].attributes["gender"], "M");
        assert!(!d.users()[0].attributes.contains_key("age"));
        assert_eq!(d.users()[1].attributes["country"], "Germany");
        assert_eq!(d.interactions()[0].timestamp, Some(1241478537));
    }

    #[test]
    fn repeat_plays_are_separate_interactions() {
        let row = "user_000002\t2009-05-04T23:08:57Z\ta\tMuse\tt\tHysteria\n";
        let tmp = setup(&format!("{row}{row}"));
        let (d, _) = parse_lastfm(tmp.path()).unwrap();
        assert_eq!(d.interactions().len(), 2);
        assert_eq!(d.per_user_items()["user_000002"].len(), 1);
        assert_eq!(d.user_item_weights(1), &[(0, 2)]);
    }

    #[test]
    fn empty_track_rows_are_skipped_and_reported() {
        let tmp = setup(
            "user_000001\t2009-05-04T23:08:57Z\ta\tMuse\t\t\n\
             user_000001\t2009-05-04T23:09:57Z\ta\tMuse\t\tHysteria\n",
        );
        let (d, skipped) = parse_lastfm(tmp.path()).unwrap();
        assert_eq!(d.interactions().len(), 1);
        assert_eq!(skipped.entries, vec![(1, "empty track name".to_string())]);
        assert!(skipped.to_text().starts_with(LOG_FILE));
    }

    #[test]
    fn malformed_row_aborts_with_line() {
        let tmp = setup("user_000001\t2009-05-04T23:08:57Z\tonly-three\n");
        match parse_lastfm(tmp.path()) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_profile_is_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(LOG_FILE), "").unwrap();
        assert!(matches!(parse_lastfm(tmp.path()), Err(IngestError::MissingFile(_))));
    }
}
