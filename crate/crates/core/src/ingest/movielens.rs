//! MovieLens-1M (`::`-delimited `users.dat`, `movies.dat`, `ratings.dat`).

use std::collections::BTreeMap;
use std::path::Path;

use super::{
    decode_text, Dataset, Domain, IngestError, Interaction, Item, Result, UserProfile, ATTR_AGE,
    ATTR_GENDER, ATTR_OCCUPATION,
};

/// Age codes of `users.dat` and their bucket labels.
pub const MOVIELENS_AGE_BUCKETS: [(u32, &str); 7] = [
    (1, "Under 18"),
    (18, "18-24"),
    (25, "25-34"),
    (35, "35-44"),
    (45, "45-49"),
    (50, "50-55"),
    (56, "56+"),
];

/// Occupation codes 0..=20. Code 0 ("other" or not specified) is labelled `other`.
pub const MOVIELENS_OCCUPATIONS: [&str; 21] = [
    "other",
    "academic/educator",
    "artist",
    "clerical/admin",
    "college/grad student",
    "customer service",
    "doctor/health care",
    "executive/managerial",
    "farmer",
    "homemaker",
    "K-12 student",
    "lawyer",
    "programmer",
    "retired",
    "sales/marketing",
    "scientist",
    "self-employed",
    "technician/engineer",
    "tradesman/craftsman",
    "unemployed",
    "writer",
];

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(IngestError::MissingFile(path));
    }
    let bytes = std::fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
    Ok(decode_text(bytes))
}

fn rows<'a>(
    text: &'a str,
    file: &'static str,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(move |(i, line)| {
            let fields: Vec<&str> = line.trim_end_matches('\r').split("::").collect();
            if fields.len() != arity {
                return Err(malformed(
                    file,
                    i + 1,
                    format!("expected {arity} `::`-separated fields, found {}", fields.len()),
                ));
            }
            Ok((i + 1, fields))
        })
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, file: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| malformed(file, line, format!("{what} `{s}` is not a number")))
}

pub fn age_label(code: u32) -> Option<&'static str> {
    MOVIELENS_AGE_BUCKETS
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, label)| *label)
}

/// Parses a MovieLens-1M directory. Ratings become unary interactions of
/// weight 1; the rating value itself is discarded.
pub fn parse_movielens(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let users_txt = read(dir, "users.dat")?;
    let movies_txt = read(dir, "movies.dat")?;
    let ratings_txt = read(dir, "ratings.dat")?;

    let mut users = Vec::new();
    for row in rows(&users_txt, "users.dat", 5) {
        let (line, f) = row?;
        let gender = match f[1].trim() {
            g @ ("M" | "F") => g,
            other => return Err(malformed("users.dat", line, format!("unknown gender `{other}`"))),
        };
        let age_code: u32 = parse_num(f[2], "users.dat", line, "age")?;
        let age = age_label(age_code)
            .ok_or_else(|| malformed("users.dat", line, format!("unknown age code {age_code}")))?;
        let occ_code: usize = parse_num(f[3], "users.dat", line, "occupation")?;
        let occupation = MOVIELENS_OCCUPATIONS.get(occ_code).ok_or_else(|| {
            malformed("users.dat", line, format!("unknown occupation code {occ_code}"))
        })?;
        let mut attributes = BTreeMap::new();
        attributes.insert(ATTR_GENDER.to_string(), gender.to_string());
        attributes.insert(ATTR_AGE.to_string(), age.to_string());
        attributes.insert(ATTR_OCCUPATION.to_string(), occupation.to_string());
        users.push(UserProfile {
            user_id: f[0].trim().to_string(),
            attributes,
        });
    }

    let mut items = Vec::new();
    for row in rows(&movies_txt, "movies.dat", 3) {
        let (line, f) = row?;
        let title = f[1].trim();
        if title.is_empty() {
            return Err(malformed("movies.dat", line, "empty title"));
        }
        items.push(Item {
            item_id: f[0].trim().to_string(),
            title: title.to_string(),
        });
    }

    let mut interactions = Vec::with_capacity(ratings_txt.len() / 24);
    for row in rows(&ratings_txt, "ratings.dat", 4) {
        let (line, f) = row?;
        let _rating: u8 = parse_num(f[2], "ratings.dat", line, "rating")?;
        let ts: i64 = parse_num(f[3], "ratings.dat", line, "timestamp")?;
        interactions.push(Interaction {
            user_id: f[0].trim().to_string(),
            item_id: f[1].trim().to_string(),
            timestamp: Some(ts),
            weight: 1,
        });
    }

    Dataset::new("movielens-1m", Domain::Movies, items, users, interactions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, users: &str, movies: &str, ratings: &str) {
        fs::write(dir.join("users.dat"), users).unwrap();
        fs::write(dir.join("movies.dat"), movies).unwrap();
        fs::write(dir.join("ratings.dat"), ratings).unwrap();
    }

    #[test]
    fn three_line_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "1::F::25::3::48067\n",
            "10::Heat (1995)::Action\n20::Rain Man (1988)::Drama\n",
            "1::10::5::978300760\n1::20::3::978302109\n",
        );
        let d = parse_movielens(tmp.path()).unwrap();
        assert_eq!(d.interactions().len(), 2);
        let per_user = d.per_user_items();
        assert_eq!(per_user["1"].iter().collect::<Vec<_>>(), vec!["10", "20"]);
        let attrs = &d.users()[0].attributes;
        assert_eq!(attrs["gender"], "F");
        assert_eq!(attrs["age"], "25-34");
        assert_eq!(attrs["occupation"], "clerical/admin");
        assert_eq!(d.interactions()[0].timestamp, Some(978300760));
    }

    #[test]
    fn empty_ratings() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "1::M::1::0::0\n", "10::Heat (1995)::Action\n", "");
        let d = parse_movielens(tmp.path()).unwrap();
        assert!(d.interactions().is_empty());
        assert!(d.per_user_items().values().all(|s| s.is_empty()));
        assert_eq!(d.users()[0].attributes["age"], "Under 18");
        assert_eq!(d.users()[0].attributes["occupation"], "other");
    }

    #[test]
    fn missing_file_is_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("users.dat"), "").unwrap();
        assert!(matches!(
            parse_movielens(tmp.path()),
            Err(IngestError::MissingFile(p)) if p.ends_with("movies.dat")
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "1::M::1::0::0\n",
            "10::Heat (1995)::Action\n",
            "1::10::5::978300760\n1::10::oops\n",
        );
        match parse_movielens(tmp.path()) {
            Err(IngestError::Malformed { file, line, .. }) => {
                assert_eq!(file, "ratings.dat");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn latin1_titles_decode() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("users.dat"), "1::M::1::0::0\n").unwrap();
        let mut movies = b"10::Freedom for Us (".to_vec();
        movies.push(0xC0);
        movies.extend_from_slice(b" nous la libert\xe9 ) (1931)::Comedy\n");
        fs::write(tmp.path().join("movies.dat"), movies).unwrap();
        fs::write(tmp.path().join("ratings.dat"), "").unwrap();
        let d = parse_movielens(tmp.path()).unwrap();
        assert_eq!(d.items()[0].title, "Freedom for Us (À nous la liberté ) (1931)");
    }
}
