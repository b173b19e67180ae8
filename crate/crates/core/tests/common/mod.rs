//! MovieLens-1M-format fixture writer shared by integration tests.

#![allow(dead_code)]

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

pub struct MlShape {
    pub users: usize,
    pub movies: usize,
    pub ratings: usize,
    pub min_per_user: usize,
    pub max_per_user: usize,
    /// Log-normal spread of per-user activity.
    pub sigma: f64,
    /// Zipf exponent of movie popularity.
    pub zipf: f64,
    pub seed: u64,
}

impl MlShape {
    /// Same totals as MovieLens-1M.
    pub fn full() -> Self {
        MlShape {
            users: 6040,
            movies: 3883,
            ratings: 1_000_209,
            min_per_user: 20,
            max_per_user: 2314,
            sigma: 0.6,
            zipf: 1.0,
            seed: 1,
        }
    }
}

const AGES: [(u32, f64); 7] = [(1, 0.04), (18, 0.18), (25, 0.35), (35, 0.20), (45, 0.09), (50, 0.08), (56, 0.06)];
// occupation codes with rough ML-1M frequencies; 0 is "other"
const OCCUPATIONS: [(u32, f64); 8] = [(0, 0.12), (4, 0.25), (7, 0.20), (1, 0.15), (17, 0.12), (12, 0.08), (2, 0.05), (20, 0.03)];

fn pick<R: Rng>(rng: &mut R, table: &[(u32, f64)]) -> u32 {
    let mut u: f64 = rng.random();
    for &(v, w) in table {
        if u < w {
            return v;
        }
        u -= w;
    }
    table[table.len() - 1].0
}

/// Writes `users.dat`, `movies.dat`, `ratings.dat` with exactly the shape's
/// totals. Movie popularity is Zipf-like; user activity is log-normal.
pub fn write_movielens(dir: &Path, shape: &MlShape) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);

    let mut users = BufWriter::new(File::create(dir.join("users.dat")).unwrap());
    for u in 1..=shape.users {
        let g = if rng.random_bool(0.72) { "M" } else { "F" };
        writeln!(users, "{u}::{g}::{}::{}::{:05}", pick(&mut rng, &AGES), pick(&mut rng, &OCCUPATIONS), rng.random_range(0..99999)).unwrap();
    }
    users.flush().unwrap();

    let mut movies = BufWriter::new(File::create(dir.join("movies.dat")).unwrap());
    for m in 1..=shape.movies {
        writeln!(movies, "{m}::Movie {m} ({})::Drama", 1919 + m % 81).unwrap();
    }
    movies.flush().unwrap();

    // per-user counts summing exactly to the target
    let mean = shape.ratings as f64 / shape.users as f64;
    let sigma = shape.sigma;
    let ln = LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).unwrap();
    let cap = shape.max_per_user.min(shape.movies);
    let mut counts: Vec<usize> = (0..shape.users)
        .map(|_| (ln.sample(&mut rng) as usize).clamp(shape.min_per_user, cap))
        .collect();
    let mut total: usize = counts.iter().sum();
    while total != shape.ratings {
        let u = rng.random_range(0..shape.users);
        if total < shape.ratings && counts[u] < cap {
            counts[u] += 1;
            total += 1;
        } else if total > shape.ratings && counts[u] > shape.min_per_user {
            counts[u] -= 1;
            total -= 1;
        }
    }

    let weights: Vec<f64> = (1..=shape.movies).map(|r| 1.0 / (r as f64).powf(shape.zipf)).collect();
    // movie ids are shuffled against popularity rank
    let mut ids: Vec<usize> = (1..=shape.movies).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut ratings = BufWriter::new(File::create(dir.join("ratings.dat")).unwrap());
    let mut ts = 956_703_932u64;
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(shape.movies);
    for (u, &k) in counts.iter().enumerate() {
        // weighted sampling without replacement: top-k of u^(1/w)
        keys.clear();
        keys.extend(weights.iter().enumerate().map(|(i, &w)| (rng.random::<f64>().ln() / w, i)));
        keys.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0));
        for &(_, i) in &keys[..k] {
            ts += 1;
            writeln!(ratings, "{}::{}::{}::{ts}", u + 1, ids[i], rng.random_range(1..=5)).unwrap();
        }
    }
    ratings.flush().unwrap();
}
