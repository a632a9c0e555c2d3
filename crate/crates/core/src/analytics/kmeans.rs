use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{complete_rows, num, numeric_columns, AlgorithmSpec, AnalyticsError, CompensatedSum, Executor, ResultSet, ResultTable};
use crate::dataprep::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    /// One label per row in `rows_used`.
    pub labels: Vec<usize>,
    /// Inertia after each centroid update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub rows_used: Vec<usize>,
}

impl KMeansModel {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

struct Partial {
    labels: Vec<usize>,
    sums: Vec<CompensatedSum>,
    counts: Vec<usize>,
}

pub fn kmeans_model(
    exec: &Executor,
    table: &Table,
    features: &[&str],
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansModel, AnalyticsError> {
    if k == 0 || max_iter == 0 {
        return Err(AnalyticsError::InvalidSpec("k and max_iter must be at least 1".into()));
    }
    let cols = numeric_columns(table, features)?;
    let (rows_used, data) = complete_rows(&cols, table.row_count());
    let d = features.len();
    let n = rows_used.len();
    if k > n {
        return Err(AnalyticsError::KExceedsRows { k, rows: n });
    }
    let point = |i: usize| &data[i * d..(i + 1) * d];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| point(i).to_vec())
        .collect();

    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let current = &centroids;
        let part = exec.map_reduce(
            n,
            |p| {
                let mut out = Partial {
                    labels: Vec::with_capacity(p.rows.len()),
                    sums: vec![CompensatedSum::default(); k * d],
                    counts: vec![0; k],
                };
                for i in p.rows.clone() {
                    let x = point(i);
                    let j = nearest(x, current);
                    out.labels.push(j);
                    out.counts[j] += 1;
                    for (s, v) in out.sums[j * d..(j + 1) * d].iter_mut().zip(x) {
                        s.add(*v);
                    }
                }
                out
            },
            |mut a, b| {
                a.labels.extend(b.labels);
                for (x, y) in a.sums.iter_mut().zip(b.sums) {
                    *x = x.merge(y);
                }
                for (x, y) in a.counts.iter_mut().zip(b.counts) {
                    *x += y;
                }
                a
            },
        );
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if part.counts[j] > 0 {
                for f in 0..d {
                    centroids[j][f] = part.sums[j * d + f].value() / part.counts[j] as f64;
                }
            }
        }
        let unchanged = part.labels == labels;
        labels = part.labels;
        let current = &centroids;
        let inertia = exec
            .map_reduce(
                n,
                |p| {
                    let mut s = CompensatedSum::default();
                    for i in p.rows.clone() {
                        s.add(sq_dist(point(i), &current[labels[i]]));
                    }
                    s
                },
                CompensatedSum::merge,
            )
            .value();
        history.push(inertia);
        if unchanged {
            break;
        }
    }
    Ok(KMeansModel { centroids, labels, inertia_history: history, iterations, rows_used })
}

pub fn kmeans(exec: &Executor, table: &Table, spec: &AlgorithmSpec) -> Result<ResultSet, AnalyticsError> {
    let AlgorithmSpec::KMeans { k, max_iter, seed, features } = spec else {
        return Err(AnalyticsError::InvalidSpec("expected a k-means spec".into()));
    };
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let m = kmeans_model(exec, table, &names, *k, *max_iter, *seed)?;
    let mut rs = ResultSet::new("k_means");
    rs.metric("inertia", Some(m.inertia()));
    rs.metric("iterations", Some(m.iterations as f64));
    rs.metric("n_rows", Some(m.rows_used.len() as f64));
    rs.metric("rows_dropped", Some((table.row_count() - m.rows_used.len()) as f64));
    let mut columns = vec!["cluster".to_owned(), "size".to_owned()];
    columns.extend(features.iter().cloned());
    rs.tables.insert(
        "centroids".into(),
        ResultTable {
            columns,
            rows: m
                .centroids
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let size = m.labels.iter().filter(|l| **l == j).count();
                    let mut row = vec![j.into(), size.into()];
                    row.extend(c.iter().map(|x| num(*x)));
                    row
                })
                .collect(),
        },
    );
    rs.tables.insert(
        "labels".into(),
        ResultTable {
            columns: vec!["row".into(), "cluster".into()],
            rows: m.rows_used.iter().zip(&m.labels).map(|(r, l)| vec![(*r).into(), (*l).into()]).collect(),
        },
    );
    rs.tables.insert(
        "inertia_history".into(),
        ResultTable {
            columns: vec!["iteration".into(), "inertia".into()],
            rows: m.inertia_history.iter().enumerate().map(|(i, x)| vec![(i + 1).into(), num(*x)]).collect(),
        },
    );
    Ok(rs)
}
