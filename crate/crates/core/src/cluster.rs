//! Hidden-state trace pools and k-means clustering.
//!
//! Two clustering spaces are supported: the raw hidden vectors (k-means++
//! seeding followed by Lloyd iterations) and the position-augmented space of
//! k-means-x, where the point at position `j` of sequence `i` gains `n` extra
//! coordinates that are all zero except slot `i`, which holds `j`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Sequence;
use crate::math::sq_dist;
use crate::rnn::RnnModel;
use crate::{Error, Result};

/// Upper bound on Lloyd iterations.
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// One recorded hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub h: Vec<f64>,
    /// 1-based index of the sequence within the split.
    pub seq_index: usize,
    /// 1-based position within the sequence.
    pub position: usize,
    /// Symbol consumed at this step.
    pub symbol: usize,
}

/// All hidden states recorded over a split, sequence-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePool {
    points: Vec<TracePoint>,
    n_sequences: usize,
    dim: usize,
}

impl TracePool {
    /// Validates dimensions and that every sequence `1..=n_sequences`
    /// contributes positions `1..=T_i` contiguously, in order.
    pub fn new(points: Vec<TracePoint>, n_sequences: usize, dim: usize) -> Result<Self> {
        let mut expect_seq = 1usize;
        let mut expect_pos = 1usize;
        for (idx, p) in points.iter().enumerate() {
            if p.h.len() != dim {
                return Err(Error::shape("trace point", dim, p.h.len()));
            }
            if p.seq_index == expect_seq && p.position == expect_pos {
                expect_pos += 1;
            } else if p.seq_index == expect_seq + 1 && p.position == 1 && expect_pos > 1 {
                expect_seq += 1;
                expect_pos = 2;
            } else {
                return Err(Error::Structural(format!(
                    "point {idx} is (i={}, j={}) but the pool is not sequence-major and contiguous",
                    p.seq_index, p.position
                )));
            }
        }
        let seen = if points.is_empty() { 0 } else { expect_seq };
        if seen != n_sequences {
            return Err(Error::Structural(format!(
                "pool covers {seen} sequences but declares {n_sequences}"
            )));
        }
        Ok(TracePool {
            points,
            n_sequences,
            dim,
        })
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_sequences(&self) -> usize {
        self.n_sequences
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_vectors(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.h.clone()).collect()
    }
}

/// Records the top-layer state after every token of every sequence in `split`.
pub fn collect_traces(model: &RnnModel, split: &[Sequence]) -> Result<TracePool> {
    collect_traces_layer(model, split, model.dims().layers - 1)
}

/// As [`collect_traces`] for an arbitrary (0-based) layer.
pub fn collect_traces_layer(model: &RnnModel, split: &[Sequence], layer: usize) -> Result<TracePool> {
    if split.is_empty() {
        return Err(Error::Input("cannot collect traces from an empty split".into()));
    }
    let mut points = Vec::with_capacity(split.iter().map(Sequence::len).sum());
    for (i, seq) in split.iter().enumerate() {
        let trace = model.forward_layer(seq.tokens(), layer)?;
        for (j, (h, &symbol)) in trace.states.into_iter().zip(&trace.symbols).enumerate() {
            points.push(TracePoint {
                h,
                seq_index: i + 1,
                position: j + 1,
                symbol,
            });
        }
    }
    TracePool::new(points, split.len(), model.dims().hidden)
}

/// k-means-x coordinates: `[h, 0.., j, ..0]` with `j` in slot `i`.
pub fn augment_position(pool: &TracePool) -> Vec<Vec<f64>> {
    augment_position_scaled(pool, 1.0)
}

/// As [`augment_position`] with the position multiplied by `scale`.
pub fn augment_position_scaled(pool: &TracePool, scale: f64) -> Vec<Vec<f64>> {
    let d = pool.dim;
    pool.points
        .iter()
        .map(|p| {
            let mut v = vec![0.0; d + pool.n_sequences];
            v[..d].copy_from_slice(&p.h);
            v[d + p.seq_index - 1] = scale * p.position as f64;
            v
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// k-means++ on the raw hidden vectors (LISOR-k).
    KMeansPP,
    /// k-means++ on position-augmented vectors (LISOR-x).
    KMeansX,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KMeansPP => "kmeans++",
            Method::KMeansX => "kmeans-x",
        }
    }

    /// Accepts `kmeans++`/`LISOR-k` and `kmeans-x`/`LISOR-x` (case-insensitive).
    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "kmeans++" | "k-means++" | "lisor-k" => Ok(Method::KMeansPP),
            "kmeans-x" | "k-means-x" | "lisor-x" => Ok(Method::KMeansX),
            _ => Err(Error::Config(format!("unknown clustering method {name:?}"))),
        }
    }

    pub fn space(self) -> Space {
        match self {
            Method::KMeansPP => Space::Raw,
            Method::KMeansX => Space::PositionAugmented,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Raw,
    PositionAugmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    /// Centroids in the clustering space.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id of every point, in pool order.
    pub assign: Vec<usize>,
    pub space: Space,
    /// Sum of squared distances of points to their centroids.
    pub cost: f64,
    /// Cost after each assignment step, starting with the seeding.
    pub cost_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assign
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assign {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Number of distinct points (bitwise comparison).
pub fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    sorted.dedup_by(|a, b| a == b);
    sorted.len()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::shape("point dimension", dim, bad.len()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Clustering("non-finite coordinate".into()));
    }
    Ok(dim)
}

/// k-means++ seeding: the first centre is uniform over the points, each next
/// one is drawn with probability proportional to the squared distance to the
/// nearest centre chosen so far.
pub fn kmeanspp_init<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    check_points(points)?;
    if k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::Clustering(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(total > 0.0) {
            return Err(Error::Clustering("no remaining point has positive weight".into()));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("total weight is positive");
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

/// Index of the nearest centroid (ties to the lowest id) and its distance.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.iter().enumerate() {
        let d = sq_dist(point, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assign = points
        .iter()
        .map(|p| {
            let (c, d) = nearest(p, centroids);
            cost += d;
            c
        })
        .collect();
    (assign, cost)
}

fn means(points: &[Vec<f64>], assign: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assign) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    (sums, counts)
}

/// Reseeds every empty cluster with the point farthest from its own centroid.
fn repair_empty(points: &[Vec<f64>], assign: &[usize], centroids: &mut [Vec<f64>], counts: &[usize]) {
    let mut used = vec![false; points.len()];
    for c in 0..centroids.len() {
        if counts[c] > 0 {
            continue;
        }
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, p)| (i, sq_dist(p, &centroids[assign[i]])))
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((i, _)) = far {
            used[i] = true;
            centroids[c] = points[i].clone();
        }
    }
}

/// Lloyd iterations from `centroids` until the assignment stops changing or
/// [`MAX_LLOYD_ITERATIONS`] is reached. The returned centroids are the means
/// of the returned assignment.
pub fn lloyd(points: &[Vec<f64>], centroids: Vec<Vec<f64>>, space: Space) -> Result<Clustering> {
    let dim = check_points(points)?;
    let k = centroids.len();
    if k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
        return Err(Error::shape("centroid dimension", dim, bad.len()));
    }
    let mut centroids = centroids;
    let (mut assign, cost) = assign_all(points, &centroids);
    let mut cost_history = vec![cost];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let (mut next, counts) = means(points, &assign, k, dim);
        let repaired = counts.contains(&0);
        if repaired {
            repair_empty(points, &assign, &mut next, &counts);
        }
        let (next_assign, cost) = assign_all(points, &next);
        cost_history.push(cost);
        centroids = next;
        if next_assign == assign && !repaired {
            break;
        }
        assign = next_assign;
    }
    let cost = assign_all(points, &centroids).1;
    Ok(Clustering {
        k,
        centroids,
        assign,
        space,
        cost,
        cost_history,
    })
}

/// Knobs for [`cluster_pool_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    /// Independent k-means++ restarts; the lowest-cost result wins.
    pub restarts: usize,
    /// Multiplier on the k-means-x position feature.
    pub position_scale: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            restarts: 1,
            position_scale: 1.0,
        }
    }
}

/// Seeds with k-means++ and refines with Lloyd in the space chosen by `method`.
pub fn cluster_pool<R: Rng + ?Sized>(pool: &TracePool, k: usize, method: Method, rng: &mut R) -> Result<Clustering> {
    cluster_pool_with(pool, k, method, &ClusterOptions::default(), rng)
}

/// Points `cluster_pool_with` would cluster for `method`.
pub fn clustering_points(pool: &TracePool, method: Method, opts: &ClusterOptions) -> Vec<Vec<f64>> {
    match method {
        Method::KMeansPP => pool.hidden_vectors(),
        Method::KMeansX => augment_position_scaled(pool, opts.position_scale),
    }
}

pub fn cluster_pool_with<R: Rng + ?Sized>(
    pool: &TracePool,
    k: usize,
    method: Method,
    opts: &ClusterOptions,
    rng: &mut R,
) -> Result<Clustering> {
    if opts.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    let points = clustering_points(pool, method, opts);
    let mut best = cluster_points(&points, k, method.space(), rng)?;
    for _ in 1..opts.restarts {
        let next = cluster_points(&points, k, method.space(), rng)?;
        if next.cost < best.cost {
            best = next;
        }
    }
    Ok(best)
}

/// k-means++ then Lloyd on arbitrary points.
pub fn cluster_points<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, space: Space, rng: &mut R) -> Result<Clustering> {
    let init = kmeanspp_init(points, k, rng)?;
    lloyd(points, init, space)
}
