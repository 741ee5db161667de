//! Fused trajectory retrieval: a geometric descriptor and a semantic
//! cell-context embedding are concatenated and linearly projected into the
//! query embedding space, trained with an InfoNCE loss over a learnable
//! temperature, and queried by cosine similarity.
//!
//! Gradients are derived by hand through the projection, the L2
//! normalization, and the temperature, which keeps the finite-difference
//! acceptance check meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, CellIndex, HexConfig};
use crate::provider::{cosine, Embedder};
use crate::roadnet::RoadGraph;
use crate::traj::{dominant_cell, Trajectory};

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("numeric failure at batch row {0}")]
    NumericFailure(usize),
    #[error("not enough pairs: {got} < batch size {batch}")]
    NotEnoughPairs { got: usize, batch: usize },
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Geometric descriptor length: 16 resampled 2-d points plus a duration
/// term.
pub const GEO_DIM: usize = 33;
const RESAMPLE_POINTS: usize = 16;

/// Fuse parameters: projection matrix (out_dim x in_dim), bias, and the
/// log-temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseParams {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub log_tau: f64,
}

impl FuseParams {
    pub fn out_dim(&self) -> usize {
        self.w.len()
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map(Vec::len).unwrap_or(0)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Seeded initialization: W ~ uniform(+-1/sqrt(fan_in)), b = 0,
    /// log_tau = ln 0.07.
    pub fn init(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..out_dim)
            .map(|_| (0..in_dim).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect();
        FuseParams { w, b: vec![0.0; out_dim], log_tau: 0.07f64.ln() }
    }
}

/// One aligned training batch: row i's query matches row i's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseBatch {
    pub queries: Vec<Vec<f64>>,
    pub geo: Vec<Vec<f64>>,
    pub sem: Vec<Vec<f64>>,
}

impl FuseBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Fixed geometric descriptor: the coordinate polyline resampled to 16
/// points by arc length, translated to centroid origin, scaled by trip
/// diameter, flattened, with a normalized log-duration appended.
pub fn geo_encode(t: &Trajectory, g: &RoadGraph) -> Result<Vec<f64>, FuseError> {
    if t.is_empty() {
        return Err(FuseError::EmptyInput);
    }
    let points = t.points(g)?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.lon, p.lat)).collect();
    let resampled = resample(&xy, RESAMPLE_POINTS);

    let n = resampled.len() as f64;
    let cx = resampled.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = resampled.iter().map(|p| p.1).sum::<f64>() / n;
    let centered: Vec<(f64, f64)> = resampled.iter().map(|p| (p.0 - cx, p.1 - cy)).collect();

    let mut diameter = 0.0f64;
    for i in 0..centered.len() {
        for j in i + 1..centered.len() {
            let d = ((centered[i].0 - centered[j].0).powi(2)
                + (centered[i].1 - centered[j].1).powi(2))
            .sqrt();
            diameter = diameter.max(d);
        }
    }

    let mut out = Vec::with_capacity(GEO_DIM);
    for (x, y) in centered {
        if diameter > 0.0 {
            out.push(x / diameter);
            out.push(y / diameter);
        } else {
            out.push(0.0);
            out.push(0.0);
        }
    }
    out.push((1.0 + t.duration_s().max(0) as f64).ln() / 10.0);
    Ok(out)
}

/// Arc-length resampling of a polyline to exactly `n` points, endpoints
/// included.
fn resample(points: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    if points.len() == 1 {
        return vec![points[0]; n];
    }
    let seg_len: Vec<f64> = points
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .collect();
    let total: f64 = seg_len.iter().sum();
    if total == 0.0 {
        return vec![points[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        let mut acc = 0.0;
        let mut placed = false;
        for (k, &len) in seg_len.iter().enumerate() {
            if acc + len >= target || k == seg_len.len() - 1 {
                let frac = if len > 0.0 { ((target - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
                let (ax, ay) = points[k];
                let (bx, by) = points[k + 1];
                out.push((ax + (bx - ax) * frac, ay + (by - ay) * frac));
                placed = true;
                break;
            }
            acc += len;
        }
        if !placed {
            out.push(*points.last().unwrap());
        }
    }
    out
}

/// Semantic descriptor: mean of the visited cells' description embeddings
/// (with multiplicity along the segment sequence), L2-normalized.
pub fn sem_encode(
    t: &Trajectory,
    g: &RoadGraph,
    cells: &CellIndex,
    cfg: &HexConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<f64>, FuseError> {
    if t.is_empty() {
        return Err(FuseError::EmptyInput);
    }
    let segs = t.segments(g)?;
    let mut sum = vec![0.0f64; embedder.dim()];
    let mut count = 0usize;
    let mut cache: BTreeMap<crate::geo::CellId, Vec<f64>> = BTreeMap::new();
    for seg in segs {
        let cell = dominant_cell(seg, cfg)?;
        let emb = cache.entry(cell).or_insert_with(|| {
            cells
                .get(&cell)
                .map(|m| embedder.embed(&m.description))
                .unwrap_or_else(|| vec![0.0; embedder.dim()])
        });
        for (s, e) in sum.iter_mut().zip(emb.iter()) {
            *s += e;
        }
        count += 1;
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    let norm: f64 = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for s in &mut sum {
            *s /= norm;
        }
    }
    Ok(sum)
}

/// Forward pass: normalize(W [geo; sem] + b). Errors when the
/// pre-normalization vector is exactly zero.
pub fn fuse_forward(p: &FuseParams, geo: &[f64], sem: &[f64]) -> Result<Vec<f64>, FuseError> {
    let in_dim = p.in_dim();
    if geo.len() + sem.len() != in_dim {
        return Err(FuseError::DimMismatch { expected: in_dim, got: geo.len() + sem.len() });
    }
    let x: Vec<f64> = geo.iter().chain(sem.iter()).copied().collect();
    let mut z = p.b.clone();
    for (k, row) in p.w.iter().enumerate() {
        z[k] += row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
    }
    let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(FuseError::NumericFailure(0));
    }
    Ok(z.into_iter().map(|v| v / norm).collect())
}

/// Gradients of the batch InfoNCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub log_tau: f64,
}

/// Batch InfoNCE loss with analytic gradients through fusion,
/// normalization, and the log-temperature:
/// L = (1/B) sum_i -log( exp(s_ii/tau) / sum_j exp(s_ij/tau) )
/// with s_ij = cosine(Q_i, fused_j).
#[allow(clippy::needless_range_loop)] // index loops mirror the matrix math
pub fn infonce_loss_and_grads(
    p: &FuseParams,
    batch: &FuseBatch,
) -> Result<(f64, FuseGrads), FuseError> {
    let bsz = batch.len();
    if bsz == 0 {
        return Err(FuseError::EmptyInput);
    }
    let out_dim = p.out_dim();
    let in_dim = p.in_dim();
    let tau = p.tau();

    // Forward: keep pre-normalization norms for the backward pass.
    let mut xs = Vec::with_capacity(bsz);
    let mut fused = Vec::with_capacity(bsz);
    let mut norms = Vec::with_capacity(bsz);
    for row in 0..bsz {
        let x: Vec<f64> = batch.geo[row].iter().chain(batch.sem[row].iter()).copied().collect();
        if x.len() != in_dim {
            return Err(FuseError::DimMismatch { expected: in_dim, got: x.len() });
        }
        let mut z = p.b.clone();
        for (k, wrow) in p.w.iter().enumerate() {
            z[k] += wrow.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(FuseError::NumericFailure(row));
        }
        let f: Vec<f64> = z.iter().map(|v| v / norm).collect();
        xs.push(x);
        fused.push(f);
        norms.push(norm);
    }

    // Similarities and row softmax.
    let mut s = vec![vec![0.0f64; bsz]; bsz];
    for i in 0..bsz {
        for j in 0..bsz {
            s[i][j] = batch.queries[i].iter().zip(&fused[j]).map(|(a, b)| a * b).sum();
        }
    }
    let mut loss = 0.0;
    let mut prob = vec![vec![0.0f64; bsz]; bsz];
    for i in 0..bsz {
        let row_max = s[i].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let mut denom = 0.0;
        for j in 0..bsz {
            let e = (s[i][j] / tau - row_max).exp();
            prob[i][j] = e;
            denom += e;
        }
        for j in 0..bsz {
            prob[i][j] /= denom;
        }
        loss += -(prob[i][i].max(f64::MIN_POSITIVE)).ln();
    }
    loss /= bsz as f64;
    if !loss.is_finite() {
        return Err(FuseError::NumericFailure(0));
    }

    // Backward.
    let mut w_grad = vec![vec![0.0f64; in_dim]; out_dim];
    let mut b_grad = vec![0.0f64; out_dim];
    let mut tau_grad = 0.0f64;
    let scale = 1.0 / (bsz as f64 * tau);
    for j in 0..bsz {
        // dL/d fused_j = (1/(B tau)) sum_i (p_ij - delta_ij) q_i
        let mut g_f = vec![0.0f64; out_dim];
        for i in 0..bsz {
            let coef = scale * (prob[i][j] - if i == j { 1.0 } else { 0.0 });
            if coef == 0.0 {
                continue;
            }
            for k in 0..out_dim {
                g_f[k] += coef * batch.queries[i][k];
            }
        }
        // Through normalization: g_z = (g_f - f (f . g_f)) / ||z||.
        let fdot: f64 = fused[j].iter().zip(&g_f).map(|(f, g)| f * g).sum();
        let mut g_z = vec![0.0f64; out_dim];
        for k in 0..out_dim {
            g_z[k] = (g_f[k] - fused[j][k] * fdot) / norms[j];
        }
        for k in 0..out_dim {
            if g_z[k] == 0.0 {
                continue;
            }
            let row = &mut w_grad[k];
            for (ri, xi) in row.iter_mut().zip(&xs[j]) {
                *ri += g_z[k] * xi;
            }
            b_grad[k] += g_z[k];
        }
    }
    for i in 0..bsz {
        for j in 0..bsz {
            let coef = (prob[i][j] - if i == j { 1.0 } else { 0.0 }) / (bsz as f64);
            // a_ij = s_ij * exp(-log_tau): da/dlog_tau = -s_ij / tau.
            tau_grad += coef * (-s[i][j] / tau);
        }
    }

    Ok((loss, FuseGrads { w: w_grad, b: b_grad, log_tau: tau_grad }))
}

/// Training configuration for seeded mini-batch gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch: 32, lr: 0.4, seed: 0 }
    }
}

/// Temperature bounds keep the softmax numerically sane while log_tau
/// trains.
const LOG_TAU_MIN: f64 = -5.298317366548036; // ln 0.005
const LOG_TAU_MAX: f64 = 0.0; // ln 1.0

/// Precomputed training features for a set of (query, trajectory) pairs.
pub struct FuseDataset {
    pub ids: Vec<u64>,
    pub queries: Vec<Vec<f64>>,
    pub geo: Vec<Vec<f64>>,
    pub sem: Vec<Vec<f64>>,
}

impl FuseDataset {
    pub fn build(
        pairs: &[(String, Trajectory)],
        embedder: &dyn Embedder,
        g: &RoadGraph,
        cells: &CellIndex,
        cfg: &HexConfig,
    ) -> Result<Self, FuseError> {
        if pairs.is_empty() {
            return Err(FuseError::EmptyInput);
        }
        let mut ids = Vec::with_capacity(pairs.len());
        let mut queries = Vec::with_capacity(pairs.len());
        let mut geo_feats = Vec::with_capacity(pairs.len());
        let mut sem_feats = Vec::with_capacity(pairs.len());
        for (query, t) in pairs {
            ids.push(t.mm_id);
            queries.push(embedder.embed(query));
            geo_feats.push(geo_encode(t, g)?);
            sem_feats.push(sem_encode(t, g, cells, cfg, embedder)?);
        }
        Ok(FuseDataset { ids, queries, geo: geo_feats, sem: sem_feats })
    }
}

/// Deterministic seeded mini-batch gradient descent. Returns the trained
/// parameters and the per-epoch mean loss curve.
///
/// Internally the input features are standardized per dimension (a fixed
/// preconditioner computed from the training set) and the learned affine
/// map is folded back into raw coordinates before returning, so the
/// published (W, b, log_tau) apply directly to raw geo/sem features.
#[allow(clippy::needless_range_loop)]
pub fn train(
    dataset: &FuseDataset,
    out_dim: usize,
    cfg: &TrainConfig,
) -> Result<(FuseParams, Vec<f64>), FuseError> {
    let n = dataset.ids.len();
    if n < cfg.batch.max(1) {
        return Err(FuseError::NotEnoughPairs { got: n, batch: cfg.batch });
    }
    let in_dim = dataset.geo[0].len() + dataset.sem[0].len();
    if cfg.lr == 0.0 {
        // No updates: report the loss of the untouched initialization.
        let params = FuseParams::init(out_dim, in_dim, cfg.seed);
        let batch = FuseBatch {
            queries: dataset.queries.clone(),
            geo: dataset.geo.clone(),
            sem: dataset.sem.clone(),
        };
        let (loss, _) = infonce_loss_and_grads(&params, &batch)?;
        return Ok((params, vec![loss; cfg.epochs]));
    }

    // Per-dimension standardization over the training features.
    let gd = dataset.geo[0].len();
    let mut mu = vec![0.0f64; in_dim];
    let mut sigma = vec![0.0f64; in_dim];
    let feature = |row: usize, k: usize| -> f64 {
        if k < gd { dataset.geo[row][k] } else { dataset.sem[row][k - gd] }
    };
    for row in 0..n {
        for k in 0..in_dim {
            mu[k] += feature(row, k);
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    for row in 0..n {
        for k in 0..in_dim {
            sigma[k] += (feature(row, k) - mu[k]).powi(2);
        }
    }
    for s in &mut sigma {
        *s = (*s / n as f64).sqrt().max(1e-6);
    }
    let std_geo: Vec<Vec<f64>> = (0..n)
        .map(|row| (0..gd).map(|k| (feature(row, k) - mu[k]) / sigma[k]).collect())
        .collect();
    let std_sem: Vec<Vec<f64>> = (0..n)
        .map(|row| (gd..in_dim).map(|k| (feature(row, k) - mu[k]) / sigma[k]).collect())
        .collect();

    let mut params = FuseParams::init(out_dim, in_dim, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5475_7261);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        // Linear step-size decay to a tenth of the initial rate.
        let lr = cfg.lr * (1.0 - 0.9 * epoch as f64 / cfg.epochs.max(1) as f64);
        for i in 0..n {
            let j = rng.gen_range(i..n);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch = FuseBatch {
                queries: chunk.iter().map(|&i| dataset.queries[i].clone()).collect(),
                geo: chunk.iter().map(|&i| std_geo[i].clone()).collect(),
                sem: chunk.iter().map(|&i| std_sem[i].clone()).collect(),
            };
            let (loss, grads) = infonce_loss_and_grads(&params, &batch)?;
            epoch_loss += loss;
            steps += 1;
            if lr != 0.0 {
                for (wrow, grow) in params.w.iter_mut().zip(&grads.w) {
                    for (w, g) in wrow.iter_mut().zip(grow) {
                        *w -= lr * g;
                    }
                }
                for (b, g) in params.b.iter_mut().zip(&grads.b) {
                    *b -= lr * g;
                }
                params.log_tau =
                    (params.log_tau - lr * grads.log_tau).clamp(LOG_TAU_MIN, LOG_TAU_MAX);
            }
        }
        curve.push(epoch_loss / steps.max(1) as f64);
    }

    // Fold the standardization into the affine map so the returned
    // parameters apply to raw features: W_raw = W/sigma,
    // b_raw = b - W (mu/sigma).
    for (k, row) in params.w.iter_mut().enumerate() {
        let mut shift = 0.0;
        for (i, w) in row.iter_mut().enumerate() {
            shift += *w * mu[i] / sigma[i];
            *w /= sigma[i];
        }
        params.b[k] -= shift;
    }
    Ok((params, curve))
}

/// Fused trajectory database: unit embeddings keyed by trajectory id.
pub type FusedDb = Vec<(u64, Vec<f64>)>;

/// Fuse every dataset row into the database.
pub fn build_db(params: &FuseParams, dataset: &FuseDataset) -> Result<FusedDb, FuseError> {
    dataset
        .ids
        .iter()
        .zip(dataset.geo.iter().zip(&dataset.sem))
        .map(|(&id, (g, s))| Ok((id, fuse_forward(params, g, s)?)))
        .collect()
}

/// Top-K trajectory ids by cosine similarity, ties toward smaller ids.
pub fn retrieve(
    query: &str,
    db: &FusedDb,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<u64>, FuseError> {
    if db.is_empty() {
        return Err(FuseError::EmptyInput);
    }
    let q = embedder.embed(query);
    let mut scored: Vec<(u64, f64)> =
        db.iter().map(|(id, emb)| (*id, cosine(&q, emb))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k.max(1)).map(|(id, _)| id).collect())
}

/// Persist the fused database as headered JSONL of (traj_id, values).
pub fn save_db(db: &FusedDb, path: &Path) -> Result<(), FuseError> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(crate::jsonl::header_line("trajprism.fused").as_bytes())?;
    file.write_all(b"\n")?;
    #[derive(Serialize)]
    struct Row<'a> {
        traj_id: u64,
        values: &'a [f64],
    }
    for (id, values) in db {
        serde_json::to_writer(&mut file, &Row { traj_id: *id, values })?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_db(path: &Path) -> Result<FusedDb, FuseError> {
    use std::io::BufRead;
    #[derive(Deserialize)]
    struct Row {
        traj_id: u64,
        values: Vec<f64>,
    }
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && crate::jsonl::parse_header(&line).is_some()) {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        out.push((row.traj_id, row.values));
    }
    Ok(out)
}
