//! Stage-wise k-means fitting of the codebook stack.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, CodebookStack, LatentSequence};
use crate::error::{Error, Result};

/// Summary of a codebook fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Stages whose residuals had fewer distinct points than codes.
    pub degenerate_stages: Vec<usize>,
    /// Mean squared residual norm entering each stage.
    pub residual_energy: Vec<f64>,
}

/// Fits stage 0 on the latent frames, stage 1 on the residuals it leaves,
/// and so on. Projections are kept from `stack`; only codes change.
pub fn fit_codebooks(
    corpus: &[LatentSequence],
    stack: &CodebookStack,
    iters: usize,
    seed: u64,
) -> Result<(CodebookStack, FitReport)> {
    if corpus.is_empty() || corpus.iter().all(|z| z.frames() == 0) {
        return Err(Error::InvalidArgument("empty codebook fitting corpus".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("k-means needs at least one iteration".into()));
    }
    if let Some(z) = corpus.iter().find(|z| z.dim() != stack.latent_dim()) {
        return Err(Error::ShapeMismatch(format!(
            "corpus latent dimension {} does not match {}",
            z.dim(),
            stack.latent_dim()
        )));
    }

    let mut out = stack.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals: Vec<Vec<f64>> = corpus
        .iter()
        .flat_map(|z| z.iter_frames().map(<[f64]>::to_vec))
        .collect();
    let mut report = FitReport {
        degenerate_stages: Vec::new(),
        residual_energy: Vec::new(),
    };

    for stage in 0..out.n_q() {
        report.residual_energy.push(
            residuals.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum::<f64>()
                / residuals.len() as f64,
        );
        let dim = out.code_dim();
        let points: Vec<f64> = residuals
            .iter()
            .flat_map(|r| out.project_in(stage, r))
            .collect();
        let (centroids, degenerate) = kmeans(&points, dim, out.codebook_size(), iters, &mut rng);
        if degenerate {
            warn!(
                "stage {stage}: fewer distinct residuals than codes, duplicate centroids kept"
            );
            report.degenerate_stages.push(stage);
        }
        out.codes_mut(stage).copy_from_slice(&centroids);
        for r in residuals.iter_mut() {
            let idx = out.nearest(stage, &out.project_in(stage, r));
            for (a, b) in r.iter_mut().zip(out.dequantize_index(stage, idx)) {
                *a -= b;
            }
        }
    }
    Ok((out, report))
}

fn assign(points: &[f64], dim: usize, centroids: &[f64]) -> Vec<usize> {
    points
        .chunks_exact(dim)
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centroids.chunks_exact(dim).enumerate() {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Lloyd's algorithm with k-means++ seeding. Returns flat centroids and
/// whether seeding ran out of distinct points.
fn kmeans(points: &[f64], dim: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = Vec::with_capacity(k * dim);
    let mut degenerate = false;
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can walk past the end onto an existing centroid
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|w| *w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            degenerate = true;
            rng.random_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(point(i), &c));
        }
        centroids.extend(c);
    }

    let mut labels = assign(points, dim, &centroids);
    for _ in 0..iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..dim {
                    centroids[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                }
            }
        }
        let next = assign(points, dim, &centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    (centroids, degenerate)
}
