//! Trend head: channels are grouped by k-means on their trend shape and each
//! group gets its own linear map from the look-back window to the horizon.

use crate::error::{Error, Result};
use crate::params::Binder;
use crate::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_LLOYD_ITERATIONS: usize = 100;
pub const FEATURE_TAG: &str = "znorm-mean-trend";

/// Channel-to-cluster assignment, fitted once before training and then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelClustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// `[k, F]`
    pub centroids: Tensor,
    pub feature: String,
}

impl ChannelClustering {
    /// Every channel in cluster 0.
    pub fn single(channels: usize, features: usize) -> Self {
        ChannelClustering {
            k: 1,
            assignments: vec![0; channels],
            centroids: Tensor::zeros(&[1, features]),
            feature: FEATURE_TAG.to_string(),
        }
    }

    pub fn channels(&self) -> usize {
        self.assignments.len()
    }
}

/// Per-channel feature vectors: the mean trend window over all samples,
/// z-normalized within each channel. Constant rows map to zeros.
pub fn channel_features(trend_samples: &Tensor) -> Result<Tensor> {
    let [s, c, l] = *trend_samples.shape() else {
        return Err(Error::shape(
            "channel_features",
            format!("expected [S, C, L], got {:?}", trend_samples.shape()),
        ));
    };
    let mut out = vec![0.0; c * l];
    for row in trend_samples.data().chunks(c * l) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v / s as f64;
        }
    }
    for row in out.chunks_mut(l) {
        let mean = row.iter().sum::<f64>() / l as f64;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64).sqrt();
        for v in row.iter_mut() {
            *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
        }
    }
    Tensor::new(vec![c, l], out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Nearest centroid per point; ties go to the lowest centroid index.
pub fn assign(points: &Tensor, centroids: &Tensor) -> Vec<usize> {
    let f = points.shape()[1];
    points
        .data()
        .chunks(f)
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.data().chunks(f).enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Within-cluster sum of squared distances.
pub fn objective(points: &Tensor, centroids: &Tensor, assignments: &[usize]) -> f64 {
    let f = points.shape()[1];
    points
        .data()
        .chunks(f)
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids.data()[a * f..][..f]))
        .sum()
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Objective after every assignment step.
    pub objective_history: Vec<f64>,
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<KMeansFit> {
    let [n, f] = *points.shape() else {
        return Err(Error::shape("kmeans", format!("expected [N, F], got {:?}", points.shape())));
    };
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={n}")));
    }
    let rows: Vec<&[f64]> = points.data().chunks(f).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * f);
    centroids.extend_from_slice(rows[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = rows.iter().map(|p| sq_dist(p, &centroids[..f])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(rows[pick]);
        for (d, p) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(p, &centroids[start..]));
        }
    }
    let mut centroids = Tensor::new(vec![k, f], centroids)?;
    let mut assignments = assign(points, &centroids);
    let mut history = vec![objective(points, &centroids, &assignments)];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        update_centroids(&rows, &assignments, &mut centroids);
        reseed_empty(&rows, &assignments, &mut centroids);
        let next = assign(points, &centroids);
        history.push(objective(points, &centroids, &next));
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        objective_history: history,
    })
}

fn update_centroids(rows: &[&[f64]], assignments: &[usize], centroids: &mut Tensor) {
    let (k, f) = (centroids.shape()[0], centroids.shape()[1]);
    let mut sums = vec![0.0; k * f];
    let mut counts = vec![0usize; k];
    for (p, &a) in rows.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a * f..][..f].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for (c, s) in centroids.data_mut()[j * f..][..f].iter_mut().zip(&sums[j * f..][..f]) {
                *c = s / counts[j] as f64;
            }
        }
    }
}

/// Move each empty cluster onto the point farthest from its current centroid.
fn reseed_empty(rows: &[&[f64]], assignments: &[usize], centroids: &mut Tensor) {
    let (k, f) = (centroids.shape()[0], centroids.shape()[1]);
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mut dist: Vec<f64> = rows
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids.data()[a * f..][..f]))
        .collect();
    for j in (0..k).filter(|&j| counts[j] == 0) {
        let far = dist
            .iter()
            .enumerate()
            .fold(0, |best, (i, &d)| if d > dist[best] { i } else { best });
        centroids.data_mut()[j * f..][..f].copy_from_slice(rows[far]);
        dist[far] = 0.0;
    }
}

/// Fit the channel clustering from sampled trend windows `[S, C, L]`.
pub fn fit_clustering(trend_samples: &Tensor, k: usize, seed: u64) -> Result<ChannelClustering> {
    let channels = trend_samples.shape().get(1).copied().unwrap_or(0);
    if k == 0 || k > channels {
        return Err(Error::InvalidArgument(format!(
            "number of clusters {k} must be between 1 and the channel count {channels}"
        )));
    }
    let features = channel_features(trend_samples)?;
    let fit = kmeans(&features, k, seed)?;
    Ok(ChannelClustering {
        k,
        assignments: fit.assignments,
        centroids: fit.centroids,
        feature: FEATURE_TAG.to_string(),
    })
}

/// Per-cluster linear heads. `weight: [k, L, L_p]`, `bias: [k, L_p]`.
#[derive(Clone, Debug)]
pub struct GroupedLinear {
    pub clustering: Option<ChannelClustering>,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GroupedLinear {
    /// Every head maps a window to its mean; `clustering` is fitted later.
    pub fn averaging(k: usize, len: usize, horizon: usize) -> Self {
        GroupedLinear {
            clustering: None,
            weight: Tensor::full(&[k, len, horizon], 1.0 / len as f64),
            bias: Tensor::zeros(&[k, horizon]),
        }
    }

    /// Every head is the identity; needs `len == horizon`.
    pub fn identity(k: usize, len: usize) -> Self {
        GroupedLinear {
            clustering: None,
            weight: Tensor::from_fn(&[k, len, len], |i| f64::from(u8::from(i / len % len == i % len))),
            bias: Tensor::zeros(&[k, len]),
        }
    }

    pub fn k(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn with_clustering(mut self, clustering: ChannelClustering) -> Result<Self> {
        if clustering.k != self.k() {
            return Err(Error::InvalidArgument(format!(
                "clustering has {} clusters, heads exist for {}",
                clustering.k,
                self.k()
            )));
        }
        self.clustering = Some(clustering);
        Ok(self)
    }

    pub fn assignments(&self) -> Result<&[usize]> {
        self.clustering
            .as_ref()
            .map(|c| c.assignments.as_slice())
            .ok_or_else(|| Error::InvalidArgument("grouped linear clustering has not been fitted".into()))
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>, prefix: &str) -> Result<GroupedVars<'t>> {
        Ok(GroupedVars {
            weight: binder.param(&format!("{prefix}.weight"), &self.weight),
            bias: binder.param(&format!("{prefix}.bias"), &self.bias),
            assignments: self.assignments()?.to_vec(),
        })
    }

    /// `out[c] = x[c] · W[a_c] + b[a_c]` for `[C, L]` or `[B, C, L]` input.
    pub fn project_trend(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let vars = GroupedVars {
            weight: tape.constant(self.weight.clone()),
            bias: tape.constant(self.bias.clone()),
            assignments: self.assignments()?.to_vec(),
        };
        let out = vars.project(tape.constant(x.clone()))?;
        Ok((*out.value()).clone())
    }
}

pub struct GroupedVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub assignments: Vec<usize>,
}

impl<'t> GroupedVars<'t> {
    pub fn project(&self, x: Var<'t>) -> Result<Var<'t>> {
        match x.shape()[..] {
            [c, l] => {
                let y = x.reshape(&[1, c, l])?.grouped_linear(self.weight, self.bias, &self.assignments)?;
                let lp = y.shape()[2];
                y.reshape(&[c, lp])
            }
            _ => x.grouped_linear(self.weight, self.bias, &self.assignments),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramps(c: usize, l: usize, signs: &[f64]) -> Tensor {
        Tensor::from_fn(&[1, c, l], |i| {
            let (ch, t) = (i / l, i % l);
            signs[ch] * t as f64 + ch as f64 * 0.01
        })
    }

    #[test]
    fn identical_channels_share_assignment() {
        let x = Tensor::from_fn(&[3, 4, 10], |i| ((i % 10) as f64).sin());
        for k in 1..=4 {
            let c = fit_clustering(&x, k, 9).unwrap();
            assert!(c.assignments.iter().all(|&a| a == c.assignments[0]), "k={k}");
        }
    }

    #[test]
    fn k_equals_channels_gives_singletons() {
        let x = Tensor::from_fn(&[2, 5, 8], |i| {
            let (ch, t) = ((i / 8) % 5, i % 8);
            ((t * (ch + 1)) as f64 * 0.7).sin() + (ch * t) as f64 * 0.1
        });
        let c = fit_clustering(&x, 5, 1).unwrap();
        let mut a = c.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn k_out_of_range_rejected() {
        let x = Tensor::zeros(&[1, 3, 4]);
        assert!(fit_clustering(&x, 0, 0).is_err());
        assert!(fit_clustering(&x, 4, 0).is_err());
    }

    #[test]
    fn reassignment_is_idempotent() {
        let x = ramps(6, 12, &[1.0, -1.0, 1.0, -1.0, 0.5, -0.5]);
        let c = fit_clustering(&x, 2, 4).unwrap();
        let feats = channel_features(&x).unwrap();
        assert_eq!(assign(&feats, &c.centroids), c.assignments);
    }

    #[test]
    fn objective_never_increases() {
        let pts = Tensor::from_fn(&[40, 3], |i| ((i * 7919) % 101) as f64 / 10.0);
        for seed in 0..10 {
            let fit = kmeans(&pts, 4, seed).unwrap();
            for w in fit.objective_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.objective_history);
            }
        }
    }

    #[test]
    fn single_cluster_is_shared_linear_map() {
        let mut gl = GroupedLinear::averaging(1, 4, 3).with_clustering(ChannelClustering::single(2, 4)).unwrap();
        gl.weight = Tensor::from_fn(&[1, 4, 3], |i| i as f64 * 0.1 - 0.5);
        gl.bias = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let x = Tensor::from_fn(&[2, 4], |i| i as f64);
        let y = gl.project_trend(&x).unwrap();
        let w2 = gl.weight.reshape(&[4, 3]).unwrap();
        let b2 = gl.bias.reshape(&[3]).unwrap();
        let expected = crate::tensor::kernels::linear(&x, &w2, Some(&b2)).unwrap();
        assert!(y.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn identity_heads_pass_trend_through() {
        let gl = GroupedLinear::identity(2, 5)
            .with_clustering(ChannelClustering {
                k: 2,
                assignments: vec![1, 0, 1],
                centroids: Tensor::zeros(&[2, 5]),
                feature: FEATURE_TAG.into(),
            })
            .unwrap();
        let x = Tensor::from_fn(&[3, 5], |i| (i as f64).cos());
        assert_eq!(gl.project_trend(&x).unwrap(), x);
    }

    #[test]
    fn unfitted_projection_errors() {
        let gl = GroupedLinear::identity(1, 4);
        assert!(gl.project_trend(&Tensor::zeros(&[1, 4])).is_err());
    }
}
