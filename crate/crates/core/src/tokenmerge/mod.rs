//! Length-adaptive feature compression by bipartite token merging.
//!
//! Tokens are split at random into a destination half and a source half.
//! Every source proposes one edge to its most cosine-similar destination;
//! the `M` strongest edges are merged and each destination becomes the mean
//! of itself and everything merged into it. If more merges are needed than
//! one round can supply, further rounds run on the surviving tokens. The
//! receiver restores full length by copying each destination column into
//! the positions merged into it.

mod wire;

pub use wire::{decode_feature, encode_feature, Encoded};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::costmodel::kept_tokens;
use crate::error::{Error, Result};

/// `d_C × J` latent, stored column-major (column `j` is token `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    channels: usize,
    data: Vec<f64>,
}

impl LatentFeature {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.is_empty() || data.len() % channels != 0 {
            return Err(Error::Dimension {
                expected: channels.max(1),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent feature".into()));
        }
        Ok(LatentFeature { channels, data })
    }

    pub fn zeros(channels: usize, tokens: usize) -> Self {
        LatentFeature {
            channels,
            data: vec![0.0; channels * tokens],
        }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let channels = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != channels) {
            return Err(Error::Dimension {
                expected: channels,
                got: columns
                    .iter()
                    .map(Vec::len)
                    .find(|&l| l != channels)
                    .unwrap_or(0),
            });
        }
        LatentFeature::new(channels, columns.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tokens(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.channels..(j + 1) * self.channels]
    }

    fn column_mut(&mut self, j: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[j * c..(j + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn mse(&self, other: &LatentFeature) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n
    }
}

/// Cosine similarity; a zero-norm token compares as `-inf`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        f64::NEG_INFINITY
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// One bipartition round: destination and source index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub dest: Vec<usize>,
    pub src: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    pub j_max: usize,
    /// Bipartitions in the order they were drawn.
    pub rounds: Vec<Round>,
    /// `(dest, src)` in original token indices. A source in a later round
    /// may itself be the destination of an earlier pair.
    pub pairs: Vec<(usize, usize)>,
    /// Surviving token indices, ascending.
    pub kept: Vec<usize>,
    pub aux_bits: u64,
}

impl MergePlan {
    pub fn identity(j_max: usize) -> Self {
        MergePlan {
            j_max,
            rounds: Vec::new(),
            pairs: Vec::new(),
            kept: (0..j_max).collect(),
            aux_bits: 0,
        }
    }

    /// Rebuilds the plan from its pair list (what the receiver sees).
    pub fn from_pairs(j_max: usize, pairs: Vec<(usize, usize)>, bits: u32) -> Result<Self> {
        let mut is_src = vec![false; j_max];
        for &(dest, src) in &pairs {
            if dest >= j_max || src >= j_max || dest == src || is_src[src] {
                return Err(Error::Format {
                    what: "merge plan",
                    reason: format!("bad pair ({dest}, {src})"),
                });
            }
            is_src[src] = true;
        }
        let kept: Vec<usize> = (0..j_max).filter(|&j| !is_src[j]).collect();
        let plan = MergePlan {
            j_max,
            rounds: Vec::new(),
            aux_bits: bits as u64 * pairs.len() as u64,
            pairs,
            kept,
        };
        if plan.kept.is_empty() || plan.root_of_all().iter().any(|&r| is_src[r]) {
            return Err(Error::Format {
                what: "merge plan",
                reason: "cyclic pairs".into(),
            });
        }
        Ok(plan)
    }

    /// Maps every original index to the kept index that absorbed it.
    pub fn root_of_all(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.j_max).collect();
        for &(dest, src) in &self.pairs {
            parent[src] = dest;
        }
        (0..self.j_max)
            .map(|mut j| {
                // Chains are at most one hop per round.
                for _ in 0..=self.pairs.len() {
                    if parent[j] == j {
                        break;
                    }
                    j = parent[j];
                }
                j
            })
            .collect()
    }

    /// For every original index, its column in the compressed feature.
    pub fn column_of_all(&self) -> Vec<usize> {
        let mut rank = vec![usize::MAX; self.j_max];
        for (r, &k) in self.kept.iter().enumerate() {
            rank[k] = r;
        }
        self.root_of_all()
            .into_iter()
            .map(|root| rank[root])
            .collect()
    }

    pub fn output_len(&self) -> usize {
        self.kept.len()
    }
}

/// Plans the merge for ratio `beta`, drawing bipartitions from `rng`.
pub fn plan_merge<R: Rng + ?Sized>(
    z: &LatentFeature,
    beta: f64,
    bits: u32,
    rng: &mut R,
) -> Result<MergePlan> {
    let j_max = z.tokens();
    let target = kept_tokens(beta, j_max)?;
    plan_with(z, j_max - target, bits, |alive| {
        let mut order = alive.to_vec();
        order.shuffle(rng);
        let half = order.len().div_ceil(2);
        let (dest, src) = order.split_at(half);
        let mut dest = dest.to_vec();
        let mut src = src.to_vec();
        dest.sort_unstable();
        src.sort_unstable();
        Round { dest, src }
    })
}

/// Single-round plan with an explicit bipartition (`m <= src.len()`).
pub fn plan_with_partition(
    z: &LatentFeature,
    m: usize,
    bits: u32,
    dest: &[usize],
    src: &[usize],
) -> Result<MergePlan> {
    if m > src.len() {
        return Err(Error::OutOfRange {
            name: "merges",
            value: m as f64,
            lo: 0.0,
            hi: src.len() as f64,
        });
    }
    let mut round = Some(Round {
        dest: dest.to_vec(),
        src: src.to_vec(),
    });
    plan_with(z, m, bits, |_| round.take().expect("single round"))
}

fn plan_with(
    z: &LatentFeature,
    merges: usize,
    bits: u32,
    mut split: impl FnMut(&[usize]) -> Round,
) -> Result<MergePlan> {
    let j_max = z.tokens();
    // Running group sums and sizes; similarity uses the group mean direction,
    // which is the same as the sum direction.
    let mut sums: Vec<Vec<f64>> = (0..j_max).map(|j| z.column(j).to_vec()).collect();
    let mut alive: Vec<usize> = (0..j_max).collect();
    let mut rounds = Vec::new();
    let mut pairs = Vec::with_capacity(merges);
    let mut remaining = merges;

    while remaining > 0 {
        let round = split(&alive);
        if round.dest.is_empty() || round.src.is_empty() {
            break;
        }
        let mut edges: Vec<(f64, usize, usize)> = round
            .src
            .iter()
            .map(|&s| {
                let mut best = (f64::NEG_INFINITY, round.dest[0]);
                for &d in &round.dest {
                    let sim = cosine_sim(&sums[d], &sums[s]);
                    if sim > best.0 {
                        best = (sim, d);
                    }
                }
                (best.0, s, best.1)
            })
            .collect();
        edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = remaining.min(edges.len());
        for &(_, s, d) in &edges[..take] {
            let moved = std::mem::take(&mut sums[s]);
            for (acc, v) in sums[d].iter_mut().zip(&moved) {
                *acc += v;
            }
            pairs.push((d, s));
        }
        let gone: Vec<usize> = edges[..take].iter().map(|e| e.1).collect();
        alive.retain(|j| !gone.contains(j));
        remaining -= take;
        rounds.push(round);
    }

    let mut kept = alive;
    kept.sort_unstable();
    Ok(MergePlan {
        j_max,
        rounds,
        aux_bits: bits as u64 * pairs.len() as u64,
        pairs,
        kept,
    })
}

/// Replaces each kept token by the mean of its merge group.
pub fn apply_merge(z: &LatentFeature, plan: &MergePlan) -> Result<LatentFeature> {
    if z.tokens() != plan.j_max {
        return Err(Error::Dimension {
            expected: plan.j_max,
            got: z.tokens(),
        });
    }
    let cols = plan.column_of_all();
    let mut out = LatentFeature::zeros(z.channels(), plan.output_len());
    let mut counts = vec![0usize; plan.output_len()];
    for (j, &c) in cols.iter().enumerate() {
        counts[c] += 1;
        for (acc, v) in out.column_mut(c).iter_mut().zip(z.column(j)) {
            *acc += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let inv = 1.0 / n as f64;
        out.column_mut(c).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Restores full length by duplicating each received column.
pub fn unmerge(z_hat: &LatentFeature, plan: &MergePlan) -> Result<LatentFeature> {
    if z_hat.tokens() != plan.output_len() {
        return Err(Error::Dimension {
            expected: plan.output_len(),
            got: z_hat.tokens(),
        });
    }
    let cols = plan.column_of_all();
    let mut data = Vec::with_capacity(z_hat.channels() * plan.j_max);
    for &c in &cols {
        data.extend_from_slice(z_hat.column(c));
    }
    Ok(LatentFeature {
        channels: z_hat.channels(),
        data,
    })
}

/// Pruning comparison: keep the highest-norm tokens, ascending index order.
pub fn prune_plan(z: &LatentFeature, beta: f64) -> Result<Vec<usize>> {
    let target = kept_tokens(beta, z.tokens())?;
    let norm = |j: usize| z.column(j).iter().map(|v| v * v).sum::<f64>();
    let mut order: Vec<usize> = (0..z.tokens()).collect();
    order.sort_by(|&a, &b| norm(b).total_cmp(&norm(a)).then(a.cmp(&b)));
    let mut kept = order[..target].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

pub fn apply_prune(z: &LatentFeature, kept: &[usize]) -> LatentFeature {
    let mut data = Vec::with_capacity(z.channels() * kept.len());
    for &k in kept {
        data.extend_from_slice(z.column(k));
    }
    LatentFeature {
        channels: z.channels(),
        data,
    }
}

/// Receiver side of pruning: zeros at the dropped positions.
pub fn zero_pad(z_hat: &LatentFeature, kept: &[usize], j_max: usize) -> Result<LatentFeature> {
    if z_hat.tokens() != kept.len() {
        return Err(Error::Dimension {
            expected: kept.len(),
            got: z_hat.tokens(),
        });
    }
    let mut out = LatentFeature::zeros(z_hat.channels(), j_max);
    for (c, &k) in kept.iter().enumerate() {
        out.column_mut(k).copy_from_slice(z_hat.column(c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn feat(cols: &[[f64; 2]]) -> LatentFeature {
        LatentFeature::from_columns(&cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_values() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!(
            (cosine_sim(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15
        );
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn beta_zero_is_identity() {
        let z = feat(&[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [3.0, -1.0]]);
        let plan = plan_merge(&z, 0.0, 16, &mut stream(0, 3)).unwrap();
        assert!(plan.pairs.is_empty());
        assert_eq!(plan.kept, vec![0, 1, 2, 3]);
        assert_eq!(plan.aux_bits, 0);
        assert_eq!(apply_merge(&z, &plan).unwrap(), z);
        assert_eq!(unmerge(&z, &plan).unwrap(), z);
    }

    #[test]
    fn most_similar_source_wins() {
        let z = feat(&[[2.0, 0.0], [1.0, 1.0], [4.0, 0.0]]);
        let plan = plan_with_partition(&z, 1, 16, &[0], &[1, 2]).unwrap();
        assert_eq!(plan.pairs, vec![(0, 2)]);
        assert_eq!(plan.kept, vec![0, 1]);
        assert_eq!(plan.aux_bits, 16);
        let merged = apply_merge(&z, &plan).unwrap();
        assert_eq!(merged.column(0), &[3.0, 0.0]);
        assert_eq!(merged.column(1), &[1.0, 1.0]);
        let back = unmerge(&merged, &plan).unwrap();
        assert_eq!(back.column(0), &[3.0, 0.0]);
        assert_eq!(back.column(2), &[3.0, 0.0]);
        assert_eq!(back.column(1), &[1.0, 1.0]);
    }

    #[test]
    fn two_sources_into_one_destination() {
        let z = feat(&[[0.0, 3.0], [0.0, 6.0], [0.0, 0.0], [5.0, 0.0]]);
        // The zero token has no direction; with two merges required it is
        // taken last but still merged.
        let plan = plan_with_partition(&z, 2, 16, &[0, 3], &[1, 2]).unwrap();
        assert_eq!(plan.pairs, vec![(0, 1), (0, 2)]);
        let merged = apply_merge(&z, &plan).unwrap();
        assert_eq!(merged.column(0), &[0.0, 3.0]);
        assert_eq!(merged.column(1), &[5.0, 0.0]);
    }

    #[test]
    fn full_ratio_collapses_to_one_token() {
        let mut rng = stream(9, 3);
        let cols: Vec<Vec<f64>> = (0..16)
            .map(|j| vec![j as f64 + 1.0, (j % 3) as f64])
            .collect();
        let z = LatentFeature::from_columns(&cols).unwrap();
        let plan = plan_merge(&z, 1.0, 16, &mut rng).unwrap();
        assert_eq!(plan.kept.len(), 1);
        assert_eq!(plan.pairs.len(), 15);
        assert!(plan.rounds.len() > 1);
        let merged = apply_merge(&z, &plan).unwrap();
        let mean0 = cols.iter().map(|c| c[0]).sum::<f64>() / 16.0;
        assert!((merged.column(0)[0] - mean0).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let z = feat(&[[1.0, 0.0], [0.0, 1.0]]);
        let plan = MergePlan::identity(3);
        assert!(apply_merge(&z, &plan).is_err());
        assert!(unmerge(&z, &plan).is_err());
        assert!(LatentFeature::new(2, vec![1.0, f64::NAN]).is_err());
        assert!(LatentFeature::new(2, vec![1.0]).is_err());
    }

    #[test]
    fn prune_keeps_largest_norms() {
        let z = feat(&[[0.1, 0.0], [3.0, 0.0], [0.0, 0.2], [1.0, 1.0]]);
        let kept = prune_plan(&z, 0.5).unwrap();
        assert_eq!(kept, vec![1, 3]);
        let padded = zero_pad(&apply_prune(&z, &kept), &kept, 4).unwrap();
        assert_eq!(padded.column(0), &[0.0, 0.0]);
        assert_eq!(padded.column(1), &[3.0, 0.0]);
    }
}
