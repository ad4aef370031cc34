//! Objective terms: source cross-entropy, MMD between normalized batch-mean
//! features, classifier discrepancy, pseudo-labelling, and the Siamese
//! contrastive loss over source/target and target/target pairs.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Batch means with a smaller norm are left unnormalized.
pub const NORM_FLOOR: f64 = 1e-12;

/// Softmax outputs of `F1` and `F2` on the same inputs.
#[derive(Clone, Copy, Debug)]
pub struct ProbPair<'t> {
    pub p1: Var<'t>,
    pub p2: Var<'t>,
}

impl<'t> ProbPair<'t> {
    pub fn from_logits(logits1: Var<'t>, logits2: Var<'t>) -> Result<Self> {
        Ok(Self {
            p1: logits1.softmax_rows()?,
            p2: logits2.softmax_rows()?,
        })
    }
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch("source labels"));
    }
    if labels.len() != rows {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

/// `-mean_i [log p1(y_i | x_i) + log p2(y_i | x_i)]` from probabilities,
/// with the log argument clamped at [`LOG_CLAMP`].
pub fn cross_entropy_from_probs<'t>(probs: &ProbPair<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = probs.p1.shape();
    check_labels(labels, shape[0], shape[1])?;
    let picked1 = probs.p1.pick_rows(labels)?.max_scalar(LOG_CLAMP)?.log()?;
    let picked2 = probs.p2.pick_rows(labels)?.max_scalar(LOG_CLAMP)?.log()?;
    picked1.add(&picked2)?.mean()?.neg()
}

/// Same quantity as [`cross_entropy_from_probs`] computed from logits with
/// log-softmax; this is the form used for training.
pub fn cross_entropy_source<'t>(logits1: Var<'t>, logits2: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits1.shape();
    if shape.len() != 2 || logits2.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_source",
            lhs: shape,
            rhs: logits2.shape(),
        });
    }
    check_labels(labels, shape[0], shape[1])?;
    let floor = LOG_CLAMP.ln();
    let lp1 = logits1.log_softmax_rows()?.pick_rows(labels)?.max_scalar(floor)?;
    let lp2 = logits2.log_softmax_rows()?.pick_rows(labels)?.max_scalar(floor)?;
    lp1.add(&lp2)?.mean()?.neg()
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MmdKernel {
    #[default]
    /// `||g_s - g_t||^2` between the normalized batch means.
    NormalizedMeanSq,
    /// `2 - 2 k(g_s, g_t)` with a Gaussian kernel of bandwidth `sigma`.
    RbfMean { sigma: f64 },
}

fn normalized_mean<'t>(feats: Var<'t>, what: &'static str) -> Result<Var<'t>> {
    let shape = feats.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::EmptyBatch(what));
    }
    let mean = feats.mean_axis(0)?;
    let norm = mean.l2_norm()?;
    if norm.item()? < NORM_FLOOR {
        return Ok(mean);
    }
    mean.div(&norm)
}

/// Squared MMD estimate between the ℓ2-normalized batch-mean features of
/// the two domains.
pub fn mmd_loss<'t>(source_feats: Var<'t>, target_feats: Var<'t>, kernel: MmdKernel) -> Result<Var<'t>> {
    let (s, t) = (source_feats.shape(), target_feats.shape());
    if s.len() == 2 && t.len() == 2 && s[1] != t[1] {
        return Err(Error::ShapeMismatch {
            op: "mmd_loss",
            lhs: s,
            rhs: t,
        });
    }
    let gs = normalized_mean(source_feats, "source features")?;
    let gt = normalized_mean(target_feats, "target features")?;
    let sq = gs.sub(&gt)?.square()?.sum()?;
    match kernel {
        MmdKernel::NormalizedMeanSq => Ok(sq),
        MmdKernel::RbfMean { sigma } => {
            if sigma <= 0.0 {
                return Err(Error::invalid("rbf bandwidth must be positive"));
            }
            sq.mul_scalar(-1.0 / (2.0 * sigma * sigma))?
                .exp()?
                .mul_scalar(-2.0)?
                .add_scalar(2.0)
        }
    }
}

/// Mean over the batch of `(1/K) sum_k |p1_k - p2_k|`.
pub fn discrepancy<'t>(probs: &ProbPair<'t>) -> Result<Var<'t>> {
    if probs.p1.shape() != probs.p2.shape() {
        return Err(Error::ShapeMismatch {
            op: "discrepancy",
            lhs: probs.p1.shape(),
            rhs: probs.p2.shape(),
        });
    }
    probs.p1.sub(&probs.p2)?.abs()?.mean()
}

/// Per-sample argmax of `p1 + p2` and the attained maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ties resolve to the lowest class index.
pub fn pseudo_label(p1: &Tensor, p2: &Tensor) -> Result<PseudoLabels> {
    if p1.shape() != p2.shape() || p1.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "pseudo_label",
            lhs: p1.shape().to_vec(),
            rhs: p2.shape().to_vec(),
        });
    }
    let mut labels = Vec::with_capacity(p1.rows());
    let mut confidence = Vec::with_capacity(p1.rows());
    for i in 0..p1.rows() {
        let (mut best, mut best_k) = (f64::NEG_INFINITY, 0);
        for (k, (a, b)) in p1.row(i).iter().zip(p2.row(i)).enumerate() {
            if a + b > best {
                best = a + b;
                best_k = k;
            }
        }
        labels.push(best_k);
        confidence.push(best);
    }
    Ok(PseudoLabels { labels, confidence })
}

/// `c(y, y')` over every `(left[i], right[j])` pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndicator {
    rows: usize,
    cols: usize,
    same: Vec<bool>,
}

impl PairIndicator {
    pub fn new(left: &[usize], right: &[usize]) -> Self {
        let same = left
            .iter()
            .flat_map(|a| right.iter().map(move |b| a == b))
            .collect();
        Self {
            rows: left.len(),
            cols: right.len(),
            same,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.same[i * self.cols + j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// `||Δ||^2` for a same-class pair, `max(0, m - ||Δ||)^2` otherwise.
pub fn siamese_distance<'t>(feat_i: Var<'t>, feat_j: Var<'t>, same_class: bool, margin: f64) -> Result<Var<'t>> {
    if margin <= 0.0 {
        return Err(Error::invalid("margin must be positive"));
    }
    let diff = feat_i.sub(&feat_j)?;
    if same_class {
        diff.square()?.sum()
    } else {
        diff.l2_norm()?
            .neg()?
            .add_scalar(margin)?
            .max_scalar(0.0)?
            .square()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveParams {
    pub margin: f64,
    /// Upper bound on the number of pairs scored; larger pair sets are
    /// subsampled uniformly.
    pub pair_budget: usize,
    /// Target samples whose pseudo-label confidence is below this are skipped.
    pub conf_threshold: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        Self {
            margin: 1.0,
            pair_budget: 100_000,
            conf_threshold: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerms<'t> {
    /// Source↔target mean plus target↔target mean.
    pub total: Var<'t>,
    pub source_target: f64,
    pub target_target: f64,
    pub source_target_pairs: usize,
    pub target_target_pairs: usize,
}

/// Mean Siamese loss over the listed pairs; `None` when there are none.
fn pair_term<'t>(
    a: Var<'t>,
    b: Var<'t>,
    pairs: &[(usize, usize, bool)],
    margin: f64,
) -> Result<Option<Var<'t>>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let tape = a.tape();
    let idx: Vec<(usize, usize)> = pairs.iter().map(|&(i, j, _)| (i, j)).collect();
    let same = Tensor::vector(pairs.iter().map(|p| if p.2 { 1.0 } else { 0.0 }).collect());
    let diff = same.map(|s| 1.0 - s);
    let dist = a.pair_distances(&b, &idx)?;
    let pull = dist.square()?.mul(&tape.constant(same))?;
    let push = dist
        .neg()?
        .add_scalar(margin)?
        .max_scalar(0.0)?
        .square()?
        .mul(&tape.constant(diff))?;
    Ok(Some(pull.add(&push)?.mean()?))
}

/// Contrastive loss over all source↔target pairs (true source labels vs
/// target pseudo-labels) plus all unordered target↔target pairs. Each group
/// is averaged over its pair count.
pub fn contrastive_loss<'t>(
    source_feats: Var<'t>,
    source_labels: &[usize],
    target_feats: Var<'t>,
    target_pseudo: &PseudoLabels,
    params: &ContrastiveParams,
    rng: &mut impl Rng,
) -> Result<ContrastiveTerms<'t>> {
    if params.margin <= 0.0 {
        return Err(Error::invalid("margin must be positive"));
    }
    let (ns, nt) = (source_feats.shape()[0], target_feats.shape()[0]);
    if ns == 0 || source_labels.is_empty() {
        return Err(Error::EmptyBatch("contrastive source batch"));
    }
    if nt == 0 || target_pseudo.is_empty() {
        return Err(Error::EmptyBatch("contrastive target batch"));
    }
    if source_labels.len() != ns || target_pseudo.len() != nt {
        return Err(Error::invalid("label count does not match feature rows"));
    }

    let keep: Vec<bool> = target_pseudo
        .confidence
        .iter()
        .map(|&c| c >= params.conf_threshold)
        .collect();
    let pl = &target_pseudo.labels;
    let mut st = Vec::with_capacity(ns * nt);
    for (i, &y) in source_labels.iter().enumerate() {
        for j in (0..nt).filter(|&j| keep[j]) {
            st.push((i, j, y == pl[j]));
        }
    }
    let mut tt = Vec::with_capacity(nt * nt.saturating_sub(1) / 2);
    for i in (0..nt).filter(|&i| keep[i]) {
        for j in (i + 1..nt).filter(|&j| keep[j]) {
            tt.push((i, j, pl[i] == pl[j]));
        }
    }

    let total_pairs = st.len() + tt.len();
    if params.pair_budget < total_pairs {
        let mut chosen = index::sample(rng, total_pairs, params.pair_budget).into_vec();
        chosen.sort_unstable();
        let (mut st_kept, mut tt_kept) = (Vec::new(), Vec::new());
        for c in chosen {
            if c < st.len() {
                st_kept.push(st[c]);
            } else {
                tt_kept.push(tt[c - st.len()]);
            }
        }
        st = st_kept;
        tt = tt_kept;
    }

    let st_term = pair_term(source_feats, target_feats, &st, params.margin)?;
    let tt_term = pair_term(target_feats, target_feats, &tt, params.margin)?;
    let value = |t: &Option<Var<'t>>| t.map_or(Ok(0.0), |v| v.item());
    let (source_target, target_target) = (value(&st_term)?, value(&tt_term)?);
    let total = match (st_term, tt_term) {
        (Some(a), Some(b)) => a.add(&b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => source_feats.tape().constant(Tensor::scalar(0.0)),
    };
    Ok(ContrastiveTerms {
        total,
        source_target,
        target_target,
        source_target_pairs: st.len(),
        target_target_pairs: tt.len(),
    })
}

/// Convenience for callers holding plain tensors.
pub fn contrastive_value(
    source_feats: &Tensor,
    source_labels: &[usize],
    target_feats: &Tensor,
    target_pseudo: &PseudoLabels,
    params: &ContrastiveParams,
    rng: &mut impl Rng,
) -> Result<f64> {
    let tape = Tape::new();
    let terms = contrastive_loss(
        tape.constant(source_feats.clone()),
        source_labels,
        tape.constant(target_feats.clone()),
        target_pseudo,
        params,
        rng,
    )?;
    terms.total.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_probs(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let tape = Tape::new();
        let logits = Tensor::new(vec![n, k], (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        tape.constant(logits).softmax_rows().unwrap().value()
    }

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let tape = Tape::new();
        let p = tape.constant(rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let ce = cross_entropy_from_probs(&ProbPair { p1: p, p2: p }, &[1, 0]).unwrap();
        assert_eq!(ce.item().unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_binary() {
        let tape = Tape::new();
        let p = tape.constant(rows(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]));
        for labels in [[0, 0, 0], [1, 0, 1]] {
            let ce = cross_entropy_from_probs(&ProbPair { p1: p, p2: p }, &labels).unwrap();
            assert!((ce.item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
        let zeros = tape.constant(Tensor::zeros(&[3, 2]));
        let ce = cross_entropy_source(zeros, zeros, &[0, 1, 1]).unwrap();
        assert!((ce.item().unwrap() - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let tape = Tape::new();
        let l = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            cross_entropy_source(l, l, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
        let empty = tape.constant(Tensor::zeros(&[0, 3]));
        assert!(cross_entropy_source(empty, empty, &[]).is_err());
    }

    #[test]
    fn cross_entropy_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let logits1 = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let logits2 = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            // direct per-sample -log p, with probabilities computed by hand
            let naive_head = |l: &Tensor| -> Vec<f64> {
                (0..4)
                    .map(|i| {
                        let z: f64 = l.row(i).iter().map(|v| v.exp()).sum();
                        -(l.row(i)[labels[i]].exp() / z).ln()
                    })
                    .collect()
            };
            let (a, b) = (naive_head(&logits1), naive_head(&logits2));
            let mut total = 0.0;
            for i in 0..4 {
                total += a[i] + b[i];
            }
            let expected = total / 4.0;
            let tape = Tape::new();
            let ce = cross_entropy_source(tape.constant(logits1.clone()), tape.constant(logits2.clone()), &labels)
                .unwrap()
                .item()
                .unwrap();
            assert!((ce - expected).abs() < 1e-10);
            let pp = ProbPair::from_logits(tape.constant(logits1), tape.constant(logits2)).unwrap();
            let ce_p = cross_entropy_from_probs(&pp, &labels).unwrap().item().unwrap();
            assert!((ce_p - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn mmd_cases() {
        let tape = Tape::new();
        let a = tape.constant(rows(&[&[1.0, 2.0], &[3.0, -1.0]]));
        let k = MmdKernel::NormalizedMeanSq;
        assert_eq!(mmd_loss(a, a, k).unwrap().item().unwrap(), 0.0);

        let s = tape.constant(rows(&[&[1.0, 0.0], &[1.0, 0.0]]));
        let t = tape.constant(rows(&[&[0.0, 2.0], &[0.0, 4.0]]));
        assert!((mmd_loss(s, t, k).unwrap().item().unwrap() - 2.0).abs() < 1e-12);

        let b = tape.constant(rows(&[&[0.5, 0.1], &[-0.2, 0.9], &[0.3, 0.3]]));
        let b3 = b.mul_scalar(3.0).unwrap();
        let l1 = mmd_loss(a, b, k).unwrap().item().unwrap();
        let l3 = mmd_loss(a, b3, k).unwrap().item().unwrap();
        assert!((l1 - l3).abs() < 1e-12);

        let rbf = MmdKernel::RbfMean { sigma: 1.0 };
        assert!(mmd_loss(a, a, rbf).unwrap().item().unwrap().abs() < 1e-15);
        let r = mmd_loss(s, t, rbf).unwrap().item().unwrap();
        assert!((r - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn mmd_zero_mean_skips_normalization() {
        let tape = Tape::new();
        let s = tape.constant(rows(&[&[1.0, 1.0], &[-1.0, -1.0]]));
        let t = tape.constant(rows(&[&[0.0, 3.0]]));
        // g_s = 0 stays unnormalized; g_t normalizes to [0, 1]
        let l = mmd_loss(s, t, MmdKernel::NormalizedMeanSq).unwrap();
        assert!((l.item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mmd_errors() {
        let tape = Tape::new();
        let e = tape.constant(Tensor::zeros(&[0, 2]));
        let a = tape.constant(Tensor::ones(&[2, 2]));
        assert!(matches!(mmd_loss(e, a, MmdKernel::default()), Err(Error::EmptyBatch(_))));
        let c = tape.constant(Tensor::ones(&[2, 3]));
        assert!(mmd_loss(a, c, MmdKernel::default()).is_err());
    }

    #[test]
    fn discrepancy_cases() {
        let tape = Tape::new();
        let p = tape.constant(rows(&[&[0.2, 0.8], &[0.6, 0.4]]));
        assert_eq!(discrepancy(&ProbPair { p1: p, p2: p }).unwrap().item().unwrap(), 0.0);
        let p1 = tape.constant(rows(&[&[1.0, 0.0]]));
        let p2 = tape.constant(rows(&[&[0.0, 1.0]]));
        assert_eq!(discrepancy(&ProbPair { p1, p2 }).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn discrepancy_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let (a, b) = (random_probs(6, 4, &mut rng), random_probs(6, 4, &mut rng));
            let mut expected = 0.0;
            for i in 0..6 {
                let mut d = 0.0;
                for k in 0..4 {
                    d += (a.row(i)[k] - b.row(i)[k]).abs();
                }
                expected += d / 4.0;
            }
            expected /= 6.0;
            let tape = Tape::new();
            let pair = ProbPair {
                p1: tape.constant(a),
                p2: tape.constant(b),
            };
            assert!((discrepancy(&pair).unwrap().item().unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_label_cases() {
        let p = pseudo_label(&rows(&[&[0.9, 0.1]]), &rows(&[&[0.8, 0.2]])).unwrap();
        assert_eq!(p.labels, vec![0]);
        assert!((p.confidence[0] - 1.7).abs() < 1e-12);
        let tie = pseudo_label(&rows(&[&[0.5, 0.5]]), &rows(&[&[0.5, 0.5]])).unwrap();
        assert_eq!(tie.labels, vec![0]);
    }

    #[test]
    fn indicator() {
        let c = PairIndicator::new(&[0, 1, 1], &[1, 0]);
        assert_eq!(c.dims(), (3, 2));
        assert!(!c.get(0, 0) && c.get(0, 1) && c.get(1, 0) && c.get(2, 0));
        let sym = PairIndicator::new(&[2, 0, 2], &[2, 0, 2]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(sym.get(i, j), sym.get(j, i));
            }
        }
    }

    #[test]
    fn siamese_cases() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0.3, -0.4]));
        assert_eq!(siamese_distance(a, a, true, 1.0).unwrap().item().unwrap(), 0.0);
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        // ||a - b|| = 0.5 == margin
        assert_eq!(siamese_distance(a, b, false, 0.5).unwrap().item().unwrap(), 0.0);
        assert_eq!(siamese_distance(b, b, false, 1.0).unwrap().item().unwrap(), 1.0);
        assert!(siamese_distance(a, b, false, 0.0).is_err());
    }

    #[test]
    fn contrastive_single_pair() {
        let tape = Tape::new();
        let s = tape.constant(rows(&[&[0.0, 0.0]]));
        let t = tape.constant(rows(&[&[3.0, 4.0]]));
        let pseudo = PseudoLabels {
            labels: vec![1],
            confidence: vec![2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let terms = contrastive_loss(s, &[1], t, &pseudo, &ContrastiveParams::default(), &mut rng).unwrap();
        assert_eq!(terms.source_target, 25.0);
        assert_eq!(terms.target_target, 0.0);
        assert_eq!(terms.target_target_pairs, 0);
        assert_eq!(terms.total.item().unwrap(), 25.0);
    }

    #[test]
    fn contrastive_identical_is_zero() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::ones(&[3, 4]));
        let t = tape.constant(Tensor::ones(&[2, 4]));
        let pseudo = PseudoLabels {
            labels: vec![2, 2],
            confidence: vec![1.0, 1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let terms = contrastive_loss(s, &[2, 2, 2], t, &pseudo, &ContrastiveParams::default(), &mut rng).unwrap();
        assert_eq!(terms.total.item().unwrap(), 0.0);
    }

    #[test]
    fn contrastive_gating_and_budget() {
        let tape = Tape::new();
        let s = tape.constant(rows(&[&[0.0, 0.0], &[1.0, 0.0]]));
        let t = tape.constant(rows(&[&[0.0, 1.0], &[2.0, 2.0], &[0.5, 0.5]]));
        let pseudo = PseudoLabels {
            labels: vec![0, 1, 0],
            confidence: vec![1.9, 0.4, 1.2],
        };
        let params = ContrastiveParams {
            conf_threshold: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let terms = contrastive_loss(s, &[0, 1], t, &pseudo, &params, &mut rng).unwrap();
        assert_eq!(terms.source_target_pairs, 4);
        assert_eq!(terms.target_target_pairs, 1);

        let params = ContrastiveParams {
            pair_budget: 3,
            ..Default::default()
        };
        let terms = contrastive_loss(s, &[0, 1], t, &pseudo, &params, &mut rng).unwrap();
        assert_eq!(terms.source_target_pairs + terms.target_target_pairs, 3);
    }

    #[test]
    fn contrastive_errors() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::ones(&[1, 2]));
        let e = tape.constant(Tensor::zeros(&[0, 2]));
        let none = PseudoLabels {
            labels: vec![],
            confidence: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            contrastive_loss(s, &[0], e, &none, &ContrastiveParams::default(), &mut rng),
            Err(Error::EmptyBatch(_))
        ));
    }
}
