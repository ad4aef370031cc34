//! Finite-difference check of every training loss with respect to the
//! parameters it trains, on small randomized models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss, cross_entropy_source, discrepancy, mmd_loss, pseudo_label, siamese_distance,
    ContrastiveParams, MmdKernel, ProbPair, PseudoLabels,
};
use crate::models::{Activation, Mlp, ModelTriple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mmd,
    Discrepancy,
    Siamese,
    Contrastive,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::CrossEntropy,
        LossKind::Mmd,
        LossKind::Discrepancy,
        LossKind::Siamese,
        LossKind::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Mmd => "mmd",
            LossKind::Discrepancy => "discrepancy",
            LossKind::Siamese => "siamese",
            LossKind::Contrastive => "contrastive",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the classifier heads are differentiated too.
    fn trains_heads(self) -> bool {
        matches!(self, LossKind::CrossEntropy | LossKind::Discrepancy)
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Scales the analytic gradient of this loss by 1.01 (negative control).
    pub corrupt: Option<LossKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossCheck {
    pub loss: LossKind,
    pub instances: usize,
    pub parameters_checked: usize,
    pub worst_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<LossCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<LossKind> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.loss).collect()
    }
}

struct Instance {
    model: ModelTriple,
    xs: Tensor,
    ys: Vec<usize>,
    xt: Tensor,
    pseudo: PseudoLabels,
    pairs: Vec<(usize, usize, bool)>,
    margin: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("sized")
}

fn random_mlp(rng: &mut ChaCha8Rng, dims: &[usize], output: Activation) -> Result<Mlp> {
    let mut mlp = Mlp::init(dims, Activation::Tanh, output, rng)?;
    for b in mlp.params_mut().into_iter().skip(1).step_by(2) {
        b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    Ok(mlp)
}

fn instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let k = rng.random_range(2..=3);
    let (ns, nt) = (rng.random_range(3..=6), rng.random_range(3..=6));
    let g = random_mlp(rng, &[2, 4, 3], Activation::Tanh)?;
    let f1 = random_mlp(rng, &[3, 4, k], Activation::None)?;
    let f2 = random_mlp(rng, &[3, 4, k], Activation::None)?;
    let model = ModelTriple::new(g, f1, f2)?;
    let xs = uniform(rng, &[ns, 2], 2.0);
    let xt = uniform(rng, &[nt, 2], 2.0);
    let ys = (0..ns).map(|_| rng.random_range(0..k)).collect();
    let (p1, p2) = model.probabilities(&xt)?;
    let pseudo = pseudo_label(&p1, &p2)?;
    let pairs = (0..4)
        .map(|_| (rng.random_range(0..ns), rng.random_range(0..nt), rng.random_bool(0.5)))
        .collect();
    Ok(Instance {
        model,
        xs,
        ys,
        xt,
        pseudo,
        pairs,
        margin: rng.random_range(0.5..2.0),
    })
}

fn loss_value<'t>(kind: LossKind, inst: &Instance, tape: &'t Tape, model: &ModelTriple, trainable: bool) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let heads = trainable && kind.trains_heads();
    let g = model.g.bind(tape, trainable);
    let f1 = model.f1.bind(tape, heads);
    let f2 = model.f2.bind(tape, heads);
    let fs = g.forward(tape.constant(inst.xs.clone()))?;
    let ft = g.forward(tape.constant(inst.xt.clone()))?;
    let value = match kind {
        LossKind::CrossEntropy => cross_entropy_source(f1.forward(fs)?, f2.forward(fs)?, &inst.ys)?,
        LossKind::Mmd => mmd_loss(fs, ft, MmdKernel::NormalizedMeanSq)?,
        LossKind::Discrepancy => discrepancy(&ProbPair::from_logits(f1.forward(ft)?, f2.forward(ft)?)?)?,
        LossKind::Siamese => {
            let mut total: Option<Var<'t>> = None;
            for &(i, j, same) in &inst.pairs {
                let d = siamese_distance(fs.select_rows(&[i])?, ft.select_rows(&[j])?, same, inst.margin)?;
                total = Some(match total {
                    Some(t) => t.add(&d)?,
                    None => d,
                });
            }
            total.expect("pairs are non-empty").mul_scalar(1.0 / inst.pairs.len() as f64)?
        }
        LossKind::Contrastive => {
            let params = ContrastiveParams {
                margin: inst.margin,
                ..Default::default()
            };
            // the pair budget is never hit, so the RNG is untouched
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            contrastive_loss(fs, &inst.ys, ft, &inst.pseudo, &params, &mut rng)?.total
        }
    };
    let mut params = g.params();
    if heads {
        params.extend(f1.params());
        params.extend(f2.params());
    }
    Ok((value, params))
}

fn perturbed(model: &ModelTriple, kind: LossKind, flat: usize, delta: f64) -> ModelTriple {
    let mut m = model.clone();
    let ModelTriple { g, f1, f2 } = &mut m;
    let mut params = g.params_mut();
    if kind.trains_heads() {
        params.extend(f1.params_mut());
        params.extend(f2.params_mut());
    }
    let mut offset = flat;
    for p in params {
        if offset < p.numel() {
            p.data_mut()[offset] += delta;
            return m;
        }
        offset -= p.numel();
    }
    unreachable!("parameter index out of range")
}

/// Worst relative error over all trained parameters of one instance.
fn check_instance(kind: LossKind, inst: &Instance, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let tape = Tape::new();
    let (value, params) = loss_value(kind, inst, &tape, &inst.model, true)?;
    let grads = tape.backward(value)?;
    let scale = if opts.corrupt == Some(kind) { 1.01 } else { 1.0 };
    let analytic: Vec<f64> = params
        .iter()
        .flat_map(|p| {
            grads
                .get(*p)
                .map_or_else(|| vec![0.0; p.value().numel()], |g| g.data().to_vec())
        })
        .map(|g| g * scale)
        .collect();

    let eval = |model: &ModelTriple| -> Result<f64> {
        let tape = Tape::new();
        loss_value(kind, inst, &tape, model, false)?.0.item()
    };
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let plus = eval(&perturbed(&inst.model, kind, i, opts.step))?;
        let minus = eval(&perturbed(&inst.model, kind, i, -opts.step))?;
        let n = (plus - minus) / (2.0 * opts.step);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-5);
        worst = worst.max(rel);
    }
    Ok((worst, analytic.len()))
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.instances == 0 {
        return Err(Error::invalid("gradcheck needs at least one instance"));
    }
    let mut checks = Vec::with_capacity(LossKind::ALL.len());
    for (stream, kind) in LossKind::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(stream as u64);
        let (mut worst, mut count) = (0.0f64, 0);
        for _ in 0..opts.instances {
            let inst = instance(&mut rng)?;
            let (w, n) = check_instance(kind, &inst, opts)?;
            worst = worst.max(w);
            count += n;
        }
        checks.push(LossCheck {
            loss: kind,
            instances: opts.instances,
            parameters_checked: count,
            worst_relative_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass() {
        let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
        let names: Vec<&str> = report.checks.iter().map(|c| c.loss.name()).collect();
        assert_eq!(names, ["cross_entropy", "mmd", "discrepancy", "siamese", "contrastive"]);
        for c in &report.checks {
            assert!(c.passed, "{} worst {}", c.loss.name(), c.worst_relative_error);
            assert!(c.parameters_checked > 0);
        }
    }

    #[test]
    fn corruption_is_caught() {
        for kind in LossKind::ALL {
            let opts = GradcheckOptions {
                instances: 3,
                corrupt: Some(kind),
                ..Default::default()
            };
            let report = run_gradcheck(&opts).unwrap();
            assert_eq!(report.failing(), vec![kind]);
        }
    }
}
