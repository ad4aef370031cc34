//! The alternating three-step schedule.
//!
//! Every outer iteration runs
//!
//! * step A: update `G`, `F1`, `F2` on `L_ce + λ1·L_mmd`,
//! * step B (`tau` times): update `F1`, `F2` on `L_ce − λ2·L_adv` with `G` fixed,
//! * step C (`delta` times): update `G` on `λ2·L_adv + ω(t)·L_contras` with
//!   `F1`, `F2` fixed,
//!
//! where `ω(t)` ramps the contrastive weight up to `λ3` over the epochs.
//! The `source_only` variant runs step A alone with `λ1 = 0`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{ClassAwareSampler, Dataset, Domain, LabeledBatch, TargetTruth, UniformSampler, UnlabeledBatch};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss, cross_entropy_source, discrepancy, mmd_loss, pseudo_label, ContrastiveParams, MmdKernel,
    ProbPair, PseudoLabels,
};
use crate::models::{init_model, ArchitectureSpec, ModelTriple};
use crate::optim::{Optimizer, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SourceOnly,
    Mcd,
    McdMmd,
    McdContras,
    Cosca,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SourceOnly,
        Variant::Mcd,
        Variant::McdMmd,
        Variant::McdContras,
        Variant::Cosca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::Mcd => "mcd",
            Variant::McdMmd => "mcd_mmd",
            Variant::McdContras => "mcd_contras",
            Variant::Cosca => "cosca",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn allows_mmd(self) -> bool {
        matches!(self, Variant::McdMmd | Variant::Cosca)
    }

    fn allows_contrastive(self) -> bool {
        matches!(self, Variant::McdContras | Variant::Cosca)
    }

    fn adversarial(self) -> bool {
        self != Variant::SourceOnly
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    /// MMD weight in step A.
    pub lambda1: f64,
    /// Discrepancy weight in steps B and C.
    pub lambda2: f64,
    /// Final contrastive weight reached by the ω schedule.
    pub lambda3: f64,
    /// Shape of the ω schedule.
    pub theta: f64,
    /// Step-B repetitions per outer iteration.
    pub tau: usize,
    /// Step-C repetitions per outer iteration.
    pub delta: usize,
    pub margin: f64,
    pub max_epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size_source: usize,
    pub batch_size_target: usize,
    /// Classes per source batch; 0 means all classes.
    pub classes_per_batch: usize,
    pub pair_budget: usize,
    pub conf_threshold: f64,
    /// Reuse the outer iteration's batches inside the step-B/C loops
    /// instead of drawing fresh ones.
    pub reuse_batch: bool,
    pub mmd_kernel: MmdKernel,
    pub generator_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub optimizer_g: OptimizerConfig,
    pub optimizer_f: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cosca,
            seed: 0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            theta: 5.0,
            tau: 2,
            delta: 2,
            margin: 10.0,
            max_epochs: 60,
            iters_per_epoch: 20,
            batch_size_source: 64,
            batch_size_target: 64,
            classes_per_batch: 0,
            pair_budget: 100_000,
            conf_threshold: 0.0,
            reuse_batch: false,
            mmd_kernel: MmdKernel::NormalizedMeanSq,
            generator_widths: vec![64, 64],
            classifier_hidden: vec![64],
            optimizer_g: adversarial_adam(),
            optimizer_f: adversarial_adam(),
        }
    }
}

fn adversarial_adam() -> OptimizerConfig {
    OptimizerConfig {
        beta1: 0.5,
        ..OptimizerConfig::adam(1e-3)
    }
}

impl TrainConfig {
    /// Copy with `variant` set and the weights that variant excludes zeroed.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut cfg = self.clone();
        cfg.variant = variant;
        if !variant.allows_mmd() {
            cfg.lambda1 = 0.0;
        }
        if !variant.allows_contrastive() {
            cfg.lambda3 = 0.0;
        }
        if !variant.adversarial() {
            cfg.lambda2 = 0.0;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("conf_threshold", self.conf_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("delta", self.delta),
            ("max_epochs", self.max_epochs),
            ("iters_per_epoch", self.iters_per_epoch),
            ("batch_size_source", self.batch_size_source),
            ("batch_size_target", self.batch_size_target),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, opt) in [("optimizer_g", &self.optimizer_g), ("optimizer_f", &self.optimizer_f)] {
            if !(opt.learning_rate > 0.0 && opt.learning_rate.is_finite()) {
                return bad(format!("{name}.learning_rate must be positive"));
            }
        }
        let v = self.variant;
        if !v.allows_mmd() && self.lambda1 != 0.0 {
            return bad(format!("variant {v} requires lambda1 = 0"));
        }
        if !v.allows_contrastive() && self.lambda3 != 0.0 {
            return bad(format!("variant {v} requires lambda3 = 0"));
        }
        if !v.adversarial() && self.lambda2 != 0.0 {
            return bad(format!("variant {v} requires lambda2 = 0"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim,
            generator_widths: self.generator_widths.clone(),
            classifier_hidden: self.classifier_hidden.clone(),
            num_classes,
        }
    }

    pub fn contrastive_params(&self) -> ContrastiveParams {
        ContrastiveParams {
            margin: self.margin,
            pair_budget: self.pair_budget,
            conf_threshold: self.conf_threshold,
        }
    }
}

/// `exp(-θ (1 - t / max_epochs)) · λ3`: rises from `exp(-θ)·λ3` at `t = 0`
/// to exactly `λ3` at `t = max_epochs`.
pub fn omega(t: usize, max_epochs: usize, theta: f64, lambda3: f64) -> Result<f64> {
    if max_epochs == 0 {
        return Err(Error::invalid("max_epochs must be positive"));
    }
    if t > max_epochs {
        return Err(Error::invalid(format!("epoch {t} beyond max_epochs {max_epochs}")));
    }
    if theta <= 0.0 {
        return Err(Error::invalid("theta must be positive"));
    }
    Ok((-theta * (1.0 - t as f64 / max_epochs as f64)).exp() * lambda3)
}

/// Values of every term evaluated in one step (0 for terms not evaluated).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mmd: f64,
    pub adv: f64,
    pub contras: f64,
    pub omega: f64,
    /// The objective the step minimized.
    pub objective: f64,
}

/// Gradients of one step's objective, per network, in [`crate::models::Mlp::params`]
/// order. Networks held fixed by the step have no entry (`None`).
#[derive(Clone, Debug, PartialEq)]
pub struct StepGradients {
    pub g: Option<Vec<Option<Tensor>>>,
    pub f1: Option<Vec<Option<Tensor>>>,
    pub f2: Option<Vec<Option<Tensor>>>,
    pub losses: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    A,
    B,
    C,
}

fn checked(term: &'static str, iteration: usize, v: Result<f64>) -> Result<f64> {
    match v {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) | Err(Error::NonFinite { .. }) => Err(Error::NonFiniteLoss { term, iteration }),
        Err(e) => Err(e),
    }
}

fn term<'t>(name: &'static str, iteration: usize, v: Result<Var<'t>>) -> Result<Var<'t>> {
    match v {
        Err(Error::NonFinite { .. }) => Err(Error::NonFiniteLoss { term: name, iteration }),
        other => other,
    }
}

/// Owns the model, its two optimizer groups (`G` and `F1 ∪ F2`) and the
/// RNG used for contrastive pair subsampling.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    model: ModelTriple,
    opt_g: Optimizer,
    opt_f: Optimizer,
    pair_rng: ChaCha8Rng,
    iteration: usize,
}

/// Independent sub-seed for one consumer of randomness.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

impl Trainer {
    pub fn new(cfg: TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        cfg.validate()?;
        let model = init_model(&cfg.architecture(input_dim, num_classes), derive_seed(cfg.seed, 1))?;
        Self::from_model(cfg, model)
    }

    pub fn from_model(cfg: TrainConfig, model: ModelTriple) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            opt_g: Optimizer::new(cfg.optimizer_g.clone()),
            opt_f: Optimizer::new(cfg.optimizer_f.clone()),
            pair_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4)),
            model,
            cfg,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelTriple {
        &self.model
    }

    pub fn into_model(self) -> ModelTriple {
        self.model
    }

    /// Sets the iteration index reported in non-finite loss errors.
    pub fn set_iteration(&mut self, iteration: usize) {
        self.iteration = iteration;
    }

    /// Gradients of `L_ce + λ1·L_mmd` for all three networks.
    pub fn step_a_gradients(&self, src: &LabeledBatch, tgt: &UnlabeledBatch) -> Result<StepGradients> {
        let it = self.iteration;
        let tape = Tape::new();
        let g = self.model.g.bind(&tape, true);
        let f1 = self.model.f1.bind(&tape, true);
        let f2 = self.model.f2.bind(&tape, true);

        let fs = term("G(x_s)", it, g.forward(tape.constant(src.inputs.clone())))?;
        let l1 = term("F1 logits", it, f1.forward(fs))?;
        let l2 = term("F2 logits", it, f2.forward(fs))?;
        let ce = term("L_ce", it, cross_entropy_source(l1, l2, &src.labels))?;
        let mut losses = LossBreakdown {
            ce: checked("L_ce", it, ce.item())?,
            ..Default::default()
        };
        let mut objective = ce;
        if self.cfg.lambda1 > 0.0 {
            let ft = term("G(x_t)", it, g.forward(tape.constant(tgt.inputs.clone())))?;
            let mmd = term("L_mmd", it, mmd_loss(fs, ft, self.cfg.mmd_kernel))?;
            losses.mmd = checked("L_mmd", it, mmd.item())?;
            objective = objective.add(&mmd.mul_scalar(self.cfg.lambda1)?)?;
        }
        losses.objective = checked("step A objective", it, objective.item())?;
        let grads = tape.backward(objective)?;
        Ok(StepGradients {
            g: Some(g.grads(&grads)),
            f1: Some(f1.grads(&grads)),
            f2: Some(f2.grads(&grads)),
            losses,
        })
    }

    /// Gradients of `L_ce − λ2·L_adv` (or `−λ2·L_adv` alone when
    /// `include_ce` is false) for the classifiers. Generator features are
    /// detached, so `G` receives nothing.
    pub fn step_b_gradients(&self, src: &LabeledBatch, tgt: &UnlabeledBatch, include_ce: bool) -> Result<StepGradients> {
        let it = self.iteration;
        let tape = Tape::new();
        let g = self.model.g.bind(&tape, true);
        let f1 = self.model.f1.bind(&tape, true);
        let f2 = self.model.f2.bind(&tape, true);
        let mut losses = LossBreakdown::default();
        let mut objective: Option<Var<'_>> = None;

        if include_ce {
            let fs = term("G(x_s)", it, g.forward(tape.constant(src.inputs.clone())))?.detach();
            let ce = term(
                "L_ce",
                it,
                cross_entropy_source(f1.forward(fs)?, f2.forward(fs)?, &src.labels),
            )?;
            losses.ce = checked("L_ce", it, ce.item())?;
            objective = Some(ce);
        }
        if self.cfg.lambda2 > 0.0 {
            let ft = term("G(x_t)", it, g.forward(tape.constant(tgt.inputs.clone())))?.detach();
            let probs = ProbPair::from_logits(f1.forward(ft)?, f2.forward(ft)?)?;
            let adv = term("L_adv", it, discrepancy(&probs))?;
            losses.adv = checked("L_adv", it, adv.item())?;
            let weighted = adv.mul_scalar(-self.cfg.lambda2)?;
            objective = Some(match objective {
                Some(o) => o.add(&weighted)?,
                None => weighted,
            });
        }
        let Some(objective) = objective else {
            return Err(Error::invalid("step B has no active terms"));
        };
        losses.objective = checked("step B objective", it, objective.item())?;
        let grads = tape.backward(objective)?;
        Ok(StepGradients {
            g: None,
            f1: Some(f1.grads(&grads)),
            f2: Some(f2.grads(&grads)),
            losses,
        })
    }

    /// Gradients of `λ2·L_adv + ω(epoch)·L_contras` for the generator, plus
    /// the pseudo-labels used for the contrastive term. Classifier
    /// parameters are recorded as constants. Returns `None` gradients when
    /// neither term is active.
    pub fn step_c_gradients(
        &mut self,
        src: &LabeledBatch,
        tgt: &UnlabeledBatch,
        epoch: usize,
    ) -> Result<(StepGradients, PseudoLabels)> {
        let it = self.iteration;
        let w = omega(epoch, self.cfg.max_epochs, self.cfg.theta, self.cfg.lambda3)?;
        let tape = Tape::new();
        let g = self.model.g.bind(&tape, true);
        let f1 = self.model.f1.bind(&tape, false);
        let f2 = self.model.f2.bind(&tape, false);

        let ft = term("G(x_t)", it, g.forward(tape.constant(tgt.inputs.clone())))?;
        let probs = ProbPair::from_logits(f1.forward(ft)?, f2.forward(ft)?)?;
        let pseudo = pseudo_label(&probs.p1.value(), &probs.p2.value())?;
        let mut losses = LossBreakdown {
            omega: w,
            ..Default::default()
        };
        let mut objective: Option<Var<'_>> = None;
        if self.cfg.lambda2 > 0.0 {
            let adv = term("L_adv", it, discrepancy(&probs))?;
            losses.adv = checked("L_adv", it, adv.item())?;
            objective = Some(adv.mul_scalar(self.cfg.lambda2)?);
        }
        if w > 0.0 {
            let fs = term("G(x_s)", it, g.forward(tape.constant(src.inputs.clone())))?;
            let params = self.cfg.contrastive_params();
            let terms = term(
                "L_contras",
                it,
                contrastive_loss(fs, &src.labels, ft, &pseudo, &params, &mut self.pair_rng).map(|t| t.total),
            )?;
            losses.contras = checked("L_contras", it, terms.item())?;
            let weighted = terms.mul_scalar(w)?;
            objective = Some(match objective {
                Some(o) => o.add(&weighted)?,
                None => weighted,
            });
        }
        let g_grads = match objective {
            Some(objective) => {
                losses.objective = checked("step C objective", it, objective.item())?;
                let grads = tape.backward(objective)?;
                Some(g.grads(&grads))
            }
            None => None,
        };
        Ok((
            StepGradients {
                g: g_grads,
                f1: None,
                f2: None,
                losses,
            },
            pseudo,
        ))
    }

    fn apply_g(&mut self, grads: &[Option<Tensor>]) -> Result<()> {
        self.opt_g.apply_gradients(&mut self.model.g.params_mut(), grads)
    }

    fn apply_f(&mut self, f1: Vec<Option<Tensor>>, f2: Vec<Option<Tensor>>) -> Result<()> {
        let ModelTriple { f1: m1, f2: m2, .. } = &mut self.model;
        let mut params = m1.params_mut();
        params.extend(m2.params_mut());
        let grads: Vec<Option<Tensor>> = f1.into_iter().chain(f2).collect();
        self.opt_f.apply_gradients(&mut params, &grads)
    }

    /// One optimizer step on all three networks.
    pub fn step_a(&mut self, src: &LabeledBatch, tgt: &UnlabeledBatch) -> Result<LossBreakdown> {
        let sg = self.step_a_gradients(src, tgt)?;
        self.apply_g(sg.g.as_deref().expect("step A trains G"))?;
        self.apply_f(sg.f1.expect("step A trains F1"), sg.f2.expect("step A trains F2"))?;
        Ok(sg.losses)
    }

    /// One optimizer step on `F1`, `F2` with `G` fixed.
    pub fn step_b(&mut self, src: &LabeledBatch, tgt: &UnlabeledBatch) -> Result<LossBreakdown> {
        self.step_b_with(src, tgt, true)
    }

    pub fn step_b_with(&mut self, src: &LabeledBatch, tgt: &UnlabeledBatch, include_ce: bool) -> Result<LossBreakdown> {
        let sg = self.step_b_gradients(src, tgt, include_ce)?;
        self.apply_f(sg.f1.expect("step B trains F1"), sg.f2.expect("step B trains F2"))?;
        Ok(sg.losses)
    }

    /// One optimizer step on `G` with `F1`, `F2` fixed.
    pub fn step_c(&mut self, src: &LabeledBatch, tgt: &UnlabeledBatch, epoch: usize) -> Result<(LossBreakdown, PseudoLabels)> {
        let (sg, pseudo) = self.step_c_gradients(src, tgt, epoch)?;
        if let Some(g) = &sg.g {
            self.apply_g(g)?;
        }
        Ok((sg.losses, pseudo))
    }

    /// Pseudo-labels the current classifiers assign to a target batch.
    pub fn pseudo_labels(&self, tgt: &UnlabeledBatch) -> Result<PseudoLabels> {
        let (p1, p2) = self.model.probabilities(&tgt.inputs)?;
        pseudo_label(&p1, &p2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub f1: f64,
    pub f2: f64,
    pub ensemble: f64,
}

/// Accuracy of each head and of the `argmax(p1 + p2)` ensemble.
pub fn evaluate(model: &ModelTriple, inputs: &Tensor, truth: &[usize]) -> Result<Accuracy> {
    if inputs.rows() != truth.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} truth labels",
            inputs.rows(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyBatch("evaluation inputs"));
    }
    let (p1, p2) = model.probabilities(inputs)?;
    let argmax = |p: &Tensor, i: usize| {
        let row = p.row(i);
        (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    };
    let ensemble = pseudo_label(&p1, &p2)?;
    let n = truth.len() as f64;
    let frac = |pred: &dyn Fn(usize) -> usize| (0..truth.len()).filter(|&i| pred(i) == truth[i]).count() as f64 / n;
    Ok(Accuracy {
        f1: frac(&|i| argmax(&p1, i)),
        f2: frac(&|i| argmax(&p2, i)),
        ensemble: frac(&|i| ensemble.labels[i]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_mmd: f64,
    /// Discrepancy seen by the generator in the last step C.
    pub loss_adv: f64,
    pub loss_contras: f64,
    pub omega: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub source_acc: f64,
    pub target_acc: f64,
    pub target_acc_f1: f64,
    pub target_acc_f2: f64,
    /// Accuracy of the pseudo-labels assigned to target batches during the epoch.
    pub pseudo_label_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub iterations: Vec<IterationMetrics>,
    pub epochs: Vec<EpochMetrics>,
}

/// Summary written as `final.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub iterations: usize,
    pub loss_ce: f64,
    pub loss_mmd: f64,
    pub loss_adv: f64,
    pub loss_contras: f64,
    pub loss_total: f64,
    pub source_acc: f64,
    pub target_acc: f64,
    pub pseudo_label_acc: f64,
    pub target_acc_f1: f64,
    pub target_acc_f2: f64,
}

impl RunRecord {
    /// Losses averaged over the final epoch's iterations plus the last
    /// epoch's accuracies.
    pub fn summary(&self) -> FinalSummary {
        let last_epoch = self.epochs.last().map_or(0, |e| e.epoch);
        let tail: Vec<&IterationMetrics> = self.iterations.iter().filter(|m| m.epoch == last_epoch).collect();
        let mean = |f: fn(&IterationMetrics) -> f64| {
            if tail.is_empty() {
                0.0
            } else {
                tail.iter().map(|m| f(m)).sum::<f64>() / tail.len() as f64
            }
        };
        let acc = self.epochs.last();
        FinalSummary {
            variant: self.variant,
            seed: self.seed,
            epochs: self.epochs.len(),
            iterations: self.iterations.len(),
            loss_ce: mean(|m| m.loss_ce),
            loss_mmd: mean(|m| m.loss_mmd),
            loss_adv: mean(|m| m.loss_adv),
            loss_contras: mean(|m| m.loss_contras),
            loss_total: mean(|m| m.loss_total),
            source_acc: acc.map_or(0.0, |e| e.source_acc),
            target_acc: acc.map_or(0.0, |e| e.target_acc),
            pseudo_label_acc: acc.map_or(0.0, |e| e.pseudo_label_acc),
            target_acc_f1: acc.map_or(0.0, |e| e.target_acc_f1),
            target_acc_f2: acc.map_or(0.0, |e| e.target_acc_f2),
        }
    }
}

struct Batches<'a> {
    source: &'a Dataset,
    target: &'a Dataset,
    src: ClassAwareSampler,
    tgt: UniformSampler,
}

impl Batches<'_> {
    fn draw(&mut self) -> Result<(LabeledBatch, UnlabeledBatch)> {
        Ok((self.src.next_batch(self.source)?, self.tgt.next_batch(self.target)?))
    }
}

pub fn train(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    truth: &TargetTruth,
) -> Result<(ModelTriple, RunRecord)> {
    train_observed(cfg, source, target, truth, &mut |_, _| {})
}

/// [`train`] with a callback invoked after every optimizer step.
pub fn train_observed(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    truth: &TargetTruth,
    observer: &mut dyn FnMut(StepKind, &ModelTriple),
) -> Result<(ModelTriple, RunRecord)> {
    cfg.validate()?;
    if source.domain() != Domain::Source || target.domain() != Domain::Target {
        return Err(Error::invalid("train expects a labeled source and an unlabeled target dataset"));
    }
    if !source.is_standardized() || !target.is_standardized() {
        return Err(Error::invalid("datasets must be standardized before training"));
    }
    if source.dim() != target.dim() {
        return Err(Error::invalid("source and target feature dimensions differ"));
    }
    if truth.len() != target.len() {
        return Err(Error::invalid("target truth length does not match the target dataset"));
    }
    let k = source.num_classes();
    let classes_per_batch = if cfg.classes_per_batch == 0 { k } else { cfg.classes_per_batch };

    let mut trainer = Trainer::new(cfg.clone(), source.dim(), k)?;
    let mut batches = Batches {
        source,
        target,
        src: ClassAwareSampler::new(
            source,
            cfg.batch_size_source,
            classes_per_batch.min(cfg.batch_size_source),
            derive_seed(cfg.seed, 2),
        )?,
        tgt: UniformSampler::new(target, cfg.batch_size_target, derive_seed(cfg.seed, 3))?,
    };
    let truth = truth.labels();
    let mut record = RunRecord {
        variant: cfg.variant,
        seed: cfg.seed,
        iterations: Vec::with_capacity(cfg.max_epochs * cfg.iters_per_epoch),
        epochs: Vec::with_capacity(cfg.max_epochs),
    };

    let mut iter = 0;
    for epoch in 0..cfg.max_epochs {
        let (mut pl_correct, mut pl_total) = (0usize, 0usize);
        let mut tally = |pseudo: &PseudoLabels, tgt: &UnlabeledBatch| {
            for (label, &i) in pseudo.labels.iter().zip(&tgt.indices) {
                pl_correct += usize::from(*label == truth[i]);
                pl_total += 1;
            }
        };
        for _ in 0..cfg.iters_per_epoch {
            trainer.set_iteration(iter);
            let (src, tgt) = batches.draw()?;
            let a = trainer.step_a(&src, &tgt)?;
            observer(StepKind::A, trainer.model());
            let mut c = LossBreakdown::default();
            if cfg.variant.adversarial() {
                for _ in 0..cfg.tau {
                    let fresh = if cfg.reuse_batch { None } else { Some(batches.draw()?) };
                    let (s, t) = fresh.as_ref().map_or((&src, &tgt), |(s, t)| (s, t));
                    trainer.step_b(s, t)?;
                    observer(StepKind::B, trainer.model());
                }
                for _ in 0..cfg.delta {
                    let fresh = if cfg.reuse_batch { None } else { Some(batches.draw()?) };
                    let (s, t) = fresh.as_ref().map_or((&src, &tgt), |(s, t)| (s, t));
                    let (losses, pseudo) = trainer.step_c(s, t, epoch)?;
                    tally(&pseudo, t);
                    c = losses;
                    observer(StepKind::C, trainer.model());
                }
            } else {
                tally(&trainer.pseudo_labels(&tgt)?, &tgt);
            }
            let omega_t = omega(epoch, cfg.max_epochs, cfg.theta, cfg.lambda3)?;
            record.iterations.push(IterationMetrics {
                iter,
                epoch,
                loss_ce: a.ce,
                loss_mmd: a.mmd,
                loss_adv: c.adv,
                loss_contras: c.contras,
                omega: omega_t,
                loss_total: a.ce + cfg.lambda1 * a.mmd + cfg.lambda2 * c.adv + omega_t * c.contras,
            });
            iter += 1;
        }
        let model = trainer.model();
        let src_acc = evaluate(model, source.inputs(), source.labels().expect("source labels"))?;
        let tgt_acc = evaluate(model, target.inputs(), truth)?;
        record.epochs.push(EpochMetrics {
            epoch,
            source_acc: src_acc.ensemble,
            target_acc: tgt_acc.ensemble,
            target_acc_f1: tgt_acc.f1,
            target_acc_f2: tgt_acc.f2,
            pseudo_label_acc: if pl_total == 0 { 0.0 } else { pl_correct as f64 / pl_total as f64 },
        });
    }
    Ok((trainer.into_model(), record))
}
