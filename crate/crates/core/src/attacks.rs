//! L-infinity bounded adversarial example generation.
//!
//! All variants share one PGD engine: repeat up to `K` times, check whether
//! the current iterate is still classified as the true label (this drives
//! both the geometry value `kappa` and the early-stop rule), take a signed
//! gradient step, and project back onto the epsilon-ball (and the pixel box
//! when one is set). `sign(0)` is 0, so a zero gradient leaves the iterate
//! in place.
//!
//! Attack generation is read-only on the model; per-example calls may run
//! concurrently as long as results are gathered in input order.

use crate::error::{Error, Result};
use crate::nn::{argmax, input_gradient, BatchTargets, LossKind, Model};
use crate::rng::XorShiftRng;
use crate::tensor::Tensor;

/// How the starting point is drawn around the natural example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomStart {
    /// Start at the natural example.
    None,
    /// Uniform per-coordinate noise in `[-epsilon, +epsilon]`.
    Uniform,
    /// Gaussian noise scaled by `xi` (the TRADES-style init).
    Gaussian,
}

/// Everything the PGD variants need.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L-infinity radius of the feasible ball.
    pub epsilon: f64,
    /// Step size of each signed gradient step.
    pub alpha: f64,
    /// Maximum number of PGD steps `K`.
    pub steps: usize,
    /// Extra steps taken after the first misclassification (early-stopped
    /// variant only).
    pub tau: usize,
    /// Number of independent restarts (multi-restart PGD only).
    pub restarts: usize,
    pub random_start: RandomStart,
    /// Scale of the Gaussian start.
    pub xi: f64,
    /// Loss guiding the ascent.
    pub loss: LossKind,
    /// Optional pixel box, e.g. `(0.0, 1.0)` for image data.
    pub clamp_box: Option<(f64, f64)>,
}

impl AttackConfig {
    /// Plain cross-entropy PGD with no random start and no box.
    pub fn pgd(epsilon: f64, alpha: f64, steps: usize) -> Self {
        AttackConfig {
            epsilon,
            alpha,
            steps,
            tau: 0,
            restarts: 1,
            random_start: RandomStart::None,
            xi: 1e-3,
            loss: LossKind::CrossEntropy,
            clamp_box: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("attack alpha must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("attack epsilon must be nonnegative"));
        }
        if self.steps < 1 {
            return Err(Error::config("attack needs at least one step"));
        }
        if self.tau > self.steps {
            return Err(Error::config("tau cannot exceed the step budget"));
        }
        if self.restarts < 1 {
            return Err(Error::config("restarts must be at least 1"));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::config("xi must be nonnegative"));
        }
        if let Some((lo, hi)) = self.clamp_box {
            if !(lo < hi) {
                return Err(Error::config("clamp box must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

/// Outcome of one attack invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// Final iterate; within the epsilon-ball of the natural input and the
    /// clamp box when one is set.
    pub adversarial: Tensor,
    /// Number of loop iterations at which the iterate was still correctly
    /// classified; `0..=steps`.
    pub kappa: usize,
    /// Whether the final iterate is misclassified.
    pub fooled: bool,
    /// Gradient steps actually executed (less than `steps` only when the
    /// early-stop rule fires; summed over restarts for multi-restart PGD).
    pub steps_taken: usize,
}

/// Coordinate-wise projection onto the epsilon-ball around `anchor`,
/// intersected with the clamp box when given.
pub fn project_linf(
    candidate: &Tensor,
    anchor: &Tensor,
    epsilon: f64,
    clamp_box: Option<(f64, f64)>,
) -> Tensor {
    assert_eq!(
        candidate.shape(),
        anchor.shape(),
        "project_linf shape mismatch"
    );
    let mut out = candidate.clone();
    for (v, &a) in out.data_mut().iter_mut().zip(anchor.data()) {
        let mut x = (*v).clamp(a - epsilon, a + epsilon);
        if let Some((lo, hi)) = clamp_box {
            x = x.clamp(lo, hi);
        }
        *v = x;
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
enum StopRule {
    /// Run all `K` steps (fixed-iteration PGD).
    FixedK,
    /// Stop once misclassified, after spending `tau` extra steps.
    EarlyStop { tau: usize },
}

#[derive(Debug, Clone, Copy)]
enum Start {
    Natural,
    Uniform,
    Gaussian,
}

fn starting_point(
    x: &Tensor,
    cfg: &AttackConfig,
    start: Start,
    rng: &mut XorShiftRng,
) -> Tensor {
    let noisy = match start {
        Start::Natural => return x.clone(),
        Start::Uniform => {
            let mut t = x.clone();
            for v in t.data_mut() {
                *v += rng.uniform(-cfg.epsilon, cfg.epsilon);
            }
            t
        }
        Start::Gaussian => {
            let mut t = x.clone();
            for v in t.data_mut() {
                *v += cfg.xi * rng.normal();
            }
            t
        }
    };
    project_linf(&noisy, x, cfg.epsilon, cfg.clamp_box)
}

fn start_from_config(cfg: &AttackConfig) -> Start {
    match cfg.random_start {
        RandomStart::None => Start::Natural,
        RandomStart::Uniform => Start::Uniform,
        RandomStart::Gaussian => Start::Gaussian,
    }
}

/// The shared loop behind every variant. `reference` carries the fixed
/// natural-logits row for KL guidance; `y` is always the label used for the
/// correctness checks.
fn run_pgd(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    stop: StopRule,
    start: Start,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    cfg.validate()?;
    if y >= model.class_count() {
        return Err(Error::domain(format!(
            "label {y} out of range for {} classes",
            model.class_count()
        )));
    }
    let reference = match cfg.loss {
        LossKind::KlDivergence => Some(model.forward(x)?),
        _ => None,
    };
    let mut current = starting_point(x, cfg, start, rng);
    let mut kappa = 0usize;
    let mut steps_taken = 0usize;
    let mut tau = match stop {
        StopRule::EarlyStop { tau } => tau,
        StopRule::FixedK => 0,
    };
    let mut remaining = cfg.steps;
    while remaining > 0 {
        let correct = argmax(model.forward(&current)?.row(0)) == y;
        match stop {
            StopRule::FixedK => {
                if correct {
                    kappa += 1;
                }
            }
            StopRule::EarlyStop { .. } => {
                if !correct && tau == 0 {
                    break;
                } else if !correct {
                    tau -= 1;
                } else {
                    kappa += 1;
                }
            }
        }
        let targets = match &reference {
            Some(r) => BatchTargets::References(r),
            None => BatchTargets::Labels(std::slice::from_ref(&y)),
        };
        let grad = input_gradient(model, &current, &targets, cfg.loss)?;
        let mut stepped = current.clone();
        for (v, g) in stepped.data_mut().iter_mut().zip(grad.data()) {
            *v += cfg.alpha * sign(*g);
        }
        current = project_linf(&stepped, x, cfg.epsilon, cfg.clamp_box);
        steps_taken += 1;
        remaining -= 1;
    }
    let fooled = argmax(model.forward(&current)?.row(0)) != y;
    Ok(AttackResult {
        adversarial: current,
        kappa,
        fooled,
        steps_taken,
    })
}

/// Fixed-iteration PGD guided by cross-entropy.
pub fn pgd(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::config("pgd requires the cross-entropy loss"));
    }
    run_pgd(model, x, y, cfg, StopRule::FixedK, start_from_config(cfg), rng)
}

/// Fixed-iteration PGD that also counts how many iterations the example
/// stayed correctly classified (its geometry value).
pub fn ga_pgd(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::config("ga_pgd requires the cross-entropy loss"));
    }
    run_pgd(model, x, y, cfg, StopRule::FixedK, start_from_config(cfg), rng)
}

/// Early-stopped PGD-K-tau: once the iterate is misclassified, spend `tau`
/// further steps, then stop. With `tau = 0` a misclassified natural input is
/// returned untouched.
pub fn ga_pgd_early_stopped(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::config(
            "ga_pgd_early_stopped requires the cross-entropy loss",
        ));
    }
    run_pgd(
        model,
        x,
        y,
        cfg,
        StopRule::EarlyStop { tau: cfg.tau },
        start_from_config(cfg),
        rng,
    )
}

/// KL-guided PGD: Gaussian start scaled by `xi`, ascent on
/// `KL(softmax(f(x_adv)) || softmax(f(x)))` with the natural logits fixed,
/// correctness checks against `y` as in the cross-entropy variants.
pub fn ga_pgd_kl(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    if cfg.loss != LossKind::KlDivergence {
        return Err(Error::config("ga_pgd_kl requires the KL divergence loss"));
    }
    run_pgd(model, x, y, cfg, StopRule::FixedK, Start::Gaussian, rng)
}

/// PGD with `cfg.restarts` independent starts. Every restart runs to
/// completion; the first fooling restart's result is returned if any fooled,
/// otherwise the restart with the largest final cross-entropy loss.
pub fn pgd_multi_restart(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut XorShiftRng,
) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::config("pgd_multi_restart requires cross-entropy"));
    }
    let mut best: Option<AttackResult> = None;
    let mut best_loss = f64::NEG_INFINITY;
    let mut total_steps = 0usize;
    for restart in 0..cfg.restarts {
        let mut restart_rng = rng.derive(0x50_47_44, restart as u64, 0);
        let mut result = run_pgd(
            model,
            x,
            y,
            cfg,
            StopRule::FixedK,
            start_from_config(cfg),
            &mut restart_rng,
        )?;
        total_steps += result.steps_taken;
        let already_fooled = best.as_ref().is_some_and(|b| b.fooled);
        if result.fooled && !already_fooled {
            best = Some(result);
            continue;
        }
        if !already_fooled {
            let logits = model.forward(&result.adversarial)?;
            let loss = crate::nn::loss_value(
                &logits,
                &crate::nn::Target::Label(y),
                LossKind::CrossEntropy,
            )?;
            if loss > best_loss {
                best_loss = loss;
                result.fooled = false;
                best = Some(result);
            }
        }
    }
    let mut chosen = best.expect("restarts >= 1");
    chosen.steps_taken = total_steps;
    Ok(chosen)
}
