//! Loss functions over logits: cross-entropy, KL divergence between softmax
//! distributions, and the MART margin loss. All are computed through
//! max-subtracted log-sum-exp so finite logits always give finite values.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keeps `-ln(1 - p)` finite when the runner-up probability saturates.
const MARGIN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy against an integer label.
    CrossEntropy,
    /// `KL(softmax(logits) || softmax(reference))`, gradients taken on the
    /// `logits` side; the reference is a fixed logit tensor.
    KlDivergence,
    /// `-ln p_y - ln(1 - max_{k != y} p_k)` against an integer label.
    MartMargin,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::KlDivergence => "kl_divergence",
            LossKind::MartMargin => "mart_margin",
        }
    }
}

/// Target for a single example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    /// Reference logits with the same class count as the scored logits.
    Reference(&'a Tensor),
}

/// Targets for a batch: one label per row, or a reference logit row per row.
#[derive(Debug, Clone, Copy)]
pub enum BatchTargets<'a> {
    Labels(&'a [usize]),
    References(&'a Tensor),
}

/// Index of the largest entry; the lowest index wins ties so
/// misclassification checks are deterministic.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Softmax probabilities of one logit row; output lies on the probability
/// simplex.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|&v| v - lse).collect()
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::domain(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Cross-entropy of one logit row against a label.
pub(crate) fn cross_entropy_row(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// `KL(softmax(logits) || softmax(reference))` plus the per-class
/// log-probability gaps, which the gradient reuses.
pub(crate) fn kl_terms(logits: &[f64], reference: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let lq = log_softmax(reference);
    let p = softmax(logits);
    let gaps: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
    let kl = p.iter().zip(&gaps).map(|(pi, gi)| pi * gi).sum();
    (kl, gaps)
}

/// Runner-up class: largest probability among classes other than `label`.
pub(crate) fn runner_up(probs: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in probs.iter().enumerate() {
        if i == label {
            continue;
        }
        if best == usize::MAX || v > probs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn mart_margin_row(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    if logits.len() < 2 {
        return Err(Error::domain("margin loss needs at least two classes"));
    }
    let p = softmax(logits);
    let j = runner_up(&p, label);
    Ok(-p[label].ln() - (1.0 - p[j]).max(MARGIN_CLAMP).ln())
}

/// Scalar loss of a single example (logits shaped `[C]` or `[1, C]`).
pub fn loss_value(logits: &Tensor, target: &Target, kind: LossKind) -> Result<f64> {
    if logits.rows() != 1 {
        return Err(Error::config("loss_value expects a single logit row"));
    }
    let row = logits.row(0);
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Label(y)) => cross_entropy_row(row, *y),
        (LossKind::MartMargin, Target::Label(y)) => mart_margin_row(row, *y),
        (LossKind::KlDivergence, Target::Reference(reference)) => {
            if reference.len() != row.len() {
                return Err(Error::config("reference logits length mismatch"));
            }
            Ok(kl_terms(row, reference.data()).0)
        }
        (LossKind::KlDivergence, Target::Label(_)) => {
            Err(Error::config("kl_divergence requires reference logits"))
        }
        (_, Target::Reference(_)) => Err(Error::config(format!(
            "{} requires an integer label",
            kind.name()
        ))),
    }
}

/// Gradient of the per-example loss with respect to one logit row.
pub(crate) fn dlogits_row(
    logits: &[f64],
    target: &Target,
    kind: LossKind,
) -> Result<Vec<f64>> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Label(y)) => {
            check_label(*y, logits.len())?;
            let mut d = softmax(logits);
            d[*y] -= 1.0;
            Ok(d)
        }
        (LossKind::MartMargin, Target::Label(y)) => {
            check_label(*y, logits.len())?;
            let p = softmax(logits);
            let j = runner_up(&p, *y);
            let scale = p[j] / (1.0 - p[j]).max(MARGIN_CLAMP);
            // d(-ln p_y)/dl = p - e_y; d(-ln(1-p_j))/dl = scale * (e_j - p)
            let mut d: Vec<f64> = p.iter().map(|&pi| pi - scale * pi).collect();
            d[*y] -= 1.0;
            d[j] += scale;
            Ok(d)
        }
        (LossKind::KlDivergence, Target::Reference(reference)) => {
            if reference.len() != logits.len() {
                return Err(Error::config("reference logits length mismatch"));
            }
            let (kl, gaps) = kl_terms(logits, reference.data());
            let p = softmax(logits);
            Ok(p.iter().zip(&gaps).map(|(pi, gi)| pi * (gi - kl)).collect())
        }
        (LossKind::KlDivergence, Target::Label(_)) => {
            Err(Error::config("kl_divergence requires reference logits"))
        }
        (_, Target::Reference(_)) => Err(Error::config(format!(
            "{} requires an integer label",
            kind.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn softmax_on_simplex() {
        let p = softmax(&[3.0, -1.0, 800.0, 0.25]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::new(vec![10], vec![0.7; 10]).unwrap();
        let l = loss_value(&logits, &Target::Label(3), LossKind::CrossEntropy).unwrap();
        assert!((l - 10.0_f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn kl_of_identical_logits_is_zero() {
        let a = Tensor::new(vec![4], vec![0.3, -2.0, 1.5, 0.0]).unwrap();
        let l = loss_value(&a, &Target::Reference(&a), LossKind::KlDivergence).unwrap();
        assert!(l.abs() <= 1e-15);
    }

    #[test]
    fn kl_closed_form_half_half_vs_quarter() {
        // softmax(p_logits) = [1/2, 1/2], softmax(q_logits) = [1/4, 3/4]
        let p = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let q = Tensor::new(vec![2], vec![0.0, 3.0_f64.ln()]).unwrap();
        let l = loss_value(&p, &Target::Reference(&q), LossKind::KlDivergence).unwrap();
        let expected = 0.5 * 2.0_f64.ln() + 0.5 * (2.0_f64 / 3.0).ln();
        assert!((l - expected).abs() <= 1e-14);
        assert!((expected - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn label_out_of_range_is_domain_error() {
        let logits = Tensor::new(vec![3], vec![0.0, 1.0, 2.0]).unwrap();
        let err = loss_value(&logits, &Target::Label(3), LossKind::CrossEntropy).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn mart_margin_matches_hand_value() {
        // p = [0.5, 0.3, 0.2] from logits ln(p); y = 0, runner-up 1.
        let logits =
            Tensor::new(vec![3], vec![0.5_f64.ln(), 0.3_f64.ln(), 0.2_f64.ln()]).unwrap();
        let l = loss_value(&logits, &Target::Label(0), LossKind::MartMargin).unwrap();
        let expected = -(0.5_f64.ln()) - (0.7_f64.ln());
        assert!((l - expected).abs() <= 1e-12);
    }

    #[test]
    fn losses_are_nonnegative() {
        let logits = Tensor::new(vec![4], vec![2.0, -1.0, 0.5, 0.1]).unwrap();
        let reference = Tensor::new(vec![4], vec![-0.3, 0.9, 0.0, 2.2]).unwrap();
        let ce = loss_value(&logits, &Target::Label(1), LossKind::CrossEntropy).unwrap();
        let kl =
            loss_value(&logits, &Target::Reference(&reference), LossKind::KlDivergence).unwrap();
        assert!(ce >= 0.0);
        assert!(kl >= 0.0);
    }

    #[test]
    fn wrong_target_kind_is_config_error() {
        let logits = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        assert!(loss_value(&logits, &Target::Label(0), LossKind::KlDivergence).is_err());
        assert!(
            loss_value(&logits, &Target::Reference(&logits), LossKind::CrossEntropy).is_err()
        );
    }
}
