//! Classification and ranking losses over the per-pass logits.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::config::LossConfig;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Training target of one clip.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Class distribution (one-hot, or a mixup blend of two one-hots).
    Single(Vec<f64>),
    /// Per-class relevance in `[0, 1]`.
    Multi(Vec<f64>),
}

impl Target {
    pub fn one_hot(class: usize, n_classes: usize) -> Self {
        let mut v = alloc::vec![0.0; n_classes];
        v[class] = 1.0;
        Self::Single(v)
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Self::Single(v) | Self::Multi(v) => v,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.values().len()
    }

    /// Highest-weight class; ties go to the lower index.
    pub fn dominant(&self) -> usize {
        let v = self.values();
        (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
    }

    /// Classes whose probability enters `p(omega)`: the dominant class for
    /// single-label targets, every class with relevance >= 0.5 otherwise
    /// (falling back to the dominant one).
    pub fn rank_classes(&self) -> Vec<usize> {
        match self {
            Self::Single(_) => alloc::vec![self.dominant()],
            Self::Multi(v) => {
                let pos: Vec<usize> = (0..v.len()).filter(|&i| v[i] >= 0.5).collect();
                if pos.is_empty() {
                    alloc::vec![self.dominant()]
                } else {
                    pos
                }
            }
        }
    }
}

fn check_logits(g: &Graph<'_>, logits: Var, target: &Target) -> Result<()> {
    let shape = g.shape(logits);
    if shape != [1, target.n_classes()] {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: shape,
            rhs: [1, target.n_classes()],
        });
    }
    Ok(())
}

/// Cross-entropy against a class distribution, or mean binary cross-entropy
/// `mean(softplus(x) - y x)` for multi-label targets.
pub fn classification_loss(g: &mut Graph<'_>, logits: Var, target: &Target) -> Result<Var> {
    check_logits(g, logits, target)?;
    let y = g.constant(Matrix::row_vector(target.values().to_vec()));
    match target {
        Target::Single(_) => {
            let logp = g.log_softmax(logits, 1)?;
            let weighted = g.mul(logp, y)?;
            let s = g.sum(weighted);
            Ok(g.neg(s))
        }
        Target::Multi(_) => {
            let sp = g.softplus(logits);
            let yx = g.mul(y, logits)?;
            let terms = g.sub(sp, yx)?;
            Ok(g.mean(terms))
        }
    }
}

/// `p(omega)`: softmax probability of the dominant class, or the mean
/// sigmoid probability of the positive classes.
pub fn correct_probability(g: &mut Graph<'_>, logits: Var, target: &Target) -> Result<Var> {
    check_logits(g, logits, target)?;
    let classes = target.rank_classes();
    let probs = match target {
        Target::Single(_) => g.softmax(logits, 1)?,
        Target::Multi(_) => g.sigmoid(logits),
    };
    let mut mask = Matrix::zeros(1, target.n_classes());
    for &c in &classes {
        mask.set(0, c, 1.0 / classes.len() as f64);
    }
    let mask = g.constant(mask);
    let picked = g.mul(probs, mask)?;
    Ok(g.sum(picked))
}

/// `sum_{m<i} max(0, gamma - p_i + p_m) / (i - m)` with 1-based pass
/// indices; `p[k]` holds `p(omega)` of pass `k + 1`.
pub fn rank_loss(g: &mut Graph<'_>, p: &[Var], i: usize, gamma: f64) -> Result<Var> {
    if i < 2 || i > p.len() {
        return Err(Error::Contract(format!(
            "rank loss needs 2 <= i <= {} (number of passes), got i = {i}",
            p.len()
        )));
    }
    let p_i = p[i - 1];
    let mut total: Option<Var> = None;
    for m in 1..i {
        let diff = g.sub(p[m - 1], p_i)?;
        let hinge = g.add_scalar(diff, gamma);
        let hinge = g.max_with_zero(hinge);
        let term = g.scale(hinge, 1.0 / (i - m) as f64);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("i >= 2"))
}

/// [`rank_loss`] evaluated on plain numbers.
pub fn rank_loss_value(p: &[f64], i: usize, gamma: f64) -> Result<f64> {
    let mut g = Graph::detached();
    let vars: Vec<Var> = p.iter().map(|&x| g.constant(Matrix::scalar(x))).collect();
    let out = rank_loss(&mut g, &vars, i, gamma)?;
    Ok(g.scalar(out))
}

#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// `L_CLS(i)` for every pass.
    pub classification: Vec<Var>,
    /// `L_rank(i)` for passes `2..=P`.
    pub rank: Vec<Var>,
}

/// `L_CLS(1) + sum_{i=2}^{P} [beta L_CLS(i) + (1 - beta) L_rank(i)]`.
pub fn total_loss(g: &mut Graph<'_>, logits: &[Var], target: &Target, cfg: &LossConfig) -> Result<LossTerms> {
    if logits.is_empty() {
        return Err(Error::Contract("total_loss needs at least one pass".into()));
    }
    let mut classification = Vec::with_capacity(logits.len());
    for &l in logits {
        classification.push(classification_loss(g, l, target)?);
    }
    let mut total = classification[0];
    let mut rank = Vec::new();
    if logits.len() > 1 {
        let mut p = Vec::with_capacity(logits.len());
        for &l in logits {
            p.push(correct_probability(g, l, target)?);
        }
        for i in 2..=logits.len() {
            let r = rank_loss(g, &p, i, cfg.gamma)?;
            let cls = g.scale(classification[i - 1], cfg.beta);
            let rk = g.scale(r, 1.0 - cfg.beta);
            total = g.add(total, cls)?;
            total = g.add(total, rk)?;
            rank.push(r);
        }
    }
    Ok(LossTerms {
        total,
        classification,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_loss_examples() {
        assert_eq!(rank_loss_value(&[0.3, 0.9], 2, 0.05).unwrap(), 0.0);
        let v = rank_loss_value(&[0.5, 0.45, 0.4], 3, 0.05).unwrap();
        assert!((v - 0.175).abs() < 1e-15, "{v}");
        assert!(matches!(rank_loss_value(&[0.5], 1, 0.05), Err(Error::Contract(_))));
    }

    #[test]
    fn dominant_label_under_mixup() {
        let t = Target::Single(alloc::vec![0.3, 0.0, 0.7]);
        assert_eq!(t.dominant(), 2);
        assert_eq!(Target::Multi(alloc::vec![1.0, 0.0, 1.0]).rank_classes(), alloc::vec![0, 2]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = Graph::detached();
        let l = g.constant(Matrix::zeros(1, 4));
        let ce = classification_loss(&mut g, l, &Target::one_hot(1, 4)).unwrap();
        assert!((g.scalar(ce) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn multi_label_bce() {
        let mut g = Graph::detached();
        let l = g.constant(Matrix::row_vector(alloc::vec![0.0, 2.0]));
        let t = Target::Multi(alloc::vec![1.0, 0.0]);
        let bce = classification_loss(&mut g, l, &t).unwrap();
        let expected = (-(0.5f64.ln()) - (1.0 - 1.0 / (1.0 + (-2f64).exp())).ln()) / 2.0;
        assert!((g.scalar(bce) - expected).abs() < 1e-14);
        let p = correct_probability(&mut g, l, &t).unwrap();
        assert_eq!(g.scalar(p), 0.5);
    }
}
