//! Training objectives and the EMA teacher update.

mod config;
mod contrastive;
mod pixel;

pub use config::{ContrastiveConfig, LossWeights};
pub use contrastive::{
    anatomy_graph, anatomy_infonce, sample_anchors, select_neighbors, semantic_graph,
    semantic_loss, Pixel,
};
pub use pixel::{
    adversarial_losses, discriminator_loss, generator_loss, l1_loss, mse_loss, PerceptualExtractor,
    PERCEPTUAL_SEED,
};

use crate::autodiff::{Graph, Var};
use crate::networks::NetworkParams;
use crate::{Error, Real, Result};

/// Moves every teacher parameter towards the student:
/// `teacher = m * teacher + (1 - m) * student`.
///
/// `m = 0` copies the student exactly and `m = 1` leaves the teacher alone.
pub fn ema_update<T: Real>(
    teacher: &mut NetworkParams<T>,
    student: &NetworkParams<T>,
    momentum: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "EMA momentum {momentum} outside [0, 1]"
        )));
    }
    teacher.check_same_layout(student)?;
    if momentum == 1.0 {
        return Ok(());
    }
    let keep = T::lit(1.0 - momentum);
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        if momentum == 0.0 {
            t.data_mut().copy_from_slice(s.data());
            continue;
        }
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = *a + keep * (b - *a);
        }
    }
    Ok(())
}

/// The five scalar terms of the refinement objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<V> {
    pub l1: V,
    pub perceptual: V,
    pub adversarial: V,
    pub semantic: V,
    pub anatomy: V,
}

impl<V: Copy> LossTerms<V> {
    fn paired(&self, w: &LossWeights) -> [(&'static str, V, f64); 5] {
        let split = w.w_semantic_vs_anatomy;
        [
            ("l1", self.l1, w.w_l1),
            ("perceptual", self.perceptual, w.w_perc),
            ("adversarial", self.adversarial, w.w_adv),
            ("semantic", self.semantic, w.w_contrast * split),
            ("anatomy", self.anatomy, w.w_contrast * (1.0 - split)),
        ]
    }
}

/// Weighted sum of already evaluated terms. A non-finite term is an error.
pub fn hybrid_loss(terms: &LossTerms<f64>, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    terms.paired(w).iter().try_fold(0.0, |acc, &(name, v, c)| {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss term")));
        }
        Ok(acc + c * v)
    })
}

/// Graph form of [`hybrid_loss`]. Terms that are absent or carry a zero
/// weight are left out of the graph entirely.
pub fn hybrid_graph<T: Real>(
    g: &mut Graph<T>,
    terms: &LossTerms<Option<Var>>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let mut total: Option<Var> = None;
    for (name, v, c) in terms.paired(w) {
        let Some(v) = v.filter(|_| c != 0.0) else {
            continue;
        };
        if !g.value(v).all_finite() {
            return Err(Error::NonFinite(format!("{name} loss term")));
        }
        let scaled = g.scale(v, T::lit(c))?;
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(crate::autodiff::Tensor::scalar(T::zero()))),
    }
}
