//! Least-squares adversarial loss, L1 cycle reconstruction and patchwise
//! contrastive (InfoNCE) loss, plus the per-model total.
//!
//! The same losses are used whichever target stream (RGB or semantic map)
//! the current phase trains on.

use std::collections::BTreeMap;

use crate::autodiff::{Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub lambda_nce: f64,
    pub nce_temperature: f64,
    pub num_patches: usize,
    /// Add the identity (target → target) contrastive term for CUT.
    pub nce_identity: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_nce: 1.0,
            nce_temperature: 0.07,
            num_patches: 64,
            nce_identity: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cycle >= 0.0 && self.lambda_cycle.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_cycle = {}",
                self.lambda_cycle
            )));
        }
        if !(self.lambda_nce >= 0.0 && self.lambda_nce.is_finite()) {
            return Err(Error::Config(format!("lambda_nce = {}", self.lambda_nce)));
        }
        if !(self.nce_temperature > 0.0 && self.nce_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "nce_temperature = {}",
                self.nce_temperature
            )));
        }
        if self.num_patches < 2 {
            return Err(Error::Config("num_patches must be at least 2".into()));
        }
        Ok(())
    }
}

/// Mean squared distance of raw scores from 1 (real) or 0 (fake).
pub fn adversarial_loss<'t, T: Scalar>(
    scores: &Var<'t, T>,
    target_is_real: bool,
) -> Result<Var<'t, T>> {
    if scores.numel() == 0 {
        return Err(Error::Contract("empty score map".into()));
    }
    if let Some(i) = scores
        .value_ref()
        .data()
        .iter()
        .position(|v| !v.is_finite())
    {
        return Err(Error::Numeric(format!("non-finite score at index {i}")));
    }
    let target = if target_is_real { -1.0 } else { 0.0 };
    Ok(scores.add_scalar(target).square().mean_all())
}

/// Mean absolute reconstruction error.
pub fn cycle_loss<'t, T: Scalar>(original: &Var<'t, T>, cycled: &Var<'t, T>) -> Result<Var<'t, T>> {
    if original.shape() != cycled.shape() {
        return Err(Error::Shape(format!(
            "cycle loss between {:?} and {:?}",
            original.shape(),
            cycled.shape()
        )));
    }
    Ok(original.sub(cycled)?.abs().mean_all())
}

/// Patchwise InfoNCE.
///
/// `queries` and `positives` are `[P, d]` (or batched `[N, P, d]`) unit-norm
/// rows. Row `i` of `queries` should match row `i` of `positives`; the other
/// rows of `positives` (from the same sample) act as negatives. Returns the
/// mean over all rows of the cross-entropy of `q·kᵀ / τ` against the diagonal.
pub fn patch_nce_loss<'t, T: Scalar>(
    queries: &Var<'t, T>,
    positives: &Var<'t, T>,
    temperature: f64,
) -> Result<Var<'t, T>> {
    let qs = queries.shape();
    if qs != positives.shape() {
        return Err(Error::Shape(format!(
            "patch NCE queries {qs:?} vs positives {:?}",
            positives.shape()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (batch, p, d) = match qs[..] {
        [p, d] => (1, p, d),
        [n, p, d] => (n, p, d),
        _ => {
            return Err(Error::Shape(format!(
                "patch NCE expects rank 2 or 3, got {qs:?}"
            )))
        }
    };
    if p < 2 {
        return Err(Error::Contract(format!(
            "patch NCE needs at least 2 patches for negatives, got {p}"
        )));
    }
    let q = queries.reshape(&[batch, p, d])?;
    let k = positives.reshape(&[batch, p, d])?;
    let logits = q.matmul(&k.transpose_last2()?)?.scale(1.0 / temperature);
    let log_probs = logits.log_softmax()?;
    let eye = queries.tape().constant(Tensor::from_fn([p, p], |i| {
        if i / p == i % p {
            T::ONE
        } else {
            T::ZERO
        }
    }));
    Ok(log_probs
        .mul(&eye)?
        .sum_all()
        .scale(-1.0 / (batch * p) as f64))
}

/// Component names expected for each model kind.
pub fn component_names(kind: ModelKind, weights: &LossWeights) -> Vec<&'static str> {
    match kind {
        ModelKind::CycleGan => vec!["adv_a", "adv_b", "cycle_a", "cycle_b"],
        ModelKind::Cut if weights.nce_identity => vec!["adv", "nce", "nce_idt"],
        ModelKind::Cut => vec!["adv", "nce"],
    }
}

/// Weighted generator objective and its logged parts.
pub struct TotalLoss<'t, T: Scalar> {
    pub total: Var<'t, T>,
    /// Each component's value, plus `"total"`.
    pub components: BTreeMap<String, f64>,
}

/// Combine named component losses.
///
/// * cyclegan: `adv_a + adv_b + λ_cyc·(cycle_a + cycle_b)`
/// * cut: `adv + λ_nce·(nce [+ nce_idt])`
pub fn compose_total_loss<'t, T: Scalar>(
    kind: ModelKind,
    components: &[(&str, Var<'t, T>)],
    weights: &LossWeights,
) -> Result<TotalLoss<'t, T>> {
    let expected = component_names(kind, weights);
    let lookup = |name: &str| -> Result<Var<'t, T>> {
        components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                Error::Contract(format!("{kind} total loss is missing component {name}"))
            })
    };
    if let Some((extra, _)) = components.iter().find(|(n, _)| !expected.contains(n)) {
        return Err(Error::Contract(format!(
            "unexpected {kind} loss component {extra}"
        )));
    }
    for (_, v) in components {
        if v.numel() != 1 {
            return Err(Error::Contract("loss components must be scalars".into()));
        }
    }
    let total = match kind {
        ModelKind::CycleGan => {
            let adv = lookup("adv_a")?.add(&lookup("adv_b")?)?;
            let cyc = lookup("cycle_a")?.add(&lookup("cycle_b")?)?;
            adv.add(&cyc.scale(weights.lambda_cycle))?
        }
        ModelKind::Cut => {
            let mut nce = lookup("nce")?;
            if weights.nce_identity {
                nce = nce.add(&lookup("nce_idt")?)?;
            }
            lookup("adv")?.add(&nce.scale(weights.lambda_nce))?
        }
    };
    let mut logged = BTreeMap::new();
    for name in expected {
        logged.insert(name.to_string(), lookup(name)?.item()?.to_f64());
    }
    logged.insert("total".to_string(), total.item()?.to_f64());
    Ok(TotalLoss {
        total,
        components: logged,
    })
}
