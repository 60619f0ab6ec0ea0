use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss, compose_total_loss, cycle_loss, patch_nce_loss, LossWeights,
};
use crate::models::{
    is_discriminator_param, is_generator_param, Bindings, Discriminator, FeatureEncoder, Generator,
    ModelBundle, ModelKind, PatchIndices,
};
use crate::optimizer::Adam;
use crate::rng::SplitMix64;

/// One minibatch, `[B, 3, H, W]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Tensor<f32>,
    /// RGB targets in original epochs, semantic maps in semantic epochs.
    pub target: Tensor<f32>,
}

impl Batch {
    /// Stacks `[3, H, W]` images into batch tensors.
    pub fn stack(sources: &[&Tensor<f32>], targets: &[&Tensor<f32>]) -> Result<Self> {
        Ok(Self {
            source: stack(sources)?,
            target: stack(targets)?,
        })
    }
}

pub fn stack(images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("cannot stack an empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.len() * images.len());
    for img in images {
        if img.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                shape,
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    let mut full = vec![images.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

/// Logged values and gradient reach of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Generator components plus `total`.
    pub generator: BTreeMap<String, f64>,
    /// Discriminator objectives.
    pub discriminator: BTreeMap<String, f64>,
    /// Trainable parameters whose gradient was populated in each step.
    pub g_reached: BTreeSet<String>,
    pub d_reached: BTreeSet<String>,
}

impl StepOutcome {
    /// Every logged name, generator first.
    pub fn names(&self) -> Vec<String> {
        self.generator
            .keys()
            .chain(self.discriminator.keys())
            .cloned()
            .collect()
    }
}

/// Discriminator objective names for a model kind.
pub fn discriminator_names(kind: ModelKind) -> Vec<&'static str> {
    match kind {
        ModelKind::CycleGan => vec!["d_a", "d_b"],
        ModelKind::Cut => vec!["d"],
    }
}

/// Patch-NCE between the encoder taps of `output` (queries) and the given
/// source taps (keys, detached), averaged over taps.
fn nce_term<'t>(
    g: &Generator,
    f: &FeatureEncoder,
    b: &Bindings<'t, f32>,
    source_taps: &[Var<'t, f32>],
    output: &Var<'t, f32>,
    indices: &PatchIndices,
    temperature: f64,
) -> Result<Var<'t, f32>> {
    let n = output.shape()[0];
    let (query_taps, _) = g.encode(b, output)?;
    let q = f.extract_patch_features(b, &query_taps, indices)?;
    let k = f.extract_patch_features(b, source_taps, indices)?;
    let mut total: Option<Var<'t, f32>> = None;
    for ((q, k), idx) in q.iter().zip(&k).zip(indices) {
        let e = q.shape()[1];
        let shape = [n, idx.len(), e];
        let l = patch_nce_loss(
            &q.reshape(&shape)?,
            &k.detach().reshape(&shape)?,
            temperature,
        )?;
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("encoder has no taps".into()))?;
    Ok(total.scale(1.0 / indices.len() as f64))
}

fn discriminator_loss<'t>(
    d: &Discriminator,
    b: &Bindings<'t, f32>,
    real: &Var<'t, f32>,
    fake: &Var<'t, f32>,
) -> Result<Var<'t, f32>> {
    let r = adversarial_loss(&d.discriminate(b, real)?, true)?;
    let f = adversarial_loss(&d.discriminate(b, fake)?, false)?;
    Ok(r.add(&f)?.scale(0.5))
}

fn check_finite(values: &BTreeMap<String, f64>) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, v)) => Err(Error::Numeric(format!("loss component {k} is {v}"))),
        None => Ok(()),
    }
}

/// Generator update followed by discriminator update on the same batch.
///
/// The discriminator sees the fakes produced before the generator update.
/// `patch_rng` drives NCE patch sampling and is advanced.
pub fn train_step(
    bundle: &mut ModelBundle,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    batch: &Batch,
    weights: &LossWeights,
    patch_rng: &mut SplitMix64,
) -> Result<StepOutcome> {
    let kind = bundle.arch.kind;
    let (generator, g_reached, g_grads, fakes) = {
        let tape = Tape::<f32>::new();
        let b = bundle.params.bind(&tape, is_generator_param);
        let x = tape.constant(batch.source.clone());
        let y = tape.constant(batch.target.clone());
        let (parts, fakes) = match kind {
            ModelKind::Cut => {
                let g = &bundle.generators[0];
                let f = bundle.encoder.as_ref().expect("cut bundle has an encoder");
                let d = &bundle.discriminators[0];
                let pass = g.forward_with_taps(&b, &x)?;
                let adv = adversarial_loss(&d.discriminate(&b, &pass.output)?, true)?;
                let idx = f.sample_indices(weights.num_patches, patch_rng);
                let nce = nce_term(
                    g,
                    f,
                    &b,
                    &pass.taps,
                    &pass.output,
                    &idx,
                    weights.nce_temperature,
                )?;
                let mut parts = vec![("adv", adv), ("nce", nce)];
                if weights.nce_identity {
                    let idt = g.forward_with_taps(&b, &y)?;
                    let idx = f.sample_indices(weights.num_patches, patch_rng);
                    let l = nce_term(
                        g,
                        f,
                        &b,
                        &idt.taps,
                        &idt.output,
                        &idx,
                        weights.nce_temperature,
                    )?;
                    parts.push(("nce_idt", l));
                }
                (parts, vec![pass.output.value()])
            }
            ModelKind::CycleGan => {
                let (ga, gb) = (&bundle.generators[0], &bundle.generators[1]);
                let (da, db) = (&bundle.discriminators[0], &bundle.discriminators[1]);
                let fake_b = ga.generate(&b, &x)?;
                let fake_a = gb.generate(&b, &y)?;
                let rec_a = gb.generate(&b, &fake_b)?;
                let rec_b = ga.generate(&b, &fake_a)?;
                let parts = vec![
                    (
                        "adv_a",
                        adversarial_loss(&db.discriminate(&b, &fake_b)?, true)?,
                    ),
                    (
                        "adv_b",
                        adversarial_loss(&da.discriminate(&b, &fake_a)?, true)?,
                    ),
                    ("cycle_a", cycle_loss(&x, &rec_a)?),
                    ("cycle_b", cycle_loss(&y, &rec_b)?),
                ];
                // d_a judges domain A, d_b judges domain B
                (parts, vec![fake_a.value(), fake_b.value()])
            }
        };
        let total = compose_total_loss(kind, &parts, weights)?;
        check_finite(&total.components)?;
        total.total.backward()?;
        let reached: BTreeSet<String> = b.reached().into_iter().collect();
        (total.components, reached, b.grads(), fakes)
    };
    opt_g.step(&mut bundle.params, &g_grads)?;

    let (discriminator, d_reached, d_grads) = {
        let tape = Tape::<f32>::new();
        let b = bundle.params.bind(&tape, is_discriminator_param);
        let x = tape.constant(batch.source.clone());
        let y = tape.constant(batch.target.clone());
        let mut logged = BTreeMap::new();
        let loss = match kind {
            ModelKind::Cut => {
                let fake = tape.constant(fakes[0].clone());
                let l = discriminator_loss(&bundle.discriminators[0], &b, &y, &fake)?;
                logged.insert("d".to_string(), l.item()? as f64);
                l
            }
            ModelKind::CycleGan => {
                let fake_a = tape.constant(fakes[0].clone());
                let fake_b = tape.constant(fakes[1].clone());
                let la = discriminator_loss(&bundle.discriminators[0], &b, &x, &fake_a)?;
                let lb = discriminator_loss(&bundle.discriminators[1], &b, &y, &fake_b)?;
                logged.insert("d_a".to_string(), la.item()? as f64);
                logged.insert("d_b".to_string(), lb.item()? as f64);
                la.add(&lb)?
            }
        };
        check_finite(&logged)?;
        loss.backward()?;
        let reached: BTreeSet<String> = b.reached().into_iter().collect();
        (logged, reached, b.grads())
    };
    opt_d.step(&mut bundle.params, &d_grads)?;

    Ok(StepOutcome {
        generator,
        discriminator,
        g_reached,
        d_reached,
    })
}

/// Translates `[3, H, W]` sources with the bundle's test-time generator.
pub fn translate(
    bundle: &ModelBundle,
    sources: &[Tensor<f32>],
    chunk: usize,
) -> Result<Vec<Tensor<f32>>> {
    let g = bundle.translator();
    let mut out = Vec::with_capacity(sources.len());
    for group in sources.chunks(chunk.max(1)) {
        let refs: Vec<&Tensor<f32>> = group.iter().collect();
        let tape = Tape::<f32>::new();
        let b = bundle.params.bind(&tape, |_| false);
        let x = tape.constant(stack(&refs)?);
        let y = g.generate(&b, &x)?.value();
        let [n, c, h, w] = y.shape()[..] else {
            unreachable!("generator output is rank 4")
        };
        let per = c * h * w;
        for i in 0..n {
            out.push(Tensor::new(
                [c, h, w],
                y.data()[i * per..(i + 1) * per].to_vec(),
            )?);
        }
    }
    Ok(out)
}
