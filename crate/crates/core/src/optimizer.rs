//! Adam with bias correction, one instance per parameter group.

use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Update for a single element given bias-corrected moments.
///
/// Linear in `lr`.
pub fn adam_delta(m_hat: f64, v_hat: f64, lr: f64, eps: f64) -> f64 {
    -lr * m_hat / (v_hat.sqrt() + eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    /// Optimizer owning the parameters of `params` named in `names`.
    pub fn new<'a>(
        params: &ParamStore<f32>,
        names: impl IntoIterator<Item = &'a str>,
        lr: f64,
        config: AdamConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_lr(lr)?;
        let mut moments = BTreeMap::new();
        for name in names {
            let n = params.get(name)?.len();
            moments.insert(
                name.to_string(),
                Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            );
        }
        Ok(Self {
            config,
            lr,
            step: 0,
            moments,
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.moments.keys().cloned().collect()
    }

    pub fn owns(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    /// Changes the learning rate for subsequent steps. Moments are untouched.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }

    /// Zeroes both moments and the step counter.
    pub fn reset_moments(&mut self) {
        self.step = 0;
        for mo in self.moments.values_mut() {
            mo.m.iter_mut().for_each(|x| *x = 0.0);
            mo.v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    /// Restores saved optimizer state, e.g. from a checkpoint.
    pub fn restore(
        &mut self,
        step: u64,
        lr: f64,
        moments: BTreeMap<String, Moments>,
    ) -> Result<()> {
        check_lr(lr)?;
        if moments.len() != self.moments.len() {
            return Err(Error::Contract(format!(
                "optimizer state holds {} parameters, expected {}",
                moments.len(),
                self.moments.len()
            )));
        }
        for (name, mo) in &moments {
            let own = self.moments.get(name).ok_or_else(|| {
                Error::Contract(format!("optimizer state for unknown parameter {name}"))
            })?;
            if mo.m.len() != own.m.len() || mo.v.len() != own.v.len() {
                return Err(Error::Shape(format!(
                    "optimizer moments for {name} have the wrong length"
                )));
            }
        }
        self.step = step;
        self.lr = lr;
        self.moments = moments;
        Ok(())
    }

    /// One Adam step over every owned parameter.
    ///
    /// Owned parameters missing from `grads` are treated as having zero
    /// gradient. Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &BTreeMap<String, Tensor<f32>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let Some(mo) = self.moments.get(name) else {
                return Err(Error::Contract(format!(
                    "gradient for {name}, which this optimizer does not own"
                )));
            };
            if g.len() != mo.m.len() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has {} elements, parameter has {}",
                    g.len(),
                    mo.m.len()
                )));
            }
            if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {name} at index {i}"
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, mo) in self.moments.iter_mut() {
            let p = params.get_mut(name)?.data_mut();
            let g = grads.get(name).map(|g| g.data());
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i] as f64);
                let m = beta1 * mo.m[i] as f64 + (1.0 - beta1) * gi;
                let v = beta2 * mo.v[i] as f64 + (1.0 - beta2) * gi * gi;
                mo.m[i] = m as f32;
                mo.v[i] = v as f32;
                let delta = adam_delta(m / bc1, v / bc2, self.lr, eps);
                p[i] = (p[i] as f64 + delta) as f32;
            }
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Init, ParamSpec};

    fn scalar_store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("w".into(), Tensor::new([1], vec![v]).unwrap())
            .unwrap();
        s
    }

    fn grad(v: f32) -> BTreeMap<String, Tensor<f32>> {
        BTreeMap::from([("w".to_string(), Tensor::new([1], vec![v]).unwrap())])
    }

    #[test]
    fn first_step_is_unit_update() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(&p, ["w"], 0.1, AdamConfig::default()).unwrap();
        opt.step(&mut p, &grad(1.0)).unwrap();
        // m = 0.5, v = 0.001; corrected both to 1, so the move is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        let got = p.get("w").unwrap().data()[0] as f64;
        assert!((got - expected).abs() < 1e-6);
        assert!((got + 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(0.75);
        let mut opt = Adam::new(&p, ["w"], 0.1, AdamConfig::default()).unwrap();
        opt.step(&mut p, &grad(0.0)).unwrap();
        opt.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.75);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut p = scalar_store(0.5);
        let mut opt = Adam::new(&p, ["w"], 0.1, AdamConfig::default()).unwrap();
        let err = opt.step(&mut p, &grad(f32::NAN)).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("w")));
        assert_eq!(opt.step_count(), 0);
        assert_eq!(p.get("w").unwrap().data()[0], 0.5);
    }

    #[test]
    fn deterministic_over_ten_steps() {
        let specs = [ParamSpec::new("g.w", &[4, 3], Init::Normal { std: 0.5 })];
        let run = || {
            let mut p = ParamStore::<f32>::initialize(&specs, 3).unwrap();
            let mut opt = Adam::new(&p, ["g.w"], 0.01, AdamConfig::default()).unwrap();
            for k in 0..10 {
                let g = p.get("g.w").unwrap().map(|x| x * x - 0.1 * k as f32);
                opt.step(&mut p, &BTreeMap::from([("g.w".to_string(), g)]))
                    .unwrap();
            }
            p.get("g.w").unwrap().data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn set_lr_and_reset() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(&p, ["w"], 0.002, AdamConfig::default()).unwrap();
        opt.step(&mut p, &grad(1.0)).unwrap();
        opt.set_lr(0.0002).unwrap();
        assert_eq!(opt.lr(), 0.0002);
        assert_eq!(opt.moments("w").unwrap().m, vec![0.5]);
        assert!(matches!(opt.set_lr(0.0), Err(Error::Config(_))));
        assert!(matches!(opt.set_lr(-1.0), Err(Error::Config(_))));

        let mut twin = opt.clone();
        let mut p2 = p.clone();
        opt.set_lr(0.0002).unwrap();
        opt.step(&mut p, &grad(0.3)).unwrap();
        twin.step(&mut p2, &grad(0.3)).unwrap();
        assert_eq!(p, p2);

        opt.reset_moments();
        assert_eq!(opt.step_count(), 0);
        assert_eq!(opt.moments("w").unwrap().m, vec![0.0]);
        assert_eq!(opt.moments("w").unwrap().v, vec![0.0]);
    }

    #[test]
    fn rejects_foreign_gradient() {
        let mut p = scalar_store(0.0);
        p.insert("d.w".into(), Tensor::zeros([1])).unwrap();
        let mut opt = Adam::new(&p, ["w"], 0.1, AdamConfig::default()).unwrap();
        let g = BTreeMap::from([("d.w".to_string(), Tensor::ones([1]))]);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::Contract(_))));
    }
}
