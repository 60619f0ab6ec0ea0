//! Interleaved ORIGINAL / SEMANTIC training schedules.
//!
//! A run of `n` epochs injects `s` chunks of `y` semantic epochs, giving an
//! original:semantic split of `(n - s·y) : (s·y)`. Semantic epochs run at
//! `base_lr / l`. Semantic chunks are spread between ORIGINAL chunks so the
//! plan starts and ends with target-domain training.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseKind {
    /// Source → target translation.
    Original,
    /// Source → semantic-map translation.
    Semantic,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseKind::Original => "original",
            PhaseKind::Semantic => "semantic",
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "o" => Ok(PhaseKind::Original),
            "semantic" | "s" => Ok(PhaseKind::Semantic),
            other => Err(Error::Spec(format!("unknown phase kind {other:?}"))),
        }
    }
}

/// Parameters of an injected schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    /// Total epochs `n`.
    pub total_epochs: u32,
    /// Number of semantic chunks `s`.
    pub semantic_chunks: u32,
    /// Epochs per semantic chunk `y`.
    pub chunk_epochs: u32,
    /// Learning-rate divisor `l` for semantic epochs.
    pub lr_divisor: f64,
    /// Learning rate of ORIGINAL epochs.
    pub base_lr: f64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Spec("total epochs must be positive".into()));
        }
        if self.chunk_epochs == 0 {
            return Err(Error::Spec(
                "epochs per semantic chunk must be positive".into(),
            ));
        }
        let semantic = u64::from(self.semantic_chunks) * u64::from(self.chunk_epochs);
        if semantic >= u64::from(self.total_epochs) {
            return Err(Error::Spec(format!(
                "semantic epochs s*y = {semantic} must be below total epochs n = {}",
                self.total_epochs
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Spec(format!(
                "base lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.lr_divisor.is_finite() && self.lr_divisor >= 1.0) {
            return Err(Error::Spec(format!(
                "lr divisor l must be >= 1, got {}",
                self.lr_divisor
            )));
        }
        Ok(())
    }

    /// `(n - s·y, s·y)`.
    pub fn ratio(&self) -> Result<(u32, u32)> {
        self.validate()?;
        let semantic = self.semantic_chunks * self.chunk_epochs;
        Ok((self.total_epochs - semantic, semantic))
    }

    /// `base_lr / l`.
    pub fn semantic_lr(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.base_lr / self.lr_divisor)
    }

    pub fn lr_for(&self, kind: PhaseKind) -> Result<f64> {
        match kind {
            PhaseKind::Original => {
                self.validate()?;
                Ok(self.base_lr)
            }
            PhaseKind::Semantic => self.semantic_lr(),
        }
    }
}

/// The five reference schedules over 100 epochs with 10-epoch semantic chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    R100_0,
    R90_10,
    R80_20,
    R70_30,
    R60_40,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::R100_0,
        Preset::R90_10,
        Preset::R80_20,
        Preset::R70_30,
        Preset::R60_40,
    ];
    pub const TOTAL_EPOCHS: u32 = 100;
    pub const CHUNK_EPOCHS: u32 = 10;

    pub fn name(self) -> &'static str {
        match self {
            Preset::R100_0 => "100:0",
            Preset::R90_10 => "90:10",
            Preset::R80_20 => "80:20",
            Preset::R70_30 => "70:30",
            Preset::R60_40 => "60:40",
        }
    }

    pub fn semantic_chunks(self) -> u32 {
        match self {
            Preset::R100_0 => 0,
            Preset::R90_10 => 1,
            Preset::R80_20 => 2,
            Preset::R70_30 => 3,
            Preset::R60_40 => 4,
        }
    }

    /// Alternating epoch counts, starting with an ORIGINAL chunk.
    pub fn epoch_sequence(self) -> &'static [u32] {
        match self {
            Preset::R100_0 => &[100],
            Preset::R90_10 => &[45, 10, 45],
            Preset::R80_20 => &[30, 10, 20, 10, 30],
            Preset::R70_30 => &[20, 10, 15, 10, 15, 10, 20],
            Preset::R60_40 => &[15, 10, 10, 10, 10, 10, 10, 10, 15],
        }
    }

    pub fn spec(self, base_lr: f64, lr_divisor: f64) -> ScheduleSpec {
        ScheduleSpec {
            total_epochs: Self::TOTAL_EPOCHS,
            semantic_chunks: self.semantic_chunks(),
            chunk_epochs: Self::CHUNK_EPOCHS,
            lr_divisor,
            base_lr,
        }
    }

    fn matching(spec: &ScheduleSpec) -> Option<Preset> {
        if spec.total_epochs != Self::TOTAL_EPOCHS || spec.chunk_epochs != Self::CHUNK_EPOCHS {
            return None;
        }
        Self::ALL
            .into_iter()
            .find(|p| p.semantic_chunks() == spec.semantic_chunks)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace(['-', '_'], ":");
        Self::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {s:?}; expected one of 100:0, 90:10, 80:20, 70:30, 60:40"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub epochs: u32,
    pub lr: f64,
}

/// Ordered, validated list of training phases.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePlan {
    phases: Vec<Phase>,
}

/// One epoch as seen by the training loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochEntry {
    pub epoch: u32,
    pub phase_index: usize,
    pub kind: PhaseKind,
    pub lr: f64,
}

impl PhasePlan {
    /// Build from explicit phases, checking structural invariants
    /// (positive epochs and lr, strict alternation, ORIGINAL bookends).
    pub fn from_phases(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Spec("empty phase plan".into()));
        }
        for (i, p) in phases.iter().enumerate() {
            if p.epochs == 0 {
                return Err(Error::Spec(format!("phase {i} has zero epochs")));
            }
            if !(p.lr.is_finite() && p.lr > 0.0) {
                return Err(Error::Spec(format!(
                    "phase {i} has non-positive lr {}",
                    p.lr
                )));
            }
        }
        if let Some(i) = phases.windows(2).position(|w| w[0].kind == w[1].kind) {
            return Err(Error::Spec(format!(
                "phases {i} and {} are both {}",
                i + 1,
                phases[i].kind
            )));
        }
        let first = phases[0].kind;
        let last = phases[phases.len() - 1].kind;
        if first != PhaseKind::Original || last != PhaseKind::Original {
            return Err(Error::Spec(
                "plan must start and end with an original phase".into(),
            ));
        }
        Ok(Self { phases })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total_epochs(&self) -> u32 {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn epochs_of(&self, kind: PhaseKind) -> u32 {
        self.phases
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.epochs)
            .sum()
    }

    /// Kind-alternating epoch counts, e.g. `[30, 10, 20, 10, 30]`.
    pub fn epoch_sequence(&self) -> Vec<u32> {
        self.phases.iter().map(|p| p.epochs).collect()
    }

    /// Check every invariant a plan derived from `spec` must satisfy.
    pub fn check_against(&self, spec: &ScheduleSpec) -> Result<()> {
        let (orig, sem) = spec.ratio()?;
        let semantic_lr = spec.semantic_lr()?;
        if self.total_epochs() != spec.total_epochs {
            return Err(Error::Spec(format!(
                "plan covers {} epochs, spec has {}",
                self.total_epochs(),
                spec.total_epochs
            )));
        }
        if self.epochs_of(PhaseKind::Original) != orig || self.epochs_of(PhaseKind::Semantic) != sem
        {
            return Err(Error::Spec("plan ratio disagrees with spec".into()));
        }
        for p in &self.phases {
            let (want_lr, ok_epochs) = match p.kind {
                PhaseKind::Original => (spec.base_lr, true),
                PhaseKind::Semantic => (semantic_lr, p.epochs == spec.chunk_epochs),
            };
            if p.lr != want_lr || !ok_epochs {
                return Err(Error::Spec(format!("phase {p:?} violates spec {spec:?}")));
            }
        }
        Ok(())
    }

    /// Iterate epochs `0..n` in order with the phase each one belongs to.
    pub fn cursor(&self) -> EpochCursor<'_> {
        EpochCursor {
            plan: self,
            phase: 0,
            within: 0,
            epoch: 0,
        }
    }

    /// Entry for one epoch index, if it lies inside the plan.
    pub fn entry(&self, epoch: u32) -> Option<EpochEntry> {
        let mut start = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if epoch < start + p.epochs {
                return Some(EpochEntry {
                    epoch,
                    phase_index: i,
                    kind: p.kind,
                    lr: p.lr,
                });
            }
            start += p.epochs;
        }
        None
    }

    /// Whether `epoch` is the final epoch of its phase.
    pub fn is_phase_end(&self, epoch: u32) -> bool {
        let mut end = 0;
        for p in &self.phases {
            end += p.epochs;
            if epoch + 1 == end {
                return true;
            }
            if epoch < end {
                return false;
            }
        }
        false
    }

    /// `kind:epochs:lr` entries joined by commas.
    pub fn to_entries(&self) -> String {
        self.phases
            .iter()
            .map(|p| format!("{}:{}:{}", p.kind, p.epochs, p.lr))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_entries(s: &str) -> Result<Self> {
        let phases = s
            .split(',')
            .map(|entry| {
                let parts: Vec<&str> = entry.trim().split(':').collect();
                let [kind, epochs, lr] = parts[..] else {
                    return Err(Error::Spec(format!("bad plan entry {entry:?}")));
                };
                Ok(Phase {
                    kind: kind.parse()?,
                    epochs: epochs
                        .parse()
                        .map_err(|_| Error::Spec(format!("bad epoch count {epochs:?}")))?,
                    lr: lr
                        .parse()
                        .map_err(|_| Error::Spec(format!("bad lr {lr:?}")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_phases(phases)
    }
}

pub struct EpochCursor<'a> {
    plan: &'a PhasePlan,
    phase: usize,
    within: u32,
    epoch: u32,
}

impl Iterator for EpochCursor<'_> {
    type Item = EpochEntry;

    fn next(&mut self) -> Option<EpochEntry> {
        let phases = self.plan.phases();
        while self.phase < phases.len() && self.within >= phases[self.phase].epochs {
            self.phase += 1;
            self.within = 0;
        }
        let p = phases.get(self.phase)?;
        let entry = EpochEntry {
            epoch: self.epoch,
            phase_index: self.phase,
            kind: p.kind,
            lr: p.lr,
        };
        self.within += 1;
        self.epoch += 1;
        Some(entry)
    }
}

/// Plan for one of the reference presets.
pub fn preset_plan(name: &str, base_lr: f64, lr_divisor: f64) -> Result<PhasePlan> {
    let preset: Preset = name.parse()?;
    plan_from_sequence(&preset.spec(base_lr, lr_divisor), preset.epoch_sequence())
}

fn plan_from_sequence(spec: &ScheduleSpec, seq: &[u32]) -> Result<PhasePlan> {
    let semantic_lr = spec.semantic_lr()?;
    let phases = seq
        .iter()
        .enumerate()
        .map(|(i, &epochs)| {
            let kind = if i % 2 == 0 {
                PhaseKind::Original
            } else {
                PhaseKind::Semantic
            };
            let lr = match kind {
                PhaseKind::Original => spec.base_lr,
                PhaseKind::Semantic => semantic_lr,
            };
            Phase { kind, epochs, lr }
        })
        .collect();
    PhasePlan::from_phases(phases)
}

/// Interleave `s` semantic chunks between `s + 1` ORIGINAL chunks.
///
/// Specs that coincide with a reference preset (`n = 100`, `y = 10`) use the
/// preset sequence. Otherwise the ORIGINAL epochs are split evenly, with the
/// remainder handed out one epoch at a time from the outermost chunks inward.
pub fn build_plan(spec: &ScheduleSpec) -> Result<PhasePlan> {
    let (original, _) = spec.ratio()?;
    if let Some(preset) = Preset::matching(spec) {
        return plan_from_sequence(spec, preset.epoch_sequence());
    }
    let chunks = spec.semantic_chunks as usize + 1;
    if (original as usize) < chunks {
        return Err(Error::Spec(format!(
            "{original} original epochs cannot separate {} semantic chunks",
            spec.semantic_chunks
        )));
    }
    let mut orig = vec![original / chunks as u32; chunks];
    let remainder = original as usize % chunks;
    for i in 0..remainder {
        let slot = if i % 2 == 0 {
            i / 2
        } else {
            chunks - 1 - i / 2
        };
        orig[slot] += 1;
    }
    let mut seq = Vec::with_capacity(2 * chunks - 1);
    for (i, o) in orig.into_iter().enumerate() {
        if i > 0 {
            seq.push(spec.chunk_epochs);
        }
        seq.push(o);
    }
    let plan = plan_from_sequence(spec, &seq)?;
    plan.check_against(spec)?;
    Ok(plan)
}
