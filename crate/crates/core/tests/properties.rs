//! Property tests for the structural invariants of every module.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use semgan_core::autodiff::{Tape, Tensor};
use semgan_core::losses::{adversarial_loss, cycle_loss, patch_nce_loss};
use semgan_core::models::{l2_normalize_rows, row_norms, ArchConfig, ModelBundle, ModelKind};
use semgan_core::optimizer::{adam_delta, Adam, AdamConfig, Moments};
use semgan_core::rng::SplitMix64;
use semgan_core::schedule::{build_plan, preset_plan, PhaseKind, Preset, ScheduleSpec};
use semgan_core::synthdata::{generate_scene, DatasetConfig, Palette};

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, &mut SplitMix64::new(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_length_is_shape_product(shape in prop::collection::vec(1usize..5, 0..4), extra in 1usize..3) {
        let n: usize = shape.iter().product();
        prop_assert_eq!(Tensor::<f32>::zeros(shape.clone()).len(), n);
        prop_assert!(Tensor::new(shape.clone(), vec![0.0f32; n + extra]).is_err());
    }

    #[test]
    fn broadcast_gradient_sums_over_tiled_axes(
        dims in prop::collection::vec(1usize..4, 3),
        keep in prop::collection::vec(any::<bool>(), 3),
        seed in any::<u64>(),
    ) {
        let bshape: Vec<usize> = dims.iter().zip(&keep).map(|(&d, &k)| if k { d } else { 1 }).collect();
        let a = tensor(&dims, seed);
        let b = tensor(&bshape, seed ^ 1);
        let w = tensor(&dims, seed ^ 2);
        let tape = Tape::<f64>::new();
        let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
        let loss = va.mul(&vb).unwrap().mul(&tape.constant(w.clone())).unwrap().sum_all();
        loss.backward().unwrap();
        let gb = vb.grad().unwrap();
        prop_assert_eq!(gb.shape(), &bshape[..]);
        let ga = va.grad().unwrap();
        prop_assert_eq!(ga.shape(), &dims[..]);
        // explicit tiling: b is read at the index with broadcast axes zeroed
        let mut want = vec![0.0; b.len()];
        let (d1, d2) = (dims[1], dims[2]);
        let (b1, b2) = (bshape[1], bshape[2]);
        for i in 0..dims[0] {
            for j in 0..d1 {
                for k in 0..d2 {
                    let full = (i * d1 + j) * d2 + k;
                    let bi = ((if keep[0] { i } else { 0 }) * b1 + if keep[1] { j } else { 0 }) * b2
                        + if keep[2] { k } else { 0 };
                    want[bi] += a.data()[full] * w.data()[full];
                }
            }
        }
        for (g, e) in gb.data().iter().zip(&want) {
            prop_assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn each_tape_node_is_visited_once(k in 1usize..24, seed in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let x = tape.param(tensor(&[2, 3], seed));
        let c = tape.constant(tensor(&[2, 3], seed ^ 9));
        let mut y = x.clone();
        for _ in 0..k {
            y = y.add(&x).unwrap().add(&c).unwrap();
        }
        y.sum_all().backward().unwrap();
        prop_assert!(x.grad().unwrap().data().iter().all(|&g| g == (k + 1) as f64));
        prop_assert!(c.grad().is_none());
    }

    #[test]
    fn losses_are_non_negative(seed in any::<u64>(), p in 2usize..9, d in 1usize..6, tau in 0.05f64..2.0) {
        let tape = Tape::<f64>::new();
        let s = tape.constant(tensor(&[2, 1, 3, 3], seed));
        prop_assert!(adversarial_loss(&s, true).unwrap().item().unwrap() >= 0.0);
        prop_assert!(adversarial_loss(&s, false).unwrap().item().unwrap() >= 0.0);
        let a = tape.constant(tensor(&[2, 3, 4, 4], seed ^ 3));
        let b = tape.constant(tensor(&[2, 3, 4, 4], seed ^ 4));
        prop_assert!(cycle_loss(&a, &b).unwrap().item().unwrap() >= 0.0);
        let q = l2_normalize_rows(&tape.constant(tensor(&[p, d], seed ^ 5))).unwrap();
        let k = l2_normalize_rows(&tape.constant(tensor(&[p, d], seed ^ 6))).unwrap();
        prop_assert!(patch_nce_loss(&q, &k, tau).unwrap().item().unwrap() >= 0.0);
    }

    #[test]
    fn built_plans_hold_every_invariant(
        n in 1u32..400,
        s in 0u32..12,
        y in 1u32..25,
        l in 1.0f64..200.0,
        base in 1e-5f64..1.0,
    ) {
        let spec = ScheduleSpec { total_epochs: n, semantic_chunks: s, chunk_epochs: y, lr_divisor: l, base_lr: base };
        let Ok(plan) = build_plan(&spec) else {
            // only rejected when semantic epochs leave too little original training
            prop_assert!(s * y >= n || n - s * y < s + 1);
            return Ok(());
        };
        let phases = plan.phases();
        prop_assert_eq!(phases.iter().map(|p| p.epochs).sum::<u32>(), n);
        prop_assert_eq!(plan.epochs_of(PhaseKind::Semantic), s * y);
        prop_assert_eq!(spec.ratio().unwrap(), (plan.epochs_of(PhaseKind::Original), plan.epochs_of(PhaseKind::Semantic)));
        prop_assert!(phases.windows(2).all(|w| w[0].kind != w[1].kind));
        prop_assert_eq!(phases.first().unwrap().kind, PhaseKind::Original);
        prop_assert_eq!(phases.last().unwrap().kind, PhaseKind::Original);
        for p in phases {
            match p.kind {
                PhaseKind::Semantic => {
                    prop_assert_eq!(p.epochs, y);
                    prop_assert_eq!(p.lr, base / l);
                }
                PhaseKind::Original => prop_assert_eq!(p.lr, base),
            }
        }
        // off-preset plans split o evenly and hand the remainder out from the
        // outermost chunks inward: first, last, second, second-to-last, ...
        if !(n == 100 && y == 10) {
            let orig: Vec<u32> = phases.iter().filter(|p| p.kind == PhaseKind::Original).map(|p| p.epochs).collect();
            let chunks = (s + 1) as usize;
            let o = n - s * y;
            let mut want = vec![o / (s + 1); chunks];
            let (mut lo, mut hi) = (0usize, chunks - 1);
            for i in 0..(o % (s + 1)) as usize {
                if i % 2 == 0 {
                    want[lo] += 1;
                    lo += 1;
                } else {
                    want[hi] += 1;
                    hi -= 1;
                }
            }
            prop_assert_eq!(orig, want);
        }
        // grouping the cursor by consecutive kind rebuilds the plan
        let mut groups: Vec<(PhaseKind, u32, f64)> = Vec::new();
        for (i, e) in plan.cursor().enumerate() {
            prop_assert_eq!(e.epoch as usize, i);
            match groups.last_mut() {
                Some(g) if g.0 == e.kind => g.1 += 1,
                _ => groups.push((e.kind, 1, e.lr)),
            }
        }
        let rebuilt: Vec<(PhaseKind, u32, f64)> = phases.iter().map(|p| (p.kind, p.epochs, p.lr)).collect();
        prop_assert_eq!(groups, rebuilt);
    }

    #[test]
    fn adam_update_is_linear_in_lr(m in -1.0f64..1.0, v in 1e-6f64..1.0, lr in 1e-6f64..1e-1, k in 1.0f64..1000.0) {
        let a = adam_delta(m, v, lr, 1e-8);
        let b = adam_delta(m, v, k * lr, 1e-8);
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn adam_step_scales_with_lr_for_fixed_moments(seed in any::<u64>(), k in 2.0f64..100.0, steps in 1u64..50) {
        let bundle = ModelBundle::build(ArchConfig { kind: ModelKind::Cut, image_size: 16, base_width: 2, res_blocks: 1, embed_dim: 4 }, 1).unwrap();
        let names = bundle.generator_param_names();
        let name = names[0].clone();
        let shape = bundle.params.get(&name).unwrap().shape().to_vec();
        let mut rng = SplitMix64::new(seed);
        let moments: BTreeMap<String, Moments> = names
            .iter()
            .map(|n| {
                let len = bundle.params.get(n).unwrap().len();
                let m = (0..len).map(|_| rng.uniform(-0.1, 0.1) as f32).collect();
                let v = (0..len).map(|_| rng.uniform(1e-4, 1e-2) as f32).collect();
                (n.clone(), Moments { m, v })
            })
            .collect();
        let zero: BTreeMap<String, Tensor<f32>> = [(name.clone(), Tensor::zeros(shape))].into();
        let run = |lr: f64| {
            let mut params = bundle.params.clone();
            let mut opt = Adam::new(&params, names.iter().map(String::as_str), lr, AdamConfig::default()).unwrap();
            opt.restore(steps, lr, moments.clone()).unwrap();
            opt.step(&mut params, &zero).unwrap();
            let before = bundle.params.get(&name).unwrap().data().to_vec();
            params.get(&name).unwrap().data().iter().zip(before).map(|(a, b)| *a as f64 - b as f64).collect::<Vec<_>>()
        };
        let (small, large) = (run(1e-4), run(1e-4 * k));
        for (s, l) in small.iter().zip(&large) {
            // parameters are stored in f32, so compare to f32 resolution
            prop_assert!((l - k * s).abs() <= 1e-5 * l.abs() + 1e-9, "{} vs {}", l, k * s);
        }
    }

    #[test]
    fn palette_recoloring_touches_only_semantics(seed in any::<u64>(), colors in prop::collection::vec(any::<[u8; 3]>(), 5)) {
        let base = DatasetConfig { image_size: 16, ..DatasetConfig::default() };
        let recolored = DatasetConfig { palette: Palette(colors), ..base.clone() };
        let (a, b) = (generate_scene(seed, &base).unwrap(), generate_scene(seed, &recolored).unwrap());
        prop_assert_eq!(&a.source, &b.source);
        prop_assert_eq!(&a.target, &b.target);
        prop_assert_eq!(&a.category_grid, &b.category_grid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_range_and_embedding_norms(seed in any::<u64>(), scale in 0.1f64..20.0, narrow in any::<bool>()) {
        // Default widths, or narrow ones where a tap location can have every
        // post-ReLU channel at zero; such a patch projects to the zero vector.
        let (base_width, embed_dim) = if narrow { (4, 8) } else { (32, 256) };
        let arch = ArchConfig { kind: ModelKind::Cut, image_size: 16, base_width, res_blocks: 1, embed_dim };
        let bundle = ModelBundle::build(arch, seed).unwrap();
        let tape = Tape::new();
        let b = bundle.params.bind(&tape, |_| false);
        let x = Tensor::<f32>::rand_uniform([2, 3, 16, 16], -scale, scale, &mut SplitMix64::new(seed ^ 7));
        let x = tape.constant(x);
        let y = bundle.translator().generate(&b, &x).unwrap().value();
        prop_assert_eq!(y.shape(), &[2, 3, 16, 16]);
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let (taps, _) = bundle.translator().encode(&b, &x).unwrap();
        let f = bundle.encoder.as_ref().unwrap();
        let idx = f.sample_indices(5, &mut SplitMix64::new(seed));
        for m in f.extract_patch_features(&b, &taps, &idx).unwrap() {
            let v = m.value();
            for (row, n) in v.data().chunks(embed_dim).zip(row_norms(&v)) {
                let zero_row = narrow && row.iter().all(|&x| x == 0.0);
                prop_assert!((n - 1.0).abs() <= 1e-5 || zero_row, "norm {}", n);
            }
        }
    }
}

#[test]
fn presets_match_reference_sequences_for_every_lr_setting() {
    let golden: [(&str, &[u32]); 5] = [
        ("100:0", &[100]),
        ("90:10", &[45, 10, 45]),
        ("80:20", &[30, 10, 20, 10, 30]),
        ("70:30", &[20, 10, 15, 10, 15, 10, 20]),
        ("60:40", &[15, 10, 10, 10, 10, 10, 10, 10, 15]),
    ];
    for (name, seq) in golden {
        for l in [1.0, 10.0, 100.0] {
            let plan = preset_plan(name, 0.002, l).unwrap();
            assert_eq!(plan.epoch_sequence(), seq, "{name}");
        }
    }
    assert_eq!(Preset::ALL.len(), 5);
}

#[test]
fn optimizer_groups_are_disjoint_and_cover_the_bundle() {
    for kind in [ModelKind::Cut, ModelKind::CycleGan] {
        let arch = ArchConfig {
            kind,
            image_size: 16,
            base_width: 2,
            res_blocks: 1,
            embed_dim: 4,
        };
        let bundle = ModelBundle::build(arch, 0).unwrap();
        let g = bundle.generator_param_names();
        let d = bundle.discriminator_param_names();
        let og = Adam::new(
            &bundle.params,
            g.iter().map(String::as_str),
            0.002,
            AdamConfig::default(),
        )
        .unwrap();
        let od = Adam::new(
            &bundle.params,
            d.iter().map(String::as_str),
            0.002,
            AdamConfig::default(),
        )
        .unwrap();
        assert!(og.names().is_disjoint(&od.names()));
        let all: BTreeSet<String> = bundle.params.names().map(str::to_string).collect();
        let union: BTreeSet<String> = og.names().union(&od.names()).cloned().collect();
        assert_eq!(union, all, "{kind}");
    }
}
