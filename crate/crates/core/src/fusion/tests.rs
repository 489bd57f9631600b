use super::*;
use crate::metrics::{cross_entropy, miou};
use crate::raster::{LabelMap, Size};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const C: usize = 3;

fn variants(c: usize) -> [FusionVariant; 3] {
    [FusionVariant::Basic, FusionVariant::residual(c), FusionVariant::bottleneck(c)]
}

fn random_scores(size: Size, c: usize, seed: u64) -> ScoreMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..size.area() * c).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    ScoreMap::new(size, c, data).unwrap()
}

fn randomize_biases(head: &mut FusionHead, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut head.layers {
        for b in &mut l.b {
            *b = rng.random_range(-0.5..0.5);
        }
    }
}

fn dense(l: &Linear) -> (DMatrix<f64>, DVector<f64>) {
    (DMatrix::from_row_slice(l.out, l.inp, &l.w), DVector::from_column_slice(&l.b))
}

fn relu_v(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// Straight matrix arithmetic, written independently of the layer code.
fn oracle(head: &FusionHead, p: &[f64], n: &[f64]) -> Vec<f64> {
    let mut zv = p.to_vec();
    zv.extend_from_slice(n);
    let z = DVector::from_vec(zv);
    let (pv, nv) = (DVector::from_column_slice(p), DVector::from_column_slice(n));
    let l: Vec<_> = head.layers.iter().map(dense).collect();
    let y = match head.variant {
        FusionVariant::Basic => &l[0].0 * &z + &l[0].1,
        FusionVariant::Residual { .. } => {
            let h = relu_v(&l[0].0 * &z + &l[0].1);
            let t = relu_v(&l[1].0 * h + &l[1].1 + &l[2].0 * &z + &l[2].1);
            &l[3].0 * t + &l[3].1
        }
        FusionVariant::Bottleneck { .. } => {
            let s = &l[0].0 * pv + &l[0].1 + &l[1].0 * nv + &l[1].1;
            let m = relu_v(&l[2].0 * &s + &l[2].1);
            let t = relu_v(&l[3].0 * m + &l[3].1 + s);
            &l[4].0 * t + &l[4].1
        }
    };
    y.iter().copied().collect()
}

#[test]
fn variant_shapes() {
    let h = FusionHead::zeros(FusionVariant::residual(6), 6).unwrap();
    assert_eq!(h.layers().len(), 4);
    assert_eq!((h.layers()[0].out, h.layers()[0].inp), (12, 12));
    let b = FusionHead::zeros(FusionVariant::bottleneck(5), 5).unwrap();
    assert_eq!(b.variant(), FusionVariant::Bottleneck { width: 3 });
    assert_eq!((b.layers()[2].out, b.layers()[2].inp), (3, 6));
    assert_eq!((b.layers()[4].out, b.layers()[4].inp), (5, 6));
    assert!(FusionHead::zeros(FusionVariant::Residual { hidden: 0 }, 3).is_err());
    assert!(FusionVariant::from_name("wide", 3).is_err());
}

#[test]
fn native_selecting_head_is_exact() {
    let size = Size::new(5, 4);
    let (p, n) = (random_scores(size, C, 1), random_scores(size, C, 2));
    let head = FusionHead::native_identity(C).unwrap();
    let out = fuse_forward(&head, &p, &n, &Mask::full(size)).unwrap();
    assert_eq!(out, n);
}

#[test]
fn zero_weights_give_bias() {
    let size = Size::new(3, 3);
    let mut head = FusionHead::zeros(FusionVariant::Basic, C).unwrap();
    head.layers[0].b = vec![0.5, -1.0, 2.0];
    let mask = Mask::from_fn(size, |x, _| x != 1);
    let (p, n) = (random_scores(size, C, 3), random_scores(size, C, 4));
    let out = fuse_forward(&head, &p, &n, &mask).unwrap();
    for i in 0..size.area() {
        for k in 0..C {
            let want = if mask.data()[i] { head.layers[0].b[k] as f32 } else { n.get(k, i) };
            assert_eq!(out.get(k, i), want);
        }
    }
}

#[test]
fn single_pixel_matches_matrix_oracle() {
    let p = [0.3, -1.2, 0.7];
    let n = [1.5, 0.1, -0.4];
    for (s, v) in variants(C).into_iter().enumerate() {
        let mut head = FusionHead::random(v, C, 1.0, 40 + s as u64).unwrap();
        randomize_biases(&mut head, s as u64);
        let got = head.forward_pixel(&p, &n);
        let want = oracle(&head, &p, &n);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{v:?}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_upstream_gradient() {
    let size = Size::new(4, 4);
    let (p, n) = (random_scores(size, C, 5), random_scores(size, C, 6));
    for v in variants(C) {
        let head = FusionHead::random(v, C, 1.0, 7).unwrap();
        let g = fuse_backward(&head, &p, &n, &Mask::full(size), &vec![0.0; C * 16]).unwrap();
        assert!(g.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|&x| x == 0.0)));
        assert!(g.propagated.iter().chain(&g.native).all(|&x| x == 0.0));
    }
}

#[test]
fn basic_weight_gradient_by_hand() {
    let size = Size::new(1, 1);
    let p = ScoreMap::new(size, 2, vec![0.5, -1.0]).unwrap();
    let n = ScoreMap::new(size, 2, vec![2.0, 0.25]).unwrap();
    let head = FusionHead::random(FusionVariant::Basic, 2, 1.0, 8).unwrap();
    let go = [0.7, -0.3];
    let g = fuse_backward(&head, &p, &n, &Mask::full(size), &go).unwrap();
    let z = [0.5, -1.0, 2.0, 0.25];
    for o in 0..2 {
        for j in 0..4 {
            assert_eq!(g.layers[0].w[o * 4 + j], z[j] * go[o]);
        }
        assert_eq!(g.layers[0].b[o], go[o]);
    }
}

/// Largest relative deviation between analytic and central-difference
/// gradients of `Σ g · logits`; the denominator is floored at 1e-6.
fn finite_difference_gap(v: FusionVariant, size: Size, c: usize, seed: u64) -> f64 {
    const EPS: f64 = 1e-4;
    let (p, n) = (random_scores(size, c, seed), random_scores(size, c, seed + 1000));
    let mask = Mask::from_fn(size, |x, y| (x + y + seed as usize) % 5 != 0);
    let mut head = FusionHead::random(v, c, 1.0, seed + 2000).unwrap();
    randomize_biases(&mut head, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3000);
    let go: Vec<f64> = (0..c * size.area()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |h: &FusionHead| -> f64 {
        fuse_logits(h, &p, &n, &mask).unwrap().iter().zip(&go).map(|(a, b)| a * b).sum()
    };
    let grads = fuse_backward(&head, &p, &n, &mask, &go).unwrap();
    let analytic: Vec<f64> = grads.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)).copied().collect();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for k in 0..head.num_params() {
        let mut plus = head.clone();
        *plus.params_mut().nth(k).unwrap() += EPS;
        let mut minus = head.clone();
        *minus.params_mut().nth(k).unwrap() -= EPS;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
        worst = worst.max(rel(analytic[k], numeric));
    }
    // input gradients, pixel by pixel in full precision
    let area = size.area();
    for i in 0..area {
        if !mask.data()[i] {
            continue;
        }
        let mut z: Vec<f64> = (0..c).map(|k| p.get(k, i) as f64).collect();
        z.extend((0..c).map(|k| n.get(k, i) as f64));
        let g_i: Vec<f64> = (0..c).map(|k| go[k * area + i]).collect();
        let f = |z: &[f64]| -> f64 {
            head.forward_pixel(&z[..c], &z[c..]).iter().zip(&g_i).map(|(a, b)| a * b).sum()
        };
        for j in 0..2 * c {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += EPS;
            zm[j] -= EPS;
            let numeric = (f(&zp) - f(&zm)) / (2.0 * EPS);
            let a = if j < c { grads.propagated[j * area + i] } else { grads.native[(j - c) * area + i] };
            worst = worst.max(rel(a, numeric));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for v in variants(C) {
        for seed in 0..3 {
            let gap = finite_difference_gap(v, Size::new(4, 4), C, seed);
            assert!(gap < 1e-4, "{v:?} seed {seed}: {gap}");
        }
    }
}

#[test]
fn masked_pixels_pass_through() {
    let size = Size::new(4, 3);
    let (p, n) = (random_scores(size, C, 9), random_scores(size, C, 10));
    let none = Mask::empty(size);
    for v in variants(C) {
        let head = FusionHead::random(v, C, 1.0, 11).unwrap();
        assert_eq!(fuse_forward(&head, &p, &n, &none).unwrap(), n);
        let go: Vec<f64> = (0..C * 12).map(|k| k as f64 * 0.1 - 0.5).collect();
        let g = fuse_backward(&head, &p, &n, &none, &go).unwrap();
        assert!(g.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|&x| x == 0.0)));
        assert!(g.propagated.iter().all(|&x| x == 0.0));
        assert_eq!(g.native, go);
    }
}

#[test]
fn shape_mismatch_is_dimension_error() {
    let head = FusionHead::zeros(FusionVariant::Basic, C).unwrap();
    let a = random_scores(Size::new(3, 3), C, 0);
    let b = random_scores(Size::new(3, 2), C, 0);
    let four = random_scores(Size::new(3, 3), 4, 0);
    let m = Mask::full(Size::new(3, 3));
    assert!(matches!(fuse_forward(&head, &a, &b, &m), Err(Error::Dimension(_))));
    assert!(matches!(fuse_forward(&head, &a, &four, &m), Err(Error::Dimension(_))));
    assert!(matches!(fuse_backward(&head, &a, &a, &m, &[0.0; 5]), Err(Error::Dimension(_))));
}

#[test]
fn basic_is_linear_without_bias() {
    let head = FusionHead::random(FusionVariant::Basic, 4, 1.0, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = head.forward_pixel(&a[..4], &a[4..]);
        let fb = head.forward_pixel(&b[..4], &b[4..]);
        let fs = head.forward_pixel(&s[..4], &s[4..]);
        for k in 0..4 {
            assert!((fs[k] - fa[k] - fb[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn head_container_roundtrip() {
    for v in variants(5) {
        let mut head = FusionHead::random(v, 5, 0.7, 14).unwrap();
        randomize_biases(&mut head, 15);
        let mut bytes = Vec::new();
        head.write(&mut bytes).unwrap();
        let back = FusionHead::read(bytes.as_slice()).unwrap();
        assert_eq!(back, head.quantized());
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, bytes);
    }
}

fn noisy_training_set(size: Size, seed: u64) -> Vec<FusionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.5).unwrap();
    (0..3)
        .map(|_| {
            let gt = LabelMap::from_fn(size, C, |_, _| rng.random_range(0..C as u8)).unwrap();
            let native = ScoreMap::one_hot(&gt, 3.0);
            let prop = (0..C * size.area()).map(|_| noise.sample(&mut rng) as f32).collect();
            FusionSample {
                propagated: ScoreMap::new(size, C, prop).unwrap(),
                native,
                mask: Mask::full(size),
                gt,
            }
        })
        .collect()
}

#[test]
fn training_learns_to_trust_clean_input() {
    let size = Size::new(12, 12);
    let data = noisy_training_set(size, 16);
    let cfg = TrainConfig { iterations: 300, learning_rate: 0.1, ..TrainConfig::default() };
    for v in variants(C) {
        let init = FusionHead::random(v, C, cfg.init_scale, cfg.seed).unwrap();
        let out = train_fusion(&init, &data, &cfg).unwrap();
        let s = &data[0];
        let before = cross_entropy(&fuse_forward(&init, &s.propagated, &s.native, &s.mask).unwrap(), &s.gt, &s.mask).unwrap();
        let fused = fuse_forward(&out.head, &s.propagated, &s.native, &s.mask).unwrap();
        let after = cross_entropy(&fused, &s.gt, &s.mask).unwrap();
        assert!(after < before, "{v:?}: {before} -> {after}");
        let m_fused = miou(&fused.argmax(), &s.gt, &s.mask, C).unwrap().mean_iou;
        let m_prop = miou(&s.propagated.argmax(), &s.gt, &s.mask, C).unwrap().mean_iou;
        assert!(m_fused >= m_prop, "{v:?}: {m_fused} < {m_prop}");
    }
}

#[test]
fn single_pixel_loss_decreases() {
    let size = Size::new(1, 1);
    let sample = FusionSample {
        propagated: ScoreMap::new(size, 2, vec![0.4, -0.2]).unwrap(),
        native: ScoreMap::new(size, 2, vec![-0.3, 0.9]).unwrap(),
        mask: Mask::full(size),
        gt: LabelMap::new(size, 2, vec![0]).unwrap(),
    };
    let cfg = TrainConfig { learning_rate: 0.001, iterations: 10, ..TrainConfig::default() };
    let head = FusionHead::random(FusionVariant::Basic, 2, 1.0, 17).unwrap();
    let out = train_fusion(&head, &[sample], &cfg).unwrap();
    for w in out.losses.windows(2) {
        assert!(w[1] < w[0], "{:?}", out.losses);
    }
}

#[test]
fn training_is_deterministic_and_lr_zero_is_inert() {
    let data = noisy_training_set(Size::new(8, 8), 18);
    let cfg = TrainConfig { iterations: 40, ..TrainConfig::default() };
    for v in variants(C) {
        let head = FusionHead::random(v, C, 0.1, 19).unwrap();
        let a = train_fusion(&head, &data, &cfg).unwrap();
        let b = train_fusion(&head, &data, &cfg).unwrap();
        assert_eq!(a.head, b.head);
        assert_eq!(a.losses, b.losses);
        let frozen = train_fusion(&head, &data, &TrainConfig { learning_rate: 0.0, ..cfg }).unwrap();
        assert_eq!(frozen.head, head);
    }
}

#[test]
fn training_rejects_empty_sets() {
    let head = FusionHead::zeros(FusionVariant::Basic, C).unwrap();
    assert!(matches!(train_fusion(&head, &[], &TrainConfig::default()), Err(Error::Config(_))));
    let mut data = noisy_training_set(Size::new(4, 4), 20);
    for s in &mut data {
        s.mask = Mask::empty(s.mask.size());
    }
    assert!(matches!(train_fusion(&head, &data, &TrainConfig::default()), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_commutes_with_pixel_permutation(seed in 0u64..1000, vi in 0usize..3) {
        let size = Size::new(5, 1);
        let (p, n) = (random_scores(size, C, seed), random_scores(size, C, seed + 1));
        let mask = Mask::from_fn(size, |x, _| x % 2 == 0);
        let head = FusionHead::random(variants(C)[vi], C, 1.0, seed).unwrap();
        let perm = [3usize, 0, 4, 2, 1];
        let permute = |s: &ScoreMap| {
            let data = (0..C).flat_map(|k| perm.iter().map(move |&j| s.get(k, j))).collect();
            ScoreMap::new(size, C, data).unwrap()
        };
        let pmask = Mask::from_fn(size, |x, _| mask.data()[perm[x]]);
        let direct = permute(&fuse_forward(&head, &p, &n, &mask).unwrap());
        let via = fuse_forward(&head, &permute(&p), &permute(&n), &pmask).unwrap();
        prop_assert_eq!(direct, via);
    }
}
