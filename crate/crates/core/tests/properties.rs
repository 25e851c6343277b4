use proptest::prelude::*;

use twostream::fusion::{fuse_scale, kernel_param_count, KernelField, KernelMode, MaskField, SeparableKernelField};
use twostream::losses::{kl_to_standard_normal, l2_loss, GaussianParams};
use twostream::metrics::{inception_score, inter_entropy, mean_intra_entropy, ClassDistribution};
use twostream::model::{teacher_forcing_prob, Schedule};
use twostream::rng::{rand_uniform, randn, SeededRng};
use twostream::Tensor;

#[derive(Debug)]
struct Case {
    h: Tensor<f64>,
    v: Tensor<f64>,
    w: Tensor<f64>,
    mask: Tensor<f64>,
}

/// Random single-scale fusion inputs.
fn case() -> impl Strategy<Value = Case> {
    (
        1usize..4,
        3usize..10,
        3usize..10,
        prop::sample::select(vec![1usize, 3, 5]),
        any::<u64>(),
    )
        .prop_map(|(d, h, w, n, seed)| {
            let mut rng = SeededRng::new(seed);
            Case {
                h: randn(&mut rng, &[d, h, w]).unwrap(),
                v: randn(&mut rng, &[n, h, w]).unwrap(),
                w: randn(&mut rng, &[n, h, w]).unwrap(),
                mask: rand_uniform(&mut rng, &[h, w], 0.0, 1.0).unwrap(),
            }
        })
}

fn field(c: &Case) -> SeparableKernelField<f64> {
    SeparableKernelField::new(c.v.clone(), c.w.clone()).unwrap()
}

fn fuse(h: &Tensor<f64>, k: &KernelField<f64>, m: &Tensor<f64>) -> Tensor<f64> {
    fuse_scale(h, k, &MaskField::new(m.clone()).unwrap()).unwrap().0
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn dists(seed: u64, n: usize, k: usize) -> Vec<ClassDistribution> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
            ClassDistribution::from_logits(&logits).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_linear_in_content(c in case(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let k = KernelField::Separable(field(&c));
        let h2 = randn::<f64>(&mut SeededRng::new(seed), c.h.shape()).unwrap();
        let mixed = c.h.scale(a).add(&h2.scale(b)).unwrap();
        let lhs = fuse(&mixed, &k, &c.mask);
        let rhs = fuse(&c.h, &k, &c.mask).scale(a).add(&fuse(&h2, &k, &c.mask).scale(b)).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn separable_matches_dense_expansion(c in case()) {
        let f = field(&c);
        let dense = fuse(&c.h, &KernelField::Dense(f.to_dense()), &c.mask);
        let sep = fuse(&c.h, &KernelField::Separable(f), &c.mask);
        prop_assert!(close(&sep, &dense, 1e-10));
    }

    #[test]
    fn channel_permutation_commutes(c in case(), rot in 0usize..4) {
        let d = c.h.shape()[0];
        let hw = c.h.len() / d;
        let perm = |t: &Tensor<f64>| {
            let mut data = Vec::with_capacity(t.len());
            for ch in 0..d {
                let src = (ch + rot) % d;
                data.extend_from_slice(&t.data()[src * hw..(src + 1) * hw]);
            }
            Tensor::new(t.shape(), data).unwrap()
        };
        let k = KernelField::Separable(field(&c));
        let a = fuse(&perm(&c.h), &k, &c.mask);
        let b = perm(&fuse(&c.h, &k, &c.mask));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn refined_lies_between_content_and_intermediate(c in case()) {
        let k = KernelField::Separable(field(&c));
        let (out, tilde) = fuse_scale(&c.h, &k, &MaskField::new(c.mask.clone()).unwrap()).unwrap();
        for ((o, h), t) in out.data().iter().zip(c.h.data()).zip(tilde.data()) {
            prop_assert!(*o >= h.min(*t) - 1e-12 && *o <= h.max(*t) + 1e-12);
        }
    }

    #[test]
    fn separable_budget_is_linear_dense_quadratic(half in 0usize..10, res in prop::collection::vec(1usize..65, 1..5)) {
        let n = 2 * half + 1;
        let d = kernel_param_count(n, &res, KernelMode::Dense);
        let s = kernel_param_count(n, &res, KernelMode::Separable);
        let pixels: u64 = res.iter().map(|&l| (l * l) as u64).sum();
        prop_assert_eq!(d.total, (n * n) as u64 * pixels);
        prop_assert_eq!(s.total, 2 * n as u64 * pixels);
        prop_assert!(n < 3 || s.total < d.total);
    }

    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 1usize..30, k in 2usize..8, shift in 0usize..30) {
        let d = dists(seed, n, k);
        let mut r = d.clone();
        r.rotate_left(shift % n);
        prop_assert!((inception_score(&d).unwrap() - inception_score(&r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_class_relabelling(seed in any::<u64>(), n in 1usize..30, k in 2usize..8, shift in 1usize..8) {
        let d = dists(seed, n, k);
        let relabel: Vec<ClassDistribution> = d
            .iter()
            .map(|p| {
                let mut q = p.probs().to_vec();
                q.rotate_left(shift % k);
                ClassDistribution::new(q).unwrap()
            })
            .collect();
        prop_assert!((inter_entropy(&d).unwrap() - inter_entropy(&relabel).unwrap()).abs() < 1e-9);
        prop_assert!((mean_intra_entropy(&d).unwrap() - mean_intra_entropy(&relabel).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn inception_score_is_bounded(seed in any::<u64>(), n in 1usize..40, k in 1usize..10) {
        let is = inception_score(&dists(seed, n, k)).unwrap();
        prop_assert!((1.0 - 1e-9..=k as f64 + 1e-9).contains(&is));
    }

    #[test]
    fn kl_is_non_negative(seed in any::<u64>(), b in 1usize..4, dim in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let q = GaussianParams::new(
            randn::<f64>(&mut rng, &[b, dim]).unwrap().scale(2.0),
            randn::<f64>(&mut rng, &[b, dim]).unwrap().scale(2.0),
        )
        .unwrap();
        prop_assert!(kl_to_standard_normal(&q) >= 0.0);
    }

    #[test]
    fn l2_scales_quadratically(seed in any::<u64>(), len in 1usize..50, c in -4.0f64..4.0) {
        let mut rng = SeededRng::new(seed);
        let a = randn::<f64>(&mut rng, &[len]).unwrap();
        let b = randn::<f64>(&mut rng, &[len]).unwrap();
        let base = l2_loss(&a, &b).unwrap();
        let scaled = l2_loss(&a.scale(c), &b.scale(c)).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn teacher_forcing_decays(total in 1usize..5000, a in 0usize..5000, b in 0usize..5000) {
        let (lo, hi) = (a.min(b) % (total + 1), a.max(b) % (total + 1));
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let s = Schedule { total };
        let (p, q) = (teacher_forcing_prob(&s, lo).unwrap(), teacher_forcing_prob(&s, hi).unwrap());
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
        prop_assert!(p >= q);
        prop_assert!(teacher_forcing_prob(&s, total + 1).is_err());
    }
}
