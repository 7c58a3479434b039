use proptest::prelude::*;
use rlab_core::attacks::{self, input_gradient};
use rlab_core::models::{Layer, ModelParams};
use rlab_core::rng::{Domain, StreamKey};
use rlab_core::{AttackLoss, InitMode, LinfBudget, Model, ModelSpec, Tensor};

fn small_model() -> impl Strategy<Value = (Model, usize)> {
    (1usize..6, 2usize..5, prop::option::of(2usize..6), any::<u64>()).prop_map(|(d, c, hidden, seed)| {
        let hidden: Vec<usize> = hidden.into_iter().collect();
        (Model::init(ModelSpec::mlp(d, &hidden, c).unwrap(), seed), d)
    })
}

fn batch(d: usize, classes: usize) -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..4).prop_flat_map(move |b| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], b * d),
            prop::collection::vec(0..classes, b),
        )
            .prop_map(move |(data, y)| (Tensor::new(vec![b, d], data).unwrap(), y))
    })
}

fn case() -> impl Strategy<Value = (Model, Tensor, Vec<usize>)> {
    small_model().prop_flat_map(|(m, d)| {
        let c = m.spec().num_classes();
        batch(d, c).prop_map(move |(x, y)| (m.clone(), x, y))
    })
}

fn budget() -> impl Strategy<Value = LinfBudget> {
    (0.001..0.5f64, 0.001..0.5f64, 1usize..6, 1usize..4, any::<bool>(), any::<bool>()).prop_map(
        |(eps, alpha, steps, restarts, uniform, cw)| LinfBudget {
            eps,
            alpha,
            steps,
            restarts,
            init: if uniform || restarts > 1 { InitMode::Uniform } else { InitMode::Zero },
            loss: if cw { AttackLoss::CwMargin } else { AttackLoss::CrossEntropy },
        },
    )
}

fn contained(x: &Tensor, x_adv: &Tensor, eps: f64) -> bool {
    x.data()
        .iter()
        .zip(x_adv.data())
        .all(|(a, b)| (b - a).abs() <= eps + 1e-9 && (0.0..=1.0).contains(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn outcomes_stay_in_ball_and_domain((m, x, y) in case(), b in budget(), seed in any::<u64>()) {
        let before = x.clone();
        let key = StreamKey::new(seed, Domain::EvalNoise);
        let out = attacks::multi_restart(&m, &x, &y, &b, key).unwrap();
        prop_assert!(contained(&x, &out.x_adv, b.eps));
        let f = attacks::fgsm(&m, &x, &y, b.eps).unwrap();
        prop_assert!(contained(&x, &f.x_adv, b.eps));
        prop_assert_eq!(&x, &before);
        let single = attacks::pgd(&m, &x, &y, &b, key).unwrap();
        prop_assert!(contained(&x, &single.x_adv, b.eps));
        for (d, (xa, x0)) in out.delta.data().iter().zip(out.x_adv.data().iter().zip(x.data())) {
            prop_assert!((d - (xa - x0)).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fgsm_steps_are_signed_eps((m, x, y) in case(), eps in 0.001..0.5f64) {
        let (g, _) = input_gradient(&m, &x, &y, AttackLoss::CrossEntropy).unwrap();
        let out = attacks::fgsm(&m, &x, &y, eps).unwrap();
        for ((x0, xa), gv) in x.data().iter().zip(out.x_adv.data()).zip(g.data()) {
            let raw = eps * rlab_core::tensor::sign(*gv);
            prop_assert!(raw == 0.0 || raw.abs() == eps);
            prop_assert_eq!(*xa, (x0 + raw).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn one_step_zero_init_pgd_is_fgsm((m, x, y) in case(), eps in 0.001..0.5f64, extra in 0.0..0.5f64) {
        let b = LinfBudget { eps, alpha: eps + extra, steps: 1, restarts: 1, init: InitMode::Zero, loss: AttackLoss::CrossEntropy };
        let p = attacks::pgd(&m, &x, &y, &b, StreamKey::new(0, Domain::EvalNoise)).unwrap();
        let f = attacks::fgsm(&m, &x, &y, eps).unwrap();
        prop_assert_eq!(p.x_adv.data(), f.x_adv.data());
    }

    #[test]
    fn more_restarts_never_help_the_model((m, x, y) in case(), b in budget(), seed in any::<u64>()) {
        let key = StreamKey::new(seed, Domain::EvalNoise);
        let one = LinfBudget { restarts: 1, init: InitMode::Uniform, ..b };
        let many = LinfBudget { restarts: 4, ..one };
        let r1 = attacks::multi_restart(&m, &x, &y, &one, key).unwrap();
        let r4 = attacks::multi_restart(&m, &x, &y, &many, key).unwrap();
        for (a, b) in r1.success.iter().zip(&r4.success) {
            prop_assert!(!a || *b, "an example fooled with 1 restart survived 4");
        }
    }

    #[test]
    fn logit_distance_is_a_distance((m, x, y) in case(), eps in 0.01..0.4f64) {
        let _ = y;
        let (same, mean) = attacks::logit_distance(&m, &x, &x).unwrap();
        prop_assert!(same.iter().all(|v| *v == 0.0) && mean == 0.0);
        let shifted = x.map(|v| (v + eps).min(1.0));
        let (per, _) = attacks::logit_distance(&m, &x, &shifted).unwrap();
        let za = m.logits(&x).unwrap();
        let zb = m.logits(&shifted).unwrap();
        for (i, d) in per.iter().enumerate() {
            prop_assert!(*d >= 0.0);
            prop_assert_eq!(*d == 0.0, za.row(i) == zb.row(i));
        }
    }
}

/// Two-class linear model: the CW margin is linear in the input.
fn linear_binary(w: &[f64], seed_bias: f64) -> Model {
    let d = w.len() / 2;
    let spec = ModelSpec::new(vec![d], vec![Layer::Dense { inputs: d, outputs: 2 }], 2).unwrap();
    let params = ModelParams::new(
        vec![
            ("layer0.weight".into(), Tensor::new(vec![2, d], w.to_vec()).unwrap()),
            ("layer0.bias".into(), Tensor::vector(&[seed_bias, -seed_bias])),
        ],
        spec.hash(),
    );
    Model::new(spec, params).unwrap()
}

/// Largest margin over every corner of the box `[x−ε, x+ε] ∩ [0, 1]`.
fn corner_max(m: &Model, x: &[f64], y: usize, eps: f64) -> f64 {
    let d = x.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << d) {
        let corner: Vec<f64> = (0..d)
            .map(|i| {
                let s = if mask >> i & 1 == 1 { eps } else { -eps };
                (x[i] + s).clamp(0.0, 1.0)
            })
            .collect();
        let z = m.logits(&Tensor::new(vec![1, d], corner).unwrap()).unwrap();
        let v = attacks::cw_margin_loss(&z, &[y]).unwrap()[0];
        best = best.max(v);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn pgd_reaches_the_best_corner_of_a_linear_objective(
        (w, x) in (1usize..=10).prop_flat_map(|d| (
            prop::collection::vec(-2.0..2.0f64, 2 * d),
            prop::collection::vec(0.0..=1.0f64, d),
        )),
        bias in -1.0..1.0f64,
        y in 0usize..2,
        eps in 0.01..0.4f64,
    ) {
        let m = linear_binary(&w, bias);
        let d = x.len();
        let b = LinfBudget { eps, alpha: eps / 4.0, steps: 50, restarts: 1, init: InitMode::Zero, loss: AttackLoss::CwMargin };
        let xt = Tensor::new(vec![1, d], x.clone()).unwrap();
        let out = attacks::pgd(&m, &xt, &[y], &b, StreamKey::new(0, Domain::EvalNoise)).unwrap();
        let oracle = corner_max(&m, &x, y, eps);
        prop_assert!((out.loss[0] - oracle).abs() <= 1e-6, "pgd {} vs corners {}", out.loss[0], oracle);
    }
}
