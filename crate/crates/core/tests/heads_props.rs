use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vroc_core::heads::{
    binary_ce, categorical_ce, distribution_from_logits, predict_label, HeadConfig, TaskHead, PROB_EPS,
};
use vroc_core::labels::{Stance, Task, Veracity};

fn head(task: Task, classes: Vec<String>, seed: u64, steps: usize) -> TaskHead {
    let cfg = HeadConfig {
        latent_dim: 8,
        steps,
        hidden: 4,
        dropout: 0.2,
    };
    TaskHead::new(task, classes, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn binary_loss_is_nonnegative_and_zero_only_when_certain(p in 0.0f64..=1.0, y in 0usize..2) {
        let l = binary_ce(p, y);
        prop_assert!(l >= 0.0);
        let certain = if y == 1 { p == 1.0 } else { p == 0.0 };
        prop_assert_eq!(l == 0.0, certain);
        prop_assert!(l <= -PROB_EPS.ln());
    }

    #[test]
    fn categorical_loss_is_nonnegative_and_zero_only_when_certain(
        logits in prop::collection::vec(-30.0f64..30.0, 2..6),
        y in 0usize..6,
        one_hot in any::<bool>(),
    ) {
        let c = logits.len();
        let y = y % c;
        let dist = if one_hot {
            (0..c).map(|k| if k == y { 1.0 } else { 0.0 }).collect()
        } else {
            distribution_from_logits(&logits, false)
        };
        let l = categorical_ce(&dist, y).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, dist[y] == 1.0);
    }

    #[test]
    fn prediction_ignores_a_logit_shift(logits in prop::collection::vec(-10.0f64..10.0, 2..6), shift in -50.0f64..50.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        prop_assert_eq!(
            predict_label(&distribution_from_logits(&logits, false)),
            predict_label(&distribution_from_logits(&shifted, false))
        );
    }

    #[test]
    fn head_outputs_are_distributions(seed in any::<u64>(), z in prop::collection::vec(-3.0f64..3.0, 8), steps in prop::sample::select(vec![1usize, 2, 4, 8])) {
        for (task, classes) in [
            (Task::Detection, vec!["Rumor".to_string(), "Nonrumor".to_string()]),
            (Task::Stance, Stance::names()),
            (Task::Veracity, Veracity::names()),
            (Task::Tracking, (0..5).map(|i| format!("e{i}")).collect()),
        ] {
            let n = classes.len();
            let h = head(task, classes, seed, steps);
            let dist = h.forward(&z).unwrap();
            prop_assert_eq!(dist.len(), n);
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(dist.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert_eq!(h.predict(&z).unwrap(), predict_label(&dist));
        }
    }
}

#[test]
fn latent_split_must_divide_the_latent() {
    let cfg = HeadConfig {
        latent_dim: 8,
        steps: 3,
        hidden: 4,
        dropout: 0.0,
    };
    assert!(TaskHead::new(Task::Stance, Stance::names(), cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
