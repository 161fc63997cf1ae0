use proptest::prelude::*;

use lace_core::autodiff::softmax;
use lace_core::corpus::{Entity, Mention, ProcessExample};
use lace_core::training::{batch_loss, combine_losses, consistency_loss, make_batches, summarize};
use lace_core::{generate_synthetic, DistributionGrid, ModelDims, ModelParams, TrainingConfig};

const NAMES: [&str; 4] = ["water", "sugar", "oxygen", "light"];

fn paragraph(id: &str, steps: usize, names: &[&str]) -> ProcessExample {
    ProcessExample {
        id: id.into(),
        topic: "t".into(),
        steps: (0..steps).map(|_| vec!["x".to_string()]).collect(),
        entities: names
            .iter()
            .map(|n| Entity {
                name: n.to_string(),
                mentions: vec![Mention {
                    step: 0,
                    start: 0,
                    end: 1,
                }],
            })
            .collect(),
        verbs: vec![],
        gold: None,
    }
}

fn distribution() -> impl Strategy<Value = [f64; 4]> + Clone {
    prop::array::uniform4(-4.0f64..4.0).prop_map(|z| {
        let p = softmax(&z);
        [p[0], p[1], p[2], p[3]]
    })
}

fn one_hot() -> impl Strategy<Value = [f64; 4]> + Clone {
    (0usize..4).prop_map(|k| {
        let mut d = [0.0; 4];
        d[k] = 1.0;
        d
    })
}

/// A paragraph over a subset of entity names plus a matching grid.
fn predicted(
    cell: impl Strategy<Value = [f64; 4]> + Clone,
) -> impl Strategy<Value = (ProcessExample, DistributionGrid)> {
    (1usize..4, prop::sample::subsequence(NAMES.to_vec(), 1..=4)).prop_flat_map(
        move |(steps, names)| {
            let n = names.len();
            prop::collection::vec(prop::collection::vec(cell.clone(), n), steps).prop_map(
                move |rows| {
                    (
                        paragraph("p", steps, &names),
                        DistributionGrid::from_rows(rows).unwrap(),
                    )
                },
            )
        },
    )
}

proptest! {
    #[test]
    fn self_consistency_is_zero((ex, grid) in predicted(distribution())) {
        prop_assert_eq!(consistency_loss(&grid, &ex, &grid, &ex), 0.0);
    }

    #[test]
    fn consistency_is_symmetric(
        (a, ga) in predicted(distribution()),
        (b, gb) in predicted(distribution()),
    ) {
        let ab = consistency_loss(&ga, &a, &gb, &b);
        let ba = consistency_loss(&gb, &b, &ga, &a);
        prop_assert!((ab - ba).abs() <= 1e-15);
    }

    #[test]
    fn consistency_lies_in_range(
        (a, ga) in predicted(distribution()),
        (b, gb) in predicted(distribution()),
    ) {
        let v = consistency_loss(&ga, &a, &gb, &b);
        prop_assert!((0.0..=0.5).contains(&v), "{}", v);
    }

    #[test]
    fn one_hot_extremes_stay_in_range(
        (a, ga) in predicted(one_hot()),
        (b, gb) in predicted(one_hot()),
    ) {
        let v = consistency_loss(&ga, &a, &gb, &b);
        prop_assert!((0.0..=0.5).contains(&v), "{}", v);
    }

    #[test]
    fn summaries_are_distributions((ex, grid) in predicted(distribution())) {
        for j in 0..ex.num_entities() {
            let s = summarize(&grid, j);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn unit_lambda_ignores_consistency(sup in 0.0f64..3.0, con in 0.0f64..10.0) {
        let cfg = TrainingConfig { lambda: 1.0, ..Default::default() };
        prop_assert_eq!(combine_losses(sup, con, &cfg), sup);
        let off = TrainingConfig { consistency_enabled: false, ..Default::default() };
        prop_assert_eq!(combine_losses(sup, con, &off), sup);
    }

    #[test]
    fn above_threshold_ignores_consistency(sup in 0.2000001f64..5.0, con in 0.0f64..10.0) {
        prop_assert_eq!(combine_losses(sup, con, &TrainingConfig::default()), sup);
    }

    #[test]
    fn each_labeled_paragraph_is_primary_once(seed in 0u64..500, paragraphs in 1usize..5, strip in 0usize..5) {
        let mut groups = generate_synthetic(seed, 3, paragraphs, 0.15);
        for g in &mut groups {
            let k = strip.min(g.labeled.len());
            let moved: Vec<_> = g.labeled.drain(..k).map(|mut e| { e.gold = None; e }).collect();
            g.unlabeled.extend(moved);
        }
        for g in &groups {
            let batches = make_batches(g);
            prop_assert_eq!(batches.len(), g.labeled.len());
            let mut primaries: Vec<&str> = batches.iter().map(|b| b.primary().id.as_str()).collect();
            primaries.sort_unstable();
            let mut labeled: Vec<&str> = g.labeled.iter().map(|e| e.id.as_str()).collect();
            labeled.sort_unstable();
            prop_assert_eq!(primaries, labeled);
            for b in &batches {
                prop_assert_eq!(b.members.len(), g.len());
                prop_assert!(b.primary().is_labeled());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unit_lambda_batch_loss_is_supervised(seed in 0u64..1000) {
        let groups = generate_synthetic(seed, 1, 3, 0.15);
        let vocab = lace_core::corpus::Vocabulary::from_examples(groups[0].members());
        let params = ModelParams::init(ModelDims::new(4, 4).unwrap(), vocab, seed);
        let cfg = TrainingConfig { lambda: 1.0, sup_threshold: 1e9, ..Default::default() };
        let off = TrainingConfig { consistency_enabled: false, ..cfg };
        for batch in make_batches(&groups[0]) {
            let a = batch_loss(&batch, &params, &cfg).unwrap();
            let b = batch_loss(&batch, &params, &off).unwrap();
            prop_assert!(a.consistency.is_some());
            prop_assert_eq!(a.total, a.supervised);
            prop_assert_eq!(b.total, b.supervised);
            prop_assert_eq!(a.supervised, b.supervised);
        }
    }
}
