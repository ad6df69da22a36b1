use proptest::prelude::*;

use kpeval::corpus::{self, GoldRecord, GroupId, InstanceId, MemberId, PredictionRecord};
use kpeval::estimator::{self, EvalConfig};
use kpeval::gde_lab::{simulate, CalibratedTask};
use kpeval::kpe_metrics::{F1Mode, NormalizationConfig};
use kpeval::silver_eval::silver_report;

fn phrase() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-c]{1,3}",
        Just("Late  Delivery".to_string()),
        Just("配達".to_string()),
        Just("ｆｕｌｌ width".to_string()),
    ]
}

/// A rectangular corpus: groups × instances × members, each cell a phrase list.
fn rectangular() -> impl Strategy<Value = (Vec<PredictionRecord>, Vec<GoldRecord>)> {
    (1usize..4, 2usize..4, 1usize..5).prop_flat_map(|(groups, members, instances)| {
        let cells = groups * instances * members;
        (
            prop::collection::vec(prop::collection::vec(phrase(), 0..4), cells),
            prop::collection::vec(prop::collection::vec(phrase(), 0..4), groups * instances),
        )
            .prop_map(move |(pred_cells, gold_cells)| {
                let (mut preds, mut gold) = (Vec::new(), Vec::new());
                let mut p = pred_cells.into_iter();
                let mut g = gold_cells.into_iter();
                for gi in 0..groups {
                    for ii in 0..instances {
                        let group = GroupId::new(format!("G{gi}")).unwrap();
                        let instance = InstanceId::new(format!("i{ii}")).unwrap();
                        for mi in 0..members {
                            preds.push(PredictionRecord {
                                group: group.clone(),
                                instance: instance.clone(),
                                member: MemberId::new(format!("m{mi}")).unwrap(),
                                keyphrases: p.next().unwrap(),
                            });
                        }
                        gold.push(GoldRecord {
                            group,
                            instance,
                            keyphrases: g.next().unwrap(),
                        });
                    }
                }
                (preds, gold)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip((preds, gold) in rectangular()) {
        let mut buf = Vec::new();
        corpus::write_predictions(&preds, &mut buf).unwrap();
        prop_assert_eq!(corpus::parse_predictions(&buf[..]).unwrap(), preds);
        let mut buf = Vec::new();
        corpus::write_gold(&gold, &mut buf).unwrap();
        prop_assert_eq!(corpus::parse_gold(&buf[..]).unwrap(), gold);
    }

    #[test]
    fn alignment_ignores_record_order((preds, gold) in rectangular(), seed in any::<u64>()) {
        let a = corpus::align(&preds, Some(&gold)).unwrap();
        let mut shuffled = preds.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        let mut rgold = gold.clone();
        rgold.reverse();
        prop_assert_eq!(corpus::align(&shuffled, Some(&rgold)).unwrap(), a);
    }

    #[test]
    fn dropping_a_cell_is_reported((preds, _gold) in rectangular(), k in any::<prop::sample::Index>()) {
        let mut p = preds.clone();
        let removed = p.remove(k.index(p.len()));
        // a member with no remaining cell simply is not part of the corpus
        prop_assume!(p.iter().any(|r| r.group == removed.group && r.member == removed.member));
        let err = corpus::align(&p, None).unwrap_err().to_string();
        prop_assert!(err.contains(removed.instance.as_str()), "{}", err);
    }

    #[test]
    fn silver_equal_to_gold_has_no_gap((preds, gold) in rectangular()) {
        let c = corpus::align(&preds, Some(&gold)).unwrap();
        for mode in [F1Mode::Micro, F1Mode::Macro] {
            for row in silver_report(&c, &gold, &NormalizationConfig::default(), mode).unwrap() {
                prop_assert_eq!(row.abs_gap, 0.0);
            }
        }
    }

    #[test]
    fn points_are_fractions((preds, gold) in rectangular()) {
        let c = corpus::align(&preds, Some(&gold)).unwrap();
        let cfg = EvalConfig::default();
        let pts = estimator::collect_points(&c, &cfg.agreement, cfg.f1_mode).unwrap();
        prop_assert_eq!(pts.len(), c.groups().map(|g| g.members().len()).sum::<usize>());
        for p in pts {
            prop_assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
        }
    }

    #[test]
    fn fitted_model_round_trips(xs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..30)) {
        let pts: Vec<_> = xs.iter().enumerate().map(|(i, &(x, y))| estimator::AgreementPoint {
            group: GroupId::new(format!("G{}", i % 3)).unwrap(),
            member: MemberId::new(format!("m{i}")).unwrap(),
            x,
            y,
        }).collect();
        prop_assume!(xs.iter().any(|p| p.0 != xs[0].0));
        let m = estimator::fit_linear(&pts).unwrap();
        let mut buf = Vec::new();
        estimator::save_model(&m, &mut buf).unwrap();
        let back = estimator::load_model(&buf[..]).unwrap();
        prop_assert_eq!(back.slope.to_bits(), m.slope.to_bits());
        prop_assert_eq!(back.intercept.to_bits(), m.intercept.to_bits());
        prop_assert_eq!(back.n_points, m.n_points);
    }

    #[test]
    fn simulation_is_seeded(q in 0.5f64..1.0, seed in any::<u64>()) {
        let task = CalibratedTask::uniform(q, 200, 3, seed).unwrap();
        prop_assert_eq!(simulate(&task, 3).unwrap(), simulate(&task, 3).unwrap());
    }
}
