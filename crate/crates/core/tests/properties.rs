use grid_core::dataset::{generate_dataset, DatasetConfig, SceneConfig};
use grid_core::eval::{format_subtask, parse_planner_response, subtask_metrics, Prediction};
use grid_core::graph::{apply_subtask, feasible_subtasks, verify_replay, Action, Subtask};
use grid_core::network::ForwardOutput;
use grid_core::training::{one_cycle_lr, TrainConfig};
use ndarray::Array1;
use proptest::prelude::*;

fn small(seed: u64) -> DatasetConfig {
    DatasetConfig {
        seed,
        scene: SceneConfig {
            objects_per_scene: 30,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn subtask() -> impl Strategy<Value = Subtask> {
    (0..Action::COUNT, 0usize..6).prop_map(|(a, id)| Subtask::new(Action::from_index(a).unwrap(), id))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stage_metrics_are_ordered(
        pairs in prop::collection::vec((prop::option::of(subtask()), subtask()), 1..60),
    ) {
        let (preds, gt): (Vec<Prediction>, Vec<Subtask>) = pairs.into_iter().unzip();
        let r = subtask_metrics(&preds, &gt).unwrap();
        prop_assert!(r.sub_acc <= r.act_acc.min(r.obj_acc));
        prop_assert!(r.failures <= r.stages);
        prop_assert!((0.0..=1.0).contains(&r.sub_acc));
        let confusion: usize = r.confusion.iter().flatten().sum();
        prop_assert_eq!(confusion, r.stages);
    }

    /// With equal task lengths a fully correct task contributes all its
    /// stages, so task accuracy cannot exceed stage accuracy.
    #[test]
    fn task_accuracy_bounded_by_stage_accuracy_for_equal_lengths(
        correct in prop::collection::vec(prop::collection::vec(any::<bool>(), 4), 1..20),
    ) {
        let gt: Vec<Subtask> = correct.iter().flatten().map(|_| Subtask::new(Action::Move, 1)).collect();
        let preds: Vec<Prediction> = correct
            .iter()
            .flatten()
            .map(|&ok| Some(Subtask::new(if ok { Action::Move } else { Action::Pick }, 1)))
            .collect();
        let task_correct = correct.iter().filter(|t| t.iter().all(|&c| c)).count();
        let r = subtask_metrics(&preds, &gt).unwrap().with_tasks(correct.len(), task_correct);
        prop_assert!(r.is_consistent());
    }

    #[test]
    fn output_distributions_sum_to_one(
        act in prop::collection::vec(-80.0f64..80.0, 8),
        obj in prop::collection::vec(-80.0f64..80.0, 1..100),
    ) {
        let out = ForwardOutput {
            action_logits: Array1::from(act),
            scene_ids: (0..obj.len()).collect(),
            object_logits: Array1::from(obj),
        };
        prop_assert!((out.action_probs().sum() - 1.0).abs() < 1e-9);
        prop_assert!((out.object_probs().sum() - 1.0).abs() < 1e-9);
        prop_assert!(out.object_probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn schedule_stays_between_its_endpoints(total in 1usize..5000, step in 0usize..6000, peak in 1e-6f64..1e-1) {
        let lr = one_cycle_lr(step, total, peak, 10.0, 1e-4);
        prop_assert!(lr <= peak * (1.0 + 1e-12));
        prop_assert!(lr >= peak * 1e-4 * (1.0 - 1e-12));
        let cfg = TrainConfig { iterations: total + 1, peak_lr: peak, ..Default::default() };
        prop_assert_eq!(cfg.lr_at(0), one_cycle_lr(0, total, peak, 10.0, 1e-4));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_tasks_replay_and_regenerate(seed in any::<u64>()) {
        let a = generate_dataset(&small(seed), 4).unwrap();
        for tr in a.all() {
            prop_assert!(verify_replay(tr).is_ok());
            prop_assert_eq!(tr.subtasks.last().map(|s| s.action), Some(Action::Finish));
        }
        let b = generate_dataset(&small(seed), 4).unwrap();
        prop_assert_eq!(a.train, b.train);
        prop_assert_eq!(a.eval, b.eval);
    }

    /// Every feasible subtask survives formatting and parsing, and applying
    /// it yields graphs that validate.
    #[test]
    fn feasible_subtasks_round_trip_through_text(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let ds = generate_dataset(&small(seed), 1).unwrap();
        let tr = ds.all().next().unwrap();
        let st = &tr.stages[pick.index(tr.len())];
        let feasible = feasible_subtasks(&st.scene, &st.robot).unwrap();
        prop_assert!(!feasible.is_empty());
        for &sub in &feasible {
            let text = format_subtask(sub, &st.scene);
            prop_assert_eq!(parse_planner_response(&text, &st.scene), Ok(sub), "{}", text);
            prop_assert!(apply_subtask(&st.scene, &st.robot, sub).is_ok());
        }
    }
}
