use dyncap::schedule::{CapacityEvent, CapacitySchedule, ScheduleMode, SchedulePreset};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn none() -> BTreeSet<usize> {
    BTreeSet::new()
}

#[test]
fn increase_examples() {
    let s = CapacitySchedule::increase(vec![8, 16, 32], -0.5, 0.0, 1000, 1).unwrap();
    assert_eq!(s.coefficient_at(0), -0.5);
    assert_eq!(s.coefficient_at(1000), 0.0);
    assert_eq!(s.coefficient_at(500), -0.25);
    assert_eq!(s.coefficient_at(5000), 0.0);
    assert_eq!(s.widths_at(0), vec![4, 8, 16]);
    assert_eq!(s.widths_at(1000), vec![8, 16, 32]);
    assert_eq!(s.capacity_event_at(1001), None);
}

#[test]
fn decrease_quantization_example() {
    let s = CapacitySchedule::decrease(vec![8], 1.0, 0.5, 1000, 10, none()).unwrap();
    for step in 0..10 {
        assert_eq!(s.coefficient_at(step), 1.0);
        assert_eq!(s.capacity_event_at(step), Some(CapacityEvent::Resample { beta: 1.0 }));
    }
    assert!(s.coefficient_at(10) < 1.0);
    assert_eq!(s.coefficient_at(1000), 0.5);
}

#[test]
fn excluded_layer_keeps_base_width() {
    let s = CapacitySchedule::decrease(vec![8, 8], 0.75, 0.75, 10, 1, BTreeSet::from([0])).unwrap();
    assert_eq!(s.widths_at(3), vec![8, 6]);
}

#[test]
fn four_grow_events_for_base_eight() {
    let s = CapacitySchedule::increase(vec![8], -0.5, 0.0, 1000, 1).unwrap();
    let events: Vec<_> = (0..=1100).filter_map(|t| s.capacity_event_at(t)).collect();
    assert_eq!(events.len(), 4);
    assert_eq!(events.last(), Some(&CapacityEvent::Grow(vec![8])));
}

#[test]
fn fixed_mode_emits_nothing() {
    let s = CapacitySchedule::fixed(vec![64, 64], -0.5, 100).unwrap();
    assert!((0..200).all(|t| s.capacity_event_at(t).is_none() && s.widths_at(t) == vec![32, 32]));
}

#[test]
fn invalid_schedules_are_rejected() {
    assert!(CapacitySchedule::increase(vec![8], 0.0, -0.5, 10, 1).is_err());
    assert!(CapacitySchedule::increase(vec![8], -1.0, 0.0, 10, 1).is_err());
    assert!(CapacitySchedule::increase(vec![8], -0.5, 0.1, 10, 1).is_err());
    assert!(CapacitySchedule::decrease(vec![8], 0.5, 1.0, 10, 1, none()).is_err());
    assert!(CapacitySchedule::decrease(vec![8], 1.0, 0.0, 10, 1, none()).is_err());
    assert!(CapacitySchedule::decrease(vec![8], 1.0, 0.5, 0, 1, none()).is_err());
    assert!(CapacitySchedule::decrease(vec![8], 1.0, 0.5, 10, 1, BTreeSet::from([3])).is_err());
    assert!(CapacitySchedule::new(ScheduleMode::Increase, -0.5, 0.0, 10, 1, BTreeSet::from([0]), vec![8]).is_err());
}

#[test]
fn presets_round_trip_names() {
    for p in SchedulePreset::ALL {
        assert_eq!(p.name().parse::<SchedulePreset>().unwrap(), p);
    }
    assert!("warp".parse::<SchedulePreset>().is_err());
}

/// Applies every event from step 1 on and checks the running widths.
fn replay_matches(s: &CapacitySchedule, horizon: u64) -> bool {
    let mut widths = s.widths_at(0);
    for t in 1..=horizon {
        if let Some(CapacityEvent::Grow(w)) = s.capacity_event_at(t) {
            widths = w;
        }
        if widths != s.widths_at(t) {
            return false;
        }
    }
    true
}

proptest! {
    #[test]
    fn quantized_and_monotone(
        total in 1u64..400,
        n in prop::sample::select(vec![1u64, 2, 7, 10, 64]),
        start in -0.9f64..=0.0,
        base in prop::collection::vec(1usize..40, 1..4),
    ) {
        let end = start * 0.3;
        let inc = CapacitySchedule::increase(base.clone(), start, end, total, n).unwrap();
        let dec = CapacitySchedule::decrease(base.clone(), 1.0 + start * 0.5, 0.5 + start * 0.5, total, n, BTreeSet::new()).unwrap();
        for s in [&inc, &dec] {
            prop_assert_eq!(s.coefficient_at(0), s.coeff_start());
            prop_assert_eq!(s.coefficient_at(total), s.coeff_end());
            for t in 0..total {
                let k = t / n;
                prop_assert_eq!(s.coefficient_at(t).to_bits(), s.coefficient_at(k * n).to_bits());
            }
        }
        for t in 1..=total + 5 {
            prop_assert!(inc.widths_at(t).iter().zip(inc.widths_at(t - 1)).all(|(a, b)| *a >= b));
            prop_assert!(dec.widths_at(t).iter().zip(dec.widths_at(t - 1)).all(|(a, b)| *a <= b));
            prop_assert!(inc.widths_at(t).iter().chain(&dec.widths_at(t)).all(|&w| w >= 1));
        }
        prop_assert_eq!(inc.widths_at(total + 3), base.iter().map(|&b| ((1.0 + end) * b as f64 + 0.5 + 1e-9).floor().max(1.0) as usize).collect::<Vec<_>>());
        prop_assert!(replay_matches(&inc, total + 3));
    }
}
