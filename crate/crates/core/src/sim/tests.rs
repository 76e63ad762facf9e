use std::sync::Arc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::action::ActionSet;
use crate::scenario::{toy, Scenario};

fn fab(s: Scenario, seed: u64) -> FabState {
    FabState::new(Arc::new(s), seed)
}

fn efficiency(ms: &[usize], times: usize) -> ActionSet {
    let mut a = ActionSet::empty();
    for _ in 0..times {
        a.r_targets.extend_from_slice(ms);
    }
    a
}

fn uptime(ms: &[usize]) -> ActionSet {
    let mut a = ActionSet::empty();
    a.u_targets.extend_from_slice(ms);
    a
}

#[test]
fn empty_fab_stays_idle() {
    let mut f = fab(toy::idle_machine(1.0, 0.0), 1);
    f.advance(1440.0);
    assert_eq!(f.lots_released(), 0);
    assert_eq!(f.lots_completed(), 0);
    let p = f.last_period();
    assert_abs_diff_eq!(p.machines[0].idle_min, 1440.0);
    assert_eq!(p.machines[0].down_min, 0.0);
    let k = f.kpi_report(Window::new(0.0, 1440.0));
    assert_eq!(k.daily_going_rate, 0.0);
    assert_eq!(k.avg_cycle_time_days, None);
    assert_eq!(k.per_product[0].wip_ratio, 1.0);
}

#[test]
fn single_lot_takes_its_processing_time() {
    let mut f = fab(toy::single_machine(60.0, 0.0, 1e9), 3);
    f.advance(59.0);
    assert_eq!(f.lots_completed(), 0);
    assert_eq!(f.machines()[0].status, MachineStatus::Processing);
    assert_eq!(f.machines()[0].busy_until, 60.0);
    f.advance(60.0);
    assert_eq!(f.lots()[0].completion_time, Some(60.0));
    assert_eq!(f.machines()[0].status, MachineStatus::Idle);
    f.advance(1440.0);
    assert_abs_diff_eq!(f.last_period().machines[0].productive_min, 60.0);
    assert_abs_diff_eq!(f.last_period().machines[0].idle_min, 1380.0);
}

#[test]
fn efficiency_scales_processing_time() {
    let mut f = fab(toy::single_machine(100.0, 10.0, 1e9), 0);
    f.apply_action_set(&efficiency(&[0], 1)).unwrap();
    assert_abs_diff_eq!(f.machines()[0].efficiency_factor, 0.9);
    f.advance(500.0);
    assert_abs_diff_eq!(f.lots()[0].completion_time.unwrap(), 100.0, epsilon = 1e-9);

    let mut g = fab(toy::single_machine(100.0, 10.0, 1e9), 0);
    g.apply_action_set(&efficiency(&[0], 2)).unwrap();
    assert_abs_diff_eq!(g.machines()[0].efficiency_factor, 0.81, epsilon = 1e-12);
    g.advance(500.0);
    assert_abs_diff_eq!(g.lots()[0].completion_time.unwrap(), 91.0, epsilon = 1e-9);
}

#[test]
fn uptime_is_capped_at_one() {
    let mut f = fab(toy::idle_machine(0.99, 30.0), 0);
    f.apply_action_set(&uptime(&[0])).unwrap();
    assert_eq!(f.machines()[0].uptime_fraction, 1.0);
    f.apply_action_set(&uptime(&[0])).unwrap();
    assert_eq!(f.machines()[0].uptime_fraction, 1.0);
    // The pending failure was drawn at the old rate and must be gone.
    f.advance(10.0 * 1440.0);
    assert_eq!(f.last_period().machines[0].down_min, 0.0);

    let mut g = fab(toy::idle_machine(0.9, 30.0), 0);
    g.apply_action_set(&uptime(&[0])).unwrap();
    assert_abs_diff_eq!(g.machines()[0].uptime_fraction, 0.93, epsilon = 1e-12);
}

#[test]
fn infeasible_actions_are_rejected_without_side_effects() {
    let s = toy::three_by_six();
    let mut f = fab(s, 0);
    let before = f.op_machines(0).to_vec();

    let mut a = ActionSet::empty();
    a.ded_removes.push((0, 0));
    assert!(matches!(f.apply_action_set(&a), Err(SimError::InfeasibleAction(_))));

    let mut a = ActionSet::empty();
    a.ded_adds.push((1, 0)); // machine 1 is in the other family
    assert!(f.apply_action_set(&a).is_err());

    let mut a = ActionSet::empty();
    a.ded_adds.push((0, 0)); // already dedicated
    assert!(f.apply_action_set(&a).is_err());

    let mut a = ActionSet::empty();
    a.r_targets.push(0);
    a.u_targets.push(99);
    assert!(f.apply_action_set(&a).is_err());
    assert_eq!(f.machines()[0].efficiency_factor, 1.0);
    assert_eq!(f.op_machines(0), before.as_slice());

    // Adding then removing in the same set keeps the operation covered.
    let mut a = ActionSet::empty();
    a.ded_adds.push((2, 0));
    a.ded_removes.push((0, 0));
    f.apply_action_set(&a).unwrap();
    assert_eq!(f.op_machines(0), &[2]);
    assert!(f.is_dedicated(2, 0));
    assert!(!f.is_dedicated(0, 0));
}

#[test]
fn same_seed_gives_identical_trace() {
    let run = |seed| {
        let mut f = fab(Scenario::minifab(), seed);
        f.enable_event_log();
        f.advance(5.0 * 1440.0);
        f.take_event_log()
    };
    let a = run(11);
    assert!(a.len() > 100);
    assert_eq!(a, run(11));
    assert_ne!(a, run(12));
}

#[test]
fn fork_is_transparent() {
    let mut f = fab(Scenario::minifab(), 5);
    f.enable_event_log();
    f.advance(1.5 * 1440.0 + 17.0);
    let mut g = f.fork();
    f.advance(4.0 * 1440.0);
    g.advance(4.0 * 1440.0);
    assert_eq!(f.event_log(), g.event_log());
    let w = Window::new(1440.0, 4.0 * 1440.0);
    assert_eq!(f.kpi_report(w), g.kpi_report(w));
}

#[test]
fn acting_on_a_fork_leaves_the_original_alone() {
    let reference = {
        let mut f = fab(Scenario::minifab(), 9);
        f.enable_event_log();
        f.advance(3.0 * 1440.0);
        f.take_event_log()
    };
    let mut f = fab(Scenario::minifab(), 9);
    f.enable_event_log();
    f.advance(1440.0);
    let mut g = f.fork();
    g.apply_action_set(&efficiency(&[0, 1, 2, 3, 4], 3)).unwrap();
    g.advance(3.0 * 1440.0);
    f.advance(3.0 * 1440.0);
    assert_eq!(f.take_event_log(), reference);
    assert_ne!(g.take_event_log(), reference);
}

#[test]
fn fork_mid_job_finishes_at_the_same_instant() {
    let mut f = fab(toy::single_machine(60.0, 0.0, 1e9), 0);
    f.advance(30.0);
    let mut g = f.fork();
    f.advance(100.0);
    g.advance(100.0);
    assert_eq!(f.lots()[0].completion_time, Some(60.0));
    assert_eq!(g.lots()[0].completion_time, Some(60.0));
}

#[test]
fn reseed_changes_future_draws() {
    let mut f = fab(Scenario::minifab(), 4);
    f.advance(1440.0);
    let mut g = f.fork();
    g.reseed(1234);
    f.enable_event_log();
    g.enable_event_log();
    f.advance(3.0 * 1440.0);
    g.advance(3.0 * 1440.0);
    assert_ne!(f.event_log(), g.event_log());
}

#[test]
fn long_run_availability_matches_uptime() {
    for (a, mttr) in [(0.9, 30.0), (0.8, 120.0)] {
        let mut f = fab(toy::idle_machine(a, mttr), 77);
        let days = 200;
        let mut down = 0.0;
        for d in 1..=days {
            f.advance(d as f64 * 1440.0);
            down += f.last_period().machines[0].down_min;
        }
        let avail = 1.0 - down / (days as f64 * 1440.0);
        assert!((avail - a).abs() <= 0.02, "availability {avail} for target {a}");
    }
}

#[test]
fn jobs_resume_after_repair() {
    let mut s = toy::single_machine(600.0, 0.0, 1e9);
    s.machines[0].base_uptime = 0.5;
    s.machines[0].mean_repair_min = 100.0;
    s.validate().unwrap();
    for seed in 0..200 {
        let mut f = fab(s.clone(), seed);
        f.enable_event_log();
        f.advance(20.0 * 1440.0);
        let done = f.lots()[0].completion_time.unwrap();
        if done == 600.0 {
            continue;
        }
        // Completion is delayed by exactly the repairs that fall inside the job.
        let mut down_at = None;
        let mut lost = 0.0;
        for line in f.event_log() {
            let cols: Vec<&str> = line.split('\t').collect();
            let t: f64 = cols[0].parse().unwrap();
            if t > done {
                break;
            }
            match cols[2] {
                "machine_down" => down_at = Some(t),
                "machine_up" => lost += t - down_at.take().unwrap(),
                _ => {}
            }
        }
        assert_abs_diff_eq!(done, 600.0 + lost, epsilon = 1e-6);
        return;
    }
    panic!("no seed interrupted the job");
}

#[test]
fn batches_respect_size_and_timeout() {
    let s = Scenario::minifab();
    let timeout = s.batch_timeout_min;
    let mut f = fab(s, 21);
    f.advance(10.0 * 1440.0);
    let log = f.batch_log();
    assert!(!log.is_empty());
    for b in log {
        let spec = &f.scenario().machines[b.machine];
        assert!(b.size >= 1 && b.size <= spec.max_batch);
        if b.size < spec.min_batch {
            assert!(b.head_wait >= timeout - 1e-9, "partial batch after {} min", b.head_wait);
        }
    }
}

#[test]
fn conservation_holds_at_every_event() {
    let mut f = fab(Scenario::minifab(), 2);
    let end = 6.0 * 1440.0;
    let mut n = 0;
    while f.step_event(end).is_some() {
        f.check_invariants().unwrap();
        n += 1;
        if n % 200 == 0 {
            let acts = efficiency(&[n % 5], 1);
            f.apply_action_set(&acts).unwrap();
            f.check_invariants().unwrap();
        }
    }
    assert!(f.lots_completed() > 0);
    assert_eq!(f.lots_released(), f.lots_completed() + f.lots_located());
}

#[test]
fn going_rate_of_a_steady_line() {
    // One lot every 144 min, 10 min each: ten outputs per day.
    let mut f = fab(toy::single_machine(10.0, 0.0, 144.0), 0);
    f.advance(1440.0);
    let k = f.kpi_report(Window::new(0.0, 1440.0));
    assert_abs_diff_eq!(k.daily_going_rate, 10.0, epsilon = 1e-12);
    assert_eq!(k.completed_lots, 10);
}

#[test]
fn cycle_time_average() {
    // Lots at 0 and 1152 on a 1440-min tool finish at 1440 and 2880:
    // cycle times 1.0 and 1.2 days.
    let mut f = fab(toy::single_machine(1440.0, 0.0, 1152.0), 0);
    f.advance(2880.0);
    let k = f.kpi_report(Window::new(0.0, 2880.0));
    assert_eq!(k.completed_lots, 2);
    assert_abs_diff_eq!(k.avg_cycle_time_days.unwrap(), 1.1, epsilon = 1e-12);
}

#[test]
fn window_excludes_its_start() {
    let mut f = fab(toy::single_machine(10.0, 0.0, 144.0), 0);
    f.advance(2880.0);
    // The output at 1450 belongs to day two; the one at 1306 to day one.
    let k = f.kpi_report(Window::new(1306.0, 1450.0));
    assert_eq!(k.completed_lots, 1);
}

/// Independent going-rate computation straight from the output log.
fn dgr_oracle(f: &FabState, start: f64, end: f64) -> f64 {
    let s = f.scenario();
    let days = (end - start) / 1440.0;
    let mut wip = vec![0usize; s.num_products()];
    for lot in f.lots() {
        let open = lot.completion_time.is_none_or(|t| t > end);
        if lot.release_time <= end && open {
            wip[lot.product] += 1;
        }
    }
    let total: usize = wip.iter().sum();
    let mut dgr = 0.0;
    for (p, prod) in s.products.iter().enumerate() {
        let r = if total == 0 { 1.0 / s.num_products() as f64 } else { wip[p] as f64 / total as f64 };
        let mut sum = 0.0;
        for &o in &prod.route {
            let c = f.outputs().iter().filter(|x| x.op == o && x.time > start && x.time <= end).count();
            sum += c as f64 / days;
        }
        dgr += r / prod.route.len() as f64 * sum;
    }
    dgr
}

#[test]
fn going_rate_matches_oracle_on_minifab() {
    let mut f = fab(Scenario::minifab(), 8);
    f.advance(4.0 * 1440.0);
    for (a, b) in [(0.0, 1440.0), (1440.0, 4.0 * 1440.0), (1000.0, 3000.0)] {
        let k = f.kpi_report(Window::new(a, b));
        assert_abs_diff_eq!(k.daily_going_rate, dgr_oracle(&f, a, b), epsilon = 1e-9);
    }
}

#[test]
fn three_op_going_rate_example() {
    // Each product's rate is the mean of its three operation outputs,
    // weighted by its WIP share at the window end.
    let mut f = fab(toy::three_by_six(), 0);
    f.advance(3.0 * 1440.0);
    let w = Window::new(1440.0, 2880.0);
    let k = f.kpi_report(w);
    let counts: Vec<usize> = (0..6)
        .map(|o| f.outputs().iter().filter(|x| x.op == o && x.time > 1440.0 && x.time <= 2880.0).count())
        .collect();
    let r0 = k.per_product[0].wip_ratio;
    let r1 = k.per_product[1].wip_ratio;
    let expect = r0 * (counts[0] + counts[1] + counts[2]) as f64 / 3.0
        + r1 * (counts[3] + counts[4] + counts[5]) as f64 / 3.0;
    assert_abs_diff_eq!(k.daily_going_rate, expect, epsilon = 1e-9);
    assert_abs_diff_eq!(r0 + r1, 1.0, epsilon = 1e-12);
}

#[test]
fn faster_machines_never_lose_throughput() {
    let horizon = 5.0 * 1440.0;
    for seed in 0..5 {
        let mut base = fab(Scenario::minifab(), seed);
        base.advance(horizon);
        let mut fast = fab(Scenario::minifab(), seed);
        // 0.9^7 ~ 0.48
        fast.apply_action_set(&efficiency(&[0, 1, 2, 3, 4], 7)).unwrap();
        fast.advance(horizon);
        assert!(
            fast.lots_completed() >= base.lots_completed(),
            "seed {seed}: {} < {}",
            fast.lots_completed(),
            base.lots_completed()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_action_streams_keep_invariants(seed in 0u64..1000, picks in prop::collection::vec(0usize..5, 1..6)) {
        let mut f = fab(Scenario::minifab(), seed);
        for (k, &m) in picks.iter().enumerate() {
            f.advance((k + 1) as f64 * 1440.0);
            let mut a = uptime(&[m]);
            a.r_targets.push((m + 1) % 5);
            f.apply_action_set(&a).unwrap();
            prop_assert!(f.check_invariants().is_ok());
        }
        let m = &f.machines()[picks[0]];
        prop_assert!(m.uptime_fraction <= 1.0);
    }
}
