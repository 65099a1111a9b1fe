use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::belief::init_belief;
use crate::geometry::{Rect, Vec2};
use crate::pathplan::Lattice;
use crate::planner::EffortStats;
use crate::scenarios::{generate_benchmark, ParamGrid, Scene, SceneAgent};
use crate::world::{observe, Acc, AgentKind, AgentState, Outcome};

fn summary(template: u8, outcome: Outcome, near_miss: bool, steps: usize) -> EpisodeSummary {
    EpisodeSummary {
        scene_id: format!("t{template}-{steps}-{outcome:?}-{near_miss}"),
        template_id: template,
        method: "m".into(),
        seed: 0,
        steps,
        outcome,
        near_miss,
        near_miss_steps: near_miss as usize,
        ttg_s: (outcome == Outcome::Goal).then_some(steps as f64 * 0.25),
        total_reward: 0.0,
        training_days: 0.0,
    }
}

fn log(template: u8, outcome: Outcome, near_miss: bool) -> EpisodeLog {
    EpisodeLog { summary: summary(template, outcome, near_miss, 10), steps: Vec::new() }
}

fn step(effort: Option<EffortStats>, exec_ms: f64) -> StepRecord {
    StepRecord {
        t: 0,
        steer: 0.0,
        acc: Acc::Maintain,
        reward: -1.0,
        event: None,
        belief_ess: 100.0,
        belief_resets: 0,
        policy: [0.0, 0.0, 1.0],
        path_fallback: false,
        effort,
        exec_ms,
        budget_exceeded: false,
    }
}

fn sample_scenes() -> Vec<Scene> {
    let grid: ParamGrid = "templates=1,4;speeds=1.0;dists=20".parse().unwrap();
    generate_benchmark(&grid, 3).unwrap()
}

#[test]
fn si90_ten_percent_rule() {
    let mut logs = Vec::new();
    for i in 0..30 {
        logs.push(log(1, if i < 2 { Outcome::Crash } else { Outcome::Goal }, false));
        logs.push(log(2, Outcome::Goal, i < 4));
    }
    let m = compute_metrics("m", &logs, 0.0);
    assert_eq!(m.si90, 1);
}

#[test]
fn crash_rate_is_two_level() {
    let mut logs = Vec::new();
    for i in 0..10 {
        logs.push(log(1, if i < 1 { Outcome::Crash } else { Outcome::Goal }, false));
        logs.push(log(2, if i < 3 { Outcome::Crash } else { Outcome::Goal }, false));
    }
    // unequal group sizes: the plain mean would differ
    logs.push(log(2, Outcome::Goal, false));
    let m = compute_metrics("m", &logs, 0.0);
    assert!((m.crash_pct - (10.0 + 300.0 / 11.0) / 2.0).abs() < 1e-12);
}

#[test]
fn ttg_only_counts_goal_episodes() {
    let logs = vec![
        EpisodeLog { summary: summary(1, Outcome::Goal, false, 40), steps: Vec::new() },
        EpisodeLog { summary: summary(1, Outcome::Timeout, false, 120), steps: Vec::new() },
        EpisodeLog { summary: summary(1, Outcome::Crash, false, 7), steps: Vec::new() },
    ];
    let m = compute_metrics("m", &logs, 0.0);
    assert_eq!(m.ttg_s, Some(10.0));
    assert!((m.timeout_pct - 100.0 / 3.0).abs() < 1e-12);
    let none = compute_metrics("m", &logs[1..], 0.0);
    assert_eq!(none.ttg_s, None);
}

#[test]
fn near_miss_excludes_crashes() {
    let logs = vec![log(1, Outcome::Crash, true), log(1, Outcome::Goal, true), log(1, Outcome::Goal, false)];
    let m = compute_metrics("m", &logs, 0.0);
    assert!((m.near_miss_pct - 100.0 / 3.0).abs() < 1e-12);
    assert!((m.failure_pct() - 200.0 / 3.0).abs() < 1e-12);
}

#[test]
fn effort_means_skip_decisions_without_planning() {
    let e = |pt: f64, n: usize| EffortStats { planning_time_ms: pt, trial_count: n, ..EffortStats::default() };
    let mut a = log(1, Outcome::Goal, false);
    a.steps = vec![step(Some(e(2.0, 1)), 5.0), step(None, 1.0), step(Some(e(4.0, 3)), 3.0)];
    let mut b = log(2, Outcome::Goal, false);
    b.steps = vec![step(Some(e(9.0, 6)), 9.0)];
    let m = compute_metrics("m", &[a, b], 0.0);
    assert_eq!(m.pt, Some((3.0 + 9.0) / 2.0));
    assert_eq!(m.ptn, Some((2.0 + 6.0) / 2.0));
    assert_eq!(m.execution_ms, Some((3.0 + 9.0) / 2.0));
    let mut c = log(1, Outcome::Goal, false);
    c.steps = vec![step(None, 1.0)];
    assert_eq!(compute_metrics("m", &[c], 0.0).pt, None);
}

#[test]
fn csv_header_and_empty_fields() {
    let m = compute_metrics("navppo-only", &[log(1, Outcome::Timeout, false)], 0.5);
    let mut out = Vec::new();
    write_csv(&[m], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.next().unwrap(), "navppo-only,1,0,0,100,,,0.5,,,,,,");
}

#[test]
fn log_roundtrip() {
    let mut a = log(1, Outcome::Goal, false);
    a.steps = vec![step(Some(EffortStats::default()), 1.0), step(None, 2.0)];
    let b = log(3, Outcome::Timeout, true);
    let mut buf = Vec::new();
    write_logs(&[a.clone(), b.clone()], &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().contains("\"record\":\"step\""));
    assert_eq!(read_logs(buf.as_slice()).unwrap(), vec![a, b]);
    assert!(read_logs(&text.as_bytes()[..text.find("summary").unwrap() - 12]).is_err());
}

#[test]
fn method_names_roundtrip() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert!(matches!("hyplan2".parse::<Method>(), Err(HarnessError::UnknownMethod(_))));
    assert!(!Method::DespotLtr.needs_model());
    assert!(Method::NavppoOnly.needs_model() && !Method::NavppoOnly.needs_calibration());
}

#[test]
fn config_overrides() {
    let text = "# comment\nseed = 9\nplanner.budgetMs = 25\n\nclock = wall\nreward.rCrash=-500\n";
    let cfg = RunConfig::default().with_overrides(text).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.planner.budget_ms, 25.0);
    assert_eq!(cfg.clock, crate::meter::ClockMode::Wall);
    assert_eq!(cfg.reward.r_crash, -500.0);
    assert!(RunConfig::default().with_overrides("planner.nope = 1").is_err());
    assert!(RunConfig::default().with_overrides("tMax = 0").is_err());
    assert!(RunConfig::default().with_overrides("seed 4").is_err());
}

#[test]
fn empty_splits_are_rejected() {
    let scenes = sample_scenes();
    let cfg = RunConfig::default();
    assert!(matches!(
        train_procedure(&[], &scenes, &cfg, None),
        Err(HarnessError::NonemptySplitRequired("training"))
    ));
    assert!(matches!(
        train_procedure(&scenes, &[], &cfg, None),
        Err(HarnessError::NonemptySplitRequired("calibration"))
    ));
}

#[test]
fn learner_methods_need_a_model() {
    let scenes = sample_scenes();
    let cfg = RunConfig::default();
    let err = evaluate(&scenes, Method::Hyplan, &cfg, None, None).unwrap_err();
    assert!(matches!(err, HarnessError::MissingModel(Method::Hyplan)));
    assert!(err.to_string().contains("MissingModel"));
    assert!(matches!(evaluate(&scenes, Method::NavppoOnly, &cfg, None, None), Err(HarnessError::MissingModel(_))));
}

fn open_scene(exo: Vec<SceneAgent>, obstacles: Vec<Rect>) -> Scene {
    let mut s = sample_scenes().remove(0);
    s.exo = exo;
    s.obstacles = obstacles;
    s
}

fn constant(acc: Acc) -> ControlMode {
    ControlMode { velocity: Velocity::Constant(acc), predictions_in_costmap: true, training: false }
}

#[test]
fn empty_road_steers_straight() {
    let scene = open_scene(Vec::new(), Vec::new());
    let cfg = RunConfig::default();
    let lattice = Lattice::new(cfg.path.clone());
    let goal = scene.template().ego_goal();
    let o = observe(&scene.initial_state());
    let b = init_belief(&o, &scene, &mut ChaCha8Rng::seed_from_u64(1));
    let mut c = Controller::new(ControlMode::for_method(Method::DespotLtr), &cfg, &lattice, None, None, goal, 5).unwrap();
    let d = c.control_step(&b, &o).unwrap();
    assert_eq!(d.action.steer, 0.0);
    assert!(!d.path_fallback);
    assert!(d.effort.is_some());
}

#[test]
fn walled_goal_falls_back_to_braking() {
    let scene = open_scene(Vec::new(), Vec::new());
    let goal = Vec2::new(8.0, -1.5);
    let ring = vec![
        Rect::new(Vec2::new(4.0, -5.5), Vec2::new(5.0, 2.5)),
        Rect::new(Vec2::new(11.0, -5.5), Vec2::new(12.0, 2.5)),
        Rect::new(Vec2::new(4.0, 1.5), Vec2::new(12.0, 2.5)),
        Rect::new(Vec2::new(4.0, -5.5), Vec2::new(12.0, -4.5)),
    ];
    let mut scene = scene;
    scene.obstacles = ring;
    let cfg = RunConfig::default();
    let lattice = Lattice::new(cfg.path.clone());
    let o = observe(&scene.initial_state());
    let b = init_belief(&o, &scene, &mut ChaCha8Rng::seed_from_u64(1));
    let mut c = Controller::new(ControlMode::for_method(Method::DespotLtr), &cfg, &lattice, None, None, goal, 5).unwrap();
    let d = c.control_step(&b, &o).unwrap();
    assert!(d.path_fallback);
    assert_eq!((d.action.steer, d.action.acc), (0.0, Acc::Decelerate));
    assert_eq!(d.policy, Acc::Decelerate.one_hot());
}

#[test]
fn decisions_are_deterministic() {
    let scene = sample_scenes().remove(1);
    let cfg = RunConfig::default();
    let lattice = Lattice::new(cfg.path.clone());
    let goal = scene.template().ego_goal();
    let o = observe(&scene.initial_state());
    let run = || {
        let b = init_belief(&o, &scene, &mut ChaCha8Rng::seed_from_u64(1));
        let mut c =
            Controller::new(ControlMode::for_method(Method::DespotLtr), &cfg, &lattice, None, None, goal, 5).unwrap();
        c.keep_trace = true;
        let d = c.control_step(&b, &o).unwrap();
        (d.action, d.policy, serde_json::to_string(&d.trace).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn far_slow_pedestrian_lets_accelerating_ego_reach_goal() {
    // walks away from the road at 0.5 m/s starting 20 m off the lane
    let start = Vec2::new(30.0, 18.5);
    let ped_goal = Vec2::new(30.0, 40.0);
    let ped = SceneAgent {
        kind: AgentKind::Pedestrian,
        state: AgentState::toward_goal(start, ped_goal, 0.5),
        goal_set: vec![ped_goal],
        speed_range: (0.5, 0.5),
        spawn_region: Rect::new(Vec2::new(29.0, 17.0), Vec2::new(31.0, 19.0)),
    };
    let scene = open_scene(vec![ped], Vec::new());
    let cfg = RunConfig::default();
    // the ego stays on y = -1.5 and the pedestrian only moves to larger y,
    // so their distance never drops below the initial lateral gap of 20 m
    assert!(start.y - (-1.5) > cfg.reward.d_near);
    let lattice = Lattice::new(cfg.path.clone());
    let ep = run_scene(&scene, constant(Acc::Accelerate), "accelerate", &cfg, &lattice, None, None, Recording::default())
        .unwrap();
    let s = &ep.log.summary;
    assert_eq!(s.outcome, Outcome::Goal);
    assert!(!s.near_miss);
    assert_eq!(s.steps, ep.log.steps.len());
    assert!(ep.log.steps.iter().all(|r| r.acc == Acc::Accelerate));
    // time to cover 58 m starting at 5 m/s, +1.5 m/s^2, capped at 8.33 m/s
    assert!(s.steps <= 40);
}

#[test]
fn t_max_caps_the_episode() {
    let scene = sample_scenes().remove(0);
    let cfg = RunConfig { t_max: 3, ..RunConfig::default() };
    let lattice = Lattice::new(cfg.path.clone());
    let ep =
        run_scene(&scene, constant(Acc::Decelerate), "brake", &cfg, &lattice, None, None, Recording::default()).unwrap();
    assert_eq!(ep.log.steps.len(), 3);
    assert_eq!(ep.log.summary.outcome, Outcome::Timeout);
    assert_eq!(ep.log.summary.ttg_s, None);
}

fn one_pass_reference(groups: &[(u8, f64)]) -> Option<f64> {
    let mut templates: Vec<u8> = groups.iter().map(|g| g.0).collect();
    templates.sort();
    templates.dedup();
    if templates.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for t in &templates {
        let vals: Vec<f64> = groups.iter().filter(|g| g.0 == *t).map(|g| g.1).collect();
        total += vals.iter().sum::<f64>() / vals.len() as f64;
    }
    Some(total / templates.len() as f64)
}

proptest! {
    #[test]
    fn two_level_matches_reference(entries in proptest::collection::vec((1u8..=9, 0.0f64..100.0), 0..60)) {
        let mut groups: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for (t, v) in &entries {
            groups.entry(*t).or_default().push(*v);
        }
        let got = two_level_mean(&groups);
        let want = one_pass_reference(&entries);
        match (got, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn percentages_stay_in_range(outcomes in proptest::collection::vec((1u8..=9, 0usize..3, any::<bool>()), 1..40)) {
        let logs: Vec<EpisodeLog> = outcomes
            .iter()
            .map(|(t, o, nm)| log(*t, [Outcome::Crash, Outcome::Goal, Outcome::Timeout][*o], *nm))
            .collect();
        let m = compute_metrics("m", &logs, 0.0);
        for p in [m.crash_pct, m.near_miss_pct, m.timeout_pct, m.failure_pct()] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&p));
        }
        prop_assert!(m.si90 <= 9);
    }
}
