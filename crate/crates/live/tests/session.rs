use evl_core::board::{BoardState, EnvKind, Preset};
use evl_core::grid::GridDump;
use evl_core::harness::{run_experiment, ExperimentSpec};
use evl_core::partner::{GeneralGoalPartner, PartnerParams};
use evl_core::train::{Method, Session, SessionConfig};
use evl_live::protocol::{Envelope, Phase, ServerMessage};
use evl_live::LiveSession;

fn config(env: EnvKind, method: Method, iterations: usize) -> SessionConfig {
    let mut cfg = SessionConfig::new(env, Preset::Sim, method);
    cfg.max_iterations = iterations;
    cfg
}

fn run_live(
    cfg: &SessionConfig,
    seed: u64,
    mut tick: impl FnMut(&evl_live::session::Handle, &BoardState, usize),
) -> (LiveSession, Vec<Envelope<ServerMessage>>) {
    let mut live = LiveSession::open("t", cfg.clone(), seed, None).unwrap();
    let handle = live.handle();
    let mut sent = Vec::new();
    live.run(&mut |s, k| tick(&handle, s, k), &mut |m| sent.push(m)).unwrap();
    (live, sent)
}

#[test]
fn silent_client_means_zero_human_commands() {
    let cfg = config(EnvKind::Env1, Method::Evl, 1);
    let (live, _) = run_live(&cfg, 1, |_, _, _| {});
    let traj = live.session().last_trajectory().unwrap();
    assert!(traj.human_actions().iter().all(|a| *a == [0.0, 0.0]));
}

#[test]
fn one_state_message_per_tick() {
    let cfg = config(EnvKind::Env1, Method::Bayes, 1);
    let (_, sent) = run_live(&cfg, 2, |_, _, _| {});
    let training_states = sent
        .iter()
        .filter(|m| matches!(m.body, ServerMessage::State { iteration: 0, .. }))
        .count();
    assert_eq!(training_states, cfg.board.episode_steps);
    let seqs: Vec<u64> = sent.iter().map(|m| m.seq).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    assert!(sent.iter().all(|m| m.session == "t"));
}

#[test]
fn latest_command_within_a_tick_wins() {
    let cfg = config(EnvKind::Env1, Method::Evl, 1);
    let mut seq = 0;
    let (live, _) = run_live(&cfg, 3, |h, s, _| {
        let phase = s.step_index as f64 * 0.1;
        seq += 1;
        h.ingest(seq, 0.9, -0.9);
        seq += 1;
        h.ingest(seq, phase.sin() * 0.5, phase.cos() * 0.5);
    });
    let traj = live.session().last_trajectory().unwrap();
    for r in &traj.records {
        let phase = r.step as f64 * 0.1;
        assert_eq!(r.actions.human, [phase.sin() * 0.5, phase.cos() * 0.5]);
    }
}

#[test]
fn stop_ends_training_with_one_final_metrics() {
    let cfg = config(EnvKind::Env1, Method::Evl, 5);
    let (live, sent) = run_live(&cfg, 4, |h, s, k| {
        if k == 1 && s.step_index == 100 {
            h.request_stop();
        }
    });
    let stopped = sent
        .iter()
        .position(|m| m.body == ServerMessage::Phase { phase: Phase::Stopped })
        .expect("stopped phase");
    let after = &sent[stopped..];
    assert!(!after.iter().any(|m| matches!(m.body, ServerMessage::Field { .. })));
    let finals: Vec<_> = after
        .iter()
        .filter(|m| matches!(m.body, ServerMessage::Metrics { .. }))
        .collect();
    assert_eq!(finals.len(), 1);
    assert!(matches!(finals[0].body, ServerMessage::Metrics { is_final: true, .. }));
    assert_eq!(sent.last().unwrap().body, ServerMessage::Phase { phase: Phase::Idle });
    assert_eq!(live.session().iteration(), 2);
    let validation_states = after.iter().filter(|m| m.body.is_state()).count();
    assert_eq!(validation_states, cfg.validation_steps());
}

#[test]
fn replayed_command_schedule_reproduces_offline_run() {
    for env in [EnvKind::Env1, EnvKind::Env2] {
        let cfg = config(env, Method::Evl, 3);
        let params = PartnerParams::population(env, 3, 5)[2];

        let mut offline = Session::new(cfg.clone(), 8, None).unwrap();
        let mut partner = GeneralGoalPartner::new(params, &cfg.board).unwrap();
        let mut schedule = Vec::new();
        let mut trajectories = Vec::new();
        for k in 0..cfg.max_iterations {
            partner.begin_iteration(k);
            offline.run_iteration(&mut partner, &mut |_| false, &mut |_| {}).unwrap();
            let traj = offline.last_trajectory().unwrap().clone();
            schedule.push(traj.human_actions());
            trajectories.push(traj);
        }

        let mut seq = 0;
        let mut live_traj = Vec::new();
        let (live, sent) = run_live(&cfg, 8, |h, s, k| {
            if k < schedule.len() {
                let cmd = schedule[k][s.step_index];
                seq += 1;
                h.ingest(seq, cmd[0], cmd[1]);
            }
        });
        for m in &sent {
            if let ServerMessage::State { x, y, step, iteration, .. } = m.body {
                if iteration < trajectories.len() {
                    live_traj.push((iteration, step, x, y));
                }
            }
        }
        for (k, step, x, y) in live_traj {
            let t = &trajectories[k];
            let expect = if step < t.len() { t.records[step].state.ball_pos } else { t.final_state.ball_pos };
            assert_eq!([x, y], expect, "{env} iteration {k} step {step}");
        }
        for (a, b) in live.session().logs().iter().zip(offline.logs()) {
            assert_eq!(a.reward_checksum, b.reward_checksum);
            assert_eq!(a.policy_checksum, b.policy_checksum);
        }
        assert_eq!(live.session().last_trajectory(), offline.last_trajectory());
    }
}

#[test]
fn heatmap_checksums_match_harness_grid_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::from_json(
        r#"{"envs":["env2"],"methods":["evl"],"partners":{"count":1,"seed":11},"seeds":[6],"max_iterations":3,"snapshot_every":1}"#,
    )
    .unwrap();
    let outcome = run_experiment(&spec, dir.path()).unwrap();
    assert!(outcome.failures.is_empty());
    let run_dir = dir.path().join(&outcome.records[0].run_dir);
    let iterations = outcome.records[0].iterations;

    let cfg = spec.session_config(EnvKind::Env2, Method::Evl);
    let params = PartnerParams::population(EnvKind::Env2, 1, 11)[0];
    let mut partner = GeneralGoalPartner::new(params, &cfg.board).unwrap();
    let mut current = usize::MAX;
    let mut seq = 0;
    let (_, sent) = run_live(&cfg, 6, |h, s, k| {
        if k != current {
            current = k;
            partner.begin_iteration(k);
        }
        let cmd = partner.command(s);
        seq += 1;
        h.ingest(seq, cmd[0], cmd[1]);
    });

    let mut compared = 0;
    for m in &sent {
        if let ServerMessage::Field { kind, iteration, checksum, .. } = &m.body {
            if kind != "reward" || *iteration > iterations {
                continue;
            }
            let path = run_dir.join(format!("reward_{iteration:04}.grid"));
            let dump = GridDump::parse(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
            assert_eq!(*checksum, dump.checksum(), "iteration {iteration}");
            compared += 1;
        }
    }
    assert_eq!(compared, iterations + 1);
}
