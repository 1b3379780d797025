//! Channels driven through the in-process hub on a paused clock.

mod common;

use std::time::Duration;

use common::*;
use tokio::time::Instant;
use trailmaker::analytics::MetricSummary;
use trailmaker::persistence::{load_session, replay};
use trailmaker::simulation::{AssistMode, SafetyCause};
use trailmaker_service::live::{journal_path, read_journal, LiveSession, SharedRegistry};
use trailmaker_service::protocol::{Command, EndReason, ErrorCode, Event, Phase, Role};

const CURSOR_SPEED: f64 = 100.0;
const TICK: f64 = 1.0 / 30.0;

#[tokio::test(start_paused = true)]
async fn stationary_input_yields_150_updates_in_5_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("cadence", Role::Therapist).unwrap();
    let mut p = hub.connect("cadence", Role::Patient).unwrap();
    triangle(&mut t).await;
    pull(&mut t).await;
    ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
    until(&mut p, "session_started").await;
    let (x, y) = TRIANGLE[0];
    ack(&mut p, Command::PenInput { x, y, z: 0.0 }).await;
    let first = state(&mut p).await;
    let t0 = Instant::now();
    let mut count = 0u64;
    loop {
        let u = state(&mut p).await;
        if Instant::now() - t0 > Duration::from_secs(5) {
            break;
        }
        count += 1;
        assert_eq!(u.tick, first.tick + count);
        assert_eq!(u.phase, Phase::Running);
        assert!((u.pen.x - x).hypot(u.pen.y - y) < 1.0);
        assert!(!u.out_of_plane);
    }
    assert!((149..=151).contains(&count), "{count} updates");
}

#[tokio::test(start_paused = true)]
async fn on_plane_cursor_is_tracked_within_a_millimetre() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("track", Role::Therapist).unwrap();
    let mut p = hub.connect("track", Role::Patient).unwrap();
    triangle(&mut t).await;
    pull(&mut t).await;
    ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
    until(&mut p, "session_started").await;
    let mut worst = 0.0f64;
    let mut cursor = TRIANGLE[0];
    for k in 0..90 {
        let u = state(&mut p).await;
        if k >= 10 {
            let err = (u.pen.x - cursor.0).hypot(u.pen.y - cursor.1);
            worst = worst.max(err);
        }
        cursor = along(&TRIANGLE, CURSOR_SPEED * TICK * f64::from(k));
        p.send(None, Command::PenInput { x: cursor.0, y: cursor.1, z: 0.0 });
    }
    eprintln!("worst tracking error at {CURSOR_SPEED} mm/s: {worst:.3} mm");
    assert!(worst < 1.0, "{worst}");
}

#[tokio::test(start_paused = true)]
async fn assist_changes_show_on_the_next_tick() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("assist", Role::Therapist).unwrap();
    triangle(&mut t).await;
    pull(&mut t).await;
    ack(&mut t, begin(AssistMode::ContinuousAssist, 5)).await;
    let u = state(&mut t).await;
    assert!(u.assist.on);
    assert_eq!(u.assist.scale, 1.0);
    ack(&mut t, Command::SetAssistScale { scale: 0.4 }).await;
    let u = state(&mut t).await;
    assert_eq!(u.assist.scale, 0.4);
    ack(&mut t, Command::AssistOff).await;
    let u = state(&mut t).await;
    assert!(!u.assist.on);
    assert_eq!(u.force_breakdown.unwrap().lead.norm(), 0.0);
    ack(&mut t, Command::AssistOn).await;
    assert!(state(&mut t).await.assist.on);
}

#[tokio::test(start_paused = true)]
async fn roles_are_enforced_and_observers_see_everything() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut o = hub.connect("roles", Role::Observer).unwrap();
    match next(&mut o).await {
        Event::Welcome { role, phase, .. } => {
            assert_eq!(role, Role::Observer);
            assert_eq!(phase, Phase::Editing);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(next(&mut o).await, Event::TrailUpdate { generated: false, .. }));
    let mut t = hub.connect("roles", Role::Therapist).unwrap();
    let mut p = hub.connect("roles", Role::Patient).unwrap();
    assert_eq!(error(&mut o, Command::AddTarget { x: 0.0, y: 0.0 }).await, ErrorCode::Role);
    assert_eq!(error(&mut p, Command::AssistOn).await, ErrorCode::Role);
    assert_eq!(error(&mut t, Command::PenInput { x: 0.0, y: 0.0, z: 0.0 }).await, ErrorCode::Role);
    assert_eq!(error(&mut p, Command::PenInput { x: 0.0, y: 0.0, z: 0.0 }).await, ErrorCode::State);
    assert_eq!(error(&mut t, Command::GenerateSegments).await, ErrorCode::Geometry);
    t.send_text("{not json");
    assert!(matches!(reply(&mut t).await, Event::Error { code: ErrorCode::Parse, .. }));
    t.send_text(r#"{"type":"fly","request_id":3}"#);
    assert!(matches!(
        reply(&mut t).await,
        Event::Error {
            code: ErrorCode::UnknownType,
            request_id: Some(3),
            ..
        }
    ));

    ack(&mut t, Command::AddTarget { x: 10.0, y: 20.0 }).await;
    match until(&mut o, "trail_update").await {
        Event::TrailUpdate { trail, generated, .. } => {
            assert_eq!(trail.targets.len(), 1);
            assert!(!generated);
        }
        _ => unreachable!(),
    }
    ack(&mut t, Command::AddTarget { x: 60.0, y: 20.0 }).await;
    ack(&mut t, Command::GenerateSegments).await;
    ack(&mut t, begin(AssistMode::NoAssist, 1)).await;
    assert!(matches!(until(&mut o, "session_started").await, Event::SessionStarted { .. }));
    let u = state(&mut o).await;
    assert_eq!(u.phase, Phase::Running);
    assert!(u.d_s.is_some());
}

#[tokio::test(start_paused = true)]
async fn pull_to_start_arrives_within_two_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("pull", Role::Therapist).unwrap();
    triangle(&mut t).await;
    ack(&mut t, Command::PullToStart).await;
    let t0 = Instant::now();
    let mut u = state(&mut t).await;
    while u.pulling {
        assert!(u.velocity.norm() < trailmaker::simulation::SPEED_LIMIT);
        u = state(&mut t).await;
    }
    assert!(Instant::now() - t0 <= Duration::from_secs(2));
    let (x, y) = TRIANGLE[0];
    assert!((u.pen.x - x).hypot(u.pen.y - y) < 0.5);
    ack(&mut t, Command::PullToStart).await;
    assert!(!state(&mut t).await.pulling);
}

#[tokio::test(start_paused = true)]
async fn overspeed_input_shuts_the_session_down() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("trip", Role::Therapist).unwrap();
    let mut p = hub.connect("trip", Role::Patient).unwrap();
    triangle(&mut t).await;
    pull(&mut t).await;
    ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
    let (x, y) = TRIANGLE[0];
    ack(&mut p, Command::PenInput { x: x + 150.0, y, z: 0.0 }).await;
    match until(&mut t, "safety_shutdown").await {
        Event::SafetyShutdown { cause, .. } => assert_eq!(cause, SafetyCause::Overspeed),
        _ => unreachable!(),
    }
    let log = match next(&mut t).await {
        Event::SessionEnded { reason, log_file, .. } => {
            assert_eq!(reason, EndReason::Safety);
            log_file
        }
        other => panic!("{other:?}"),
    };
    assert!(matches!(until(&mut p, "safety_shutdown").await, Event::SafetyShutdown { .. }));
    assert_eq!(error(&mut t, Command::AssistOn).await, ErrorCode::Shutdown);
    assert_eq!(error(&mut p, Command::PenInput { x, y, z: 0.0 }).await, ErrorCode::Shutdown);
    assert_eq!(error(&mut t, Command::ClearBoard).await, ErrorCode::Shutdown);
    let r = load_session(log).unwrap();
    assert!(r.safety().tripped);
    assert!(r.ticks.last().unwrap().tripped);
}

/// Drives one loop of the triangle with the cursor, editing the trail and the
/// assist on the way. Returns the log path.
async fn scripted_run(hub: &trailmaker_service::Hub, id: &str) -> String {
    let mut t = hub.connect(id, Role::Therapist).unwrap();
    let mut p = hub.connect(id, Role::Patient).unwrap();
    triangle(&mut t).await;
    pull(&mut t).await;
    ack(&mut t, begin(AssistMode::ContinuousAssist, 1)).await;
    until(&mut p, "session_started").await;
    let mut k = 0u32;
    loop {
        match next(&mut p).await {
            Event::StateUpdate(_) => {
                k += 1;
                let (x, y) = along(&TRIANGLE, CURSOR_SPEED * TICK * f64::from(k));
                p.send(None, Command::PenInput { x, y, z: 0.0 });
                if k == 20 {
                    t.send(None, Command::SetAssistScale { scale: 0.6 });
                }
                if k == 40 {
                    t.send(None, Command::MoveTarget { target_id: 2, x: 0.0, y: 55.0 });
                }
            }
            Event::SessionEnded { reason, log_file, loops, .. } => {
                assert_eq!(reason, EndReason::TargetLoops);
                assert_eq!(loops, 1);
                return log_file;
            }
            _ => {}
        }
        assert!(k < 300, "loop never completed");
    }
}

#[tokio::test(start_paused = true)]
async fn completed_run_is_logged_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let log = scripted_run(&hub, "run").await;
    let r = load_session(&log).unwrap();
    assert!(r.is_closed());
    assert_eq!(r.trails.len(), 2);
    assert!(replay(&r).unwrap().is_consistent());
    let s = MetricSummary::from_record(&r).unwrap();
    assert_eq!(s.loops, 1);
    assert!(s.speed_mm_s > 0.0);
}

#[tokio::test(start_paused = true)]
async fn command_journal_replays_to_an_identical_log() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let log = scripted_run(&hub, "journal").await;
    let journal = read_journal(journal_path(&log)).unwrap();
    assert!(journal.iter().any(|e| matches!(e.command, Command::MoveTarget { .. })));

    let again = tempfile::tempdir().unwrap();
    let s = LiveSession::replay(
        "journal",
        config(again.path()).into(),
        SharedRegistry::default(),
        &journal,
    );
    assert_eq!(s.phase(), Phase::Editing);
    let original = std::fs::read(&log).unwrap();
    let replayed = std::fs::read(again.path().join("sessions/journal_01.jsonl")).unwrap();
    assert!(original == replayed, "replayed log differs");
}

#[tokio::test(start_paused = true)]
async fn leaving_closes_the_run_and_a_new_channel_keeps_old_logs() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    {
        let mut t = hub.connect("gone", Role::Therapist).unwrap();
        triangle(&mut t).await;
        ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
        state(&mut t).await;
    }
    tokio::time::sleep(Duration::from_millis(200)).await;
    let first = load_session(dir.path().join("sessions/gone_01.jsonl")).unwrap();
    assert!(first.is_closed());

    let mut t = hub.connect("gone", Role::Therapist).unwrap();
    assert!(matches!(next(&mut t).await, Event::Welcome { phase: Phase::Editing, .. }));
    triangle(&mut t).await;
    ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
    ack(&mut t, Command::EndSession).await;
    match until(&mut t, "session_ended").await {
        Event::SessionEnded { run_id, reason, .. } => {
            assert_eq!(run_id, "gone_02");
            assert_eq!(reason, EndReason::Requested);
        }
        _ => unreachable!(),
    }
    assert_eq!(load_session(dir.path().join("sessions/gone_01.jsonl")).unwrap(), first);
}

#[tokio::test(start_paused = true)]
async fn shutdown_ends_runs_and_closes_connections() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("stop", Role::Therapist).unwrap();
    triangle(&mut t).await;
    ack(&mut t, begin(AssistMode::NoAssist, 5)).await;
    state(&mut t).await;
    hub.shutdown().await;
    let mut ended = None;
    while let Some(env) = t.recv().await {
        if let Event::SessionEnded { reason, log_file, .. } = env.event {
            ended = Some((reason, log_file));
        }
    }
    let (reason, log) = ended.expect("session_ended before close");
    assert_eq!(reason, EndReason::ServerShutdown);
    assert!(load_session(log).unwrap().is_closed());
    assert!(hub.connect("stop", Role::Therapist).is_err());
}

#[tokio::test(start_paused = true)]
async fn registry_commands_persist() {
    let dir = tempfile::tempdir().unwrap();
    let hub = hub(dir.path());
    let mut t = hub.connect("reg", Role::Therapist).unwrap();
    ack(
        &mut t,
        Command::RegisterPatient {
            patient_id: "p9".into(),
            cohort_label: trailmaker::simulation::SubjectKind::Patient,
        },
    )
    .await;
    let again = Command::RegisterPatient {
        patient_id: "p9".into(),
        cohort_label: trailmaker::simulation::SubjectKind::Patient,
    };
    assert_eq!(error(&mut t, again).await, ErrorCode::Registry);
    let date = chrono::NaiveDate::from_ymd_opt(2026, 3, 1).unwrap();
    ack(&mut t, Command::UpdateFmScore { patient_id: "p9".into(), date, score: 40 }).await;
    let bad = Command::UpdateFmScore { patient_id: "p9".into(), date, score: 67 };
    assert_eq!(error(&mut t, bad).await, ErrorCode::Registry);
    let missing = Command::UpdateFmScore { patient_id: "zz".into(), date, score: 1 };
    assert_eq!(error(&mut t, missing).await, ErrorCode::Registry);
    let reg = trailmaker::persistence::PatientRegistry::load(dir.path().join("patients.json")).unwrap();
    assert_eq!(reg.get("p9").unwrap().latest_fm().unwrap().score, 40);
}
