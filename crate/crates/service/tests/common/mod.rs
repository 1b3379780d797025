#![allow(dead_code)]

use std::path::Path;

use trailmaker::simulation::AssistMode;
use trailmaker_service::live::no_clock;
use trailmaker_service::protocol::{Command, ErrorCode, Event, StateUpdate};
use trailmaker_service::{Connection, Hub, ServiceConfig};

pub const TRIANGLE: [(f64, f64); 3] = [(-50.0, -30.0), (50.0, -30.0), (0.0, 50.0)];

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    }
}

pub fn hub(dir: &Path) -> Hub {
    Hub::with_clock(config(dir), no_clock).unwrap()
}

pub async fn next(conn: &mut Connection) -> Event {
    conn.recv().await.expect("channel open").event
}

/// Skips broadcasts until the reply to the last command.
pub async fn reply(conn: &mut Connection) -> Event {
    loop {
        let e = next(conn).await;
        if matches!(e, Event::Ack { .. } | Event::Error { .. }) {
            return e;
        }
    }
}

pub async fn ack(conn: &mut Connection, command: Command) {
    assert!(conn.send(None, command.clone()));
    match reply(conn).await {
        Event::Ack { command: name, .. } => assert_eq!(name, command.name()),
        other => panic!("{command:?}: {other:?}"),
    }
}

pub async fn error(conn: &mut Connection, command: Command) -> ErrorCode {
    assert!(conn.send(Some(7), command));
    match reply(conn).await {
        Event::Error { code, request_id, .. } => {
            assert_eq!(request_id, Some(7));
            code
        }
        other => panic!("{other:?}"),
    }
}

pub async fn state(conn: &mut Connection) -> StateUpdate {
    loop {
        if let Event::StateUpdate(u) = next(conn).await {
            return u;
        }
    }
}

pub async fn until(conn: &mut Connection, kind: &str) -> Event {
    loop {
        let e = next(conn).await;
        if e.kind() == kind {
            return e;
        }
    }
}

pub async fn triangle(therapist: &mut Connection) {
    for (x, y) in TRIANGLE {
        ack(therapist, Command::AddTarget { x, y }).await;
    }
    ack(therapist, Command::SetLooping { looping: true }).await;
    ack(therapist, Command::GenerateSegments).await;
}

/// Pulls the pen to the first target and waits until it has arrived.
pub async fn pull(therapist: &mut Connection) {
    ack(therapist, Command::PullToStart).await;
    while state(therapist).await.pulling {}
}

pub fn begin(mode: AssistMode, target_loops: u32) -> Command {
    Command::Begin {
        patient_id: Some("p1".into()),
        mode: Some(mode),
        target_loops: Some(target_loops),
    }
}

/// Point at arc length `s` along the closed polyline through `points`.
pub fn along(points: &[(f64, f64)], s: f64) -> (f64, f64) {
    let n = points.len();
    let lengths: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            (b.0 - a.0).hypot(b.1 - a.1)
        })
        .collect();
    let mut s = s.rem_euclid(lengths.iter().sum());
    for i in 0..n {
        if s <= lengths[i] {
            let (a, b) = (points[i], points[(i + 1) % n]);
            let f = s / lengths[i];
            return (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        }
        s -= lengths[i];
    }
    points[0]
}
