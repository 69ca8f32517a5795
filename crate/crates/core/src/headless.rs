//! Deterministic tick-by-tick replay of a command script against a recorded
//! scene, exporting CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scene::{load_scene, SceneError};
use crate::session::{parse_script, Event, ScriptLine, Session, SessionError};

#[derive(Debug, Error)]
pub enum HeadlessError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("cannot read script {path}: {source}")]
    ScriptIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("script line {line}: {message}")]
    BadScript { line: usize, message: String },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("cannot write {path}: {source}")]
    Export {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} command(s) failed; first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    CommandFaults(Vec<String>),
}

/// A command that was rejected during the run.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandFault {
    pub frame: usize,
    pub code: String,
    pub message: String,
    pub subject: Option<String>,
}

impl std::fmt::Display for CommandFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "frame {}: {}: {}", self.frame, self.code, self.message)?;
        if let Some(s) = &self.subject {
            write!(f, " (subject {s})")?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub session: Session,
    pub faults: Vec<CommandFault>,
    pub written: Vec<PathBuf>,
}

/// Replay `script` over every frame of the session's scene: for frame k,
/// apply the commands scheduled at k, then tick k.
pub fn replay(mut session: Session, script: &[ScriptLine]) -> Result<(Session, Vec<CommandFault>), HeadlessError> {
    let n = session.frame_count();
    if let Some(bad) = script.iter().position(|l| l.at_frame >= n) {
        return Err(HeadlessError::BadScript {
            line: bad + 1,
            message: format!("atFrame {} is past the last frame {}", script[bad].at_frame, n.saturating_sub(1)),
        });
    }
    if let Some(i) = script.windows(2).position(|w| w[1].at_frame < w[0].at_frame) {
        return Err(HeadlessError::BadScript { line: i + 2, message: "atFrame must not decrease".into() });
    }
    let mut faults = Vec::new();
    let mut next = 0;
    for k in 0..n {
        session.load_frame(k)?;
        while next < script.len() && script[next].at_frame <= k {
            for e in session.handle(script[next].envelope.clone()) {
                if let Event::Fault { code, message, subject_id } = e {
                    faults.push(CommandFault { frame: k, code, message, subject: subject_id });
                }
            }
            next += 1;
        }
        session.tick()?;
    }
    Ok((session, faults))
}

/// Write `variables.csv`, `plots/<graph>.csv` and `strobes/<entity>.csv`.
pub fn export_all(session: &Session, dir: &Path) -> Result<Vec<PathBuf>, HeadlessError> {
    let write = |path: PathBuf, text: String| -> Result<PathBuf, HeadlessError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| HeadlessError::Export { path: parent.to_path_buf(), source })?;
        }
        fs::write(&path, text).map_err(|source| HeadlessError::Export { path: path.clone(), source })?;
        Ok(path)
    };
    let engine = session.engine();
    let mut written = vec![write(dir.join("variables.csv"), engine.log().to_csv())?];
    for g in engine.graphs().values() {
        written.push(write(dir.join("plots").join(format!("{}.csv", g.id)), g.to_csv())?);
    }
    for id in engine.recordings().keys() {
        let set = engine.strobes(id).expect("recording exists");
        written.push(write(dir.join("strobes").join(format!("{id}.csv")), set.to_csv())?);
    }
    Ok(written)
}

/// Load, replay and export. Rejected commands fail the run after exporting.
pub fn run_headless(
    scene_path: impl AsRef<Path>,
    script_path: impl AsRef<Path>,
    export_dir: impl AsRef<Path>,
) -> Result<RunOutcome, HeadlessError> {
    let scene = load_scene(scene_path)?;
    let script_path = script_path.as_ref();
    let text = fs::read_to_string(script_path)
        .map_err(|source| HeadlessError::ScriptIo { path: script_path.to_path_buf(), source })?;
    let script = parse_script(&text).map_err(|(line, message)| HeadlessError::BadScript { line, message })?;
    let session = Session::recorded(scene)?;
    let (session, faults) = replay(session, &script)?;
    let written = export_all(&session, export_dir.as_ref())?;
    if !faults.is_empty() {
        return Err(HeadlessError::CommandFaults(faults.iter().map(ToString::to_string).collect()));
    }
    Ok(RunOutcome { session, faults, written })
}
