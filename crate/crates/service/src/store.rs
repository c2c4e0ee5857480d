//! Durable session storage: one directory per session holding an
//! append-only `events.jsonl` and a periodically rewritten `snapshot.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::{Event, Session};

const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

/// Events between snapshots.
pub const SNAPSHOT_EVERY: usize = 8;

#[derive(Serialize, Deserialize)]
struct Line {
    seq: usize,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    /// Number of log events folded into `session`.
    events: usize,
    session: Session,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).exists()
    }

    /// Appends event number `seq` and syncs it to disk.
    pub fn append(&self, id: &str, seq: usize, event: &Event) -> io::Result<()> {
        let dir = self.dir(id);
        if seq == 0 {
            fs::create_dir_all(&dir)?;
        }
        let mut line = serde_json::to_string(&Line { seq, event: event.clone() })?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS))?;
        f.write_all(line.as_bytes())?;
        f.sync_all()?;
        if seq == 0 {
            sync_dir(&dir);
        }
        Ok(())
    }

    /// Atomically replaces the snapshot with `session` after `events` events.
    pub fn snapshot(&self, id: &str, events: usize, session: &Session) -> io::Result<()> {
        let dir = self.dir(id);
        let tmp = dir.join("snapshot.json.tmp");
        let text = serde_json::to_vec(&Snapshot { events, session: session.clone() })?;
        let mut f = File::create(&tmp)?;
        f.write_all(&text)?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        sync_dir(&dir);
        Ok(())
    }

    /// Rebuilds every stored session, returning it with its event count.
    pub fn load_all(&self) -> io::Result<Vec<(Session, usize)>> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(s) = self.load(&id)? {
                out.push(s);
            }
        }
        Ok(out)
    }

    fn load(&self, id: &str) -> io::Result<Option<(Session, usize)>> {
        let dir = self.dir(id);
        let events = read_log(&dir.join(EVENTS))?;
        let snap: Option<Snapshot> = fs::read(dir.join(SNAPSHOT))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .filter(|s: &Snapshot| s.events <= events.len());
        let (mut session, start) = match snap {
            Some(s) => (s.session, s.events),
            None => match events.first().and_then(Session::from_created) {
                Some(s) => (s, 1),
                None => return Ok(None),
            },
        };
        for ev in &events[start..] {
            session.apply(ev);
        }
        Ok(Some((session, events.len())))
    }
}

/// Reads the log, cutting off a torn final line left by a crash mid-write.
/// Such a line was never acknowledged, so dropping it loses nothing.
fn read_log(path: &Path) -> io::Result<Vec<Event>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut valid = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        match serde_json::from_str::<Line>(buf.trim_end()) {
            Ok(l) if buf.ends_with('\n') && l.seq == events.len() => {
                events.push(l.event);
                valid += n as u64;
            }
            _ => break,
        }
    }
    let len = fs::metadata(path)?.len();
    if valid < len {
        OpenOptions::new().write(true).open(path)?.set_len(valid)?;
    }
    Ok(events)
}

fn sync_dir(dir: &Path) {
    // not supported everywhere; durability of the file contents is what matters
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}
