//! Single-writer lock on a plan file.
//!
//! The lock is a sibling file `<plan>.lock` holding two lines: the owning
//! session id and the owner's process id. It is created with `O_EXCL`. A
//! lock whose process no longer exists is stale and gets taken over.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment switch that turns locking off. Only for test harnesses that
/// manage exclusivity themselves.
pub const NO_LOCK_ENV: &str = "EXPTRIAL_NO_LOCK";

pub fn locking_disabled() -> bool {
    std::env::var(NO_LOCK_ENV).is_ok_and(|v| v == "1")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockHolder {
    pub session_id: String,
    pub pid: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockOutcome {
    Acquired,
    /// Taken over from a holder whose process is gone.
    Stolen(LockHolder),
}

pub fn lock_path(plan_path: &Path) -> PathBuf {
    let mut name = plan_path.as_os_str().to_owned();
    name.push(".lock");
    PathBuf::from(name)
}

pub fn process_alive(pid: u32) -> bool {
    #[cfg(unix)]
    {
        let Ok(pid) = libc::pid_t::try_from(pid) else {
            return false;
        };
        if pid <= 0 {
            return false;
        }
        if unsafe { libc::kill(pid, 0) } == 0 {
            return true;
        }
        std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
    }
    #[cfg(not(unix))]
    {
        let _ = pid;
        true
    }
}

fn parse_holder(text: &str) -> Option<LockHolder> {
    let mut lines = text.lines();
    let session_id = lines.next()?.trim().to_string();
    let pid = lines.next()?.trim().parse().ok()?;
    Some(LockHolder { session_id, pid })
}

/// Current holder, if a lock file exists. `Some(None)` means the file is
/// present but unreadable as a lock.
fn read_raw(path: &Path) -> Result<Option<Option<LockHolder>>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(parse_holder(&text))),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) if e.kind() == ErrorKind::InvalidData => Ok(Some(None)),
        Err(e) => Err(Error::storage(path, e)),
    }
}

pub fn read_lock(plan_path: &Path) -> Result<Option<LockHolder>> {
    Ok(read_raw(&lock_path(plan_path))?.flatten())
}

fn create_exclusive(path: &Path, session_id: &str) -> std::io::Result<()> {
    let mut file = OpenOptions::new().write(true).create_new(true).open(path)?;
    file.write_all(format!("{session_id}\n{}\n", std::process::id()).as_bytes())?;
    file.sync_all()
}

pub fn acquire_lock(plan_path: &Path, session_id: &str) -> Result<LockOutcome> {
    let path = lock_path(plan_path);
    let mut stolen = None;
    for _ in 0..3 {
        match create_exclusive(&path, session_id) {
            Ok(()) => {
                return Ok(match stolen {
                    Some(holder) => LockOutcome::Stolen(holder),
                    None => LockOutcome::Acquired,
                })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {}
            Err(e) => return Err(Error::storage(&path, e)),
        }
        let holder = match read_raw(&path)? {
            None => continue,
            Some(Some(h)) if process_alive(h.pid) => {
                return Err(Error::AlreadyLocked {
                    session_id: h.session_id,
                    pid: h.pid,
                })
            }
            Some(h) => h.unwrap_or(LockHolder {
                session_id: String::new(),
                pid: 0,
            }),
        };
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(Error::storage(&path, e)),
        }
        stolen = Some(holder);
    }
    // lost every race against other acquirers
    match read_lock(plan_path)? {
        Some(h) => Err(Error::AlreadyLocked {
            session_id: h.session_id,
            pid: h.pid,
        }),
        None => Err(Error::storage(&path, "could not create lock file")),
    }
}

/// Removes the lock if `session_id` owns it. Someone else's lock, or no
/// lock at all, is left alone.
pub fn release_lock(plan_path: &Path, session_id: &str) -> Result<()> {
    let path = lock_path(plan_path);
    match read_raw(&path)? {
        Some(Some(h)) if h.session_id == session_id => match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::storage(&path, e)),
        },
        _ => Ok(()),
    }
}

/// Releases the lock when dropped.
#[derive(Debug)]
pub struct LockGuard {
    plan_path: PathBuf,
    session_id: String,
    released: bool,
}

impl LockGuard {
    pub fn acquire(plan_path: &Path, session_id: &str) -> Result<(Self, LockOutcome)> {
        let outcome = acquire_lock(plan_path, session_id)?;
        Ok((
            Self {
                plan_path: plan_path.to_path_buf(),
                session_id: session_id.to_string(),
                released: false,
            },
            outcome,
        ))
    }

    pub fn release(mut self) -> Result<()> {
        self.released = true;
        release_lock(&self.plan_path, &self.session_id)
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        if !self.released {
            let _ = release_lock(&self.plan_path, &self.session_id);
        }
    }
}
