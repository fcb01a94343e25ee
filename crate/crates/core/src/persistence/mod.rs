//! Durable storage: atomic plan rewrites, the results journal, the session
//! lock and journal-driven recovery.

mod atomic;
mod journal;
mod lock;
mod recovery;

use std::path::{Path, PathBuf};

pub use atomic::atomic_rewrite;
pub use journal::{
    append_journal, now_timestamp, parse_journal, read_journal, truncate_torn_tail, EntryKind,
    Journal, JournalContents, JournalEntry,
};
pub use lock::{
    acquire_lock, lock_path, locking_disabled, process_alive, read_lock, release_lock, LockGuard,
    LockHolder, LockOutcome, NO_LOCK_ENV,
};
pub use recovery::{latest_entries, load_plan, reconcile, recover, RecoveryReport};

/// Default journal location: `<plan>.journal.csv` next to the plan.
pub fn default_journal_path(plan_path: &Path) -> PathBuf {
    let mut name = plan_path.as_os_str().to_owned();
    name.push(".journal.csv");
    PathBuf::from(name)
}
