//! Crash points for fault-injection testing.
//!
//! Setting `EXPTRIAL_CRASH_AT=<point>` (or `<point>:<n>`) makes the process
//! kill itself with SIGKILL the first (or `n`-th) time execution reaches the
//! named point. Unset, every check is a single atomic load.
//!
//! Points, in the order a result is persisted:
//!
//! | point            | state left behind                                  |
//! |------------------|----------------------------------------------------|
//! | `before_journal` | nothing written for the in-flight trial            |
//! | `mid_journal`    | half a journal line, no terminator                 |
//! | `after_journal`  | journal line durable, plan not rewritten           |
//! | `mid_rewrite`    | half-written temp file, plan untouched             |
//! | `before_rename`  | complete temp file synced, plan untouched          |
//! | `after_rewrite`  | journal and plan both durable                      |

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

pub const ENV_VAR: &str = "EXPTRIAL_CRASH_AT";

pub const POINTS: [&str; 6] = [
    "before_journal",
    "mid_journal",
    "after_journal",
    "mid_rewrite",
    "before_rename",
    "after_rewrite",
];

struct Plan {
    point: String,
    nth: usize,
    hits: AtomicUsize,
}

fn configured() -> Option<&'static Plan> {
    static PLAN: OnceLock<Option<Plan>> = OnceLock::new();
    PLAN.get_or_init(|| {
        let raw = std::env::var(ENV_VAR).ok()?;
        let (point, nth) = match raw.split_once(':') {
            Some((p, n)) => (p.to_string(), n.parse().ok()?),
            None => (raw, 1),
        };
        Some(Plan {
            point,
            nth,
            hits: AtomicUsize::new(0),
        })
    })
    .as_ref()
}

/// True exactly when this visit to `point` is the configured crash. The
/// caller performs any partial work and then calls [`crash`].
pub fn armed(point: &str) -> bool {
    match configured() {
        Some(plan) if plan.point == point => {
            plan.hits.fetch_add(1, Ordering::SeqCst) + 1 == plan.nth
        }
        _ => false,
    }
}

/// Kills the current process without unwinding or flushing.
pub fn crash() -> ! {
    #[cfg(unix)]
    unsafe {
        libc::kill(libc::getpid(), libc::SIGKILL);
    }
    std::process::abort()
}

pub fn point(name: &str) {
    if armed(name) {
        crash();
    }
}
