//! Acceptance suite: one line per criterion, PASS or FAIL.
//!
//! `cargo test -p anoise-cli --test acceptance` runs all nine; pass criterion
//! numbers after `--` to run a subset. Criteria 7 and 8 need the CIFAR-10
//! binary files (`ANOISE_CIFAR10_DIR`); without them they print FAIL marked
//! as blocked, and only unblocked failures make the process exit non-zero.

use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Why a criterion did not pass.
#[derive(Debug)]
pub enum Failure {
    Fail(String),
    Blocked(String),
}

macro_rules! impl_from_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Fail(e.to_string())
            }
        }
    )*};
}
impl_from_error!(anoise::Error, anoise_hw::HwError, anoise_cli::CliError);

pub type Check = Result<String, Failure>;

pub fn fail(msg: impl Display) -> Failure {
    Failure::Fail(msg.to_string())
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::fail(format!($($arg)+)));
        }
    };
}

mod gradients;
mod hardware;
mod identity;
mod overhead;
mod placement;
mod rng_chain;
mod trend;

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
    run: fn(&mut trend::Shared) -> Check,
}

const MIN: u64 = 60;

fn criteria() -> Vec<Criterion> {
    let c = |id, title, secs, run| Criterion { id, title, limit: Duration::from_secs(secs), run };
    vec![
        c(1, "gradient oracle", MIN, |_| gradients::run()),
        c(2, "identity at init", MIN, |_| identity::run()),
        c(3, "placement oracle", MIN, |_| placement::run()),
        c(4, "RNG chain", MIN, |_| rng_chain::run()),
        c(5, "hardware functional equivalence", MIN, |_| hardware::functional()),
        c(6, "cycle-model equivalence", MIN, |_| hardware::cycles()),
        c(7, "end-to-end trend on CIFAR-10", 30 * MIN, trend::end_to_end),
        c(8, "noise-sweep monotonicity on CIFAR-10", 45 * MIN, trend::sweep),
        c(9, "overhead accounting", MIN, |_| overhead::run()),
    ]
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = trend::Shared::default();
    let mut hard_failures = 0;
    for c in criteria() {
        if !wanted.is_empty() && !wanted.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut shared)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(fail(format!("panicked: {msg}")))
            });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(fail(format!(
                "{detail}; but took {:.1}s, over the {}s limit",
                elapsed.as_secs_f64(),
                c.limit.as_secs()
            ))),
            other => other,
        };
        let line = match &outcome {
            Ok(detail) => format!("PASS  {detail}"),
            Err(Failure::Fail(why)) => {
                hard_failures += 1;
                format!("FAIL  {why}")
            }
            Err(Failure::Blocked(why)) => format!("FAIL  blocked: {why}"),
        };
        println!("criterion {} ({}): {line} [{:.1}s]", c.id, c.title, elapsed.as_secs_f64());
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
