//! Exact arithmetic over piecewise-constant rates and piecewise-linear
//! cumulatives on a bounded horizon.
//!
//! Rates (inflows, outflows, walk inflows) are [`StepFn`]: right-continuous
//! step functions, zero outside their support. Cumulatives, queue profiles,
//! delays, exit time maps and arrival maps are [`PLin`]: piecewise-linear
//! functions over the horizon. Everything is a [`Rat`], so all derived
//! quantities are exact and tests compare bit-for-bit.
//!
//! All values are immutable after construction; operations are pure.

mod plin;
mod rat;
mod step;

pub use plin::{pushforward, pushforward_dropping_atoms, PLin};
pub use rat::{rat, IntoRat, Rat};
pub use step::StepFn;

use crate::error::Error;
use crate::Result;

/// Planning horizon: flow is supported on the active part `[0, active_end]`;
/// the technical extension up to `end` gives arrival maps room to land.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Horizon {
    active_end: Rat,
    end: Rat,
}

impl Horizon {
    pub fn new(active_end: Rat, end: Rat) -> Result<Horizon> {
        if !active_end.is_positive() || active_end >= end {
            return Err(Error::InvalidInstance(format!(
                "horizon needs 0 < t_active_end < t_end, got {active_end} and {end}"
            )));
        }
        Ok(Horizon { active_end, end })
    }

    pub fn active_end(&self) -> &Rat {
        &self.active_end
    }

    pub fn end(&self) -> &Rat {
        &self.end
    }

    pub fn zero(&self) -> Rat {
        Rat::zero()
    }

    /// `[0, end]` as a pair, the domain of every time map.
    pub fn full(&self) -> (Rat, Rat) {
        (Rat::zero(), self.end.clone())
    }
}
