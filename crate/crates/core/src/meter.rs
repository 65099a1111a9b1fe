//! Time accounting for planning budgets and effort metrics.
//!
//! A [`Meter`] runs either on the wall clock or on a counted clock. The
//! counted clock advances only by explicit [`Cost`] charges, so budgets and
//! timing metrics become reproducible bit for bit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    #[default]
    Counted,
}

impl std::str::FromStr for ClockMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wall" => Ok(ClockMode::Wall),
            "counted" => Ok(ClockMode::Counted),
            other => Err(format!("unknown clock mode `{other}` (expected wall|counted)")),
        }
    }
}

/// Units of work charged to a counted clock, in nanoseconds of virtual time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cost {
    /// One scenario advanced by one action (transition, observation, reward).
    ScenarioStep,
    /// One scenario-step of the collision lookahead heuristic.
    LookaheadStep,
    /// Rendering one intention image.
    Render,
    /// One deterministic pass through the convolutional and recurrent trunk.
    TrunkForward,
    /// One dropout-masked pass through the output heads.
    HeadPass,
    /// One node expansion of the path search.
    SearchExpansion,
}

impl Cost {
    pub fn nanos(self) -> u64 {
        match self {
            Cost::ScenarioStep => 600,
            Cost::LookaheadStep => 40,
            Cost::Render => 60_000,
            Cost::TrunkForward => 900_000,
            Cost::HeadPass => 400,
            Cost::SearchExpansion => 700,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Meter {
    mode: ClockMode,
    start: Instant,
    counted_ns: u64,
}

impl Meter {
    pub fn start(mode: ClockMode) -> Self {
        Meter { mode, start: Instant::now(), counted_ns: 0 }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn charge(&mut self, cost: Cost) {
        self.charge_n(cost, 1);
    }

    pub fn charge_n(&mut self, cost: Cost, n: u64) {
        if self.mode == ClockMode::Counted {
            self.counted_ns += cost.nanos() * n;
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        match self.mode {
            ClockMode::Wall => self.start.elapsed().as_secs_f64() * 1e3,
            ClockMode::Counted => self.counted_ns as f64 / 1e6,
        }
    }

    /// Runs `f`, returning its result and the milliseconds it consumed on
    /// this meter's clock. Counted clocks charge `costs` for the call.
    pub fn timed<R>(&mut self, costs: &[(Cost, u64)], f: impl FnOnce() -> R) -> (R, f64) {
        let before = self.elapsed_ms();
        let out = f();
        for &(c, n) in costs {
            self.charge_n(c, n);
        }
        (out, self.elapsed_ms() - before)
    }
}
