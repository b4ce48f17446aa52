use std::io::Write;

use serde_json::json;

use super::{Env, EnvSpec, StepResult};
use crate::error::Result;

/// Wraps an environment and writes one JSON line per reset/step.
pub struct TracingEnv {
    inner: Box<dyn Env>,
    out: Box<dyn Write + Send>,
    seed: u64,
    t: usize,
}

impl TracingEnv {
    pub fn new(inner: Box<dyn Env>, out: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            out,
            seed: 0,
            t: 0,
        }
    }

    fn emit(&mut self, actions: Option<&[usize]>, r: &StepResult) {
        let line = json!({
            "seed": self.seed,
            "t": self.t,
            "actions": actions,
            "reward": r.reward,
            "done": r.done,
            "won": r.won,
            "state": r.state,
            "obs": r.obs,
        });
        if let Err(e) = writeln!(self.out, "{line}") {
            log::warn!("trajectory dump write failed: {e}");
        }
    }
}

impl Env for TracingEnv {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.seed = seed;
        self.t = 0;
        let r = self.inner.reset(seed);
        self.emit(None, &r);
        r
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        let r = self.inner.step(joint_action)?;
        self.t += 1;
        self.emit(Some(joint_action), &r);
        if r.done {
            let _ = self.out.flush();
        }
        Ok(r)
    }

    fn avail_actions(&self, agent: usize) -> Result<Vec<bool>> {
        self.inner.avail_actions(agent)
    }
}
