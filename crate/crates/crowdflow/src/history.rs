//! Recent-motion encoder: per-frame linear projection followed by a
//! unidirectional LSTM over the valid frames of the observation window; the
//! final hidden state is the history feature.

use crate::autodiff::{concat, lstm_step, Affine, LstmCell, ParamSet, Value};
use crate::igi::AgentNodes;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct HistorySettings {
    /// Window length L: up to this many most-recent states are encoded.
    pub window: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    /// Re-express window positions relative to the current position.
    pub relative: bool,
}

pub struct HistoryEncoder {
    pub settings: HistorySettings,
    input_proj: Affine,
    cell: LstmCell,
}

impl HistoryEncoder {
    pub fn new(params: &mut ParamSet, settings: HistorySettings, rng: &mut impl Rng) -> Self {
        HistoryEncoder {
            input_proj: Affine::init(params, "history.proj", settings.proj_dim, 6, rng),
            cell: LstmCell::init(params, "history.lstm", settings.proj_dim, settings.hidden, rng),
            settings,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.settings.hidden
    }

    /// Encode a window of states ordered oldest to newest; the last entry is
    /// the current frame and must be present. Missing (invalid) leading
    /// frames are skipped entirely, so padding the front of the window never
    /// changes the output.
    pub fn encode(&self, window: &[Option<AgentNodes>]) -> Value {
        assert!(
            window.last().is_some_and(|s| s.is_some()),
            "history window must end at a valid current frame"
        );
        let valid: Vec<&AgentNodes> = window.iter().flatten().collect();
        let current = valid.last().unwrap();
        let mut h = Value::vector(vec![0.0; self.settings.hidden]);
        let mut c = Value::vector(vec![0.0; self.settings.hidden]);
        for state in &valid {
            let pos = if self.settings.relative {
                state.position.sub(&current.position)
            } else {
                state.position.clone()
            };
            let x = self
                .input_proj
                .apply(&concat(&[&pos, &state.velocity, &state.acceleration]));
            let (h2, c2) = lstm_step(&self.cell, &x, &h, &c);
            h = h2;
            c = c2;
        }
        h
    }
}
