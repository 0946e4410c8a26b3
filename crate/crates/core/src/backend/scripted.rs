use std::collections::VecDeque;
use std::sync::Mutex;

use super::{Backend, PredictionSet};
use crate::error::BackendError;
use crate::state::SequenceState;

type PredictFn = dyn Fn(&SequenceState) -> Result<PredictionSet, BackendError> + Send + Sync;

/// Backend driven by test code: either a pure function of the state, or a
/// fixed queue of canned prediction sets served in call order.
pub struct ScriptedBackend {
    source: Source,
    reevaluates: bool,
}

enum Source {
    Function(Box<PredictFn>),
    Queue(Mutex<VecDeque<PredictionSet>>),
}

impl ScriptedBackend {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SequenceState) -> Result<PredictionSet, BackendError> + Send + Sync + 'static,
    {
        Self {
            source: Source::Function(Box::new(f)),
            reevaluates: true,
        }
    }

    /// Serves `sets` one per call; an exhausted queue is a transport error.
    pub fn from_sequence(sets: impl IntoIterator<Item = PredictionSet>) -> Self {
        Self {
            source: Source::Queue(Mutex::new(sets.into_iter().collect())),
            reevaluates: true,
        }
    }

    /// Declares that the backend cannot score committed tokens.
    pub fn without_reevaluation(mut self) -> Self {
        self.reevaluates = false;
        self
    }
}

impl Backend for ScriptedBackend {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        match &self.source {
            Source::Function(f) => f(state),
            Source::Queue(q) => q
                .lock()
                .expect("scripted queue poisoned")
                .pop_front()
                .ok_or_else(|| BackendError::Transport("script exhausted".into())),
        }
    }

    fn reevaluates_committed(&self) -> bool {
        self.reevaluates
    }
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.source {
            Source::Function(_) => "function",
            Source::Queue(_) => "queue",
        };
        f.debug_struct("ScriptedBackend")
            .field("source", &kind)
            .field("reevaluates", &self.reevaluates)
            .finish()
    }
}
