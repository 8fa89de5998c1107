//! Text-to-model projection driven by recognizer parse events.

use std::fmt;
use std::sync::Arc;

use crate::grammar::{Grammar, ParseEvent};
use crate::metamodel::Metamodel;
use crate::partial_model::{ModelDelta, ModelError, PartialModel};

mod clevr;

pub use clevr::{render as render_clevr, ClevrProjector, ClevrState};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProjectError {
    #[error("parse events do not extend the projected prefix at byte {at}")]
    InconsistentEvents { at: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("text is not in the grammar's language prefix set")]
    DeadPrefix,
}

/// An artifact-specific mapping from parse events to model deltas.
///
/// Implementations must be pure: the same state, events and token always
/// give the same result, so tentative projections of different candidate
/// tokens can share one committed state.
pub trait Projector: Send + Sync {
    type State: Clone + PartialEq + fmt::Debug + Send + Sync;

    fn name(&self) -> &str;

    fn init(&self) -> (Self::State, ModelDelta);

    /// `events` are what the recognizer reported while consuming `token`
    /// from the prefix that `state` has seen.
    fn project_token(
        &self,
        state: &Self::State,
        events: &[ParseEvent],
        token: &[u8],
    ) -> Result<(Self::State, ModelDelta), ProjectError>;
}

/// Projects `text` in one shot, starting from the empty model.
pub fn project_text<P: Projector>(
    projector: &P,
    grammar: &Arc<Grammar>,
    metamodel: &Arc<Metamodel>,
    text: &[u8],
) -> Result<(P::State, PartialModel), ProjectError> {
    let (state, init) = projector.init();
    let mut pm = PartialModel::new(Arc::clone(metamodel)).apply_delta(&init)?;
    let (rs, events) = grammar.initial_state().advance_with_events(text);
    if rs.is_dead() {
        return Err(ProjectError::DeadPrefix);
    }
    let (state, delta) = projector.project_token(&state, &events, text)?;
    pm.apply_in_place(&delta)?;
    Ok((state, pm))
}

/// Checks that the consumed spans in `events` tile `from..from + len`
/// exactly, and returns the ends of completed `rule` productions.
pub fn check_events(
    events: &[ParseEvent],
    from: usize,
    len: usize,
    rule: &str,
) -> Result<Vec<usize>, ProjectError> {
    let mut at = from;
    let mut completed = Vec::new();
    for ev in events {
        match ev {
            ParseEvent::ConsumedBytes { span } => {
                if span.start != at {
                    return Err(ProjectError::InconsistentEvents { at });
                }
                at = span.end;
            }
            ParseEvent::CompletedProduction { name, span } if &**name == rule => {
                if span.end < from || span.end > from + len {
                    return Err(ProjectError::InconsistentEvents { at: span.end });
                }
                completed.push(span.end);
            }
            _ => {}
        }
    }
    if at != from + len {
        return Err(ProjectError::InconsistentEvents { at });
    }
    Ok(completed)
}
