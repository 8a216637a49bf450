//! The collaborative round: platform and participant state machines, the
//! messages between them, and the drivers that deliver those messages.

pub mod continuous;
pub mod coordinator;
pub mod message;
pub mod participant;
pub mod round;
pub mod runtime;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use continuous::{run_continuous, ContinuousOutcome, ContinuousRound};
pub use coordinator::{Coordinator, CoordinatorState, RosterInfo};
pub use message::{decode_frame, encode_frame, Body, Endpoint, FrameReader, Message, Reference};
pub use participant::{fingerprint, participant_optimize, Participant, ParticipantSettings, ParticipantState};
pub use round::{run_round, run_round_with, select_shared_set, RoundMetrics, RoundOutcome};

/// Platform phases, in the only order they may occur within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Distributing,
    CollectingReports,
    AwaitingUploads,
    Merged,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Distributing => "distributing",
            Phase::CollectingReports => "collecting_reports",
            Phase::AwaitingUploads => "awaiting_uploads",
            Phase::Merged => "merged",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
