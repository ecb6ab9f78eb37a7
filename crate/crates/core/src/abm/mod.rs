//! Daily contact, transmission and progression loop.

mod contacts;
mod disease;
mod sim;

pub use contacts::{DayContacts, MeetingsLog};
pub use disease::{progress_disease, AgentDisease, DiseaseParams, DiseaseState, DwellMode, Transition};
pub use sim::{
    no_tests, DayLog, DayObservation, QuarantinePolicy, SimConfig, Simulation, StateCounts, TestResult, TestSelector,
};
