//! Crew allocation for storm damage assessment.
//!
//! Outages are weighted by priority class, crews are matched to outages one
//! run at a time by net profit (weight minus travel cost), and three runs
//! build a short pipeline per crew. A replay harness runs the planner and a
//! nearest-job baseline over the same timed outage stream and compares the
//! resulting routes.

pub mod bau;
pub mod geo;
pub mod model;
pub mod planner;
pub mod priority;
pub mod registry;
pub mod replay;
pub mod solver;
pub mod travel;
