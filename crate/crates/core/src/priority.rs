//! Per-outage priority weights.
//!
//! Fire/police/safety outages receive `big_m * gamma(category)`; every other
//! outage is weighted by its customer count. With `big_m * gamma_fps3` above
//! the largest admissible customer count, any FPS outage outweighs any
//! non-FPS outage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, OutageTicket};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorityError {
    #[error("priority config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityConfig {
    pub big_m: f64,
    /// Coefficients for FPS1, FPS2, FPS3 in that order.
    pub gamma: [f64; 3],
    /// Largest customer count the dominance guarantee must cover.
    pub q_max: u32,
    /// Optional multipliers applied to non-FPS weights. Empty by default;
    /// this is an extension hook, not part of the base weighting.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub category_multiplier: BTreeMap<Category, f64>,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig {
            big_m: 1e6,
            gamma: [3.0, 2.0, 1.0],
            q_max: 100_000,
            category_multiplier: BTreeMap::new(),
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<(), PriorityError> {
        let [g1, g2, g3] = self.gamma;
        if !(self.big_m.is_finite() && self.big_m > 0.0) {
            return Err(PriorityError::Config(format!("big_m must be positive, got {}", self.big_m)));
        }
        if !(g1 > g2 && g2 > g3 && g3 > 0.0) || !g1.is_finite() {
            return Err(PriorityError::Config(format!(
                "gamma must satisfy FPS1 > FPS2 > FPS3 > 0, got {:?}",
                self.gamma
            )));
        }
        let max_multiplier = self.category_multiplier.values().copied().fold(1.0_f64, f64::max);
        for (cat, m) in &self.category_multiplier {
            if cat.is_fps() {
                return Err(PriorityError::Config(format!("multiplier not allowed for {cat}")));
            }
            if !(m.is_finite() && *m > 0.0) {
                return Err(PriorityError::Config(format!("multiplier for {cat} must be positive")));
            }
        }
        if self.big_m * g3 <= self.q_max as f64 * max_multiplier {
            return Err(PriorityError::Config(format!(
                "big_m * gamma_fps3 = {} must exceed q_max = {} for FPS dominance",
                self.big_m * g3,
                self.q_max as f64 * max_multiplier
            )));
        }
        Ok(())
    }

    pub fn gamma_for(&self, category: Category) -> Option<f64> {
        match category {
            Category::FPS1 => Some(self.gamma[0]),
            Category::FPS2 => Some(self.gamma[1]),
            Category::FPS3 => Some(self.gamma[2]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedOutage {
    pub ticket: OutageTicket,
    pub y: u8,
    pub weight: f64,
}

/// 1 for FPS1/FPS2/FPS3, 0 otherwise.
pub fn fps_indicator(ticket: &OutageTicket) -> u8 {
    u8::from(ticket.category.is_fps())
}

pub fn weight(ticket: &OutageTicket, cfg: &PriorityConfig) -> Result<WeightedOutage, PriorityError> {
    cfg.validate()?;
    Ok(weight_unchecked(ticket, cfg))
}

pub(crate) fn weight_unchecked(ticket: &OutageTicket, cfg: &PriorityConfig) -> WeightedOutage {
    let y = fps_indicator(ticket);
    let w = match cfg.gamma_for(ticket.category) {
        Some(gamma) => cfg.big_m * gamma,
        None => {
            let m = cfg.category_multiplier.get(&ticket.category).copied().unwrap_or(1.0);
            ticket.customers as f64 * m
        }
    };
    WeightedOutage { ticket: ticket.clone(), y, weight: w }
}

pub fn weigh_all(tickets: &[OutageTicket], cfg: &PriorityConfig) -> Result<Vec<WeightedOutage>, PriorityError> {
    cfg.validate()?;
    Ok(tickets.iter().map(|t| weight_unchecked(t, cfg)).collect())
}
