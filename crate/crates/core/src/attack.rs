//! Shared attacker interface.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::population::MembershipVector;
use crate::scalar::Scalar;
use crate::stats::Rng;

/// Per-individual membership scores and binary claims.
///
/// Higher confidence always means "more likely a member".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDecision {
    pub confidences: Vec<f64>,
    pub claims: Vec<bool>,
}

impl AttackDecision {
    pub fn new(confidences: Vec<f64>, claims: Vec<bool>) -> Self {
        debug_assert_eq!(confidences.len(), claims.len());
        Self { confidences, claims }
    }

    /// Claims where confidence ≥ `threshold`.
    pub fn at_least(confidences: Vec<f64>, threshold: f64) -> Self {
        let claims = confidences.iter().map(|&c| c >= threshold).collect();
        Self { confidences, claims }
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn num_claims(&self) -> usize {
        self.claims.iter().filter(|&&c| c).count()
    }

    /// Σ_k s_k b_k.
    pub fn hits(&self, b: &MembershipVector) -> usize {
        self.claims.iter().zip(b.bits()).filter(|(&s, &m)| s && m).count()
    }
}

/// What an attacker sees for one beacon.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a, T: Scalar> {
    pub release: ArrayView1<'a, T>,
    /// |B|, treated as public.
    pub beacon_size: usize,
    /// The true membership vector. Only oracle attackers that are given
    /// b_{-k} by definition may read it.
    pub truth: &'a MembershipVector,
}

pub trait Attacker<T: Scalar> {
    fn name(&self) -> String;
    fn attack(&mut self, obs: &Observation<'_, T>, rng: &mut Rng) -> Result<AttackDecision>;
}

/// Claims every individual.
pub struct AlwaysClaim;

/// Claims nobody.
pub struct NeverClaim;

impl<T: Scalar> Attacker<T> for AlwaysClaim {
    fn name(&self) -> String {
        "always-claim".into()
    }

    fn attack(&mut self, obs: &Observation<'_, T>, _: &mut Rng) -> Result<AttackDecision> {
        let k = obs.truth.len();
        Ok(AttackDecision::new(vec![1.0; k], vec![true; k]))
    }
}

impl<T: Scalar> Attacker<T> for NeverClaim {
    fn name(&self) -> String {
        "never-claim".into()
    }

    fn attack(&mut self, obs: &Observation<'_, T>, _: &mut Rng) -> Result<AttackDecision> {
        let k = obs.truth.len();
        Ok(AttackDecision::new(vec![0.0; k], vec![false; k]))
    }
}
