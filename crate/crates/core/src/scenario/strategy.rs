//! The closed catalog of scripted behaviours.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserStrategy {
    #[default]
    Honest,
    /// Commits and never opens.
    AbortAfterCommit,
    /// Opens with a different bid than the one committed to.
    OpenAltered { bundle: Vec<u64>, price: u64 },
    /// Confirms the first `s` ladder segments only.
    StopAfterSegment(u32),
    /// Disputes whatever grant arrives.
    FalseDispute,
    /// Uses the ladder grant without ever confirming.
    NeverConfirm,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderStrategy {
    #[default]
    Honest,
    NoDelivery,
    /// Delivers instances that miss the configuration, also under dispute.
    InvalidGrant,
    /// Delivers a bad grant, then a valid copy to the adjudicator.
    RepairInDispute,
    /// Ladder grant that stops working after segment `s`.
    ShutdownAfterSegment(u32),
    /// Delivers a bad grant and ignores disputes.
    SilentInDispute,
}

impl UserStrategy {
    pub fn is_honest(&self) -> bool {
        *self == UserStrategy::Honest
    }

    pub fn name(&self) -> &'static str {
        match self {
            UserStrategy::Honest => "Honest",
            UserStrategy::AbortAfterCommit => "AbortAfterCommit",
            UserStrategy::OpenAltered { .. } => "OpenAltered",
            UserStrategy::StopAfterSegment(_) => "StopAfterSegment",
            UserStrategy::FalseDispute => "FalseDispute",
            UserStrategy::NeverConfirm => "NeverConfirm",
        }
    }

    pub(crate) fn check_mode(&self, adjudicated: bool, types: usize) -> Result<(), String> {
        match self {
            UserStrategy::OpenAltered { bundle, .. } if bundle.len() != types => Err(format!(
                "altered bundle has {} entries for {types} VM types",
                bundle.len()
            )),
            UserStrategy::StopAfterSegment(_) | UserStrategy::NeverConfirm if adjudicated => {
                Err(format!("{} needs a ladder trade", self.name()))
            }
            UserStrategy::FalseDispute if !adjudicated => {
                Err("FalseDispute needs an adjudicated trade".into())
            }
            _ => Ok(()),
        }
    }

    /// Ladder segments this user is willing to confirm.
    pub(crate) fn confirm_limit(&self) -> u32 {
        match self {
            UserStrategy::StopAfterSegment(s) => *s,
            UserStrategy::NeverConfirm => 0,
            _ => u32::MAX,
        }
    }
}

impl ProviderStrategy {
    pub fn is_honest(&self) -> bool {
        *self == ProviderStrategy::Honest
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProviderStrategy::Honest => "Honest",
            ProviderStrategy::NoDelivery => "NoDelivery",
            ProviderStrategy::InvalidGrant => "InvalidGrant",
            ProviderStrategy::RepairInDispute => "RepairInDispute",
            ProviderStrategy::ShutdownAfterSegment(_) => "ShutdownAfterSegment",
            ProviderStrategy::SilentInDispute => "SilentInDispute",
        }
    }

    pub(crate) fn check_mode(&self, adjudicated: bool) -> Result<(), String> {
        match self {
            ProviderStrategy::RepairInDispute | ProviderStrategy::SilentInDispute
                if !adjudicated =>
            {
                Err(format!("{} needs an adjudicated trade", self.name()))
            }
            ProviderStrategy::ShutdownAfterSegment(_) if adjudicated => {
                Err("ShutdownAfterSegment needs a ladder trade".into())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn delivers(&self) -> bool {
        *self != ProviderStrategy::NoDelivery
    }

    /// Configuration quality of the first delivery.
    pub(crate) fn first_grant_ok(&self) -> bool {
        matches!(
            self,
            ProviderStrategy::Honest | ProviderStrategy::ShutdownAfterSegment(_)
        )
    }

    /// What the provider hands the adjudicator: `None` for silence, otherwise
    /// whether the copy is valid.
    pub(crate) fn reseal(&self) -> Option<bool> {
        match self {
            ProviderStrategy::Honest | ProviderStrategy::RepairInDispute => Some(true),
            ProviderStrategy::InvalidGrant => Some(false),
            _ => None,
        }
    }

    pub(crate) fn active_until(&self, segments: u32) -> u32 {
        match self {
            ProviderStrategy::ShutdownAfterSegment(s) => (*s).min(segments),
            _ => segments,
        }
    }
}
