//! Deterministic engine for sealed-bid cloud VM auctions and trades settled
//! through a simulated ledger.

pub mod adjudicated;
pub mod auction;
pub mod commitment;
pub mod ladder;
pub mod ledger;
pub mod scenario;
pub mod session;
pub mod state;

pub use adjudicated::{ProviderConfig, SealedGrant, VMGrant, Verdict};
pub use auction::{AuctionOutcome, Candidate, Density, ProviderSupply};
pub use commitment::{Bid, CommitmentRecord, OpenVerdict, RefundPlan};
pub use ladder::LadderState;
pub use ledger::{Address, Coin, Hash256, Ledger, LedgerEvent, Signer, Time};
pub use session::{
    ContractSession, Deadlines, EscrowSlot, LadderTerms, ProtocolError, SessionConfig,
    TradeMode, TradeRecord, TradeStatus,
};
pub use state::{ContractPhase, ParticipantState, Rejection};
