//! Deterministic single-chain ledger.
//!
//! Accounts hold integer coin balances. Contract accounts cannot be signed for;
//! coins leave them only through [`Ledger::escrow_out`], which is reachable from
//! contract code inside this crate. Every balance mutation appends exactly one
//! [`LedgerEvent`], so folding the log over the genesis balances reproduces the
//! final state.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Digest used for addresses and bid commitments. Pinned for the whole
/// simulation so traces are reproducible.
pub const HASH_ALGORITHM: &str = "sha256";

/// Commitment nonce length in bytes (256-bit security parameter).
pub const NONCE_LEN: usize = 32;

const ADDRESS_DOMAIN: &[u8] = b"fairvm/address/";
const CONTRACT_DOMAIN: &[u8] = b"fairvm/contract/";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address([u8; 20]);

impl Address {
    /// Truncated digest of an identity seed.
    pub fn from_seed(seed: &[u8]) -> Self {
        Self::derive(ADDRESS_DOMAIN, seed)
    }

    fn derive(domain: &[u8], seed: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(domain);
        hasher.update(seed);
        let digest = hasher.finalize();
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest[..20]);
        Address(out)
    }

    pub const fn from_bytes(bytes: [u8; 20]) -> Self {
        Address(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex digits, for human-facing output.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.short())
    }
}

impl FromStr for Address {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| TraceParseError::Address(s.to_string()))?;
        let bytes: [u8; 20] = bytes
            .try_into()
            .map_err(|_| TraceParseError::Address(s.to_string()))?;
        Ok(Address(bytes))
    }
}

/// An amount of indivisible base units.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Coin(pub u64);

impl Coin {
    pub const ZERO: Coin = Coin(0);

    pub fn checked_add(self, rhs: Coin) -> Option<Coin> {
        self.0.checked_add(rhs.0).map(Coin)
    }

    pub fn checked_sub(self, rhs: Coin) -> Option<Coin> {
        self.0.checked_sub(rhs.0).map(Coin)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Coin {
    type Output = Coin;

    fn add(self, rhs: Coin) -> Coin {
        self.checked_add(rhs).expect("coin overflow")
    }
}

impl AddAssign for Coin {
    fn add_assign(&mut self, rhs: Coin) {
        *self = *self + rhs;
    }
}

impl Sub for Coin {
    type Output = Coin;

    fn sub(self, rhs: Coin) -> Coin {
        self.checked_sub(rhs).expect("coin underflow")
    }
}

impl SubAssign for Coin {
    fn sub_assign(&mut self, rhs: Coin) {
        *self = *self - rhs;
    }
}

impl Sum for Coin {
    fn sum<I: Iterator<Item = Coin>>(iter: I) -> Coin {
        iter.fold(Coin::ZERO, |acc, c| acc + c)
    }
}

impl fmt::Display for Coin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", &self.to_hex()[..16])
    }
}

/// Abstract logical time unit.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Time(pub u64);

impl Add<u64> for Time {
    type Output = Time;

    fn add(self, rhs: u64) -> Time {
        Time(self.0 + rhs)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LogicalClock {
    pub now: Time,
}

/// Models a key pair: the seed is the secret, the address its public digest.
#[derive(Clone)]
pub struct Signer {
    seed: Vec<u8>,
    address: Address,
}

impl Signer {
    pub fn new(seed: impl AsRef<[u8]>) -> Self {
        let seed = seed.as_ref().to_vec();
        let address = Address::from_seed(&seed);
        Signer { seed, address }
    }

    /// A signer that claims `address` while holding some other seed.
    pub fn impersonate(address: Address, seed: impl AsRef<[u8]>) -> Self {
        Signer {
            seed: seed.as_ref().to_vec(),
            address,
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    fn proves(&self, address: Address) -> bool {
        self.address == address && Address::from_seed(&self.seed) == address
    }
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signer")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

/// Digest binding a bid to its nonce, owner and session:
/// `H(bid_bytes ‖ nonce ‖ addr ‖ sid)`.
///
/// The nonce and address are fixed-width and the session id is a big-endian
/// `u64`, so the concatenation is unambiguous.
pub fn commit_hash(
    bid_bytes: &[u8],
    nonce: &[u8],
    addr: Address,
    sid: u64,
) -> Result<Hash256, LedgerError> {
    if nonce.len() != NONCE_LEN {
        return Err(LedgerError::NonceLength {
            expected: NONCE_LEN,
            actual: nonce.len(),
        });
    }
    let mut hasher = Sha256::new();
    hasher.update(bid_bytes);
    hasher.update(nonce);
    hasher.update(addr.as_bytes());
    hasher.update(sid.to_be_bytes());
    Ok(Hash256(hasher.finalize().into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Transfer,
    EscrowIn,
    EscrowOut,
    StateChange,
    Reject,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Transfer => "Transfer",
            EventKind::EscrowIn => "EscrowIn",
            EventKind::EscrowOut => "EscrowOut",
            EventKind::StateChange => "StateChange",
            EventKind::Reject => "Reject",
        }
    }

    /// Whether events of this kind move coins.
    pub fn moves_coins(self) -> bool {
        matches!(
            self,
            EventKind::Transfer | EventKind::EscrowIn | EventKind::EscrowOut
        )
    }
}

impl FromStr for EventKind {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Transfer" => EventKind::Transfer,
            "EscrowIn" => EventKind::EscrowIn,
            "EscrowOut" => EventKind::EscrowOut,
            "StateChange" => EventKind::StateChange,
            "Reject" => EventKind::Reject,
            other => return Err(TraceParseError::Kind(other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEvent {
    pub kind: EventKind,
    pub from: Address,
    pub to: Address,
    pub amount: Coin,
    pub at: Time,
    pub note: String,
}

impl LedgerEvent {
    /// Parses one line produced by the `Display` impl.
    pub fn parse_line(line: &str) -> Result<Self, TraceParseError> {
        let mut rest = line;
        let mut field = |name: &str| -> Result<&str, TraceParseError> {
            let prefix_len = name.len() + 1;
            if !rest.starts_with(name) || rest.as_bytes().get(name.len()) != Some(&b'=') {
                return Err(TraceParseError::Field(name.to_string()));
            }
            let body = &rest[prefix_len..];
            let (value, tail) = body.split_once(' ').unwrap_or((body, ""));
            rest = tail;
            Ok(value)
        };
        let kind = field("kind")?.parse()?;
        let from = field("from")?.parse()?;
        let to = field("to")?.parse()?;
        let amount = field("amount")?
            .parse()
            .map(Coin)
            .map_err(|_| TraceParseError::Field("amount".into()))?;
        let at = field("at")?
            .parse()
            .map(Time)
            .map_err(|_| TraceParseError::Field("at".into()))?;
        let note = rest
            .strip_prefix("note=")
            .ok_or_else(|| TraceParseError::Field("note".into()))?
            .to_string();
        Ok(LedgerEvent {
            kind,
            from,
            to,
            amount,
            at,
            note,
        })
    }
}

impl fmt::Display for LedgerEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} from={} to={} amount={} at={} note={}",
            self.kind.as_str(),
            self.from,
            self.to,
            self.amount,
            self.at,
            self.note
        )
    }
}

/// Renders an event log, one event per line.
pub fn render_trace(events: &[LedgerEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&event.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<LedgerEvent>, TraceParseError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LedgerEvent::parse_line)
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("bad or missing field `{0}`")]
    Field(String),
    #[error("unknown event kind `{0}`")]
    Kind(String),
    #[error("bad address `{0}`")]
    Address(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("empty seed")]
    EmptySeed,
    #[error("address {0} already exists")]
    DuplicateAccount(Address),
    #[error("unknown account {0}")]
    UnknownAccount(Address),
    #[error("signer cannot prove ownership of {0}")]
    Authentication(Address),
    #[error("account {address} holds {balance}, needs {needed}")]
    InsufficientBalance {
        address: Address,
        balance: Coin,
        needed: Coin,
    },
    #[error("{0} is not a contract account")]
    NotContract(Address),
    #[error("time cannot rewind from {now} to {to}")]
    TimeRewind { now: Time, to: Time },
    #[error("nonce must be {expected} bytes, got {actual}")]
    NonceLength { expected: usize, actual: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AccountKind {
    External,
    Contract,
}

#[derive(Clone, Debug)]
struct Account {
    balance: Coin,
    kind: AccountKind,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    clock: LogicalClock,
    accounts: BTreeMap<Address, Account>,
    genesis: BTreeMap<Address, Coin>,
    events: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_account(
        &mut self,
        seed: impl AsRef<[u8]>,
        initial_balance: Coin,
    ) -> Result<Address, LedgerError> {
        let seed = seed.as_ref();
        if seed.is_empty() {
            return Err(LedgerError::EmptySeed);
        }
        self.insert(
            Address::from_seed(seed),
            initial_balance,
            AccountKind::External,
        )
    }

    /// Registers a contract account with zero balance.
    pub fn deploy_contract(&mut self, label: &str) -> Result<Address, LedgerError> {
        let address = Address::derive(CONTRACT_DOMAIN, label.as_bytes());
        self.insert(address, Coin::ZERO, AccountKind::Contract)
    }

    fn insert(
        &mut self,
        address: Address,
        balance: Coin,
        kind: AccountKind,
    ) -> Result<Address, LedgerError> {
        if self.accounts.contains_key(&address) {
            return Err(LedgerError::DuplicateAccount(address));
        }
        self.accounts.insert(address, Account { balance, kind });
        self.genesis.insert(address, balance);
        Ok(address)
    }

    pub fn now(&self) -> Time {
        self.clock.now
    }

    pub fn clock(&self) -> LogicalClock {
        self.clock
    }

    pub fn advance_time(&mut self, to: Time) -> Result<(), LedgerError> {
        if to < self.clock.now {
            return Err(LedgerError::TimeRewind {
                now: self.clock.now,
                to,
            });
        }
        self.clock.now = to;
        Ok(())
    }

    pub fn balance(&self, address: Address) -> Option<Coin> {
        self.accounts.get(&address).map(|a| a.balance)
    }

    pub fn balances(&self) -> BTreeMap<Address, Coin> {
        self.accounts
            .iter()
            .map(|(addr, acct)| (*addr, acct.balance))
            .collect()
    }

    pub fn genesis(&self) -> &BTreeMap<Address, Coin> {
        &self.genesis
    }

    pub fn total_supply(&self) -> u128 {
        self.accounts.values().map(|a| a.balance.0 as u128).sum()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn is_contract(&self, address: Address) -> bool {
        matches!(
            self.accounts.get(&address),
            Some(Account {
                kind: AccountKind::Contract,
                ..
            })
        )
    }

    /// Returns the signer's address iff it proves ownership of an existing
    /// external account (the simulation's `msg.sender`).
    pub fn authenticate(&self, signer: &Signer) -> Option<Address> {
        let addr = signer.address();
        match self.accounts.get(&addr) {
            Some(acct) if acct.kind == AccountKind::External && signer.proves(addr) => Some(addr),
            _ => None,
        }
    }

    pub fn transfer(
        &mut self,
        signer: &Signer,
        to: Address,
        amount: Coin,
    ) -> Result<LedgerEvent, LedgerError> {
        self.signed_move(signer, to, amount, EventKind::Transfer, "transfer")
    }

    /// Locks coins from a signer into a contract account.
    pub fn escrow_in(
        &mut self,
        signer: &Signer,
        contract: Address,
        amount: Coin,
        note: &str,
    ) -> Result<LedgerEvent, LedgerError> {
        if !self.is_contract(contract) {
            return Err(LedgerError::NotContract(contract));
        }
        self.signed_move(signer, contract, amount, EventKind::EscrowIn, note)
    }

    fn signed_move(
        &mut self,
        signer: &Signer,
        to: Address,
        amount: Coin,
        kind: EventKind,
        note: &str,
    ) -> Result<LedgerEvent, LedgerError> {
        let from = signer.address();
        if self.authenticate(signer).is_none() {
            let err = if self.accounts.contains_key(&from) {
                LedgerError::Authentication(from)
            } else {
                LedgerError::UnknownAccount(from)
            };
            self.reject(from, to, amount, &err.to_string());
            return Err(err);
        }
        self.apply_move(from, to, amount, kind, note)
    }

    /// Releases coins held by a contract account.
    pub(crate) fn escrow_out(
        &mut self,
        contract: Address,
        to: Address,
        amount: Coin,
        note: &str,
    ) -> Result<LedgerEvent, LedgerError> {
        if !self.is_contract(contract) {
            return Err(LedgerError::NotContract(contract));
        }
        self.apply_move(contract, to, amount, EventKind::EscrowOut, note)
    }

    fn apply_move(
        &mut self,
        from: Address,
        to: Address,
        amount: Coin,
        kind: EventKind,
        note: &str,
    ) -> Result<LedgerEvent, LedgerError> {
        if !self.accounts.contains_key(&to) {
            let err = LedgerError::UnknownAccount(to);
            self.reject(from, to, amount, &err.to_string());
            return Err(err);
        }
        let balance = self.accounts[&from].balance;
        let Some(remaining) = balance.checked_sub(amount) else {
            let err = LedgerError::InsufficientBalance {
                address: from,
                balance,
                needed: amount,
            };
            self.reject(from, to, amount, &err.to_string());
            return Err(err);
        };
        self.accounts.get_mut(&from).expect("checked").balance = remaining;
        self.accounts.get_mut(&to).expect("checked").balance += amount;
        Ok(self.push(kind, from, to, amount, note))
    }

    /// Appends a non-monetary state-transition line.
    pub(crate) fn record_state(&mut self, from: Address, to: Address, note: &str) -> LedgerEvent {
        self.push(EventKind::StateChange, from, to, Coin::ZERO, note)
    }

    /// Appends a rejection line; balances are untouched.
    pub(crate) fn reject(&mut self, from: Address, to: Address, amount: Coin, note: &str) {
        self.push(EventKind::Reject, from, to, amount, note);
    }

    fn push(
        &mut self,
        kind: EventKind,
        from: Address,
        to: Address,
        amount: Coin,
        note: &str,
    ) -> LedgerEvent {
        let event = LedgerEvent {
            kind,
            from,
            to,
            amount,
            at: self.clock.now,
            note: note.replace('\n', " "),
        };
        self.events.push(event.clone());
        event
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event {index} references unknown account {address}")]
    UnknownAccount { index: usize, address: Address },
    #[error("event {index} overdraws {address}")]
    Overdraw { index: usize, address: Address },
    #[error("total supply changed at event {index}")]
    SupplyChanged { index: usize },
}

/// Folds the coin-moving events over `genesis`, checking after every step
/// that no balance goes negative and the total supply is unchanged.
pub fn replay(
    genesis: &BTreeMap<Address, Coin>,
    events: &[LedgerEvent],
) -> Result<BTreeMap<Address, Coin>, ReplayError> {
    let mut balances = genesis.clone();
    let total: u128 = genesis.values().map(|c| c.0 as u128).sum();
    let mut running = total;
    for (index, event) in events.iter().enumerate() {
        if !event.kind.moves_coins() {
            continue;
        }
        let from = balances
            .get_mut(&event.from)
            .ok_or(ReplayError::UnknownAccount {
                index,
                address: event.from,
            })?;
        *from = from.checked_sub(event.amount).ok_or(ReplayError::Overdraw {
            index,
            address: event.from,
        })?;
        running -= event.amount.0 as u128;
        let to = balances
            .get_mut(&event.to)
            .ok_or(ReplayError::UnknownAccount {
                index,
                address: event.to,
            })?;
        *to += event.amount;
        running += event.amount.0 as u128;
        if running != total {
            return Err(ReplayError::SupplyChanged { index });
        }
    }
    Ok(balances)
}
