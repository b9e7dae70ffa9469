//! Task-board abstraction (post a task restricted to panel members, pay
//! bonuses, close) with an in-memory simulated backend.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::events::Posting;
use crate::experiment::BonusRange;
use crate::ids::{PostingId, Timestamp, WorkerId};
use crate::panel::Panel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskBoardError {
    #[error("posting {0} is not known to the task board")]
    UnknownPosting(PostingId),
    #[error("posting {0} was already published")]
    AlreadyPublished(PostingId),
    #[error("posting {0} is closed")]
    Closed(PostingId),
}

pub trait TaskBoard {
    fn publish(&mut self, posting: &Posting) -> Result<(), TaskBoardError>;
    fn pay_bonus(&mut self, posting: &PostingId, worker: &WorkerId, cents: u32) -> Result<(), TaskBoardError>;
    fn close(&mut self, posting: &PostingId) -> Result<(), TaskBoardError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub posting_id: PostingId,
    pub worker_id: WorkerId,
    pub cents: u32,
}

#[derive(Debug, Clone)]
struct Listing {
    posting: Posting,
    closed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedTaskBoard {
    listings: BTreeMap<PostingId, Listing>,
    payouts: Vec<Payout>,
}

impl SimulatedTaskBoard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open postings the worker may see: open at `now` and matching the
    /// worker's verified devices.
    pub fn visible_to(&self, panel: &Panel, worker: &WorkerId, now: Timestamp) -> Vec<&Posting> {
        self.listings
            .values()
            .filter(|l| !l.closed && l.posting.is_open(now) && panel.is_eligible(worker, &l.posting.eligibility))
            .map(|l| &l.posting)
            .collect()
    }

    pub fn payouts(&self) -> &[Payout] {
        &self.payouts
    }
}

impl TaskBoard for SimulatedTaskBoard {
    fn publish(&mut self, posting: &Posting) -> Result<(), TaskBoardError> {
        if self.listings.contains_key(&posting.posting_id) {
            return Err(TaskBoardError::AlreadyPublished(posting.posting_id.clone()));
        }
        self.listings.insert(posting.posting_id.clone(), Listing { posting: posting.clone(), closed: false });
        Ok(())
    }

    fn pay_bonus(&mut self, posting: &PostingId, worker: &WorkerId, cents: u32) -> Result<(), TaskBoardError> {
        if !self.listings.contains_key(posting) {
            return Err(TaskBoardError::UnknownPosting(posting.clone()));
        }
        self.payouts.push(Payout { posting_id: posting.clone(), worker_id: worker.clone(), cents });
        Ok(())
    }

    fn close(&mut self, posting: &PostingId) -> Result<(), TaskBoardError> {
        let listing = self.listings.get_mut(posting).ok_or_else(|| TaskBoardError::UnknownPosting(posting.clone()))?;
        if listing.closed {
            return Err(TaskBoardError::Closed(posting.clone()));
        }
        listing.closed = true;
        Ok(())
    }
}

/// Converts a bonus level (1–5) into cents spread evenly over the
/// configured range.
pub fn bonus_cents(level: u32, range: &BonusRange) -> u32 {
    let level = level.clamp(1, 5);
    range.low_cents + (range.high_cents - range.low_cents) * (level - 1) / 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonus_levels_span_the_range() {
        let r = BonusRange { low_cents: 100, high_cents: 500 };
        assert_eq!((1..=5).map(|l| bonus_cents(l, &r)).collect::<Vec<_>>(), [100, 200, 300, 400, 500]);
    }
}
