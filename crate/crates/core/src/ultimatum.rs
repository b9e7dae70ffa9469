//! Two consecutive four-round Ultimatum Game matches against a scripted bot.
//!
//! In every match the participant proposes in rounds 1 and 3 and the bot in
//! rounds 2 and 4. The bot accepts any proposal that gives it at least the
//! threshold, and its own offers are fixed per round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::WorkerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposer {
    Participant,
    Bot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub proposer_keep: u32,
    pub responder_get: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1–8 across both matches.
    pub global_round: u32,
    pub match_index: u32,
    pub proposer: Proposer,
    pub offer: Offer,
    pub outcome: Outcome,
}

impl RoundRecord {
    /// (participant share, bot share) if the split stood.
    pub fn payouts(&self) -> (u32, u32) {
        if self.outcome != Outcome::Accepted {
            return (0, 0);
        }
        match self.proposer {
            Proposer::Participant => (self.offer.proposer_keep, self.offer.responder_get),
            Proposer::Bot => (self.offer.responder_get, self.offer.proposer_keep),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotSplit {
    pub bot: u32,
    pub participant: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotPolicy {
    pub accept_threshold: u32,
    /// Offers by round within a match.
    pub scripted_offers: BTreeMap<u32, BotSplit>,
}

impl Default for BotPolicy {
    fn default() -> Self {
        Self {
            accept_threshold: 20,
            scripted_offers: BTreeMap::from([
                (2, BotSplit { bot: 50, participant: 50 }),
                (4, BotSplit { bot: 75, participant: 25 }),
            ]),
        }
    }
}

impl BotPolicy {
    pub fn accepts(&self, give_bot: u32) -> bool {
        give_bot >= self.accept_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvatarGender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvatarScale {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpponentSpec {
    pub avatar_gender: AvatarGender,
    pub avatar_scale: AvatarScale,
}

/// One opponent of each gender at the given scale, in the given order.
pub fn opponents(scale: AvatarScale, female_first: bool) -> Vec<OpponentSpec> {
    let order = if female_first {
        [AvatarGender::Female, AvatarGender::Male]
    } else {
        [AvatarGender::Male, AvatarGender::Female]
    };
    order.into_iter().map(|avatar_gender| OpponentSpec { avatar_gender, avatar_scale: scale }).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub pool: u32,
    pub rounds_per_match: u32,
    pub matches: u32,
    pub participant_proposes_rounds: BTreeSet<u32>,
    pub bot_proposes_rounds: BTreeSet<u32>,
    pub bot_policy: BotPolicy,
    pub opponent_specs: Vec<OpponentSpec>,
}

impl GameConfig {
    pub fn standard(opponent_specs: Vec<OpponentSpec>) -> Self {
        Self {
            pool: 100,
            rounds_per_match: 4,
            matches: 2,
            participant_proposes_rounds: BTreeSet::from([1, 3]),
            bot_proposes_rounds: BTreeSet::from([2, 4]),
            bot_policy: BotPolicy::default(),
            opponent_specs,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all: BTreeSet<u32> = (1..=self.rounds_per_match).collect();
        let union: BTreeSet<u32> = self.participant_proposes_rounds.union(&self.bot_proposes_rounds).copied().collect();
        if union != all || !self.participant_proposes_rounds.is_disjoint(&self.bot_proposes_rounds) {
            return Err("proposer rounds must partition the rounds of a match".into());
        }
        for round in &self.bot_proposes_rounds {
            let Some(split) = self.bot_policy.scripted_offers.get(round) else {
                return Err(format!("no scripted bot offer for round {round}"));
            };
            if split.bot + split.participant != self.pool {
                return Err(format!("scripted offer for round {round} does not sum to the pool"));
            }
        }
        if self.opponent_specs.len() != self.matches as usize {
            return Err("need one opponent per match".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GameError {
    #[error("match {requested} cannot start now")]
    MatchOrderViolation { requested: u32 },
    #[error("it is not the participant's turn to propose")]
    NotYourTurn,
    #[error("it is not the bot's turn to propose")]
    NotBotTurn,
    #[error("invalid split {keep}/{give} of a pool of {pool}")]
    InvalidSplit { keep: u32, give: u32, pool: u32 },
    #[error("no bot offer is pending")]
    NoPendingOffer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub config: GameConfig,
    /// 0 before the first match starts.
    pub match_index: u32,
    /// Round within the current match; `rounds_per_match + 1` once the
    /// match is over.
    pub round: u32,
    pub history: Vec<RoundRecord>,
    pub pending: Option<RoundRecord>,
    pub participant_total: u32,
    pub bot_total: u32,
}

impl GameState {
    pub fn new(config: GameConfig) -> Self {
        Self { config, match_index: 0, round: 0, history: Vec::new(), pending: None, participant_total: 0, bot_total: 0 }
    }

    fn match_over(&self) -> bool {
        self.round > self.config.rounds_per_match
    }

    fn in_play(&self) -> bool {
        self.match_index > 0 && !self.match_over()
    }

    pub fn is_complete(&self) -> bool {
        self.match_index == self.config.matches && self.match_over()
    }

    pub fn global_round(&self) -> u32 {
        (self.match_index - 1) * self.config.rounds_per_match + self.round
    }

    pub fn current_opponent(&self) -> Option<&OpponentSpec> {
        self.config.opponent_specs.get(self.match_index.checked_sub(1)? as usize)
    }

    pub fn start_match(&mut self, match_index: u32) -> Result<(), GameError> {
        let next = if self.match_index == 0 || self.match_over() { self.match_index + 1 } else { 0 };
        if match_index != next || match_index > self.config.matches {
            return Err(GameError::MatchOrderViolation { requested: match_index });
        }
        self.match_index = match_index;
        self.round = 1;
        Ok(())
    }

    fn finish(&mut self, rec: RoundRecord) -> RoundRecord {
        let (p, b) = rec.payouts();
        self.participant_total += p;
        self.bot_total += b;
        self.history.push(rec);
        self.round += 1;
        rec
    }

    pub fn propose(&mut self, keep_self: u32, give_bot: u32) -> Result<RoundRecord, GameError> {
        if !self.in_play() || self.pending.is_some() || !self.config.participant_proposes_rounds.contains(&self.round) {
            return Err(GameError::NotYourTurn);
        }
        let pool = self.config.pool;
        if keep_self.checked_add(give_bot) != Some(pool) {
            return Err(GameError::InvalidSplit { keep: keep_self, give: give_bot, pool });
        }
        let outcome = if self.config.bot_policy.accepts(give_bot) { Outcome::Accepted } else { Outcome::Rejected };
        Ok(self.finish(RoundRecord {
            global_round: self.global_round(),
            match_index: self.match_index,
            proposer: Proposer::Participant,
            offer: Offer { proposer_keep: keep_self, responder_get: give_bot },
            outcome,
        }))
    }

    pub fn bot_propose(&mut self) -> Result<RoundRecord, GameError> {
        if !self.in_play() || self.pending.is_some() || !self.config.bot_proposes_rounds.contains(&self.round) {
            return Err(GameError::NotBotTurn);
        }
        let split = self.config.bot_policy.scripted_offers[&self.round];
        let rec = RoundRecord {
            global_round: self.global_round(),
            match_index: self.match_index,
            proposer: Proposer::Bot,
            offer: Offer { proposer_keep: split.bot, responder_get: split.participant },
            outcome: Outcome::Pending,
        };
        self.pending = Some(rec);
        Ok(rec)
    }

    pub fn respond(&mut self, accept: bool) -> Result<RoundRecord, GameError> {
        let mut rec = self.pending.take().ok_or(GameError::NoPendingOffer)?;
        rec.outcome = if accept { Outcome::Accepted } else { Outcome::Rejected };
        Ok(self.finish(rec))
    }
}

/// A participant-side game action, as sent over the wire and logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum GameMove {
    StartMatch { match_index: u32 },
    Propose { keep_self: u32, give_bot: u32 },
    BotPropose,
    Respond { accept: bool },
}

impl GameState {
    /// Applies one move. Starting a match yields no round record.
    pub fn apply(&mut self, mv: GameMove) -> Result<Option<RoundRecord>, GameError> {
        match mv {
            GameMove::StartMatch { match_index } => self.start_match(match_index).map(|()| None),
            GameMove::Propose { keep_self, give_bot } => self.propose(keep_self, give_bot).map(Some),
            GameMove::BotPropose => self.bot_propose().map(Some),
            GameMove::Respond { accept } => self.respond(accept).map(Some),
        }
    }
}

/// Bonus in whole currency units for each ranked participant. Participants
/// are ranked by game total, descending; a participant's rank is the number
/// of others with a strictly higher total, so ties share the better rank.
/// Rank r of n maps to `5 - floor(5 r / n)`.
pub fn rank_bonus(totals: &[(WorkerId, u32)]) -> BTreeMap<WorkerId, u32> {
    let n = totals.len() as u64;
    totals
        .iter()
        .map(|(worker, total)| {
            let rank = totals.iter().filter(|(_, t)| t > total).count() as u64;
            (worker.clone(), 5 - (5 * rank / n) as u32)
        })
        .collect()
}
