//! Questionnaire definitions, response validation and subscale scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{InstrumentId, SessionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub item_id: String,
    pub prompt: String,
    pub scale_min: i32,
    pub scale_max: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Mean,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subscale {
    pub name: String,
    /// Item ids contributing to the subscale. An id may repeat; it then
    /// counts once per occurrence.
    pub item_ids: Vec<String>,
    pub aggregation: Aggregation,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentDef {
    pub instrument_id: InstrumentId,
    #[serde(default)]
    pub title: String,
    pub items: Vec<Item>,
    pub subscales: Vec<Subscale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub instrument_id: InstrumentId,
    pub answers: BTreeMap<String, i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub session_id: SessionId,
    pub instrument_id: InstrumentId,
    pub subscale_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstrumentError {
    #[error("{instrument}: item {item} was not answered")]
    MissingItem { instrument: InstrumentId, item: String },
    #[error("{instrument}: item {item} = {value} outside [{min}, {max}]")]
    OutOfRange { instrument: InstrumentId, item: String, value: i32, min: i32, max: i32 },
    #[error("{instrument}: unknown item {item}")]
    UnknownItem { instrument: InstrumentId, item: String },
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
    #[error("{instrument} has no subscale {subscale}")]
    UnknownSubscale { instrument: InstrumentId, subscale: String },
}

impl InstrumentDef {
    /// Structural checks; the message names the offending part.
    pub fn validate(&self) -> Result<(), String> {
        if self.items.is_empty() {
            return Err("items: at least one item is required".into());
        }
        let mut ids = BTreeSet::new();
        for (i, item) in self.items.iter().enumerate() {
            if !ids.insert(item.item_id.as_str()) {
                return Err(format!("items[{i}]: duplicate item id {:?}", item.item_id));
            }
            if item.scale_min >= item.scale_max {
                return Err(format!("items[{i}]: scale_min must be below scale_max"));
            }
        }
        let mut names = BTreeSet::new();
        for (i, sub) in self.subscales.iter().enumerate() {
            if !names.insert(sub.name.as_str()) {
                return Err(format!("subscales[{i}]: duplicate name {:?}", sub.name));
            }
            if sub.item_ids.is_empty() {
                return Err(format!("subscales[{i}]: no items"));
            }
            if let Some(bad) = sub.item_ids.iter().find(|id| !ids.contains(id.as_str())) {
                return Err(format!("subscales[{i}]: unknown item {bad:?}"));
            }
            if !sub.weight.is_finite() {
                return Err(format!("subscales[{i}]: weight must be finite"));
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == id)
    }

    pub fn subscale(&self, name: &str) -> Option<&Subscale> {
        self.subscales.iter().find(|s| s.name == name)
    }
}

/// Passes iff every item is answered, nothing extra is answered, and every
/// answer lies on its item's scale.
pub fn validate_responses(def: &InstrumentDef, answers: &BTreeMap<String, i32>) -> Result<(), InstrumentError> {
    for item in &def.items {
        let Some(&value) = answers.get(&item.item_id) else {
            return Err(InstrumentError::MissingItem { instrument: def.instrument_id.clone(), item: item.item_id.clone() });
        };
        if value < item.scale_min || value > item.scale_max {
            return Err(InstrumentError::OutOfRange {
                instrument: def.instrument_id.clone(),
                item: item.item_id.clone(),
                value,
                min: item.scale_min,
                max: item.scale_max,
            });
        }
    }
    if let Some(extra) = answers.keys().find(|k| def.item(k).is_none()) {
        return Err(InstrumentError::UnknownItem { instrument: def.instrument_id.clone(), item: extra.clone() });
    }
    Ok(())
}

pub fn score(
    def: &InstrumentDef,
    session_id: &SessionId,
    answers: &BTreeMap<String, i32>,
) -> Result<ScoreVector, InstrumentError> {
    validate_responses(def, answers)?;
    let subscale_scores = def
        .subscales
        .iter()
        .map(|sub| {
            let sum: f64 = sub.item_ids.iter().map(|id| f64::from(answers[id])).sum();
            let value = match sub.aggregation {
                Aggregation::Mean => sum / sub.item_ids.len() as f64,
                Aggregation::WeightedSum => sub.weight * sum,
            };
            (sub.name.clone(), value)
        })
        .collect();
    Ok(ScoreVector { session_id: session_id.clone(), instrument_id: def.instrument_id.clone(), subscale_scores })
}

fn items(prefix: &str, prompts: &[&str], min: i32, max: i32) -> Vec<Item> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| Item { item_id: format!("{prefix}{:02}", i + 1), prompt: (*p).to_owned(), scale_min: min, scale_max: max })
        .collect()
}

fn ids(prefix: &str, numbers: &[usize]) -> Vec<String> {
    numbers.iter().map(|n| format!("{prefix}{n:02}")).collect()
}

/// Affect inventory with positive-affect, negative-affect and focus
/// subscales on a 1–5 scale. Item wording is placeholder text.
pub fn zipers() -> InstrumentDef {
    let prompts = [
        "I feel friendly",
        "I feel affectionate",
        "I feel playful",
        "I feel elated",
        "I feel happy",
        "I feel afraid",
        "I feel tense",
        "I feel angry",
        "I feel irritated",
        "I feel sad",
        "I am attentive",
        "I am concentrating",
    ];
    let mk = |name: &str, n: &[usize]| Subscale {
        name: name.into(),
        item_ids: ids("z", n),
        aggregation: Aggregation::Mean,
        weight: 1.0,
    };
    InstrumentDef {
        instrument_id: "zipers".into(),
        title: "Personal reactions".into(),
        items: items("z", &prompts, 1, 5),
        subscales: vec![
            mk("positive_affect", &[1, 2, 3, 4, 5]),
            mk("negative_affect", &[6, 7, 8, 9, 10]),
            mk("focus", &[11, 12]),
        ],
    }
}

/// Simulator sickness questionnaire: 16 symptoms rated 0–3 with the
/// conventional nausea / oculomotor / disorientation weights and the
/// weighted total over the three raw sums.
pub fn ssq() -> InstrumentDef {
    let prompts = [
        "General discomfort",
        "Fatigue",
        "Headache",
        "Eyestrain",
        "Difficulty focusing",
        "Increased salivation",
        "Sweating",
        "Nausea",
        "Difficulty concentrating",
        "Fullness of head",
        "Blurred vision",
        "Dizzy (eyes open)",
        "Dizzy (eyes closed)",
        "Vertigo",
        "Stomach awareness",
        "Burping",
    ];
    let nausea = ids("s", &[1, 6, 7, 8, 9, 15, 16]);
    let oculomotor = ids("s", &[1, 2, 3, 4, 5, 9, 11]);
    let disorientation = ids("s", &[5, 8, 10, 11, 12, 13, 14]);
    let total: Vec<String> = nausea.iter().chain(&oculomotor).chain(&disorientation).cloned().collect();
    let mk = |name: &str, item_ids: Vec<String>, weight: f64| Subscale {
        name: name.into(),
        item_ids,
        aggregation: Aggregation::WeightedSum,
        weight,
    };
    InstrumentDef {
        instrument_id: "ssq".into(),
        title: "Simulator sickness".into(),
        items: items("s", &prompts, 0, 3),
        subscales: vec![
            mk("nausea", nausea, 9.54),
            mk("oculomotor", oculomotor, 7.58),
            mk("disorientation", disorientation, 13.92),
            mk("total", total, 3.74),
        ],
    }
}

/// Short presence questionnaire on a 1–7 scale. The item subset is a
/// placeholder meant to be replaced through `instrument_defs` in a config.
pub fn presence() -> InstrumentDef {
    let prompts = [
        "I had a sense of being in the virtual place",
        "The virtual place felt like somewhere I visited",
        "I forgot about my real surroundings",
        "The virtual world seemed real to me",
        "I felt I could act within the virtual place",
        "My experience felt consistent with the real world",
    ];
    InstrumentDef {
        instrument_id: "presence".into(),
        title: "Presence".into(),
        items: items("p", &prompts, 1, 7),
        subscales: vec![Subscale {
            name: "presence".into(),
            item_ids: ids("p", &[1, 2, 3, 4, 5, 6]),
            aggregation: Aggregation::Mean,
            weight: 1.0,
        }],
    }
}

pub fn builtin(id: &str) -> Option<InstrumentDef> {
    match id {
        "zipers" => Some(zipers()),
        "ssq" => Some(ssq()),
        "presence" => Some(presence()),
        _ => None,
    }
}
