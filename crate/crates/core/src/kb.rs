//! Holonym–meronym knowledge base.
//!
//! A KB document maps each concept to an ordered part list plus an ordered
//! hypernym chain. Parts may declare that they sit visually `within` other
//! parts of the same concept; such hypo-meronyms are dropped when a part
//! list is resolved, so only hyper-meronyms reach the rest of the pipeline.
//! Concepts without parts of their own inherit the part list of the first
//! ancestor along the hypernym chain that has one.
//!
//! Two documents transcribed from published part mappings are bundled:
//! [`PASCAL_PART_KB`] and [`IMAGENET_VISA_KB`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled PASCAL-Part mapping (13 classes, bounding-box annotated parts).
pub const PASCAL_PART_KB: &str = include_str!("../data/pascal_part.kb.json");
/// Bundled ImageNet mapping derived from the VISA attribute ontology.
pub const IMAGENET_VISA_KB: &str = include_str!("../data/imagenet_visa.kb.json");

pub type ConceptId = String;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed KB document at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("concept id must be non-empty")]
    EmptyConceptId,
    #[error("duplicate concept id `{0}`")]
    DuplicateConcept(ConceptId),
    #[error("concept `{concept}` lists duplicate part `{part}`")]
    DuplicatePart { concept: ConceptId, part: String },
    #[error("concept `{concept}` references unknown hypernym `{hypernym}`")]
    UnknownHypernym {
        concept: ConceptId,
        hypernym: ConceptId,
    },
    #[error("hypernym cycle: {}", .0.join(" -> "))]
    HypernymCycle(Vec<ConceptId>),
    #[error("part `{part}` of concept `{concept}` declares containment in unknown part `{target}`")]
    UnknownWithinTarget {
        concept: ConceptId,
        part: String,
        target: String,
    },
    #[error("containment cycle in concept `{concept}`: {}", .cycle.join(" -> "))]
    ContainmentCycle {
        concept: ConceptId,
        cycle: Vec<String>,
    },
    #[error("unknown concept `{0}`")]
    UnknownConcept(ConceptId),
    #[error("no ancestor of `{concept}` has parts (chain tried: {})", .chain.join(" -> "))]
    NoPartsInChain {
        concept: ConceptId,
        chain: Vec<ConceptId>,
    },
}

/// One meronym entry of a concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartEntry {
    pub name: String,
    pub visible: bool,
    /// Names of parts of the same concept whose visual space fully contains
    /// this part. Non-empty means hypo-meronym.
    #[serde(default)]
    pub within: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub id: ConceptId,
    #[serde(default)]
    pub hypernyms: Vec<ConceptId>,
    #[serde(default)]
    pub parts: Vec<PartEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KbDocument {
    concepts: Vec<ConceptEntry>,
}

/// Validated holonym–meronym mapping. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolMeMap {
    concepts: Vec<ConceptEntry>,
    index: BTreeMap<ConceptId, usize>,
}

/// Parse and validate a KB JSON document.
pub fn load_kb(document: &str) -> Result<HolMeMap, KbError> {
    let doc: KbDocument = serde_json::from_str(document).map_err(|e| KbError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    HolMeMap::from_entries(doc.concepts)
}

/// Resolve the visible hyper-meronym list for `concept`, inheriting from the
/// hypernym chain when the concept has no parts of its own.
pub fn resolve_parts(concept: &str, kb: &HolMeMap) -> Result<Vec<String>, KbError> {
    kb.resolve_parts(concept)
}

/// Keep only visible parts not contained in any other listed part,
/// preserving input order.
pub fn filter_hyper_meronyms(parts: &[PartEntry]) -> Vec<String> {
    parts
        .iter()
        .filter(|p| p.visible && p.within.is_empty())
        .map(|p| p.name.clone())
        .collect()
}

impl HolMeMap {
    fn from_entries(concepts: Vec<ConceptEntry>) -> Result<Self, KbError> {
        let mut index = BTreeMap::new();
        for (i, c) in concepts.iter().enumerate() {
            if c.id.is_empty() {
                return Err(KbError::EmptyConceptId);
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(KbError::DuplicateConcept(c.id.clone()));
            }
        }
        for c in &concepts {
            validate_concept(c, &index)?;
        }
        detect_hypernym_cycles(&concepts, &index)?;
        Ok(Self { concepts, index })
    }

    pub fn concepts(&self) -> impl Iterator<Item = &ConceptEntry> {
        self.concepts.iter()
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.index.contains_key(concept)
    }

    pub fn get(&self, concept: &str) -> Option<&ConceptEntry> {
        self.index.get(concept).map(|&i| &self.concepts[i])
    }

    pub fn resolve_parts(&self, concept: &str) -> Result<Vec<String>, KbError> {
        let entry = self
            .get(concept)
            .ok_or_else(|| KbError::UnknownConcept(concept.to_string()))?;
        let own = filter_hyper_meronyms(&entry.parts);
        if !own.is_empty() {
            return Ok(own);
        }
        // Walk the chain depth-first in document order; the first ancestor
        // with a non-empty hyper-meronym list wins.
        let mut visited = BTreeSet::new();
        let mut chain = Vec::new();
        if let Some(parts) = self.walk_chain(entry, &mut visited, &mut chain) {
            return Ok(parts);
        }
        Err(KbError::NoPartsInChain {
            concept: concept.to_string(),
            chain,
        })
    }

    fn walk_chain(
        &self,
        entry: &ConceptEntry,
        visited: &mut BTreeSet<ConceptId>,
        chain: &mut Vec<ConceptId>,
    ) -> Option<Vec<String>> {
        for hyper in &entry.hypernyms {
            if !visited.insert(hyper.clone()) {
                continue;
            }
            chain.push(hyper.clone());
            let ancestor = self.get(hyper).expect("validated hypernym");
            let parts = filter_hyper_meronyms(&ancestor.parts);
            if !parts.is_empty() {
                return Some(parts);
            }
            if let Some(parts) = self.walk_chain(ancestor, visited, chain) {
                return Some(parts);
            }
        }
        None
    }

    /// Serialize back to the KB JSON schema. `load_kb(serialize(kb))`
    /// round-trips to an equal map.
    pub fn serialize(&self) -> String {
        let doc = KbDocument {
            concepts: self.concepts.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("KB document serializes")
    }
}

fn validate_concept(c: &ConceptEntry, index: &BTreeMap<ConceptId, usize>) -> Result<(), KbError> {
    for h in &c.hypernyms {
        if !index.contains_key(h) {
            return Err(KbError::UnknownHypernym {
                concept: c.id.clone(),
                hypernym: h.clone(),
            });
        }
    }
    let mut names = BTreeSet::new();
    for p in &c.parts {
        if !names.insert(p.name.as_str()) {
            return Err(KbError::DuplicatePart {
                concept: c.id.clone(),
                part: p.name.clone(),
            });
        }
    }
    for p in &c.parts {
        for target in &p.within {
            if !names.contains(target.as_str()) {
                return Err(KbError::UnknownWithinTarget {
                    concept: c.id.clone(),
                    part: p.name.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    detect_containment_cycle(c)?;
    Ok(())
}

fn detect_containment_cycle(c: &ConceptEntry) -> Result<(), KbError> {
    // DFS over the `within` relation of one concept's parts.
    let idx: BTreeMap<&str, usize> = c
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let mut state = vec![0u8; c.parts.len()]; // 0 unseen, 1 on stack, 2 done
    let mut stack = Vec::new();

    fn dfs(
        i: usize,
        c: &ConceptEntry,
        idx: &BTreeMap<&str, usize>,
        state: &mut [u8],
        stack: &mut Vec<String>,
    ) -> Result<(), KbError> {
        state[i] = 1;
        stack.push(c.parts[i].name.clone());
        for target in &c.parts[i].within {
            let j = idx[target.as_str()];
            match state[j] {
                1 => {
                    let mut cycle = stack.clone();
                    cycle.push(target.clone());
                    return Err(KbError::ContainmentCycle {
                        concept: c.id.clone(),
                        cycle,
                    });
                }
                0 => dfs(j, c, idx, state, stack)?,
                _ => {}
            }
        }
        stack.pop();
        state[i] = 2;
        Ok(())
    }

    for i in 0..c.parts.len() {
        if state[i] == 0 {
            dfs(i, c, &idx, &mut state, &mut stack)?;
        }
    }
    Ok(())
}

fn detect_hypernym_cycles(
    concepts: &[ConceptEntry],
    index: &BTreeMap<ConceptId, usize>,
) -> Result<(), KbError> {
    let mut state = vec![0u8; concepts.len()];
    let mut stack = Vec::new();

    fn dfs(
        i: usize,
        concepts: &[ConceptEntry],
        index: &BTreeMap<ConceptId, usize>,
        state: &mut [u8],
        stack: &mut Vec<ConceptId>,
    ) -> Result<(), KbError> {
        state[i] = 1;
        stack.push(concepts[i].id.clone());
        for h in &concepts[i].hypernyms {
            let j = index[h];
            match state[j] {
                1 => {
                    let mut cycle = stack.clone();
                    cycle.push(h.clone());
                    return Err(KbError::HypernymCycle(cycle));
                }
                0 => dfs(j, concepts, index, state, stack)?,
                _ => {}
            }
        }
        stack.pop();
        state[i] = 2;
        Ok(())
    }

    for i in 0..concepts.len() {
        if state[i] == 0 {
            dfs(i, concepts, index, &mut state, &mut stack)?;
        }
    }
    Ok(())
}
