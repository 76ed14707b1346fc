//! Deterministic synthetic corpora.
//!
//! A passage is filler words with one clause per condition. A clause is a
//! trigger word followed by that condition's arguments; each argument is an
//! entity phrase (`e*` words) normally preceded by the cue word of its
//! relation. Cues are unique per relation (`c<r>`) except when ambiguity
//! strikes: relations `2p` and `2p+1` then share the cue `s<p>` and the
//! condition type's parity decides which one is meant. A multi-relation span
//! carries the cues of both of its relations. Distractor entities without
//! cues appear in the filler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rse::{Argument, Condition, Passage, RelationSchema, RelationalStructure, RseInstance, TokenSpan};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Number of distinct entity words.
    pub entity_vocab: usize,
    /// Target passage length range (inclusive); clauses longer than the
    /// target are kept whole.
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub relations: usize,
    pub condition_types: usize,
    pub triggers_per_type: usize,
    /// Arguments per condition, uniform in `min_spans..=max_spans`.
    pub min_spans: usize,
    pub max_spans: usize,
    /// Conditions per passage, uniform in `1..=conditions_per_passage`.
    pub conditions_per_passage: usize,
    /// Probability that an argument is preceded by its cue word.
    pub cue_strength: f64,
    /// Probability that an argument uses its pair's shared cue.
    pub ambiguity: f64,
    /// Probability that an argument span carries a second relation.
    pub multi_relation: f64,
    /// Probability of a cue-less distractor entity after each filler word.
    pub distractor_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 40,
            entity_vocab: 30,
            min_tokens: 12,
            max_tokens: 20,
            relations: 6,
            condition_types: 4,
            triggers_per_type: 3,
            min_spans: 1,
            max_spans: 3,
            conditions_per_passage: 2,
            cue_strength: 1.0,
            ambiguity: 0.0,
            multi_relation: 0.0,
            distractor_rate: 0.1,
        }
    }
}

pub fn relation_label(r: usize) -> String {
    format!("R{r}")
}

pub fn condition_label(t: usize) -> String {
    format!("T{t}")
}

pub fn cue_word(r: usize) -> String {
    format!("c{r}")
}

pub fn shared_cue_word(pair: usize) -> String {
    format!("s{pair}")
}

pub fn trigger_word(t: usize, i: usize) -> String {
    format!("g{t}x{i}")
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        for (name, p) in [
            ("cue_strength", self.cue_strength),
            ("ambiguity", self.ambiguity),
            ("multi_relation", self.multi_relation),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.vocab_size == 0
            || self.entity_vocab == 0
            || self.relations == 0
            || self.condition_types == 0
            || self.triggers_per_type == 0
            || self.min_spans == 0
            || self.conditions_per_passage == 0
        {
            return fail("counts must be positive");
        }
        if self.min_spans > self.max_spans || self.min_tokens > self.max_tokens {
            return fail("ranges must satisfy min <= max");
        }
        if self.multi_relation > 0.0 && self.relations < 2 {
            return fail("multi-relation spans need at least two relations");
        }
        if self.conditions_per_passage > self.condition_types * self.triggers_per_type {
            return fail("not enough distinct trigger words for conditions_per_passage");
        }
        Ok(())
    }

    /// The schema: relations `R<r>` verbalized as their cue word, condition
    /// types `T<t>` verbalized as `k<t>`.
    pub fn schema(&self) -> RelationSchema {
        let rels: Vec<String> = (0..self.relations).map(relation_label).collect();
        let types: Vec<String> = (0..self.condition_types).map(condition_label).collect();
        let verb = rels
            .iter()
            .enumerate()
            .map(|(r, l)| (l.clone(), vec![cue_word(r)]))
            .collect();
        let cverb = types
            .iter()
            .enumerate()
            .map(|(t, l)| (l.clone(), vec![format!("k{t}")]))
            .collect();
        RelationSchema::new(types, rels, verb, cverb).expect("generated labels are valid")
    }
}

struct Clause {
    tokens: Vec<String>,
    type_id: usize,
    /// (offset within clause, length, relations)
    args: Vec<(usize, usize, Vec<usize>)>,
}

fn entity(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<String> {
    let len = rng.gen_range(1..=2);
    (0..len).map(|_| format!("e{}", rng.gen_range(0..spec.entity_vocab))).collect()
}

fn clause(rng: &mut ChaCha8Rng, spec: &SynthSpec, type_id: usize, trigger: String) -> Clause {
    let mut tokens = vec![trigger];
    let mut args = Vec::new();
    let count = rng.gen_range(spec.min_spans..=spec.max_spans);
    for _ in 0..count {
        let mut rel = rng.gen_range(0..spec.relations);
        let ambiguous = spec.ambiguity > 0.0 && rng.gen_bool(spec.ambiguity);
        let mut cues = Vec::new();
        if ambiguous {
            let forced = 2 * (rel / 2) + type_id % 2;
            if forced < spec.relations && rel / 2 * 2 + 1 < spec.relations {
                rel = forced;
                cues.push(shared_cue_word(rel / 2));
            } else {
                cues.push(cue_word(rel));
            }
        } else {
            cues.push(cue_word(rel));
        }
        let mut rels = vec![rel];
        if spec.multi_relation > 0.0 && rng.gen_bool(spec.multi_relation) {
            let mut other = rng.gen_range(0..spec.relations - 1);
            if other >= rel {
                other += 1;
            }
            rels.push(other);
            cues.push(cue_word(other));
        }
        if !rng.gen_bool(spec.cue_strength) {
            cues.clear();
        }
        tokens.extend(cues);
        let ent = entity(rng, spec);
        args.push((tokens.len(), ent.len(), rels));
        tokens.extend(ent);
    }
    Clause {
        tokens,
        type_id,
        args,
    }
}

fn filler(rng: &mut ChaCha8Rng, spec: &SynthSpec, count: usize, out: &mut Vec<String>) {
    for _ in 0..count {
        out.push(format!("w{}", rng.gen_range(0..spec.vocab_size)));
        if spec.distractor_rate > 0.0 && rng.gen_bool(spec.distractor_rate) {
            out.extend(entity(rng, spec));
        }
    }
}

/// `count` instances; every passage contributes one instance per condition
/// (the last passage may be cut short). Deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec, count: usize) -> Result<(Vec<RseInstance>, RelationSchema)> {
    spec.validate()?;
    let schema = spec.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(count);
    let mut index = 0;
    while out.len() < count {
        let conds = rng.gen_range(1..=spec.conditions_per_passage);
        let mut triggers: Vec<(usize, usize)> = (0..spec.condition_types)
            .flat_map(|t| (0..spec.triggers_per_type).map(move |i| (t, i)))
            .collect();
        triggers.shuffle(&mut rng);
        let clauses: Vec<Clause> = triggers[..conds]
            .iter()
            .map(|&(t, i)| clause(&mut rng, spec, t, trigger_word(t, i)))
            .collect();
        let clause_len: usize = clauses.iter().map(|c| c.tokens.len()).sum();
        let target = rng.gen_range(spec.min_tokens..=spec.max_tokens);
        let filler_total = target.saturating_sub(clause_len);
        // split filler into conds + 1 gaps
        let mut cuts: Vec<usize> = (0..conds).map(|_| rng.gen_range(0..=filler_total)).collect();
        cuts.sort_unstable();
        let mut gaps = Vec::with_capacity(conds + 1);
        let mut prev = 0;
        for c in cuts {
            gaps.push(c - prev);
            prev = c;
        }
        gaps.push(filler_total - prev);

        let mut tokens = Vec::new();
        let mut placed = Vec::with_capacity(conds);
        for (c, gap) in clauses.iter().zip(&gaps) {
            filler(&mut rng, spec, *gap, &mut tokens);
            placed.push(tokens.len());
            tokens.extend(c.tokens.iter().cloned());
        }
        filler(&mut rng, spec, gaps[conds], &mut tokens);

        let passage = Passage::new(format!("syn{}-{index}", spec.seed), tokens);
        index += 1;
        for (c, &offset) in clauses.iter().zip(&placed) {
            if out.len() == count {
                break;
            }
            let mut gold = RelationalStructure::default();
            for (at, len, rels) in &c.args {
                let span = TokenSpan::new(offset + at, offset + at + len);
                for &r in rels {
                    gold.insert(Argument::new(span, relation_label(r)));
                }
            }
            out.push(RseInstance {
                passage: passage.clone(),
                condition: Condition::span(TokenSpan::new(offset, offset + 1), condition_label(c.type_id)),
                gold,
            });
        }
    }
    Ok((out, schema))
}
