//! Plain role-typed tagger that finds condition spans (e.g. triggers) for
//! end-to-end evaluation. No priming and no features.

use std::collections::HashMap;

use crate::encoder::SplitConfig;
use crate::rse::{
    Argument, Condition, ConditionKind, Passage, RelationSchema, RelationalStructure, RseInstance,
};
use crate::{Error, Result, Scalar};

use super::{ModelConfig, Tagger, TrainConfig, TrainLog, VariantConfig};

const PASSAGE_TYPE: &str = "passage";

pub struct ConditionDetector<T> {
    tagger: Tagger<T>,
    schema_hash: String,
}

fn detection_schema(schema: &RelationSchema) -> Result<RelationSchema> {
    RelationSchema::new(
        vec![PASSAGE_TYPE.into()],
        schema.condition_types().to_vec(),
        Default::default(),
        Default::default(),
    )
}

/// One instance per passage whose spans are the passage's condition spans,
/// labelled with their condition types.
fn detection_corpus(corpus: &[RseInstance]) -> Result<Vec<RseInstance>> {
    let mut out: Vec<RseInstance> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for inst in corpus {
        let Some(span) = inst.condition.span.filter(|_| inst.condition.kind == ConditionKind::Span) else {
            return Err(Error::Config("condition detection needs span conditions".into()));
        };
        let slot = *index.entry(inst.passage.id.as_str()).or_insert_with(|| {
            out.push(RseInstance {
                passage: inst.passage.clone(),
                condition: Condition::concept(PASSAGE_TYPE),
                gold: RelationalStructure::default(),
            });
            out.len() - 1
        });
        out[slot].gold.insert(Argument::new(span, inst.condition.type_label.clone()));
    }
    Ok(out)
}

impl<T: Scalar> ConditionDetector<T> {
    pub fn train(
        corpus: &[RseInstance],
        schema: &RelationSchema,
        config: &ModelConfig,
        train: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let det_schema = detection_schema(schema)?;
        let det_corpus = detection_corpus(corpus)?;
        let (tagger, log) =
            Tagger::train(&det_corpus, &det_schema, VariantConfig::case(1)?, config, train)?;
        Ok((
            Self {
                tagger,
                schema_hash: schema.hash(),
            },
            log,
        ))
    }

    pub fn tagger(&self) -> &Tagger<T> {
        &self.tagger
    }

    /// Decoded conditions sorted by start offset.
    pub fn detect(&self, passage: &Passage) -> Result<Vec<Condition>> {
        let pred = self
            .tagger
            .predict_detailed(passage, &Condition::concept(PASSAGE_TYPE), SplitConfig::default())?;
        let mut out: Vec<Condition> = pred
            .structure
            .arguments()
            .iter()
            .map(|a| Condition::span(a.span, a.relation.clone()))
            .collect();
        out.sort_by_key(|c| c.span);
        Ok(out)
    }
}

pub fn predict_conditions<T: Scalar>(
    detector: &ConditionDetector<T>,
    passage: &Passage,
    schema: &RelationSchema,
) -> Result<Vec<Condition>> {
    let given = schema.hash();
    if given != detector.schema_hash {
        return Err(Error::SchemaMismatch {
            model: detector.schema_hash.clone(),
            schema: given,
        });
    }
    detector.detect(passage)
}
