//! Single-file binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f32` in parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{FeatureLayout, SplitConfig, SubwordVocab};
use crate::rse::{RelationSchema, SchemaDocument};
use crate::{Error, Result, Scalar};

use super::{ModelConfig, Tagger, VariantConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RSECKPT\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    split: SplitConfig,
    variant: VariantConfig,
    layout: FeatureLayout,
    tagset: Vec<String>,
    schema_hash: String,
    schema: SchemaDocument,
    vocab: Vec<String>,
    shapes: Vec<[usize; 2]>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save_checkpoint<T: Scalar>(model: &Tagger<T>, split: SplitConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = model.tensors();
    let header = Header {
        model: model.config().clone(),
        split,
        variant: model.variant(),
        layout: model.layout(),
        tagset: model.tagset().names().to_vec(),
        schema_hash: model.schema().hash(),
        schema: model.schema().to_document(),
        vocab: model.vocab().pieces().to_vec(),
        shapes: tensors.iter().map(|t| [t.nrows(), t.ncols()]).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
        context: "checkpoint header".into(),
        source,
    })?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for t in tensors {
        for v in t.iter() {
            write(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a model and the split layer it was saved with.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Tagger<T>, SplitConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| Error::io(path, e));

    let mut magic = [0u8; 8];
    read(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    read(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    read(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; len];
    read(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|source| Error::Json {
        context: format!("{} header", path.display()),
        source,
    })?;

    let schema = RelationSchema::from_document(header.schema)?;
    if schema.hash() != header.schema_hash {
        return Err(bad("schema hash does not match the embedded schema"));
    }
    let vocab = SubwordVocab::new(header.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Tagger::new(&schema, header.variant, &header.model, vocab, header.layout.span, &mut rng)?;
    if model.layout() != header.layout {
        return Err(bad("feature layout does not match the variant"));
    }
    if model.tagset().names() != header.tagset.as_slice() {
        return Err(bad("tag set does not match the schema"));
    }
    let params = model.params_mut();
    if params.len() != header.shapes.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            params.len(),
            header.shapes.len()
        )));
    }
    let mut buf = [0u8; 4];
    for (i, ((_, t), shape)) in params.into_iter().zip(&header.shapes).enumerate() {
        if [t.nrows(), t.ncols()] != *shape {
            return Err(bad(format!("tensor {i} has shape {shape:?}, expected {:?}", t.dim())));
        }
        for v in t.iter_mut() {
            read(&mut buf)?;
            *v = T::lit(f32::from_le_bytes(buf) as f64);
        }
    }
    if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0usize {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok((model, header.split))
}
