//! Versioned JSON checkpoints of a trained scorer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParameterSet;
use super::train::NeuralScorer;
use crate::error::{Error, Result};
use crate::scorers::Scorer;

const FORMAT: &str = "poprec-neural";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    name: String,
    items: usize,
    config: ModelConfig,
    values: Vec<f64>,
}

pub fn save<W: Write>(scorer: &NeuralScorer, writer: W) -> Result<()> {
    let ck = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        name: scorer.name().to_owned(),
        items: scorer.catalog_size(),
        config: scorer.config().clone(),
        values: scorer.params().values().to_vec(),
    };
    serde_json::to_writer(writer, &ck).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load<R: Read>(reader: R) -> Result<NeuralScorer> {
    let ck: Checkpoint = serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ck.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
    }
    if ck.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {} (expected {VERSION})", ck.version)));
    }
    let params = ParameterSet::from_values(&ck.config, ck.items, ck.values)?;
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    NeuralScorer::new(ck.name, ck.config, params)
}

pub fn save_path(scorer: &NeuralScorer, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(scorer, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_path(path: impl AsRef<Path>) -> Result<NeuralScorer> {
    load(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{UserId, UserSequence};
    use crate::neural::config::{Direction, LossKind};

    #[test]
    fn round_trip_scores_identically() {
        let mut c = ModelConfig::new(Direction::MaskedBidirectional, LossKind::Ce).with_pps(true);
        c.embed_dim = 8;
        c.l_max = 10;
        let s = NeuralScorer::untrained(c, 9).unwrap().with_name("m");
        let mut buf = Vec::new();
        save(&s, &mut buf).unwrap();
        let back = load(buf.as_slice()).unwrap();
        assert_eq!(back.name(), "m");
        let seq = UserSequence { user: UserId("u".into()), items: vec![1, 4, 4, 8, 0] };
        assert_eq!(s.score(&seq).unwrap(), back.score(&seq).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(load(&b"{}"[..]), Err(Error::Checkpoint(_))));
        let bad = r#"{"format":"other","version":1,"name":"x","items":1,"config":null,"values":[]}"#;
        assert!(load(bad.as_bytes()).is_err());
    }
}
