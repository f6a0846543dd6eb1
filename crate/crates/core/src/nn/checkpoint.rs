use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, NnError, ParamStore};

pub const CHECKPOINT_FORMAT: &str = "emcloud-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters, optional optimiser state and free-form metadata, stored as
/// JSON. Floats are written in shortest round-trip form, so a save/load
/// cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub metadata: serde_json::Value,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(params: ParamStore, optimizer: Option<Adam>, metadata: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            metadata,
            params,
            optimizer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("json.tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer(&mut w, self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let r = BufReader::new(fs::File::open(path)?);
        let ck: Checkpoint =
            serde_json::from_reader(r).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if let Some((name, t)) = ck.params.iter().find(|(_, t)| {
            t.shape.iter().product::<usize>() != t.data.len() || !t.is_finite()
        }) {
            return Err(NnError::Checkpoint(format!(
                "parameter {name} is malformed (shape {:?}, {} values)",
                t.shape,
                t.data.len()
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, Tensor};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in prop::collection::vec(-1e6f64..1e6, 1..40), tiny in 1e-300f64..1e-290) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.add("a", Tensor::new(vec![n], values).unwrap());
            store.add("b", Tensor::new(vec![1], vec![tiny]).unwrap());
            let adam = Adam::new(AdamConfig::default(), &store);
            let ck = Checkpoint::new(store, Some(adam), serde_json::json!({"epoch": 3}));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ck.json");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            for ((_, x), (_, y)) in ck.params.iter().zip(back.params.iter()) {
                let bx: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let by: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bx, by);
            }
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        fs::write(&path, "{\"format\":\"other\"}").unwrap();
        assert!(Checkpoint::load(&path).is_err());
        assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
    }
}
