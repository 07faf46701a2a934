//! Versioned JSON container for a [`ParameterSet`] plus arbitrary metadata.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::ParameterSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn new(params: ParameterSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self).map_err(|e| NumError::Checkpoint(e.to_string()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_reader(r).map_err(|e| NumError::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(NumError::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}
