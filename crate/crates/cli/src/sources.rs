//! Input specifications: files or built-in corpora.

use std::path::Path;

use anyhow::{bail, Context, Result};
use chemcl::elementkg::{bundled_kg, ElementKG};
use chemcl::kgembed::KgEmbedding;
use chemcl::pipeline::data::{halogen_corpus, heteroatom_corpus, parse_smiles_list, synthetic_molecules};
use chemcl::pipeline::{bundled_molecules, LabeledCorpus, Model, TaskKind};
use chemcl::{Element, MolecularGraph};
use numcore::Checkpoint;

fn read(path: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {path}"))
}

/// `name:COUNT[:SEED]` for the built-in generators.
fn generated(spec: &str, name: &str) -> Result<Option<(usize, u64)>> {
    let Some(rest) = spec.strip_prefix(name).and_then(|r| r.strip_prefix(':')) else {
        return Ok(None);
    };
    let mut parts = rest.split(':');
    let count = parts.next().unwrap_or_default().parse().with_context(|| format!("bad count in `{spec}`"))?;
    let seed = match parts.next() {
        Some(s) => s.parse().with_context(|| format!("bad seed in `{spec}`"))?,
        None => 0,
    };
    if parts.next().is_some() {
        bail!("expected {name}:COUNT[:SEED], got `{spec}`");
    }
    Ok(Some((count, seed)))
}

/// `bundled`, `synthetic:COUNT[:SEED]`, or a SMILES file.
pub fn molecules(spec: &str) -> Result<Vec<MolecularGraph>> {
    if spec == "bundled" {
        return Ok(bundled_molecules());
    }
    if let Some((n, seed)) = generated(spec, "synthetic")? {
        return Ok(synthetic_molecules(n, seed));
    }
    Ok(parse_smiles_list(&read(spec)?)?)
}

/// `halogen:COUNT[:SEED]`, `heteroatoms:COUNT[:SEED]`, or a labeled file
/// (`SMILES<TAB>label...`) of the given task kind.
pub fn dataset(spec: &str, kind: TaskKind) -> Result<LabeledCorpus> {
    if let Some((n, seed)) = generated(spec, "halogen")? {
        return Ok(halogen_corpus("halogen", synthetic_molecules(n, seed))?);
    }
    if let Some((n, seed)) = generated(spec, "heteroatoms")? {
        return Ok(heteroatom_corpus("heteroatoms", synthetic_molecules(n, seed))?);
    }
    let name = Path::new(spec)
        .file_stem()
        .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(LabeledCorpus::from_text(name, kind, &read(spec)?)?)
}

/// A triple file written by `build-kg`, or the bundled graph.
pub fn kg(path: Option<&str>) -> Result<ElementKG> {
    Ok(match path {
        None => bundled_kg()?,
        Some(p) => ElementKG::from_tsv(&read(p)?, Element::all(), Vec::new())?,
    })
}

pub fn embedding(path: &str) -> Result<KgEmbedding> {
    Ok(KgEmbedding::from_text(&read(path)?)?)
}

pub fn checkpoint(path: &str) -> Result<Model> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {path}"))?;
    Ok(Model::from_checkpoint(&Checkpoint::read_from(std::io::BufReader::new(file))?)?)
}

/// Writes atomically enough for batch use: the whole buffer at once.
pub fn write(path: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {path}"))
}
