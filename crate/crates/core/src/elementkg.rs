//! The chemical element knowledge graph: elements linked to discretized
//! attribute values by typed, attribute-to-element triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::Element;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("continuous column `{0}` has no binning spec")]
    MissingBinningSpec(String),
    #[error("value {value} of `{attribute}` for {element} lies outside the bin edges")]
    ValueOutOfBins {
        attribute: String,
        element: String,
        value: f64,
    },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("invalid binning spec for `{attribute}`: {reason}")]
    InvalidBinning { attribute: String, reason: String },
    #[error("element table: {0}")]
    Table(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Element,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
}

/// `(head, relation, tail)` with an attribute head and an element tail.
/// Field order gives the canonical sort: relation, then head, then tail.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub relation: String,
    pub head: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub attribute: String,
    /// `e0 < e1 < .. < ek`; bin `i` is `[e_i, e_{i+1})`, the last bin is closed.
    pub edges: Vec<f64>,
    pub label_prefix: String,
}

impl BinningSpec {
    pub fn new(attribute: impl Into<String>, edges: Vec<f64>, label_prefix: impl Into<String>) -> Result<Self> {
        let spec = Self {
            attribute: attribute.into(),
            edges,
            label_prefix: label_prefix.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| KgError::InvalidBinning {
            attribute: self.attribute.clone(),
            reason: reason.to_string(),
        };
        if self.edges.len() < 3 {
            return Err(bad("need at least 2 bins"));
        }
        if self.edges.iter().any(|e| !e.is_finite()) {
            return Err(bad("edges must be finite"));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("edges must be strictly increasing"));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }

    /// Zero-based bin of `value`, or `None` outside `[e0, ek]`.
    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let k = self.bin_count();
        if !(value >= self.edges[0] && value <= self.edges[k]) {
            return None;
        }
        // number of interior edges <= value
        let i = self.edges[1..k].partition_point(|&e| e <= value);
        Some(i)
    }

    /// Bin labels start at 1: `DensityGroup1`, `DensityGroup2`, ...
    pub fn label(&self, bin: usize) -> String {
        format!("{}{}", self.label_prefix, bin + 1)
    }

    /// Equal-frequency edges over the given values: interior edges sit halfway
    /// between neighbouring order statistics. Ties can merge bins, so fewer
    /// than `bins` bins may come back.
    pub fn equal_frequency(attribute: &str, values: &[f64], bins: usize) -> Result<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let fail = |reason: &str| KgError::InvalidBinning {
            attribute: attribute.to_string(),
            reason: reason.to_string(),
        };
        if n < 2 || bins < 2 {
            return Err(fail("too few values or bins"));
        }
        let mut edges = vec![v[0]];
        for i in 1..bins {
            let j = (i * n) / bins;
            if j == 0 {
                continue;
            }
            let e = (v[j - 1] + v[j]) / 2.0;
            if e > *edges.last().unwrap() && e < v[n - 1] {
                edges.push(e);
            }
        }
        edges.push(v[n - 1]);
        Self::new(attribute, edges, format!("{}Group", camel_case(attribute)))
    }
}

/// `electron_affinity` -> `ElectronAffinity`.
pub fn camel_case(name: &str) -> String {
    name.split(['_', ' ', '-'])
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut cs = p.chars();
            let first = cs.next().unwrap().to_ascii_uppercase();
            std::iter::once(first).chain(cs).collect::<String>()
        })
        .collect()
}

/// `state` -> `isStateOf`.
pub fn relation_name(attribute: &str) -> String {
    format!("is{}Of", camel_case(attribute))
}

/// Tabular element data: one row per element, one column per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTable {
    pub columns: Vec<String>,
    pub rows: Vec<(Element, Vec<Option<String>>)>,
}

impl ElementTable {
    /// Parses CSV with a `symbol` column. Lines starting with `#` are comments.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let sym_col = header
            .iter()
            .position(|h| h == "symbol")
            .ok_or_else(|| KgError::Table("missing `symbol` column".into()))?;
        let columns: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != sym_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let sym = rec.get(sym_col).unwrap_or_default();
            let element = Element::from_symbol(sym)
                .ok_or_else(|| KgError::Table(format!("unknown element symbol `{sym}`")))?;
            if !seen.insert(element) {
                return Err(KgError::Table(format!("duplicate row for {sym}")));
            }
            let values = rec
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != sym_col)
                .map(|(_, v)| (!v.is_empty()).then(|| v.to_string()))
                .collect();
            rows.push((element, values));
        }
        Ok(Self { columns, rows })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_csv(text.as_bytes())
    }

    /// Columns whose every non-missing cell parses as a number.
    pub fn is_continuous(&self, column: usize) -> bool {
        let mut any = false;
        for (_, vals) in &self.rows {
            if let Some(v) = &vals[column] {
                any = true;
                if v.parse::<f64>().is_err() {
                    return false;
                }
            }
        }
        any
    }

    pub fn numeric_values(&self, column: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|(_, v)| v[column].as_deref().and_then(|s| s.parse().ok()))
            .collect()
    }

    /// Equal-frequency specs with `bins` bins for every continuous column.
    pub fn default_binning(&self, bins: usize) -> Result<Vec<BinningSpec>> {
        (0..self.columns.len())
            .filter(|&c| self.is_continuous(c))
            .map(|c| BinningSpec::equal_frequency(&self.columns[c], &self.numeric_values(c), bins))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct KgStats {
    pub elements: usize,
    pub attributes: usize,
    pub entities: usize,
    pub relation_types: usize,
    pub triples: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElementKG {
    entities: BTreeMap<String, EntityKind>,
    /// Sorted by relation, head, tail; no duplicates.
    triples: Vec<Triple>,
    relation_types: BTreeSet<String>,
    binning: Vec<BinningSpec>,
    by_tail: BTreeMap<String, Vec<usize>>,
}

impl ElementKG {
    /// Assembles a graph. Element entities are `elements` plus every tail;
    /// attribute entities are exactly the triple heads.
    pub fn from_triples(
        elements: impl IntoIterator<Item = Element>,
        triples: impl IntoIterator<Item = Triple>,
        binning: Vec<BinningSpec>,
    ) -> Result<Self> {
        let mut entities = BTreeMap::new();
        for e in elements {
            entities.insert(e.symbol().to_string(), EntityKind::Element);
        }
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        for t in &triples {
            if Element::from_symbol(&t.tail).is_none() {
                return Err(KgError::UnknownEntity(t.tail.clone()));
            }
            entities.insert(t.tail.clone(), EntityKind::Element);
        }
        for t in &triples {
            if let Some(EntityKind::Element) = entities.get(&t.head) {
                return Err(KgError::Table(format!(
                    "`{}` is used both as element and attribute",
                    t.head
                )));
            }
            entities.insert(t.head.clone(), EntityKind::Attribute);
        }
        let triples: Vec<Triple> = triples.into_iter().collect();
        let relation_types = triples.iter().map(|t| t.relation.clone()).collect();
        let mut by_tail: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in triples.iter().enumerate() {
            by_tail.entry(t.tail.clone()).or_default().push(i);
        }
        Ok(Self {
            entities,
            triples,
            relation_types,
            binning,
            by_tail,
        })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn binning(&self) -> &[BinningSpec] {
        &self.binning
    }

    pub fn relation_types(&self) -> impl Iterator<Item = &str> {
        self.relation_types.iter().map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = Entity> + '_ {
        self.entities.iter().map(|(n, k)| Entity {
            name: n.clone(),
            kind: *k,
        })
    }

    pub fn entity_kind(&self, name: &str) -> Option<EntityKind> {
        self.entities.get(name).copied()
    }

    /// Element entity names in sorted order.
    pub fn elements(&self) -> impl Iterator<Item = &str> {
        self.entities_of(EntityKind::Element)
    }

    /// Attribute entity names in sorted order.
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.entities_of(EntityKind::Attribute)
    }

    fn entities_of(&self, kind: EntityKind) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .filter(move |(_, k)| **k == kind)
            .map(|(n, _)| n.as_str())
    }

    /// Triples whose tail is `element`, sorted by relation then head.
    pub fn neighbors_of_element(&self, element: &str) -> Result<Vec<&Triple>> {
        match self.entities.get(element) {
            Some(EntityKind::Element) => Ok(self
                .by_tail
                .get(element)
                .map(|ix| ix.iter().map(|&i| &self.triples[i]).collect())
                .unwrap_or_default()),
            _ => Err(KgError::UnknownEntity(element.to_string())),
        }
    }

    pub fn stats(&self) -> KgStats {
        let elements = self.elements().count();
        let attributes = self.attributes().count();
        KgStats {
            elements,
            attributes,
            entities: self.entities.len(),
            relation_types: self.relation_types.len(),
            triples: self.triples.len(),
        }
    }

    /// `head<TAB>relation<TAB>tail` lines in canonical order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
        }
        out
    }

    /// Reads triples written by [`ElementKG::to_tsv`]. Elements without
    /// triples are not recoverable from the TSV alone, so pass them in
    /// `elements` when they matter.
    pub fn from_tsv(text: &str, elements: impl IntoIterator<Item = Element>, binning: Vec<BinningSpec>) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(KgError::Parse {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, got {}", parts.len()),
                });
            }
            triples.push(Triple::new(parts[0], parts[1], parts[2]));
        }
        Self::from_triples(elements, triples, binning)
    }
}

/// `kg_stats` as a free function.
pub fn kg_stats(kg: &ElementKG) -> KgStats {
    kg.stats()
}

/// Builds the graph: discrete cells become attribute entities verbatim,
/// continuous cells become their bin label. Missing cells yield no triple.
pub fn build_kg(table: &ElementTable, binning: &[BinningSpec]) -> Result<ElementKG> {
    for spec in binning {
        spec.validate()?;
    }
    let mut used = Vec::new();
    let mut triples = Vec::new();
    for (c, column) in table.columns.iter().enumerate() {
        let relation = relation_name(column);
        let spec = if table.is_continuous(c) {
            let spec = binning
                .iter()
                .find(|b| &b.attribute == column)
                .ok_or_else(|| KgError::MissingBinningSpec(column.clone()))?;
            used.push(spec.clone());
            Some(spec)
        } else {
            None
        };
        for (element, values) in &table.rows {
            let Some(cell) = &values[c] else { continue };
            let head = match spec {
                None => cell.clone(),
                Some(spec) => {
                    let value: f64 = cell.parse().expect("continuous column");
                    let bin = spec.bin_of(value).ok_or_else(|| KgError::ValueOutOfBins {
                        attribute: column.clone(),
                        element: element.symbol().to_string(),
                        value,
                    })?;
                    spec.label(bin)
                }
            };
            triples.push(Triple::new(head, relation.clone(), element.symbol()));
        }
    }
    ElementKG::from_triples(table.rows.iter().map(|(e, _)| *e), triples, used)
}

/// Sidecar format: `attribute<TAB>label_prefix<TAB>e0,e1,...` per line.
pub fn binning_to_tsv(specs: &[BinningSpec]) -> String {
    let mut out = String::from("# attribute\tlabel prefix\tbin edges (ascending)\n");
    for s in specs {
        let edges: Vec<String> = s.edges.iter().map(|e| format!("{e:?}")).collect();
        let _ = writeln!(out, "{}\t{}\t{}", s.attribute, s.label_prefix, edges.join(","));
    }
    out
}

pub fn binning_from_tsv(text: &str) -> Result<Vec<BinningSpec>> {
    let mut specs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| KgError::Parse { line: i + 1, message };
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, got {}", parts.len())));
        }
        let edges = parts[2]
            .split(',')
            .map(|e| e.trim().parse::<f64>().map_err(|_| err(format!("bad edge `{e}`"))))
            .collect::<Result<Vec<_>>>()?;
        specs.push(BinningSpec::new(parts[0], edges, parts[1])?);
    }
    Ok(specs)
}

pub const BUNDLED_ELEMENTS_CSV: &str = include_str!("../data/elements.csv");
pub const BUNDLED_BINNING_TSV: &str = include_str!("../data/binning.tsv");

/// The bundled periodic table with the reference binning.
pub fn bundled_kg() -> Result<ElementKG> {
    let table = ElementTable::from_csv_str(BUNDLED_ELEMENTS_CSV)?;
    let binning = binning_from_tsv(BUNDLED_BINNING_TSV)?;
    build_kg(&table, &binning)
}
