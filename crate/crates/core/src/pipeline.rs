// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dump-level operations shared by the CLI and the synthetic benchmark.

use rayon::prelude::*;

use crate::aggregation::{
    aggregate_daam, aggregate_selective, time_average, AggregatedMap, HeadMaps, HeadSet,
};
use crate::attention::compute_attention_map;
use crate::error::{Error, Result};
use crate::hrv::{
    bottom_k_heads, find_concept, hrv_attention, spatial_mean, top_k_heads, ConceptKeySet,
    HeadRelevanceVector, VoteAccumulator,
};
use crate::io::atnd::{AtndFile, ContentKind};
use crate::io::manifest::ConceptManifest;

/// Concept keys for every head, with concept labels.
#[derive(Debug, Clone)]
pub struct ConceptKeyBank {
    names: Vec<String>,
    sets: Vec<ConceptKeySet>,
}

impl ConceptKeyBank {
    pub fn from_atnd(file: &AtndFile, names: Vec<String>) -> Result<Self> {
        if names.len() != file.header().tokens as usize {
            return Err(Error::Shape(format!(
                "{} concept names for {} concept rows",
                names.len(),
                file.header().tokens
            )));
        }
        let sets = (0..file.header().heads)
            .map(|h| file.concept_keys(h, &names))
            .collect::<Result<_>>()?;
        Ok(Self { names, sets })
    }

    /// Reads a concept-key dump. Labels come from the `.json` sidecar when
    /// present, otherwise `concept_0`, `concept_1`, ...
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = AtndFile::read(path)?;
        let sidecar = ConceptManifest::sidecar_for(path);
        let names = if sidecar.is_file() {
            ConceptManifest::load(&sidecar)?.concepts
        } else {
            (0..file.header().tokens)
                .map(|i| format!("concept_{i}"))
                .collect()
        };
        Self::from_atnd(&file, names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn heads(&self) -> u32 {
        self.sets.len() as u32
    }

    pub fn get(&self, head: u32) -> &ConceptKeySet {
        &self.sets[head as usize]
    }

    pub fn new_accumulator(&self) -> Result<VoteAccumulator> {
        VoteAccumulator::new(self.names.clone(), self.heads())
    }
}

/// Time-averaged attention map of every head in a dump.
///
/// Maps dumps are averaged directly; query/key dumps are first turned into
/// maps one timestep at a time.
pub fn head_maps(dump: &AtndFile) -> Result<HeadMaps> {
    let heads = dump.header().heads;
    let mut out = HeadMaps::new(heads);
    for h in 0..heads {
        let maps = match dump.kind() {
            ContentKind::Maps => dump.maps(h)?,
            ContentKind::QueryKey => {
                let keys = dump.keys(h)?;
                dump.queries(h)?
                    .iter()
                    .map(|q| compute_attention_map(q, &keys))
                    .collect::<Result<Vec<_>>>()?
            }
            ContentKind::ConceptKeys => {
                return Err(Error::Format(
                    "concept-key dumps hold no attention maps".into(),
                ))
            }
        };
        out.insert(time_average(&maps)?)?;
    }
    Ok(out)
}

/// One vote per (head, timestep) of a query/key dump.
pub fn accumulate_votes(
    acc: &mut VoteAccumulator,
    dump: &AtndFile,
    bank: &ConceptKeyBank,
) -> Result<()> {
    if dump.header().heads != bank.heads() {
        return Err(Error::Shape(format!(
            "dump has {} heads, concept keys have {}",
            dump.header().heads,
            bank.heads()
        )));
    }
    for h in 0..dump.header().heads {
        for q in dump.queries(h)? {
            let score = spatial_mean(&hrv_attention(&q, bank.get(h))?);
            acc.accumulate(&score)?;
        }
    }
    Ok(())
}

/// Which heads an aggregation averages over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSelection {
    All,
    Top { concept: String, k: usize },
    Bottom { concept: String, k: usize },
    Explicit(Vec<u32>),
}

impl HeadSelection {
    /// `None` means every head.
    pub fn resolve(&self, hrvs: &[HeadRelevanceVector], total: u32) -> Result<Option<HeadSet>> {
        let lookup = |concept: &str| {
            find_concept(hrvs, concept).ok_or_else(|| Error::UnknownConcept {
                name: concept.to_string(),
                available: hrvs.iter().map(|v| v.concept.clone()).collect(),
            })
        };
        let check = |v: &HeadRelevanceVector| {
            if v.heads() == total {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "relevance vector covers {} heads, dump has {total}",
                    v.heads()
                )))
            }
        };
        match self {
            HeadSelection::All => Ok(None),
            HeadSelection::Top { concept, k } => {
                let v = lookup(concept)?;
                check(v)?;
                Ok(Some(top_k_heads(v, *k)?))
            }
            HeadSelection::Bottom { concept, k } => {
                let v = lookup(concept)?;
                check(v)?;
                Ok(Some(bottom_k_heads(v, *k)?))
            }
            HeadSelection::Explicit(ids) => Ok(Some(HeadSet::new(ids.iter().copied(), total)?)),
        }
    }

    /// Short label such as `top30-animals`.
    pub fn label(&self) -> String {
        match self {
            HeadSelection::All => "all".into(),
            HeadSelection::Top { concept, k } => format!("top{k}-{concept}"),
            HeadSelection::Bottom { concept, k } => format!("bottom{k}-{concept}"),
            HeadSelection::Explicit(_) => "explicit".into(),
        }
    }
}

/// All-heads aggregation for `None`, selective otherwise.
pub fn aggregate(
    maps: &HeadMaps,
    heads: Option<&HeadSet>,
    target_r: usize,
) -> Result<AggregatedMap> {
    match heads {
        None => aggregate_daam(maps, target_r),
        Some(set) => aggregate_selective(maps, set, target_r),
    }
}

/// Maps `f` over `0..n` on `jobs` threads; results keep index order.
pub fn parallel_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}
