//! Instance resolution and on-disk caching of exact solutions.

use std::path::{Path, PathBuf};

use linq_core::instances::{
    self, find_anchors, representative_set, AnchorSet, ANCHOR_FEASIBILITY_TOL,
};
use linq_core::mdp::{InstanceFile, InstanceMetadata, LinearMdp};
use linq_core::oracle::{solve_optimal, ExactSolution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::spec::{ExperimentSpec, GeneratorSpec, InstanceSource};

/// A resolved instance: the linear model, its anchors (or a representative
/// fallback), and provenance.
pub struct ResolvedInstance {
    pub lm: LinearMdp,
    pub anchors: AnchorSet,
    pub file: InstanceFile,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn instance_json(file: &InstanceFile) -> Result<String> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    Ok(text)
}

fn generate(generator: &GeneratorSpec, name: &str) -> Result<(LinearMdp, AnchorSet)> {
    match *generator {
        GeneratorSpec::RandomLinear {
            n_states,
            n_actions,
            n_features,
            discount,
            seed,
            anchored,
        } => Ok(instances::make_random_linear_mdp(
            n_states, n_actions, n_features, discount, seed, anchored,
        )?),
        GeneratorSpec::SoftAggregation {
            n_states,
            n_actions,
            n_features,
            discount,
            seed,
        } => Ok(instances::make_soft_aggregation_mdp(
            n_states, n_actions, n_features, discount, seed,
        )?),
        GeneratorSpec::LowerBound {
            inner_states,
            inner_actions,
            discount,
            seed,
        } => {
            let inner =
                instances::make_random_tabular(inner_states, inner_actions, discount, seed)?;
            let (lm, anchors, _) = instances::make_lower_bound_instance(&inner)?;
            let _ = name;
            Ok((lm, anchors))
        }
    }
}

/// Builds the instance named by the spec: generated deterministically or
/// loaded (and re-validated) from disk. Anchors are re-derived from the
/// features; instances without exact anchors fall back to a pivoted
/// representative set.
pub fn resolve(spec: &ExperimentSpec) -> Result<ResolvedInstance> {
    let (lm, anchors, metadata) = match &spec.instance {
        InstanceSource::Generator(g) => {
            let (lm, anchors) = generate(g, &spec.name)?;
            let metadata = InstanceMetadata {
                seed: g.seed(),
                generator: g.name().to_string(),
                name: spec.name.clone(),
            };
            (lm, anchors, metadata)
        }
        InstanceSource::Path { path } => {
            let (lm, file) = load_instance(path)?;
            let anchors = derive_anchors(&lm)?;
            let metadata = file.metadata;
            (lm, anchors, metadata)
        }
    };
    let file = InstanceFile::from_linear(&lm, metadata);
    let sha256 = sha256_hex(instance_json(&file)?.as_bytes());
    Ok(ResolvedInstance {
        lm,
        anchors,
        file,
        sha256,
    })
}

pub fn derive_anchors(lm: &LinearMdp) -> Result<AnchorSet> {
    if lm.features().is_stochastic() {
        if let Ok(set) = find_anchors(lm.features(), ANCHOR_FEASIBILITY_TOL) {
            return Ok(set);
        }
    }
    Ok(representative_set(lm.features())?)
}

pub fn load_instance(path: &Path) -> Result<(LinearMdp, InstanceFile)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::validation(format!("cannot read instance {}: {e}", path.display()))
    })?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("bad instance {}: {e}", path.display())))?;
    let lm = file.to_linear()?;
    Ok((lm, file))
}

/// Cached exact solution, keyed by the instance content hash and tolerance.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub instance_sha256: String,
    pub tolerance: f64,
    pub solution: ExactSolution,
}

pub fn solution_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.solution.json"))
}

pub fn instance_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.instance.json"))
}

/// Loads a cached solution if it matches the hash and tolerance; otherwise
/// solves and (best effort) writes the cache.
pub fn solve_cached(
    resolved: &ResolvedInstance,
    tolerance: f64,
    cache_path: Option<&Path>,
) -> Result<ExactSolution> {
    if let Some(path) = cache_path {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(cached) = serde_json::from_str::<SolutionFile>(&text) {
                if cached.instance_sha256 == resolved.sha256 && cached.tolerance == tolerance {
                    return Ok(cached.solution);
                }
            }
        }
    }
    let solution = solve_optimal(resolved.lm.mdp(), tolerance)?;
    if let Some(path) = cache_path {
        let file = SolutionFile {
            instance_sha256: resolved.sha256.clone(),
            tolerance,
            solution: solution.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
    }
    Ok(solution)
}
