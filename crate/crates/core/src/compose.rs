//! Catalog queries and composition: discovery, certified-only resolution,
//! contract-chain plan search and provenance-carrying composed builds.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{capped_tier, AssuranceLevel, CertState, CertificationRecord};
use crate::contracts::{check_compatibility, parse_contract, CompatibilityReport, InterfaceContract};
use crate::digests::{
    canonicalize, content_digest, dependency_graph_digest, from_document, to_document, DependencyRef, Digest, Document,
    ModuleId,
};
use crate::provenance::{generate_statement, verify_envelope, wrap_envelope, Envelope, TrustRootSet};
use crate::signing::EphemeralSigner;
use crate::store::ArtifactStore;
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComposeError {
    #[error("unknown module {0}")]
    UnknownModule(ModuleId),
    #[error("{0} in the dependency closure is not certified")]
    UncertifiedInClosure(ModuleId),
    #[error("dependency {0} is not certified")]
    UncertifiedDependency(ModuleId),
    #[error("dependency {0} has been revoked")]
    RevokedDependency(ModuleId),
    #[error("stored content of {0} does not match its recorded digest")]
    DigestMismatch(ModuleId),
    #[error("provenance of {module} does not verify: {reason}")]
    ProvenanceFailure { module: ModuleId, reason: String },
    #[error("no chain of certified modules connects source to goal")]
    NoPlanFound,
    #[error("shortest chain needs {shortest} stages, more than the allowed {max_depth}")]
    DepthExceeded { max_depth: usize, shortest: usize },
    #[error("maxDepth must be at least 1")]
    InvalidDepth,
    #[error("plan stage {module} is no longer valid: {reason}")]
    StaleArtifact { module: ModuleId, reason: String },
    #[error("malformed constraint: {0}")]
    MalformedConstraint(String),
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("cannot produce composition provenance: {0}")]
    Provenance(String),
}

impl ComposeError {
    /// The module the error names, when it names one.
    pub fn module(&self) -> Option<&ModuleId> {
        match self {
            ComposeError::UnknownModule(m)
            | ComposeError::UncertifiedInClosure(m)
            | ComposeError::UncertifiedDependency(m)
            | ComposeError::RevokedDependency(m)
            | ComposeError::DigestMismatch(m)
            | ComposeError::ProvenanceFailure { module: m, .. }
            | ComposeError::StaleArtifact { module: m, .. } => Some(m),
            _ => None,
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            ComposeError::UnknownModule(_) => "UnknownModule",
            ComposeError::UncertifiedInClosure(_) => "UncertifiedInClosure",
            ComposeError::UncertifiedDependency(_) => "UncertifiedDependency",
            ComposeError::RevokedDependency(_) => "RevokedDependency",
            ComposeError::DigestMismatch(_) => "DigestMismatch",
            ComposeError::ProvenanceFailure { .. } => "ProvenanceFailure",
            ComposeError::NoPlanFound => "NoPlanFound",
            ComposeError::DepthExceeded { .. } => "DepthExceeded",
            ComposeError::InvalidDepth => "InvalidDepth",
            ComposeError::StaleArtifact { .. } => "StaleArtifact",
            ComposeError::MalformedConstraint(_) => "MalformedConstraint",
            ComposeError::MalformedPlan(_) => "MalformedPlan",
            ComposeError::Storage(_) => "Storage",
            ComposeError::Provenance(_) => "Provenance",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SecurityAttributes {
    pub required_permissions: BTreeSet<String>,
    pub threat_assumptions: Vec<String>,
}

/// Everything the registry knows about one module version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModuleRecord {
    pub module: ModuleId,
    pub artifact_digest: Digest,
    /// Contract document as submitted.
    pub contract: Document,
    pub security_attributes: SecurityAttributes,
    pub assurance_level: Option<AssuranceLevel>,
    /// Declared direct dependencies.
    pub dependencies: Vec<DependencyRef>,
    /// Digest over the transitive closure.
    pub dependency_digest: Digest,
    pub provenance_envelope: Envelope,
    /// The two independently produced build digests from the submission.
    pub build_digests: Vec<Digest>,
    /// Index of the latest log entry concerning this module.
    pub log_index: u64,
    pub certification: CertificationRecord,
}

impl ModuleRecord {
    pub fn state(&self) -> CertState {
        self.certification.state
    }

    pub fn contract(&self) -> Option<InterfaceContract> {
        parse_contract(&self.contract).ok()
    }

    /// Log integration time of the submission, which anchors the
    /// provenance signature's validity check.
    pub fn submitted_at(&self) -> Timestamp {
        self.certification.history[0].timestamp
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("record is representable")
    }

    pub fn from_document(doc: &Document) -> Result<Self, String> {
        from_document(doc).map_err(|e| e.to_string())
    }

    pub fn as_dependency(&self) -> DependencyRef {
        DependencyRef { name: self.module.name.clone(), version: self.module.version, digest: self.artifact_digest }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CompositionRecord {
    pub log_index: u64,
    pub composed_digest: Digest,
    pub plan: AssemblyPlan,
    pub envelope: Envelope,
}

/// Point-in-time view of all module records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    modules: BTreeMap<ModuleId, ModuleRecord>,
    compositions: Vec<CompositionRecord>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &ModuleId) -> Option<&ModuleRecord> {
        self.modules.get(id)
    }

    pub fn get_mut(&mut self, id: &ModuleId) -> Option<&mut ModuleRecord> {
        self.modules.get_mut(id)
    }

    pub fn contains(&self, id: &ModuleId) -> bool {
        self.modules.contains_key(id)
    }

    pub fn insert(&mut self, record: ModuleRecord) {
        self.modules.insert(record.module.clone(), record);
    }

    pub fn records(&self) -> impl Iterator<Item = &ModuleRecord> {
        self.modules.values()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn compositions(&self) -> &[CompositionRecord] {
        &self.compositions
    }

    pub fn push_composition(&mut self, c: CompositionRecord) {
        self.compositions.push(c);
    }

    pub fn to_document(&self) -> Document {
        Document::map([
            (
                "compositions",
                Document::List(self.compositions.iter().map(|c| to_document(c).expect("representable")).collect()),
            ),
            ("modules", Document::List(self.modules.values().map(ModuleRecord::to_document).collect())),
        ])
    }

    /// Digest over every record; equal catalogs have equal digests.
    pub fn digest(&self) -> Digest {
        self.to_document().digest()
    }

    /// Transitive dependencies of `id` (excluding `id`), breadth-first.
    /// Missing records end the walk along that edge.
    pub fn closure(&self, id: &ModuleId) -> Vec<ModuleId> {
        let mut seen = BTreeSet::from([id.clone()]);
        let mut queue = VecDeque::from([id.clone()]);
        let mut out = Vec::new();
        while let Some(node) = queue.pop_front() {
            let Some(rec) = self.modules.get(&node) else { continue };
            for dep in &rec.dependencies {
                let dep_id = dep.module_id();
                if seen.insert(dep_id.clone()) {
                    out.push(dep_id.clone());
                    queue.push_back(dep_id);
                }
            }
        }
        out
    }

    /// Closure refs using the catalog's recorded digests, plus any declared
    /// reference that has no record.
    pub fn closure_refs(&self, declared: &[DependencyRef]) -> Vec<DependencyRef> {
        let mut out: Vec<DependencyRef> = Vec::new();
        let mut seen: BTreeSet<ModuleId> = BTreeSet::new();
        let mut queue: VecDeque<DependencyRef> = declared.iter().cloned().collect();
        while let Some(dep) = queue.pop_front() {
            let id = dep.module_id();
            if !seen.insert(id.clone()) {
                continue;
            }
            match self.modules.get(&id) {
                Some(rec) => {
                    out.push(rec.as_dependency());
                    queue.extend(rec.dependencies.iter().cloned());
                }
                None => out.push(dep),
            }
        }
        out
    }
}

/// Minimum tier over a certified module and its transitive dependencies.
pub fn effective_assurance(catalog: &Catalog, id: &ModuleId) -> Result<AssuranceLevel, ComposeError> {
    let tier_of = |node: &ModuleId| -> Result<AssuranceLevel, ComposeError> {
        let rec = catalog.get(node).ok_or_else(|| ComposeError::UncertifiedInClosure(node.clone()))?;
        if rec.state() != CertState::Certified {
            return Err(ComposeError::UncertifiedInClosure(node.clone()));
        }
        Ok(rec.assurance_level.unwrap_or(AssuranceLevel::L0))
    };
    let own = tier_of(id)?;
    let deps = catalog.closure(id).iter().map(tier_of).collect::<Result<Vec<_>, _>>()?;
    Ok(capped_tier(own, deps))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionConstraint {
    pub min_assurance: AssuranceLevel,
    pub required_contract: Option<InterfaceContract>,
    pub permission_ceiling: Option<BTreeSet<String>>,
    pub name_pattern: Option<glob::Pattern>,
}

impl Default for ResolutionConstraint {
    fn default() -> Self {
        ResolutionConstraint {
            min_assurance: AssuranceLevel::L0,
            required_contract: None,
            permission_ceiling: None,
            name_pattern: None,
        }
    }
}

impl ResolutionConstraint {
    pub fn with_pattern(mut self, pattern: &str) -> Result<Self, ComposeError> {
        self.name_pattern =
            Some(glob::Pattern::new(pattern).map_err(|e| ComposeError::MalformedConstraint(e.to_string()))?);
        Ok(self)
    }

    pub fn to_document(&self) -> Document {
        let mut m = BTreeMap::new();
        m.insert("minAssurance".to_string(), Document::from(self.min_assurance.name()));
        if let Some(c) = &self.required_contract {
            m.insert("requiredContract".into(), c.to_document());
        }
        if let Some(p) = &self.permission_ceiling {
            m.insert("permissionCeiling".into(), Document::List(p.iter().map(|s| s.as_str().into()).collect()));
        }
        if let Some(p) = &self.name_pattern {
            m.insert("namePattern".into(), p.as_str().into());
        }
        Document::Map(m)
    }

    pub fn from_document(doc: &Document) -> Result<Self, ComposeError> {
        let bad = |s: String| ComposeError::MalformedConstraint(s);
        let map = doc.as_map().ok_or_else(|| bad("constraint must be a map".into()))?;
        let allowed = ["minAssurance", "requiredContract", "permissionCeiling", "namePattern"];
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(bad(format!("unknown key `{k}`")));
        }
        let mut c = ResolutionConstraint::default();
        if let Some(level) = map.get("minAssurance").filter(|d| !d.is_null()) {
            c.min_assurance =
                level.as_str().ok_or_else(|| bad("minAssurance must be a string".into()))?.parse().map_err(bad)?;
        }
        if let Some(contract) = map.get("requiredContract").filter(|d| !d.is_null()) {
            c.required_contract = Some(parse_contract(contract).map_err(|e| bad(e.to_string()))?);
        }
        if let Some(list) = map.get("permissionCeiling").filter(|d| !d.is_null()) {
            let list = list.as_list().ok_or_else(|| bad("permissionCeiling must be a list".into()))?;
            let perms = list
                .iter()
                .map(|p| p.as_str().map(str::to_string).ok_or_else(|| bad("permissions are strings".into())))
                .collect::<Result<BTreeSet<_>, _>>()?;
            c.permission_ceiling = Some(perms);
        }
        if let Some(p) = map.get("namePattern").filter(|d| !d.is_null()) {
            c = c.with_pattern(p.as_str().ok_or_else(|| bad("namePattern must be a string".into()))?)?;
        }
        Ok(c)
    }

    fn admits(&self, catalog: &Catalog, rec: &ModuleRecord) -> bool {
        if rec.state() != CertState::Certified {
            return false;
        }
        match effective_assurance(catalog, &rec.module) {
            Ok(level) if level >= self.min_assurance => {}
            _ => return false,
        }
        if let Some(ceiling) = &self.permission_ceiling {
            if !rec.security_attributes.required_permissions.is_subset(ceiling) {
                return false;
            }
        }
        if let Some(p) = &self.name_pattern {
            if !p.matches(&rec.module.name) {
                return false;
            }
        }
        if let Some(required) = &self.required_contract {
            match rec.contract() {
                Some(c) if check_compatibility(&c, required).compatible => {}
                _ => return false,
            }
        }
        true
    }
}

/// Certified modules satisfying every constraint, by name ascending then
/// version descending.
pub fn discover<'a>(catalog: &'a Catalog, constraints: &ResolutionConstraint) -> Vec<&'a ModuleRecord> {
    let mut out: Vec<&ModuleRecord> = catalog.records().filter(|r| constraints.admits(catalog, r)).collect();
    out.sort_by(|a, b| a.module.name.cmp(&b.module.name).then(b.module.version.cmp(&a.module.version)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResolvedNode {
    pub module: ModuleId,
    pub artifact_digest: Digest,
    pub dependency_digest: Digest,
    pub assurance_level: AssuranceLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResolvedEdge {
    pub from: ModuleId,
    pub to: ModuleId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResolvedGraph {
    pub root: ModuleId,
    pub nodes: Vec<ResolvedNode>,
    pub edges: Vec<ResolvedEdge>,
}

impl ResolvedGraph {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("graph is representable")
    }
}

/// Checks one node from raw storage: state, content digest, closure digest
/// and provenance.
fn check_node<'a>(
    catalog: &'a Catalog,
    artifacts: &dyn ArtifactStore,
    roots: &TrustRootSet,
    id: &ModuleId,
) -> Result<&'a ModuleRecord, ComposeError> {
    let rec = catalog.get(id).ok_or_else(|| ComposeError::UncertifiedDependency(id.clone()))?;
    match rec.state() {
        CertState::Certified => {}
        CertState::Revoked => return Err(ComposeError::RevokedDependency(id.clone())),
        _ => return Err(ComposeError::UncertifiedDependency(id.clone())),
    }
    let bytes = artifacts.get(&rec.artifact_digest).map_err(|e| ComposeError::Storage(e.to_string()))?;
    if bytes.map(|b| content_digest(&b)) != Some(rec.artifact_digest) {
        return Err(ComposeError::DigestMismatch(id.clone()));
    }
    for dep in &rec.dependencies {
        let dep_rec =
            catalog.get(&dep.module_id()).ok_or_else(|| ComposeError::UncertifiedDependency(dep.module_id()))?;
        if dep_rec.artifact_digest != dep.digest {
            return Err(ComposeError::DigestMismatch(id.clone()));
        }
    }
    let recomputed = dependency_graph_digest(&catalog.closure_refs(&rec.dependencies))
        .map_err(|_| ComposeError::DigestMismatch(id.clone()))?;
    if recomputed != rec.dependency_digest {
        return Err(ComposeError::DigestMismatch(id.clone()));
    }
    let failure = |reason: String| ComposeError::ProvenanceFailure { module: id.clone(), reason };
    let statement =
        verify_envelope(&rec.provenance_envelope, roots, rec.submitted_at()).map_err(|e| failure(e.to_string()))?;
    if !statement.subject.iter().any(|s| s.digest == rec.artifact_digest) {
        return Err(failure("statement subject does not name the artifact".into()));
    }
    Ok(rec)
}

/// Resolves the closure of `root`, re-verifying every node from raw storage.
pub fn resolve(
    catalog: &Catalog,
    artifacts: &dyn ArtifactStore,
    roots: &TrustRootSet,
    root: &ModuleId,
) -> Result<ResolvedGraph, ComposeError> {
    if !catalog.contains(root) {
        return Err(ComposeError::UnknownModule(root.clone()));
    }
    let mut order = vec![root.clone()];
    order.extend(catalog.closure(root));
    let mut nodes = Vec::with_capacity(order.len());
    let mut edges = Vec::new();
    for id in &order {
        let rec = check_node(catalog, artifacts, roots, id)?;
        nodes.push(ResolvedNode {
            module: id.clone(),
            artifact_digest: rec.artifact_digest,
            dependency_digest: rec.dependency_digest,
            assurance_level: rec.assurance_level.unwrap_or(AssuranceLevel::L0),
        });
        edges.extend(rec.dependencies.iter().map(|d| ResolvedEdge { from: id.clone(), to: d.module_id() }));
    }
    Ok(ResolvedGraph { root: root.clone(), nodes, edges })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PlanStage {
    pub module: ModuleId,
    pub artifact_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AssemblyPlan {
    pub ordered_stages: Vec<PlanStage>,
    /// source→first, each adjacent pair, last→goal.
    pub pairwise_reports: Vec<CompatibilityReport>,
    pub plan_digest: Digest,
}

impl AssemblyPlan {
    pub fn new(ordered_stages: Vec<PlanStage>, pairwise_reports: Vec<CompatibilityReport>) -> Self {
        let plan_digest = Self::compute_digest(&ordered_stages, &pairwise_reports);
        AssemblyPlan { ordered_stages, pairwise_reports, plan_digest }
    }

    fn compute_digest(stages: &[PlanStage], reports: &[CompatibilityReport]) -> Digest {
        Document::map([
            ("orderedStages", to_document(stages).expect("representable")),
            ("pairwiseReports", to_document(reports).expect("representable")),
        ])
        .digest()
    }

    pub fn digest_matches(&self) -> bool {
        Self::compute_digest(&self.ordered_stages, &self.pairwise_reports) == self.plan_digest
    }

    pub fn stage_ids(&self) -> Vec<ModuleId> {
        self.ordered_stages.iter().map(|s| s.module.clone()).collect()
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("plan is representable")
    }

    pub fn from_document(doc: &Document) -> Result<Self, ComposeError> {
        let plan: AssemblyPlan = from_document(doc).map_err(|e| ComposeError::MalformedPlan(e.to_string()))?;
        if !plan.digest_matches() {
            return Err(ComposeError::MalformedPlan("planDigest does not match plan contents".into()));
        }
        Ok(plan)
    }
}

/// Shortest chain of certified modules carrying `source` to `goal`.
///
/// The constraint's `requiredContract` is not applied to intermediate
/// stages; `goal` plays that role.
pub fn synthesize_plan(
    catalog: &Catalog,
    source: &InterfaceContract,
    goal: &InterfaceContract,
    constraints: &ResolutionConstraint,
    max_depth: usize,
) -> Result<AssemblyPlan, ComposeError> {
    if max_depth == 0 {
        return Err(ComposeError::InvalidDepth);
    }
    let direct = check_compatibility(source, goal);
    if direct.compatible {
        return Ok(AssemblyPlan::new(Vec::new(), vec![direct]));
    }

    let stage_filter = ResolutionConstraint { required_contract: None, ..constraints.clone() };
    let mut candidates: Vec<(&ModuleRecord, InterfaceContract)> =
        discover(catalog, &stage_filter).into_iter().filter_map(|r| r.contract().map(|c| (r, c))).collect();
    candidates.sort_by(|a, b| a.0.module.cmp(&b.0.module));
    let n = candidates.len();
    let from_source: Vec<bool> = candidates.iter().map(|(_, c)| check_compatibility(source, c).compatible).collect();
    let to_goal: Vec<bool> = candidates.iter().map(|(_, c)| check_compatibility(c, goal).compatible).collect();
    let edge: Vec<Vec<bool>> = candidates
        .iter()
        .map(|(_, a)| candidates.iter().map(|(_, b)| check_compatibility(a, b).compatible).collect())
        .collect();

    // Frontier kept in lexicographic order; the first path to claim a node
    // is its smallest shortest prefix.
    let mut visited = vec![false; n];
    let mut frontier: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if from_source[i] {
            visited[i] = true;
            frontier.push(vec![i]);
        }
    }
    let mut depth = 1;
    while !frontier.is_empty() {
        if let Some(path) = frontier.iter().find(|p| to_goal[*p.last().expect("nonempty")]) {
            if depth > max_depth {
                return Err(ComposeError::DepthExceeded { max_depth, shortest: depth });
            }
            let stages: Vec<PlanStage> = path
                .iter()
                .map(|&i| PlanStage {
                    module: candidates[i].0.module.clone(),
                    artifact_digest: candidates[i].0.artifact_digest,
                })
                .collect();
            let mut reports = vec![check_compatibility(source, &candidates[path[0]].1)];
            for w in path.windows(2) {
                reports.push(check_compatibility(&candidates[w[0]].1, &candidates[w[1]].1));
            }
            reports.push(check_compatibility(&candidates[*path.last().expect("nonempty")].1, goal));
            return Ok(AssemblyPlan::new(stages, reports));
        }
        let mut next = Vec::new();
        for path in &frontier {
            let last = *path.last().expect("nonempty");
            for j in 0..n {
                if edge[last][j] && !visited[j] {
                    visited[j] = true;
                    let mut p = path.clone();
                    p.push(j);
                    next.push(p);
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    Err(ComposeError::NoPlanFound)
}

/// Checks each stage is still certified, unrevoked across its closure, and
/// intact in storage.
pub fn revalidate_plan(
    catalog: &Catalog,
    artifacts: &dyn ArtifactStore,
    roots: &TrustRootSet,
    plan: &AssemblyPlan,
) -> Result<(), ComposeError> {
    if !plan.digest_matches() {
        return Err(ComposeError::MalformedPlan("planDigest does not match plan contents".into()));
    }
    for stage in &plan.ordered_stages {
        let stale = |reason: String| ComposeError::StaleArtifact { module: stage.module.clone(), reason };
        let rec = catalog.get(&stage.module).ok_or_else(|| stale("not in catalog".into()))?;
        if rec.artifact_digest != stage.artifact_digest {
            return Err(stale("artifact digest changed".into()));
        }
        resolve(catalog, artifacts, roots, &stage.module).map_err(|e| stale(e.to_string()))?;
    }
    Ok(())
}

/// Bytes of a composed artifact: a canonical manifest of stage digests.
pub fn composed_artifact(plan: &AssemblyPlan) -> Vec<u8> {
    let stages: Vec<Document> = plan
        .ordered_stages
        .iter()
        .map(|s| {
            Document::map([
                ("digest", s.artifact_digest.into()),
                ("name", s.module.name.as_str().into()),
                ("version", s.module.version.to_string().into()),
            ])
        })
        .collect();
    canonicalize(&Document::map([("composition", Document::List(stages))]))
}

pub fn plan_materials(plan: &AssemblyPlan) -> Vec<DependencyRef> {
    plan.ordered_stages
        .iter()
        .map(|s| DependencyRef { name: s.module.name.clone(), version: s.module.version, digest: s.artifact_digest })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition {
    pub plan: AssemblyPlan,
    pub artifact: Vec<u8>,
    pub composed_digest: Digest,
    pub envelope: Envelope,
}

/// Re-validates the plan, then builds and signs the composed artifact's
/// provenance with the builder's ephemeral certificate.
pub fn build_composition(
    catalog: &Catalog,
    artifacts: &dyn ArtifactStore,
    roots: &TrustRootSet,
    plan: &AssemblyPlan,
    build_record: &Document,
    signer: &EphemeralSigner,
    now: Timestamp,
) -> Result<Composition, ComposeError> {
    revalidate_plan(catalog, artifacts, roots, plan)?;
    let artifact = composed_artifact(plan);
    let composed_digest = content_digest(&artifact);
    let statement = generate_statement(build_record, composed_digest, &plan_materials(plan), now)
        .map_err(|e| ComposeError::Provenance(e.to_string()))?;
    let envelope = wrap_envelope(&statement, signer, now).map_err(|e| ComposeError::Provenance(e.to_string()))?;
    Ok(Composition { plan: plan.clone(), artifact, composed_digest, envelope })
}
