//! Core domain types: resource vectors, canonical-unit thresholds, and the
//! true-overhead arithmetic everything else builds on.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::de::{Deserialize, Deserializer};
use serde::ser::{Serialize, Serializer};

/// Arithmetic error on resource vectors.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResourceError {
    /// Subtraction would drive this resource below zero.
    #[error("resource {0:?} would go negative")]
    NegativeResource(String),
}

/// Invariant violation detected while constructing or validating domain values.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("resource name must be non-empty")]
    EmptyResourceName,
    #[error("partition name must be non-empty")]
    EmptyPartitionName,
    #[error("partition {partition:?}: threshold for {resource:?} must be at least 1")]
    ZeroThreshold { partition: String, resource: String },
    #[error("partition {partition:?} defines no threshold resources")]
    NoThresholds { partition: String },
    #[error("job id must be non-empty")]
    EmptyJobId,
    #[error("job {job_id:?} requests no resources")]
    EmptyRequest { job_id: String },
    #[error("node name must be non-empty")]
    EmptyNodeName,
    #[error("node {node:?}: duplicate job id {job_id:?}")]
    DuplicateJobId { node: String, job_id: String },
    #[error("node {node:?}: jobs request more {resource:?} than the node has")]
    OverAllocated { node: String, resource: String },
}

/// Non-negative integer quantity per named resource type.
///
/// Keys are short lowercase identifiers in fixed base units, e.g. `cpu_cores`,
/// `memory_mb`, `gpu_chips`, `scratch_gb`. An absent key means quantity 0 and
/// the stored form never keeps zero entries, so two vectors are equal exactly
/// when they agree on every resource.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResourceVector {
    entries: BTreeMap<String, u64>,
}

impl ResourceVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from `(name, quantity)` pairs. Zero quantities are
    /// normalized away; empty names are rejected.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, ValidationError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (name, qty) in pairs {
            let name = name.into();
            if name.is_empty() {
                return Err(ValidationError::EmptyResourceName);
            }
            if qty > 0 {
                *entries.entry(name).or_insert(0) += qty;
            }
        }
        Ok(Self { entries })
    }

    /// Quantity for `resource`, 0 when absent.
    pub fn get(&self, resource: &str) -> u64 {
        self.entries.get(resource).copied().unwrap_or(0)
    }

    /// True when every quantity is zero.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resources with a strictly positive quantity, in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Resource names with a strictly positive quantity, in name order.
    pub fn resources(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Component-wise sum over the union of keys.
    pub fn add(&self, other: &Self) -> Self {
        let mut entries = self.entries.clone();
        for (name, qty) in &other.entries {
            *entries.entry(name.clone()).or_insert(0) += qty;
        }
        Self { entries }
    }

    /// Component-wise difference over the union of keys. A component that
    /// would go negative is an error, never a clamp.
    pub fn subtract(&self, other: &Self) -> Result<Self, ResourceError> {
        let mut entries = self.entries.clone();
        for (name, qty) in &other.entries {
            let have = entries.get(name).copied().unwrap_or(0);
            if have < *qty {
                return Err(ResourceError::NegativeResource(name.clone()));
            }
            let left = have - qty;
            if left == 0 {
                entries.remove(name);
            } else {
                entries.insert(name.clone(), left);
            }
        }
        Ok(Self { entries })
    }

    /// True when `self[r] <= other[r]` for every resource.
    pub fn fits_within(&self, other: &Self) -> bool {
        self.entries.iter().all(|(name, qty)| other.get(name) >= *qty)
    }

    /// Component-wise scaling by `k`.
    pub fn scale(&self, k: u64) -> Self {
        if k == 0 {
            return Self::new();
        }
        Self {
            entries: self
                .entries
                .iter()
                .map(|(name, qty)| (name.clone(), qty * k))
                .collect(),
        }
    }
}

/// Component-wise difference over the union of keys; see
/// [`ResourceVector::subtract`].
pub fn resource_vector_subtract(
    a: &ResourceVector,
    b: &ResourceVector,
) -> Result<ResourceVector, ResourceError> {
    a.subtract(b)
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (name, qty)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}: {qty}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for ResourceVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ResourceVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = BTreeMap::<String, u64>::deserialize(deserializer)?;
        ResourceVector::from_pairs(entries).map_err(serde::de::Error::custom)
    }
}

/// Per-partition resource quantities defining one canonical unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalUnitThresholds {
    partition: String,
    per_unit: ResourceVector,
}

impl CanonicalUnitThresholds {
    /// Validates and builds a threshold set. Every quantity must be at least
    /// 1 and at least one threshold resource must be given.
    pub fn new<I, S>(partition: impl Into<String>, per_unit: I) -> Result<Self, ValidationError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let partition = partition.into();
        if partition.is_empty() {
            return Err(ValidationError::EmptyPartitionName);
        }
        let mut entries = Vec::new();
        for (name, qty) in per_unit {
            let name = name.into();
            if name.is_empty() {
                return Err(ValidationError::EmptyResourceName);
            }
            if qty == 0 {
                return Err(ValidationError::ZeroThreshold {
                    partition,
                    resource: name,
                });
            }
            entries.push((name, qty));
        }
        if entries.is_empty() {
            return Err(ValidationError::NoThresholds { partition });
        }
        let per_unit = ResourceVector::from_pairs(entries)?;
        Ok(Self { partition, per_unit })
    }

    pub fn partition(&self) -> &str {
        &self.partition
    }

    pub fn per_unit(&self) -> &ResourceVector {
        &self.per_unit
    }
}

/// One job's granted allocation on a node. Requests, not in-process usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobAllocation {
    pub job_id: String,
    pub user: String,
    pub requested: ResourceVector,
}

impl JobAllocation {
    pub fn new(
        job_id: impl Into<String>,
        user: impl Into<String>,
        requested: ResourceVector,
    ) -> Result<Self, ValidationError> {
        let job_id = job_id.into();
        if job_id.is_empty() {
            return Err(ValidationError::EmptyJobId);
        }
        if requested.is_empty() {
            return Err(ValidationError::EmptyRequest { job_id });
        }
        Ok(Self {
            job_id,
            user: user.into(),
            requested,
        })
    }
}

/// A node's total resources plus its job allocations at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSnapshot {
    pub timestamp: DateTime<Utc>,
    pub node: String,
    pub partition: String,
    pub total: ResourceVector,
    pub jobs: Vec<JobAllocation>,
}

impl NodeSnapshot {
    pub fn new(
        timestamp: DateTime<Utc>,
        node: impl Into<String>,
        partition: impl Into<String>,
        total: ResourceVector,
        jobs: Vec<JobAllocation>,
    ) -> Result<Self, ValidationError> {
        let snapshot = Self {
            timestamp,
            node: node.into(),
            partition: partition.into(),
            total,
            jobs,
        };
        snapshot.validate()?;
        Ok(snapshot)
    }

    /// Checks node-level invariants: non-empty names, unique job ids, and no
    /// over-allocation in any resource.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.node.is_empty() {
            return Err(ValidationError::EmptyNodeName);
        }
        if self.partition.is_empty() {
            return Err(ValidationError::EmptyPartitionName);
        }
        let mut seen = std::collections::BTreeSet::new();
        for job in &self.jobs {
            if job.job_id.is_empty() {
                return Err(ValidationError::EmptyJobId);
            }
            if job.requested.is_empty() {
                return Err(ValidationError::EmptyRequest {
                    job_id: job.job_id.clone(),
                });
            }
            if !seen.insert(&job.job_id) {
                return Err(ValidationError::DuplicateJobId {
                    node: self.node.clone(),
                    job_id: job.job_id.clone(),
                });
            }
        }
        let allocated = self.allocated();
        for (resource, qty) in allocated.iter() {
            if qty > self.total.get(resource) {
                return Err(ValidationError::OverAllocated {
                    node: self.node.clone(),
                    resource: resource.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Sum of job requests across all jobs on the node.
    pub fn allocated(&self) -> ResourceVector {
        self.jobs
            .iter()
            .fold(ResourceVector::new(), |acc, job| acc.add(&job.requested))
    }

    /// Unallocated resources, `total - sum of requests`.
    pub fn free(&self) -> Result<ResourceVector, ResourceError> {
        self.total.subtract(&self.allocated())
    }
}

/// Result of the canonical-unit count over a node's free resources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrueOverhead {
    /// Whole canonical units constructible from the free resources.
    pub units: u64,
    /// The raw unallocated quantities the count was taken over.
    pub free: ResourceVector,
    /// `free - units * per_unit`, restricted to threshold resources.
    pub sub_threshold_remainder: ResourceVector,
}

/// Counts whole canonical units in `free`: the minimum over threshold
/// resources of `floor(free[r] / per_unit[r])`. Resources absent from the
/// thresholds never constrain the count.
pub fn compute_true_overhead(
    free: &ResourceVector,
    thresholds: &CanonicalUnitThresholds,
) -> TrueOverhead {
    let units = thresholds
        .per_unit()
        .iter()
        .map(|(resource, per)| free.get(resource) / per)
        .min()
        .unwrap_or(0);
    let remainder = ResourceVector::from_pairs(
        thresholds
            .per_unit()
            .iter()
            .map(|(resource, per)| (resource, free.get(resource) - units * per)),
    )
    .expect("threshold resource names are valid");
    TrueOverhead {
        units,
        free: free.clone(),
        sub_threshold_remainder: remainder,
    }
}

/// Smallest whole number of canonical units covering `requested` in every
/// threshold dimension: the maximum over threshold resources of
/// `ceil(requested[r] / per_unit[r])`.
pub fn job_cu_size(requested: &ResourceVector, thresholds: &CanonicalUnitThresholds) -> u64 {
    thresholds
        .per_unit()
        .iter()
        .map(|(resource, per)| requested.get(resource).div_ceil(per))
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(pairs: &[(&str, u64)]) -> ResourceVector {
        ResourceVector::from_pairs(pairs.iter().map(|(n, q)| (n.to_string(), *q))).unwrap()
    }

    fn osg_cpu_thresholds() -> CanonicalUnitThresholds {
        CanonicalUnitThresholds::new("cpu", [("cpu_cores", 1), ("memory_mb", 2048)]).unwrap()
    }

    #[test]
    fn subtract_self_is_zero() {
        let a = rv(&[("cpu_cores", 4), ("memory_mb", 8)]);
        let diff = a.subtract(&a).unwrap();
        assert_eq!(diff, rv(&[("cpu_cores", 0), ("memory_mb", 0)]));
        assert!(diff.is_empty());
    }

    #[test]
    fn subtract_component_wise() {
        let a = rv(&[("cpu_cores", 10), ("memory_mb", 20480)]);
        let b = rv(&[("cpu_cores", 7), ("memory_mb", 13312)]);
        assert_eq!(
            a.subtract(&b).unwrap(),
            rv(&[("cpu_cores", 3), ("memory_mb", 7168)])
        );
    }

    #[test]
    fn subtract_underflow_is_an_error() {
        let a = rv(&[("cpu_cores", 1)]);
        let b = rv(&[("cpu_cores", 2)]);
        assert_eq!(
            a.subtract(&b),
            Err(ResourceError::NegativeResource("cpu_cores".into()))
        );
        // Absent key means 0, so subtracting anything from it underflows too.
        assert_eq!(
            rv(&[]).subtract(&rv(&[("gpu_chips", 1)])),
            Err(ResourceError::NegativeResource("gpu_chips".into()))
        );
    }

    #[test]
    fn zero_entries_are_normalized_away() {
        let v = rv(&[("cpu_cores", 0), ("memory_mb", 5)]);
        assert!(v.resources().eq(["memory_mb"]));
        assert_eq!(v.get("cpu_cores"), 0);
    }

    #[test]
    fn empty_resource_name_rejected() {
        assert_eq!(
            ResourceVector::from_pairs([("", 3u64)]),
            Err(ValidationError::EmptyResourceName)
        );
    }

    #[test]
    fn thresholds_reject_zero_and_empty() {
        let err = CanonicalUnitThresholds::new("x", [("cpu_cores", 0)]).unwrap_err();
        assert_eq!(
            err,
            ValidationError::ZeroThreshold {
                partition: "x".into(),
                resource: "cpu_cores".into()
            }
        );
        let err = CanonicalUnitThresholds::new("x", Vec::<(String, u64)>::new()).unwrap_err();
        assert_eq!(err, ValidationError::NoThresholds { partition: "x".into() });
    }

    // The four worked overhead cases for "1 CPU core and 2 GB of memory".
    #[test]
    fn true_overhead_reference_cases() {
        let thr = osg_cpu_thresholds();
        let cases: [(&[(&str, u64)], u64); 4] = [
            (&[("cpu_cores", 0), ("memory_mb", 999_999)], 0),
            (&[("cpu_cores", 3), ("memory_mb", 1024)], 0),
            (&[("cpu_cores", 3), ("memory_mb", 4096)], 2),
            (&[("cpu_cores", 3), ("memory_mb", 7168)], 3),
        ];
        for (free, expected) in cases {
            assert_eq!(compute_true_overhead(&rv(free), &thr).units, expected);
        }
    }

    #[test]
    fn true_overhead_ignores_non_threshold_resources() {
        let thr = CanonicalUnitThresholds::new("gpu", [("gpu_chips", 1)]).unwrap();
        let free = rv(&[("gpu_chips", 2), ("cpu_cores", 64)]);
        let overhead = compute_true_overhead(&free, &thr);
        assert_eq!(overhead.units, 2);
        assert!(overhead.sub_threshold_remainder.is_empty());
    }

    #[test]
    fn true_overhead_remainder() {
        let thr = osg_cpu_thresholds();
        let overhead = compute_true_overhead(&rv(&[("cpu_cores", 3), ("memory_mb", 4096)]), &thr);
        assert_eq!(overhead.units, 2);
        assert_eq!(overhead.sub_threshold_remainder, rv(&[("cpu_cores", 1)]));
        // No whole unit left uncounted.
        assert_eq!(
            compute_true_overhead(&overhead.sub_threshold_remainder, &thr).units,
            0
        );
    }

    #[test]
    fn job_cu_size_reference_cases() {
        let thr = osg_cpu_thresholds();
        assert_eq!(
            job_cu_size(&rv(&[("cpu_cores", 2), ("memory_mb", 4096)]), &thr),
            2
        );
        assert_eq!(job_cu_size(&rv(&[]), &thr), 0);
        // ceil(3072/2048) = 2 dominates ceil(1/1) = 1.
        assert_eq!(
            job_cu_size(&rv(&[("cpu_cores", 1), ("memory_mb", 3072)]), &thr),
            2
        );
    }

    #[test]
    fn snapshot_validation_catches_over_allocation() {
        let ts = "2024-01-01T00:00:00Z".parse().unwrap();
        let jobs = vec![
            JobAllocation::new("j1", "alice", rv(&[("cpu_cores", 5)])).unwrap(),
            JobAllocation::new("j2", "bob", rv(&[("cpu_cores", 4)])).unwrap(),
        ];
        let err = NodeSnapshot::new(ts, "n1", "cpu", rv(&[("cpu_cores", 8)]), jobs).unwrap_err();
        assert_eq!(
            err,
            ValidationError::OverAllocated {
                node: "n1".into(),
                resource: "cpu_cores".into()
            }
        );
    }

    #[test]
    fn snapshot_validation_catches_duplicate_job_ids() {
        let ts = "2024-01-01T00:00:00Z".parse().unwrap();
        let jobs = vec![
            JobAllocation::new("j1", "alice", rv(&[("cpu_cores", 1)])).unwrap(),
            JobAllocation::new("j1", "bob", rv(&[("cpu_cores", 1)])).unwrap(),
        ];
        let err = NodeSnapshot::new(ts, "n1", "cpu", rv(&[("cpu_cores", 8)]), jobs).unwrap_err();
        assert_eq!(
            err,
            ValidationError::DuplicateJobId {
                node: "n1".into(),
                job_id: "j1".into()
            }
        );
    }

    // Independent oracle: repeatedly subtract one unit until a threshold
    // resource would go negative. Plain integer arithmetic on purpose.
    fn greedy_units_2d(free: (u64, u64), per: (u64, u64)) -> u64 {
        let (mut a, mut b) = free;
        let mut count = 0;
        while a >= per.0 && b >= per.1 {
            a -= per.0;
            b -= per.1;
            count += 1;
        }
        count
    }

    #[test]
    fn closed_form_matches_greedy_oracle_exhaustively() {
        for pa in 1..=8u64 {
            for pb in 1..=8u64 {
                let thr =
                    CanonicalUnitThresholds::new("p", [("a", pa), ("b", pb)]).unwrap();
                for fa in 0..=64u64 {
                    for fb in 0..=64u64 {
                        let free = rv(&[("a", fa), ("b", fb)]);
                        let got = compute_true_overhead(&free, &thr).units;
                        assert_eq!(got, greedy_units_2d((fa, fb), (pa, pb)));
                    }
                }
            }
        }
    }

    fn arb_vector() -> impl Strategy<Value = ResourceVector> {
        proptest::collection::btree_map("[a-d]", 0u64..512, 0..4)
            .prop_map(|m| ResourceVector::from_pairs(m).unwrap())
    }

    fn arb_thresholds() -> impl Strategy<Value = CanonicalUnitThresholds> {
        proptest::collection::btree_map("[a-d]", 1u64..16, 1..3)
            .prop_map(|m| CanonicalUnitThresholds::new("p", m).unwrap())
    }

    proptest! {
        #[test]
        fn monotonicity(free in arb_vector(), thr in arb_thresholds(), bump in arb_vector()) {
            let before = compute_true_overhead(&free, &thr).units;
            let after = compute_true_overhead(&free.add(&bump), &thr).units;
            prop_assert!(after >= before);
        }

        #[test]
        fn zero_law(free in arb_vector(), thr in arb_thresholds()) {
            let units = compute_true_overhead(&free, &thr).units;
            let starved = thr.per_unit().iter().any(|(r, per)| free.get(r) < per);
            prop_assert_eq!(units == 0, starved);
        }

        #[test]
        fn scale_law(free in arb_vector(), thr in arb_thresholds(), k in 1u64..9) {
            let scaled_thr = CanonicalUnitThresholds::new(
                thr.partition(),
                thr.per_unit().iter().map(|(r, q)| (r.to_string(), q * k)),
            ).unwrap();
            prop_assert_eq!(
                compute_true_overhead(&free, &thr).units,
                compute_true_overhead(&free.scale(k), &scaled_thr).units
            );
        }

        #[test]
        fn residual_law(free in arb_vector(), thr in arb_thresholds()) {
            let overhead = compute_true_overhead(&free, &thr);
            prop_assert_eq!(
                compute_true_overhead(&overhead.sub_threshold_remainder, &thr).units,
                0
            );
        }

        #[test]
        fn job_cu_size_is_least_covering_count(req in arb_vector(), thr in arb_thresholds()) {
            let n = job_cu_size(&req, &thr);
            // n units cover the request on threshold resources...
            for (r, per) in thr.per_unit().iter() {
                prop_assert!(n * per >= req.get(r));
            }
            // ...and n - 1 units do not.
            if n > 0 {
                let covered = thr.per_unit().iter().all(|(r, per)| (n - 1) * per >= req.get(r));
                prop_assert!(!covered);
            }
        }

        #[test]
        fn add_then_subtract_round_trips(a in arb_vector(), b in arb_vector()) {
            prop_assert_eq!(a.add(&b).subtract(&b).unwrap(), a);
        }
    }
}
