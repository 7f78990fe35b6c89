//! Per-node billing: true overhead is absorbed by the provider, the
//! remaining billable resources are proportionally charged to the jobs on
//! the node. All rates and bills are exact rationals.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;

use crate::model::{compute_true_overhead, CanonicalUnitThresholds, NodeSnapshot, ResourceVector};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BillingError {
    #[error("node {node:?}: jobs request more {resource:?} than the node has")]
    OverAllocated { node: String, resource: String },
    #[error("partition {0:?} has no configured canonical-unit thresholds")]
    UnknownPartition(String),
}

/// Billable-over-requested rate multiplier for one resource on one node,
/// stored as a reduced fraction. Always at least 1 when produced by
/// [`bill_node`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rate(BigRational);

impl Rate {
    fn new(billable: u64, requested: u64) -> Self {
        debug_assert!(requested > 0);
        Rate(BigRational::new(
            BigInt::from(billable),
            BigInt::from(requested),
        ))
    }

    pub fn value(&self) -> &BigRational {
        &self.0
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_at_least_one(&self) -> bool {
        self.0 >= BigRational::one()
    }
}

/// One job's billed quantities, `requested * rate` per resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobBill {
    pub job_id: String,
    pub user: String,
    pub billed: BTreeMap<String, BigRational>,
}

/// Billing outcome for one node at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeBillingStatement {
    pub node: String,
    pub timestamp: DateTime<Utc>,
    pub overhead_units: u64,
    /// `units * per_unit`: the quantities discounted before billing.
    pub overhead_discount: ResourceVector,
    /// Billable threshold resources nobody requested; charged to no one.
    pub provider_loss: ResourceVector,
    /// Rate per resource, present only for resources with a positive total
    /// request on this node.
    pub rates: BTreeMap<String, Rate>,
    pub job_bills: Vec<JobBill>,
}

/// Bills one node snapshot: discounts `overhead_units * per_unit` from the
/// node, then spreads the remaining billable quantities proportionally over
/// the job requests. Non-threshold resources are billed at exactly what was
/// requested.
pub fn bill_node(
    snapshot: &NodeSnapshot,
    thresholds: &CanonicalUnitThresholds,
) -> Result<NodeBillingStatement, BillingError> {
    if snapshot.partition != thresholds.partition() {
        return Err(BillingError::UnknownPartition(snapshot.partition.clone()));
    }
    let requested_total = snapshot.allocated();
    let free = snapshot
        .total
        .subtract(&requested_total)
        .map_err(|crate::model::ResourceError::NegativeResource(resource)| {
            BillingError::OverAllocated {
                node: snapshot.node.clone(),
                resource,
            }
        })?;
    let overhead = compute_true_overhead(&free, thresholds);
    let overhead_discount = thresholds.per_unit().scale(overhead.units);

    // Billable pool: threshold resources keep total minus the discount,
    // everything else is billed at exactly the requested amount.
    let mut billable = BTreeMap::new();
    for (resource, per) in thresholds.per_unit().iter() {
        billable.insert(
            resource.to_string(),
            snapshot.total.get(resource) - overhead.units * per,
        );
    }
    for (resource, qty) in requested_total.iter() {
        billable.entry(resource.to_string()).or_insert(qty);
    }

    let mut rates = BTreeMap::new();
    let mut loss = Vec::new();
    for (resource, qty) in &billable {
        let requested = requested_total.get(resource);
        if requested > 0 {
            rates.insert(resource.clone(), Rate::new(*qty, requested));
        } else if *qty > 0 {
            loss.push((resource.clone(), *qty));
        }
    }
    let provider_loss =
        ResourceVector::from_pairs(loss).expect("resource names already validated");

    let job_bills = snapshot
        .jobs
        .iter()
        .map(|job| {
            let billed = job
                .requested
                .iter()
                .map(|(resource, qty)| {
                    let rate = &rates[resource];
                    (
                        resource.to_string(),
                        BigRational::from_integer(BigInt::from(qty)) * rate.value(),
                    )
                })
                .collect();
            JobBill {
                job_id: job.job_id.clone(),
                user: job.user.clone(),
                billed,
            }
        })
        .collect();

    Ok(NodeBillingStatement {
        node: snapshot.node.clone(),
        timestamp: snapshot.timestamp,
        overhead_units: overhead.units,
        overhead_discount,
        provider_loss,
        rates,
        job_bills,
    })
}

/// Per-user, per-resource totals billed across statements.
pub type UserBills = BTreeMap<String, BTreeMap<String, BigRational>>;

/// Sums job bills grouped by user and resource, exactly.
pub fn aggregate_user_bills(statements: &[NodeBillingStatement]) -> UserBills {
    let mut totals: UserBills = BTreeMap::new();
    for statement in statements {
        for bill in &statement.job_bills {
            let per_user = totals.entry(bill.user.clone()).or_default();
            for (resource, amount) in &bill.billed {
                let entry = per_user
                    .entry(resource.clone())
                    .or_insert_with(|| BigRational::from_integer(BigInt::from(0)));
                *entry += amount;
            }
        }
    }
    totals
}
