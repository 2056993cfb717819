//! Consumer dispatch queues ordered by dependence resolution.

use std::collections::BTreeSet;

use serde::Serialize;

use super::relation::{DepClass, DependenceRelation};
use super::space::InstanceSpace;
use crate::config::Granularity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdQueue {
    pub granularity: Granularity,
    /// Consumer unit indices (dispatch order numbering) in resolution order.
    pub order: Vec<usize>,
    pub consumer_total: usize,
}

impl IdQueue {
    /// Id tuples of the queue entries, highest dimension first.
    pub fn tuples(&self, space: &InstanceSpace) -> Vec<Vec<u64>> {
        self.order
            .iter()
            .map(|&u| {
                let mut t = match self.granularity {
                    Granularity::WorkGroup => space.group_tuple(u),
                    Granularity::WorkItem if space.is_ndrange() => space.global_tuple(u),
                    Granularity::WorkItem => vec![u as u64],
                };
                t.reverse();
                t
            })
            .collect()
    }
}

/// Producer units each consumer unit waits for, at the given granularity.
pub fn unit_deps(rel: &DependenceRelation, granularity: Granularity) -> Vec<BTreeSet<usize>> {
    match granularity {
        Granularity::WorkItem => rel.deps.clone(),
        Granularity::WorkGroup => {
            let (ps, cs) = (&rel.producer_space, &rel.consumer_space);
            let mut out = vec![BTreeSet::new(); cs.group_count()];
            for (c, d) in rel.deps.iter().enumerate() {
                out[cs.group_of(c)].extend(d.iter().map(|&p| ps.group_of(p)));
            }
            out
        }
    }
}

/// Orders consumer units as producers complete in index order.
///
/// A unit becomes ready once its highest-numbered dependence completes;
/// units without dependences are ready before any producer finishes. Units
/// that become ready together keep their dispatch order.
pub fn readiness_order(deps: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deps.len()).collect();
    order.sort_by_key(|&u| (deps[u].last().map_or(0, |m| m + 1), u));
    order
}

/// Builds the consumer queue for a few-producer relation.
pub fn build_id_queue(
    rel: &DependenceRelation,
    granularity: Granularity,
    cap: usize,
) -> Result<IdQueue> {
    if !matches!(rel.klass, DepClass::FewToFew | DepClass::FewToMany) || rel.conservative {
        return Err(Error::Dependence(format!(
            "id queue requires a few-producer relation, `{}` -> `{}` is {:?}",
            rel.producer, rel.consumer, rel.klass
        )));
    }
    let total = match granularity {
        Granularity::WorkItem => rel.consumer_space.count(),
        Granularity::WorkGroup => rel.consumer_space.group_count(),
    };
    if total > cap {
        return Err(Error::QueueTooLarge {
            requested: total,
            cap,
        });
    }
    let order = readiness_order(&unit_deps(rel, granularity));
    Ok(IdQueue {
        granularity,
        order,
        consumer_total: total,
    })
}

/// For each group slot of a group queue, the local item order inside it.
///
/// Items of one group are ordered by the item-level readiness of the relation.
pub fn item_order_within_groups(
    rel: &DependenceRelation,
    group_queue: &IdQueue,
) -> Vec<Vec<usize>> {
    let cs = &rel.consumer_space;
    let gs = cs.group_size();
    group_queue
        .order
        .iter()
        .map(|&g| {
            let mut items: Vec<usize> = (0..gs).collect();
            items.sort_by_key(|&l| (rel.deps[g * gs + l].last().map_or(0, |m| m + 1), l));
            items
        })
        .collect()
}
