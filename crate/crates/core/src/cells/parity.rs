//! Parameter counting and the hidden-size solver that keeps a bilinear model
//! within a linear reference's learnable-parameter budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use super::params::CellKind;
use super::CellError;
use crate::numeric::GroupKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u128,
    pub by_group: BTreeMap<GroupKind, u128>,
}

/// Exact count of trainable scalars, itemized by optimizer group.
pub fn count_params(config: &ModelConfig) -> ParamCount {
    let m = config.hidden as u128;
    let c = config.pool as u128;
    let mut linear = 0u128;
    let mut pool_proj = 0u128;
    let mut integrate = 0u128;
    for layer in 0..config.layers {
        let n = config.layer_input(layer) as u128;
        linear += 4 * (m * n + m * m + m);
        if config.cell == CellKind::Bilinear {
            pool_proj += n * c + c * m;
            integrate += 4 * m * c;
        }
    }
    let mut by_group = BTreeMap::new();
    for g in GroupKind::ALL {
        by_group.insert(g, 0u128);
    }
    *by_group.get_mut(&GroupKind::Linear).unwrap() += linear;
    *by_group.get_mut(&GroupKind::Bilinear).unwrap() += pool_proj;
    *by_group.get_mut(&config.integration_group).unwrap() += integrate;
    *by_group.get_mut(&GroupKind::Head).unwrap() += config.head.dense_param_count(config.hidden) as u128;
    *by_group.get_mut(&GroupKind::Embedding).unwrap() += config.head.embedding_param_count() as u128;
    ParamCount {
        total: by_group.values().sum(),
        by_group,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityResult {
    pub reference_count: u128,
    /// Largest hidden size whose model fits the budget.
    pub hidden: usize,
    pub count: u128,
    /// `reference_count - count`.
    pub slack: u128,
    /// `count(hidden + 1) - count(hidden)`.
    pub next_step: u128,
}

impl ParityResult {
    pub fn config(&self, reference: &ModelConfig, pool: usize) -> ModelConfig {
        ModelConfig {
            cell: CellKind::Bilinear,
            hidden: self.hidden,
            pool,
            ..*reference
        }
    }
}

/// Largest `m` such that a bilinear model with pool size `pool` and the
/// reference's input width, depth and head has no more parameters than the
/// reference. The count is strictly increasing in `m`, so the search is a
/// doubling bracket followed by bisection.
pub fn solve_parity(reference: &ModelConfig, pool: usize) -> Result<ParityResult, CellError> {
    let budget = count_params(reference).total;
    let count_at = |m: usize| {
        count_params(&ModelConfig {
            cell: CellKind::Bilinear,
            hidden: m,
            pool,
            ..*reference
        })
        .total
    };
    if count_at(1) > budget {
        return Err(CellError::Infeasible {
            pool,
            budget,
            minimum: count_at(1),
        });
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while count_at(hi) <= budget {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_at(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let count = count_at(lo);
    Ok(ParityResult {
        reference_count: budget,
        hidden: lo,
        count,
        slack: budget - count,
        next_step: count_at(lo + 1) - count,
    })
}
