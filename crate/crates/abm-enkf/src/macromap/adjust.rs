//! The two macro-to-micro agent adjustment algorithms.
//!
//! Both take a forecast population and an integerized target count matrix and
//! relabel agents (never moving them between houses or locations) until
//! `aggregate(pop) == target` holds exactly. Agents relabeled into a timed
//! class get their residence counter drawn uniformly from the counters the
//! class already held at that location when the call started, falling back to
//! the Gamma prior when the class was locally empty.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::abm::{sample_duration, AgentPopulation, HealthStatus, ModelParams};
use crate::error::{Error, Result};
use crate::macromap::{aggregate, CompartmentCounts};
use crate::rng::SimRng;

/// One relabeling performed by an adjustment call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjustmentMove {
    pub agent: u32,
    pub from: HealthStatus,
    pub to: HealthStatus,
}

/// Record of every relabeling in one adjustment call.
#[derive(Debug, Clone, Default)]
pub struct AdjustmentLog {
    pub moves: Vec<AdjustmentMove>,
}

impl AdjustmentLog {
    pub fn relabel_count(&self) -> usize {
        self.moves.len()
    }
}

/// Progression arcs of the status diagram (including the asymptomatic branch).
pub(crate) const ARCS: [(HealthStatus, HealthStatus); 9] = [
    (HealthStatus::Susceptible, HealthStatus::Exposed),
    (HealthStatus::Exposed, HealthStatus::InfectedMild),
    (HealthStatus::Exposed, HealthStatus::InfectedSevere),
    (HealthStatus::Exposed, HealthStatus::InfectedAsymptomatic),
    (HealthStatus::InfectedMild, HealthStatus::Recovered),
    (
        HealthStatus::InfectedAsymptomatic,
        HealthStatus::RecoveredAsymptomatic,
    ),
    (HealthStatus::InfectedSevere, HealthStatus::Hospitalized),
    (HealthStatus::Hospitalized, HealthStatus::Recovered),
    (HealthStatus::Hospitalized, HealthStatus::Deceased),
];

/// Residence counters per (location, status) at call entry.
struct CounterSnapshot {
    n_status: usize,
    counters: Vec<Vec<f64>>,
}

impl CounterSnapshot {
    fn take(pop: &AgentPopulation) -> Self {
        let n_status = pop.statuses().len();
        let mut counters = vec![Vec::new(); pop.n_locations() * n_status];
        for agent in pop.agents() {
            if agent.status.has_duration() {
                counters[agent.location as usize * n_status + agent.status.index()]
                    .push(agent.remaining_days);
            }
        }
        CounterSnapshot { n_status, counters }
    }

    fn sample(
        &self,
        location: usize,
        status: HealthStatus,
        params: &ModelParams,
        rng: &mut SimRng,
    ) -> Result<f64> {
        let pool = &self.counters[location * self.n_status + status.index()];
        if pool.is_empty() {
            sample_duration(status, params, rng)
        } else {
            Ok(pool[rng.random_range(0..pool.len())])
        }
    }
}

/// Validate the target against the population and return it as integers.
fn validate_target(
    pop: &AgentPopulation,
    target: &CompartmentCounts,
) -> Result<Vec<Vec<u32>>> {
    if target.n_locations() != pop.n_locations()
        || target.asymptomatic() != pop.asymptomatic_enabled()
    {
        return Err(Error::Contract(format!(
            "target shape {}x{} does not match population {}x{}",
            target.n_locations(),
            target.n_status(),
            pop.n_locations(),
            pop.statuses().len()
        )));
    }
    (0..pop.n_locations())
        .map(|loc| target.integer_row(loc, pop.location_sizes()[loc]))
        .collect()
}

/// Current members per (location, status).
fn member_lists(pop: &AgentPopulation) -> Vec<Vec<u32>> {
    let n_status = pop.statuses().len();
    let mut lists = vec![Vec::new(); pop.n_locations() * n_status];
    for (id, agent) in pop.agents().iter().enumerate() {
        lists[agent.location as usize * n_status + agent.status.index()].push(id as u32);
    }
    lists
}

fn relabel(
    pop: &mut AgentPopulation,
    snapshot: &CounterSnapshot,
    params: &ModelParams,
    rng: &mut SimRng,
    log: &mut AdjustmentLog,
    agent_id: u32,
    to: HealthStatus,
) -> Result<()> {
    let from = pop.agents()[agent_id as usize].status;
    let location = pop.agents()[agent_id as usize].location as usize;
    pop.set_status(agent_id, to);
    if to.has_duration() {
        pop.agents_mut()[agent_id as usize].remaining_days =
            snapshot.sample(location, to, params, rng)?;
    }
    log.moves.push(AdjustmentMove {
        agent: agent_id,
        from,
        to,
    });
    Ok(())
}

/// Randomized redistribution: deficits take uniformly chosen agents from the
/// surplus compartments of the same location. The relabel count per location
/// is the minimum possible, half the L1 distance between forecast and target.
pub fn randomized_redistribution(
    pop: &mut AgentPopulation,
    target: &CompartmentCounts,
    params: &ModelParams,
    rng: &mut SimRng,
) -> Result<AdjustmentLog> {
    let target = validate_target(pop, target)?;
    let current = aggregate(pop);
    let snapshot = CounterSnapshot::take(pop);
    let statuses = pop.statuses();
    let n_status = statuses.len();
    let mut log = AdjustmentLog::default();

    for loc in 0..pop.n_locations() {
        let mut donors: Vec<u32> = Vec::new();
        for status in statuses {
            let cur = current.get(loc, *status) as i64;
            let want = target[loc][status.index()] as i64;
            if cur > want {
                let members: Vec<u32> = pop
                    .agents()
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.location as usize == loc && a.status == *status)
                    .map(|(id, _)| id as u32)
                    .collect();
                let picked =
                    rand::seq::index::sample(rng, members.len(), (cur - want) as usize);
                donors.extend(picked.iter().map(|i| members[i]));
            }
        }
        donors.shuffle(rng);
        let mut cursor = 0usize;
        for status_idx in 0..n_status {
            let status = statuses[status_idx];
            let cur = current.get(loc, status) as i64;
            let want = target[loc][status_idx] as i64;
            for _ in 0..(want - cur).max(0) {
                let agent_id = donors[cursor];
                cursor += 1;
                relabel(pop, &snapshot, params, rng, &mut log, agent_id, status)?;
            }
        }
        debug_assert_eq!(cursor, donors.len());
    }
    Ok(log)
}

/// One scheduled edge of the cascade: imbalances of the statuses on the
/// `child` side of the edge are resolved by moves between `child` and
/// `parent` only.
struct CascadeEdge {
    child: HealthStatus,
    parent: HealthStatus,
    subtree: &'static [HealthStatus],
}

fn cascade_schedule(asymptomatic: bool) -> Vec<CascadeEdge> {
    use HealthStatus::*;
    let mut edges = vec![
        CascadeEdge {
            child: Deceased,
            parent: Hospitalized,
            subtree: &[Deceased],
        },
        CascadeEdge {
            child: Recovered,
            parent: Hospitalized,
            subtree: &[Recovered],
        },
    ];
    if asymptomatic {
        edges.push(CascadeEdge {
            child: RecoveredAsymptomatic,
            parent: InfectedAsymptomatic,
            subtree: &[RecoveredAsymptomatic],
        });
    }
    edges.push(CascadeEdge {
        child: Hospitalized,
        parent: InfectedSevere,
        subtree: &[Hospitalized, Recovered, Deceased],
    });
    edges.push(CascadeEdge {
        child: InfectedMild,
        parent: Exposed,
        subtree: &[InfectedMild],
    });
    if asymptomatic {
        edges.push(CascadeEdge {
            child: InfectedAsymptomatic,
            parent: Exposed,
            subtree: &[InfectedAsymptomatic, RecoveredAsymptomatic],
        });
    }
    edges.push(CascadeEdge {
        child: InfectedSevere,
        parent: Exposed,
        subtree: &[InfectedSevere, Hospitalized, Recovered, Deceased],
    });
    edges.push(CascadeEdge {
        child: Exposed,
        parent: Susceptible,
        subtree: if asymptomatic {
            &[
                Exposed,
                InfectedMild,
                InfectedSevere,
                Hospitalized,
                Recovered,
                Deceased,
                InfectedAsymptomatic,
                RecoveredAsymptomatic,
            ]
        } else {
            &[
                Exposed,
                InfectedMild,
                InfectedSevere,
                Hospitalized,
                Recovered,
                Deceased,
            ]
        },
    });
    edges
}

/// Backward cascade redistribution: relabelings happen only between adjacent
/// classes of the progression diagram. Moves with the flow of the diagram
/// take the agents that spent the most days in their class (susceptible
/// donors: the most risky contacts); moves against the flow take the agents
/// with the fewest days, so individual trajectories are disturbed the least.
pub fn backward_cascade_redistribution(
    pop: &mut AgentPopulation,
    target: &CompartmentCounts,
    params: &ModelParams,
    rng: &mut SimRng,
) -> Result<AdjustmentLog> {
    let target = validate_target(pop, target)?;
    let current = aggregate(pop);
    let snapshot = CounterSnapshot::take(pop);
    let statuses = pop.statuses();
    let n_status = statuses.len();
    let schedule = cascade_schedule_checked(pop.asymptomatic_enabled());
    let mut members = member_lists(pop);
    let mut log = AdjustmentLog::default();

    for loc in 0..pop.n_locations() {
        // Net flow across each edge: the surplus the child side must absorb.
        let flows: Vec<i64> = schedule
            .iter()
            .map(|edge| {
                edge.subtree
                    .iter()
                    .map(|s| {
                        target[loc][s.index()] as i64 - current.get(loc, *s) as i64
                    })
                    .sum()
            })
            .collect();

        // Execute edges whose donor has no pending inflow, in schedule order.
        let mut done: Vec<bool> = flows.iter().map(|f| *f == 0).collect();
        while done.iter().any(|d| !d) {
            let mut progressed = false;
            'scan: for i in 0..schedule.len() {
                if done[i] {
                    continue;
                }
                let (donor, recipient) = if flows[i] > 0 {
                    (schedule[i].parent, schedule[i].child)
                } else {
                    (schedule[i].child, schedule[i].parent)
                };
                // Ready only once every inflow into the donor has run.
                for j in 0..schedule.len() {
                    if done[j] || j == i {
                        continue;
                    }
                    let recipient_j = if flows[j] > 0 {
                        schedule[j].child
                    } else {
                        schedule[j].parent
                    };
                    if recipient_j == donor {
                        continue 'scan;
                    }
                }
                let k = flows[i].unsigned_abs() as usize;
                move_between(
                    pop, &snapshot, params, rng, &mut log, &mut members, loc, n_status, donor,
                    recipient, k,
                )?;
                done[i] = true;
                progressed = true;
            }
            if !progressed {
                return Err(Error::Contract(
                    "cascade schedule deadlocked; target is infeasible".into(),
                ));
            }
        }
    }
    Ok(log)
}

fn cascade_schedule_checked(asymptomatic: bool) -> Vec<CascadeEdge> {
    let schedule = cascade_schedule(asymptomatic);
    debug_assert!(schedule
        .iter()
        .all(|e| ARCS.contains(&(e.parent, e.child))));
    schedule
}

/// Move `k` agents from `donor` to `recipient` at one location, selecting by
/// the cascade criterion with uniform-random tie breaking.
#[allow(clippy::too_many_arguments)]
fn move_between(
    pop: &mut AgentPopulation,
    snapshot: &CounterSnapshot,
    params: &ModelParams,
    rng: &mut SimRng,
    log: &mut AdjustmentLog,
    members: &mut [Vec<u32>],
    loc: usize,
    n_status: usize,
    donor: HealthStatus,
    recipient: HealthStatus,
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Ok(());
    }
    let donor_slot = loc * n_status + donor.index();
    let pool = std::mem::take(&mut members[donor_slot]);
    if pool.len() < k {
        return Err(Error::Contract(format!(
            "cascade needs {k} agents in {} at location {loc}, found {}",
            donor.label(),
            pool.len()
        )));
    }
    let forward = ARCS.contains(&(donor, recipient));
    let mut candidates: Vec<(u32, u64, u32)> = pool
        .iter()
        .map(|&id| {
            let agent = &pop.agents()[id as usize];
            let key = if donor == HealthStatus::Susceptible {
                agent.risky_contacts
            } else {
                agent.days_in_status
            };
            (key, rng.random::<u64>(), id)
        })
        .collect();
    // Forward moves take the largest key (longest in class / most risky
    // contacts); backward moves take the smallest.
    if candidates.len() > k {
        if forward {
            candidates
                .select_nth_unstable_by(k - 1, |a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        } else {
            candidates
                .select_nth_unstable_by(k - 1, |a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        }
    }
    let (selected, kept) = candidates.split_at(k);
    for &(_, _, id) in selected {
        relabel(pop, snapshot, params, rng, log, id, recipient)?;
        members[loc * n_status + recipient.index()].push(id);
    }
    members[donor_slot] = kept.iter().map(|&(_, _, id)| id).collect();
    Ok(())
}
