//! Budgeted tool loading with least-recently-used eviction of idle tools.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("tool `{tool}` costs {cost} units, more than the budget of {budget}")]
    CostExceedsBudget { tool: String, cost: u32, budget: u32 },
    #[error("timed out after {waited:?} waiting for {cost} units for `{tool}`")]
    ResourceTimeout { tool: String, cost: u32, waited: Duration },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEvent {
    Load { tool: String, cost: u32 },
    Evict { tool: String, cost: u32 },
}

#[derive(Debug, Clone)]
struct Slot {
    cost: u32,
    running: u32,
    last_used: u64,
}

#[derive(Debug, Default)]
struct State {
    loaded: BTreeMap<String, Slot>,
    tick: u64,
    events: Vec<LedgerEvent>,
}

impl State {
    fn used(&self) -> u32 {
        self.loaded.values().map(|s| s.cost).sum()
    }

    fn idle_cost(&self) -> u32 {
        self.loaded.values().filter(|s| s.running == 0).map(|s| s.cost).sum()
    }
}

pub type UnloadHook = Arc<dyn Fn(&str) + Send + Sync>;

/// Shared across executions; acquisitions block until the budget allows
/// them or the wait timeout expires.
pub struct ResourceLedger {
    budget: u32,
    wait_timeout: Duration,
    state: Mutex<State>,
    freed: Condvar,
    unload_hook: Option<UnloadHook>,
}

impl fmt::Debug for ResourceLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResourceLedger")
            .field("budget", &self.budget)
            .field("used", &self.used())
            .finish()
    }
}

/// A running tool; released on drop.
#[derive(Debug)]
pub struct Lease<'a> {
    ledger: &'a ResourceLedger,
    tool: String,
}

impl Lease<'_> {
    pub fn tool(&self) -> &str {
        &self.tool
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        self.ledger.release(&self.tool);
    }
}

impl ResourceLedger {
    pub fn new(budget: u32, wait_timeout: Duration) -> Self {
        Self {
            budget,
            wait_timeout,
            state: Mutex::new(State::default()),
            freed: Condvar::new(),
            unload_hook: None,
        }
    }

    /// Called with the tool id whenever a tool is evicted.
    pub fn with_unload_hook(mut self, hook: UnloadHook) -> Self {
        self.unload_hook = Some(hook);
        self
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("ledger poisoned")
    }

    pub fn used(&self) -> u32 {
        self.lock().used()
    }

    /// Loaded tools and their cost.
    pub fn loaded(&self) -> BTreeMap<String, u32> {
        self.lock().loaded.iter().map(|(k, s)| (k.clone(), s.cost)).collect()
    }

    pub fn is_running(&self, tool: &str) -> bool {
        self.lock().loaded.get(tool).is_some_and(|s| s.running > 0)
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.lock().events.clone()
    }

    /// Mark `tool` loaded and running, evicting idle tools oldest-first if
    /// the budget requires it. Running tools are never evicted.
    pub fn acquire(&self, tool: &str, cost: u32) -> Result<Lease<'_>, LedgerError> {
        if cost > self.budget {
            return Err(LedgerError::CostExceedsBudget {
                tool: tool.to_string(),
                cost,
                budget: self.budget,
            });
        }
        let started = Instant::now();
        let deadline = started + self.wait_timeout;
        let mut state = self.lock();
        loop {
            state.tick += 1;
            let tick = state.tick;
            if let Some(slot) = state.loaded.get_mut(tool) {
                slot.running += 1;
                slot.last_used = tick;
                return Ok(self.lease(tool));
            }
            let used = state.used();
            if used - state.idle_cost() + cost <= self.budget {
                let mut evicted = Vec::new();
                while state.used() + cost > self.budget {
                    let victim = state
                        .loaded
                        .iter()
                        .filter(|(_, s)| s.running == 0)
                        .min_by_key(|(id, s)| (s.last_used, (*id).clone()))
                        .map(|(id, _)| id.clone())
                        .expect("idle capacity was counted");
                    let slot = state.loaded.remove(&victim).expect("victim is loaded");
                    state.events.push(LedgerEvent::Evict {
                        tool: victim.clone(),
                        cost: slot.cost,
                    });
                    evicted.push(victim);
                }
                state.loaded.insert(
                    tool.to_string(),
                    Slot {
                        cost,
                        running: 1,
                        last_used: tick,
                    },
                );
                state.events.push(LedgerEvent::Load {
                    tool: tool.to_string(),
                    cost,
                });
                debug_assert!(state.used() <= self.budget);
                drop(state);
                if let Some(hook) = &self.unload_hook {
                    for id in &evicted {
                        hook(id);
                    }
                }
                return Ok(self.lease(tool));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(LedgerError::ResourceTimeout {
                    tool: tool.to_string(),
                    cost,
                    waited: now - started,
                });
            }
            state = self.freed.wait_timeout(state, deadline - now).expect("ledger poisoned").0;
        }
    }

    fn lease(&self, tool: &str) -> Lease<'_> {
        Lease {
            ledger: self,
            tool: tool.to_string(),
        }
    }

    fn release(&self, tool: &str) {
        let mut state = self.lock();
        if let Some(slot) = state.loaded.get_mut(tool) {
            slot.running = slot.running.saturating_sub(1);
        }
        drop(state);
        self.freed.notify_all();
    }
}
