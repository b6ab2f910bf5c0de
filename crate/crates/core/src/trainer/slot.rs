use std::sync::{Arc, RwLock};

use super::{PolicyState, TrainerError};

/// The serving policy. Readers take a cheap snapshot; a swap replaces the
/// whole state at once.
#[derive(Debug, Default)]
pub struct PolicySlot {
    inner: RwLock<Arc<PolicyState>>,
}

impl PolicySlot {
    pub fn new(theta: PolicyState) -> Self {
        PolicySlot { inner: RwLock::new(Arc::new(theta)) }
    }

    pub fn current(&self) -> Arc<PolicyState> {
        Arc::clone(&self.inner.read().expect("policy slot poisoned"))
    }

    pub fn version(&self) -> u64 {
        self.current().version
    }

    /// Installs `theta` if its version is exactly one past the serving one.
    pub fn hot_swap(&self, theta: PolicyState) -> Result<u64, TrainerError> {
        let mut guard = self.inner.write().expect("policy slot poisoned");
        let expected = guard.version + 1;
        if theta.version != expected {
            return Err(TrainerError::VersionRace { expected, got: theta.version });
        }
        *guard = Arc::new(theta);
        Ok(expected)
    }
}
