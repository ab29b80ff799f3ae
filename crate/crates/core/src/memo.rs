//! Concurrent compute-once tables.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, Mutex, OnceLock};

/// Each key is computed at most once; concurrent callers for the same key
/// wait for the first computation.
pub(crate) struct Memo<K, T> {
    cells: Mutex<HashMap<K, Arc<OnceLock<T>>>>,
}

impl<K: Eq + Hash, T: Clone> Memo<K, T> {
    pub(crate) fn new() -> Self {
        Memo {
            cells: Mutex::new(HashMap::new()),
        }
    }

    pub(crate) fn get(&self, key: K, compute: impl FnOnce() -> T) -> T {
        let cell = self.cells.lock().expect("memo lock").entry(key).or_default().clone();
        cell.get_or_init(compute).clone()
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.cells.lock().expect("memo lock").len()
    }
}
