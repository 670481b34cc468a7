use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Counts of cryptographic operations, one per ciphertext touched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub encrypt: u64,
    pub decrypt: u64,
    pub add: u64,
    pub scale: u64,
}

impl OpCounts {
    pub fn homomorphic(&self) -> u64 {
        self.add + self.scale
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            encrypt: self.encrypt + o.encrypt,
            decrypt: self.decrypt + o.decrypt,
            add: self.add + o.add,
            scale: self.scale + o.scale,
        }
    }
}

/// Shared tally, safe to bump from parallel workers.
#[derive(Debug, Default)]
pub struct OpCounter {
    encrypt: AtomicU64,
    decrypt: AtomicU64,
    add: AtomicU64,
    scale: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encrypted(&self, n: u64) {
        self.encrypt.fetch_add(n, Ordering::Relaxed);
    }

    pub fn decrypted(&self, n: u64) {
        self.decrypt.fetch_add(n, Ordering::Relaxed);
    }

    pub fn added(&self, n: u64) {
        self.add.fetch_add(n, Ordering::Relaxed);
    }

    pub fn scaled(&self, n: u64) {
        self.scale.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            encrypt: self.encrypt.load(Ordering::Relaxed),
            decrypt: self.decrypt.load(Ordering::Relaxed),
            add: self.add.load(Ordering::Relaxed),
            scale: self.scale.load(Ordering::Relaxed),
        }
    }
}
