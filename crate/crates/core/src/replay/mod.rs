//! Bounded FIFO trajectory queue shared by actors and the learner.
//!
//! Every stored item is handed out at most once. When the queue is full the
//! oldest unsampled item is dropped. At any observation point
//! `current_size == items_written - items_sampled - items_dropped`.

mod remote;

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::trajectory::TrajectoryBatch;

pub use remote::{RemoteReplay, ReplayServer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Episode,
    /// Sequences of at most this many steps.
    Sequence(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferConfig {
    pub capacity: usize,
    pub sample_batch_size: usize,
    pub item_kind: ItemKind,
}

impl BufferConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sample_batch_size == 0 {
            return Err("sample_batch_size must be at least 1".into());
        }
        if self.capacity < self.sample_batch_size {
            return Err(format!(
                "capacity ({}) must be at least sample_batch_size ({})",
                self.capacity, self.sample_batch_size
            ));
        }
        if self.item_kind == ItemKind::Sequence(0) {
            return Err("sequence length must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BufferStats {
    pub items_written: u64,
    pub items_sampled: u64,
    pub items_dropped: u64,
    pub current_size: u64,
}

impl BufferStats {
    pub fn is_conserved(&self) -> bool {
        self.items_sampled + self.items_dropped + self.current_size == self.items_written
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("bad item: {0}")]
    BadItem(String),
    #[error("replay buffer closed")]
    Closed,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out")]
    Timeout,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The operations actors and learners need from a replay service, local or
/// remote.
pub trait Replay: Send + Sync {
    fn write(&self, item: TrajectoryBatch) -> Result<(), ReplayError>;
    /// Blocks until `n` items are available and returns them in FIFO order.
    fn sample(&self, n: usize) -> Result<Vec<TrajectoryBatch>, ReplayError>;
    fn stats(&self) -> Result<BufferStats, ReplayError>;
}

struct Inner {
    queue: VecDeque<TrajectoryBatch>,
    stats: BufferStats,
    closed: bool,
}

pub struct ReplayBuffer {
    config: BufferConfig,
    inner: Mutex<Inner>,
    available: Condvar,
}

impl ReplayBuffer {
    pub fn new(config: BufferConfig) -> Result<Self, ReplayError> {
        config.validate().map_err(ReplayError::BadRequest)?;
        Ok(Self {
            config,
            inner: Mutex::new(Inner {
                queue: VecDeque::with_capacity(config.capacity),
                stats: BufferStats::default(),
                closed: false,
            }),
            available: Condvar::new(),
        })
    }

    pub fn config(&self) -> BufferConfig {
        self.config
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn check_item(&self, item: &TrajectoryBatch) -> Result<(), ReplayError> {
        item.validate().map_err(ReplayError::BadItem)?;
        if let ItemKind::Sequence(max) = self.config.item_kind {
            if item.len() > max {
                return Err(ReplayError::BadItem(format!(
                    "sequence of {} steps exceeds the configured {max}",
                    item.len()
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, item: TrajectoryBatch) -> Result<(), ReplayError> {
        self.check_item(&item)?;
        let mut inner = self.lock();
        if inner.closed {
            return Err(ReplayError::Closed);
        }
        inner.queue.push_back(item);
        inner.stats.items_written += 1;
        if inner.queue.len() > self.config.capacity {
            inner.queue.pop_front();
            inner.stats.items_dropped += 1;
        }
        inner.stats.current_size = inner.queue.len() as u64;
        drop(inner);
        self.available.notify_all();
        Ok(())
    }

    fn take(inner: &mut Inner, n: usize) -> Vec<TrajectoryBatch> {
        let items: Vec<_> = inner.queue.drain(..n).collect();
        inner.stats.items_sampled += items.len() as u64;
        inner.stats.current_size = inner.queue.len() as u64;
        items
    }

    fn check_request(&self, n: usize) -> Result<(), ReplayError> {
        if n == 0 || n > self.config.capacity {
            return Err(ReplayError::BadRequest(format!(
                "sample size {n} must be in [1, {}]",
                self.config.capacity
            )));
        }
        Ok(())
    }

    /// Blocks until `n` items are stored. Items still queued after
    /// [`close`](Self::close) can be sampled; once fewer than `n` remain a
    /// closed buffer returns [`ReplayError::Closed`].
    pub fn sample(&self, n: usize) -> Result<Vec<TrajectoryBatch>, ReplayError> {
        self.check_request(n)?;
        let mut inner = self.lock();
        loop {
            if inner.queue.len() >= n {
                return Ok(Self::take(&mut inner, n));
            }
            if inner.closed {
                return Err(ReplayError::Closed);
            }
            inner = self.available.wait(inner).unwrap_or_else(|p| p.into_inner());
        }
    }

    pub fn sample_timeout(&self, n: usize, timeout: Duration) -> Result<Vec<TrajectoryBatch>, ReplayError> {
        self.check_request(n)?;
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            if inner.queue.len() >= n {
                return Ok(Self::take(&mut inner, n));
            }
            if inner.closed {
                return Err(ReplayError::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ReplayError::Timeout);
            }
            inner = self
                .available
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Takes up to `max` items without blocking. Counted as sampled.
    pub fn drain(&self, max: usize) -> Vec<TrajectoryBatch> {
        let mut inner = self.lock();
        let n = max.min(inner.queue.len());
        Self::take(&mut inner, n)
    }

    pub fn stats(&self) -> BufferStats {
        self.lock().stats
    }

    /// Rejects further writes and wakes blocked samplers.
    pub fn close(&self) {
        self.lock().closed = true;
        self.available.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }
}

impl Replay for ReplayBuffer {
    fn write(&self, item: TrajectoryBatch) -> Result<(), ReplayError> {
        ReplayBuffer::write(self, item)
    }

    fn sample(&self, n: usize) -> Result<Vec<TrajectoryBatch>, ReplayError> {
        ReplayBuffer::sample(self, n)
    }

    fn stats(&self) -> Result<BufferStats, ReplayError> {
        Ok(ReplayBuffer::stats(self))
    }
}
