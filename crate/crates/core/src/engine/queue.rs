//! Bounded multi-producer, single-consumer event queue.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::config::QueueFullPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PushError {
    Full,
    Closed,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

pub(crate) struct EventQueue<T> {
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: QueueFullPolicy,
}

pub(crate) enum Popped<T> {
    Items(Vec<T>),
    Timeout,
    Closed,
}

impl<T> EventQueue<T> {
    pub fn new(capacity: usize, policy: QueueFullPolicy) -> Self {
        Self {
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity.min(1 << 16)),
                closed: false,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            policy,
        }
    }

    /// Enqueues every item in order, or none of them under the reject
    /// policy. Returns how many older items were dropped to make room.
    pub fn push_all(&self, items: Vec<T>) -> Result<u64, PushError> {
        let mut st = self.state.lock();
        if st.closed {
            return Err(PushError::Closed);
        }
        let mut dropped = 0;
        match self.policy {
            QueueFullPolicy::Reject => {
                if st.items.len() + items.len() > self.capacity {
                    return Err(PushError::Full);
                }
                st.items.extend(items);
            }
            QueueFullPolicy::DropOldest => {
                for it in items {
                    if st.items.len() >= self.capacity {
                        st.items.pop_front();
                        dropped += 1;
                    }
                    st.items.push_back(it);
                }
                st.dropped += dropped;
            }
            QueueFullPolicy::Block => {
                for it in items {
                    while st.items.len() >= self.capacity {
                        if st.closed {
                            return Err(PushError::Closed);
                        }
                        self.not_empty.notify_one();
                        self.not_full.wait(&mut st);
                    }
                    st.items.push_back(it);
                }
            }
        }
        drop(st);
        self.not_empty.notify_one();
        Ok(dropped)
    }

    /// Takes everything queued, waiting up to `timeout` (forever if `None`)
    /// for at least one item.
    pub fn pop_all(&self, timeout: Option<Duration>) -> Popped<T> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.state.lock();
        while st.items.is_empty() {
            if st.closed {
                return Popped::Closed;
            }
            match deadline {
                Some(d) => {
                    if self.not_empty.wait_until(&mut st, d).timed_out() && st.items.is_empty() {
                        return if st.closed { Popped::Closed } else { Popped::Timeout };
                    }
                }
                None => self.not_empty.wait(&mut st),
            }
        }
        let items: Vec<T> = st.items.drain(..).collect();
        drop(st);
        self.not_full.notify_all();
        Popped::Items(items)
    }

    /// Refuses new items; queued ones can still be taken.
    pub fn close(&self) {
        self.state.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().items.len()
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().dropped
    }
}
