use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Bounded multi-producer queue that drops its oldest entry when full.
#[derive(Debug)]
pub struct DropOldest<T> {
    items: Mutex<VecDeque<T>>,
    ready: Condvar,
    capacity: usize,
}

impl<T> DropOldest<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity)),
            ready: Condvar::new(),
            capacity,
        }
    }

    /// Enqueues `item`, returning the entry evicted to make room, if any.
    pub fn push(&self, item: T) -> Option<T> {
        let mut q = self.items.lock().expect("queue lock");
        let dropped = if q.len() == self.capacity { q.pop_front() } else { None };
        q.push_back(item);
        self.ready.notify_one();
        dropped
    }

    pub fn drain(&self) -> Vec<T> {
        self.items.lock().expect("queue lock").drain(..).collect()
    }

    /// Blocks until an item is queued or `timeout` passes.
    pub fn wait(&self, timeout: Duration) {
        let q = self.items.lock().expect("queue lock");
        if q.is_empty() {
            let _ = self.ready.wait_timeout(q, timeout).expect("queue lock");
        }
    }

    /// Wakes a waiter without enqueuing anything.
    pub fn wake(&self) {
        self.ready.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_oldest_when_full() {
        let q = DropOldest::new(2);
        assert_eq!(q.push(1), None);
        assert_eq!(q.push(2), None);
        assert_eq!(q.push(3), Some(1));
        assert_eq!(q.drain(), vec![2, 3]);
        assert!(q.drain().is_empty());
    }

    #[test]
    fn wait_returns_on_push() {
        let q = std::sync::Arc::new(DropOldest::new(4));
        let q2 = q.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            q2.push(7);
        });
        let start = std::time::Instant::now();
        q.wait(Duration::from_secs(5));
        assert!(start.elapsed() < Duration::from_secs(4));
        t.join().unwrap();
        assert_eq!(q.drain(), vec![7]);
    }
}
