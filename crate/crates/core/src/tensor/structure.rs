//! Recording and replay of structural decisions.
//!
//! Neighbour lists, samples and stroke alignments are chosen from current
//! feature values and carry no gradient. Finite differences of a network
//! that re-chooses them can jump across a near-tie; replaying the choices
//! of the unperturbed pass keeps the probed function on one smooth piece.

use std::any::Any;
use std::cell::RefCell;
use std::rc::Rc;

/// Decisions of one recorded pass, in call order.
#[derive(Clone, Default)]
pub struct Structure {
    items: Rc<Vec<Rc<dyn Any>>>,
}

impl Structure {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl std::fmt::Debug for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Structure({} decisions)", self.items.len())
    }
}

enum Mode {
    Record(Vec<Rc<dyn Any>>),
    Replay(Structure, usize),
}

thread_local! {
    static MODE: RefCell<Option<Mode>> = const { RefCell::new(None) };
}

struct Restore(Option<Mode>);

impl Drop for Restore {
    fn drop(&mut self) {
        let prev = self.0.take();
        MODE.with(|m| *m.borrow_mut() = prev);
    }
}

/// Runs `f`, capturing every structural decision it makes on this thread.
pub fn record_structure<R>(f: impl FnOnce() -> R) -> (R, Structure) {
    let prev = MODE.with(|m| m.borrow_mut().replace(Mode::Record(Vec::new())));
    let guard = Restore(prev);
    let out = f();
    let items = MODE.with(|m| match m.borrow_mut().take() {
        Some(Mode::Record(items)) => items,
        _ => unreachable!("recording mode replaced during recording"),
    });
    drop(guard);
    (
        out,
        Structure {
            items: Rc::new(items),
        },
    )
}

/// Runs `f`, answering its structural decisions from `s`.
///
/// Panics if `f` asks for more or different decisions than were recorded.
pub fn replay_structure<R>(s: &Structure, f: impl FnOnce() -> R) -> R {
    let prev = MODE.with(|m| m.borrow_mut().replace(Mode::Replay(s.clone(), 0)));
    let _guard = Restore(prev);
    f()
}

/// Computes (or replays) one structural decision.
pub(crate) fn structural<T: Clone + 'static>(compute: impl FnOnce() -> T) -> T {
    let replayed = MODE.with(|m| match &mut *m.borrow_mut() {
        Some(Mode::Replay(s, at)) => {
            let item = s.items.get(*at).unwrap_or_else(|| panic!("structure replay: no decision #{at} recorded"));
            *at += 1;
            Some(
                item.downcast_ref::<T>()
                    .unwrap_or_else(|| panic!("structure replay: decision #{} has a different type", *at - 1))
                    .clone(),
            )
        }
        _ => None,
    });
    if let Some(v) = replayed {
        return v;
    }
    let v = compute();
    MODE.with(|m| {
        if let Some(Mode::Record(items)) = &mut *m.borrow_mut() {
            items.push(Rc::new(v.clone()));
        }
    });
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_returns_recorded_values() {
        let mut n = 0;
        let mut pick = || {
            n += 1;
            structural(|| n * 10)
        };
        let ((a, b), s) = record_structure(|| (pick(), pick()));
        assert_eq!((a, b, s.len()), (10, 20, 2));
        let (c, d) = replay_structure(&s, || (pick(), pick()));
        assert_eq!((c, d), (10, 20));
        assert_eq!(pick(), 50);
    }

    #[test]
    #[should_panic(expected = "no decision")]
    fn replay_overrun_panics() {
        let (_, s) = record_structure(|| structural(|| 1u8));
        replay_structure(&s, || {
            structural(|| 1u8);
            structural(|| 2u8)
        });
    }
}
